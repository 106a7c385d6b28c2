"""Built-in verification suites behind the `stbem selftest` subcommand.

Three quick checks: sigma-point filter/smoother equivalence with the
closed-form Kalman filter and RTS smoother on linear-Gaussian systems,
the pilot orthogonality identities, and the Doppler band limit of the
beamspace coefficients.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .basis import ssi_from_angles
from .channel import SpatialState, generate_block
from .config import SystemConfig
from .pilots import design_pilots, verify_orthogonality
from .tracking import FilterState, NoiseParams, UtConfig, ukf_filter, urtss_pass


def _kf_rts(obs, a, h, q, r, m0, p0):
    """Closed-form scalar Kalman filter + RTS smoother for x' = a x + w, y = h x + u."""
    n = obs.shape[0]
    mf = np.empty(n)
    pf = np.empty(n)
    m, p = m0, p0
    for z in range(n):
        mp = a * m
        pp = a * p * a + q
        s = h * pp * h + r
        k = pp * h / s
        m = mp + k * (obs[z] - h * mp)
        p = (1 - k * h) * pp
        mf[z], pf[z] = m, p
    ms = mf.copy()
    ps = pf.copy()
    for z in range(n - 2, -1, -1):
        pp = a * pf[z] * a + q
        g = pf[z] * a / pp
        ms[z] = mf[z] + g * (ms[z + 1] - a * mf[z])
        ps[z] = pf[z] + g * (ps[z + 1] - pp) * g
    return mf, pf, ms, ps


def check_kf_oracle(n_instances: int = 20, n_steps: int = 40, seed: int = 0) -> float:
    """Max deviation of (UKF, URTSS) from (KF, RTSS) on random scalar systems."""
    rng = np.random.default_rng(seed)
    ut = UtConfig(R=1)
    worst = 0.0
    for _ in range(n_instances):
        a = rng.uniform(0.7, 1.0)
        h = rng.uniform(0.5, 3.0)
        q = 10.0 ** rng.uniform(-4, -1)
        r = 10.0 ** rng.uniform(-3, 0)
        x = 0.0
        obs = np.empty(n_steps)
        for z in range(n_steps):
            x = a * x + rng.normal(0, math.sqrt(q))
            obs[z] = h * x + rng.normal(0, math.sqrt(r))
        m0, p0 = 0.0, 1.0
        noise = NoiseParams(q_omega=q, q_u=r)
        traj = ukf_filter(
            obs, FilterState.of(m0, p0), noise, ut,
            meas_fn=lambda v: h * v, sys_fn=lambda v: a * v,
        )
        sm = urtss_pass(traj, ut, noise, sys_fn=lambda v: a * v)
        mf, pf, ms, ps = _kf_rts(obs, a, h, q, r, m0, p0)
        worst = max(
            worst,
            float(np.max(np.abs(traj.means[:, 0] - mf))),
            float(np.max(np.abs(traj.covs[:, 0, 0] - pf))),
            float(np.max(np.abs(sm.mean[:, 0] - ms))),
            float(np.max(np.abs(sm.var[:, 0, 0] - ps))),
        )
    return worst


def check_pilot_orthogonality() -> float:
    worst = 0.0
    for g, mu, n in ((3, 4, 100), (2, 2, 60), (4, 6, 200)):
        worst = max(worst, verify_orthogonality(design_pilots(g, mu, n)))
    return worst


def check_spectrum_bound(n_slots: int = 20000, seed: int = 0) -> float:
    """Min in-band periodogram fraction over the SSI bins of one long block."""
    cfg = SystemConfig(M=128, N=n_slots, fd=200.0, Ts=1e-4, P=64, K=1, G=1)
    rng = np.random.default_rng(seed)
    spatial = SpatialState(central_doa=math.radians(28.0), max_as=math.radians(2.0))
    block = generate_block(cfg, [spatial], 0, rng)
    ssi = ssi_from_angles(cfg, spatial.central_doa, spatial.max_as)
    freqs = np.fft.fftfreq(n_slots, d=cfg.Ts)
    inband = np.abs(freqs) <= cfg.fd + 1e-9
    ht = np.fft.fft(block.h[0], axis=0) / math.sqrt(cfg.M)
    frac = 1.0
    for q in ssi.bins():
        s = np.abs(np.fft.fft(ht[int(q), :])) ** 2
        frac = min(frac, float(s[inband].sum() / s.sum()))
    return frac


def run_selftest(verbose: bool = True) -> int:
    """Run all suites; returns 0 when every check passes, 3 otherwise."""
    checks = []
    t0 = time.time()
    dev = check_kf_oracle()
    checks.append(("kf-rtss-oracle", dev <= 1e-8, f"max deviation {dev:.3e} (tol 1e-8)"))
    dev = check_pilot_orthogonality()
    checks.append(("pilot-orthogonality", dev <= 1e-12, f"max deviation {dev:.3e} (tol 1e-12)"))
    frac = check_spectrum_bound()
    checks.append(("doppler-band-limit", frac >= 0.98, f"min in-band fraction {frac:.4f} (need 0.98)"))
    ok = True
    for name, passed, detail in checks:
        ok &= passed
        if verbose:
            print(f"[selftest] {name}: {'PASS' if passed else 'FAIL'} ({detail})")
    if verbose:
        print(f"[selftest] {'all checks passed' if ok else 'FAILURES detected'} in {time.time() - t0:.1f} s")
    return 0 if ok else 3
