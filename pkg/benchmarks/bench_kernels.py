"""Benchmark the compiled kernels against the pure-NumPy fallback.

Run:  python benchmarks/bench_kernels.py

The tracker recursions are sequential and Python-overhead bound, which is
where the compiled backend pays off; ray synthesis in the fallback is a
BLAS matrix product and often competitive on large shapes.
"""

import time

import numpy as np

from stbem import _kernels_py as kpy

try:
    from stbem import _kernels_cy as kcy
except ImportError:
    kcy = None


def _time(fn, *args, repeat=5):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_tracker(n_blocks=20000):
    rng = np.random.default_rng(0)
    obs = np.rint(64 * np.sin(0.4 + np.cumsum(rng.normal(0, 1e-3, n_blocks))) + rng.normal(0, 1, n_blocks))
    args = (obs, 0.4, 3e-4, 2e-6, 1.0, 64.0, 2.0, 2 / 3, 1 / 6, 8 / 3, 1 / 6, True)
    t_py, out_py = _time(kpy.ukf_forward, *args)
    print(f"ukf_forward   python : {t_py * 1e6 / n_blocks:8.2f} us/block")
    if kcy is not None:
        t_cy, out_cy = _time(kcy.ukf_forward, *args)
        dev = max(float(np.max(np.abs(a - b))) for a, b in zip(out_py[:-1], out_cy[:-1]))
        print(f"ukf_forward   cython : {t_cy * 1e6 / n_blocks:8.2f} us/block "
              f"({t_py / t_cy:5.1f}x, max dev {dev:.1e})")
    means, covs = out_py[0], out_py[1]
    s_args = (means, covs, 2e-6, 2.0, 2 / 3, 1 / 6, 8 / 3, 1 / 6)
    t_py, sm_py = _time(kpy.urtss_backward, *s_args)
    print(f"urtss_backward python: {t_py * 1e6 / n_blocks:8.2f} us/block")
    if kcy is not None:
        t_cy, sm_cy = _time(kcy.urtss_backward, *s_args)
        dev = max(float(np.max(np.abs(a - b))) for a, b in zip(sm_py, sm_cy))
        print(f"urtss_backward cython: {t_cy * 1e6 / n_blocks:8.2f} us/block "
              f"({t_py / t_cy:5.1f}x, max dev {dev:.1e})")


def bench_synth(m=128, n=100, p=16, reps=200):
    rng = np.random.default_rng(1)
    gains = rng.standard_normal(p) + 1j * rng.standard_normal(p)
    cos_phi = rng.uniform(-1, 1, p)
    phases = rng.uniform(0, 2 * np.pi, p)
    sin_doa = rng.uniform(-0.9, 0.9, p)
    args = (gains, cos_phi, phases, sin_doa, m, n, 200.0, 1e-4, 0.5)

    def many(fn):
        def run(*a):
            for _ in range(reps):
                out = fn(*a)
            return out

        return run

    t_py, out_py = _time(many(kpy.synth_rays), *args, repeat=3)
    print(f"synth_rays    python : {t_py * 1e6 / reps:8.2f} us/block (M={m}, N={n}, P={p})")
    if kcy is not None:
        t_cy, out_cy = _time(many(kcy.synth_rays), *args, repeat=3)
        dev = float(np.max(np.abs(out_py - out_cy)))
        print(f"synth_rays    cython : {t_cy * 1e6 / reps:8.2f} us/block "
              f"({t_py / t_cy:5.1f}x, max dev {dev:.1e})")


if __name__ == "__main__":
    if kcy is None:
        print("compiled backend not available; showing fallback timings only")
    bench_tracker()
    bench_synth()
