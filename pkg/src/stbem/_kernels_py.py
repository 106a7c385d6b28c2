"""Pure-Python/NumPy fallback for the hot kernels.

Same contracts as the compiled twin in ``_kernels_cy.pyx``; results agree
to floating-point noise. The scalar tracker loops here are dominated by
Python interpreter overhead, which is what the compiled version removes.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
COV_FLOOR = 1e-18


def ukf_forward(obs, theta0, p0, q_omega, q_u, meas_scale, eps, wm0, wmi, wc0, wci, round_meas):
    """Scalar sigma-point filter over a bin-index observation sequence.

    State: one DOA (radians), random-walk dynamics. Measurement map:
    meas_scale*sin(theta), optionally rounded to the nearest integer bin.

    Returns (means, covs, pred_means, pred_covs, y_pred, pyy, innov, loglik).
    """
    obs = np.asarray(obs, dtype=np.float64)
    n = obs.shape[0]
    means = np.empty(n)
    covs = np.empty(n)
    pred_means = np.empty(n)
    pred_covs = np.empty(n)
    y_pred = np.empty(n)
    pyys = np.empty(n)
    innovs = np.empty(n)

    m = float(theta0)
    p = float(p0)
    c1 = 1.0 + eps
    loglik = 0.0
    for z in range(n):
        # predict through the identity dynamics sigma points
        s = math.sqrt(c1 * p)
        mp = wm0 * m + wmi * ((m + s) + (m - s))
        pp = wc0 * (m - mp) ** 2 + wci * ((m + s - mp) ** 2 + (m - s - mp) ** 2) + q_omega
        # measurement-space transform of redrawn predicted points
        sp = math.sqrt(c1 * pp)
        x0 = meas_scale * math.sin(mp)
        x1 = meas_scale * math.sin(mp + sp)
        x2 = meas_scale * math.sin(mp - sp)
        if round_meas:
            # floor(x + 0.5) keeps tie behavior identical to the compiled twin
            x0 = math.floor(x0 + 0.5)
            x1 = math.floor(x1 + 0.5)
            x2 = math.floor(x2 + 0.5)
        y = wm0 * x0 + wmi * (x1 + x2)
        d0, d1, d2 = x0 - y, x1 - y, x2 - y
        pyy = wc0 * d0 * d0 + wci * (d1 * d1 + d2 * d2) + q_u
        pxy = wci * sp * (d1 - d2)
        k = pxy / pyy
        innov = obs[z] - y
        m = mp + k * innov
        p = pp - k * k * pyy
        if p < COV_FLOOR:
            p = COV_FLOOR
        loglik += -0.5 * (LOG_2PI + math.log(pyy) + innov * innov / pyy)

        pred_means[z] = mp
        pred_covs[z] = pp
        y_pred[z] = y
        pyys[z] = pyy
        innovs[z] = innov
        means[z] = m
        covs[z] = p
    return means, covs, pred_means, pred_covs, y_pred, pyys, innovs, loglik


def urtss_backward(means, covs, q_omega, eps, wm0, wmi, wc0, wci):
    """Scalar sigma-point RTS backward pass over a filtered trajectory.

    Returns (smoothed_means, smoothed_vars, cross), where cross[z] is the
    smoothed covariance between states z and z+1.
    """
    means = np.asarray(means, dtype=np.float64)
    covs = np.asarray(covs, dtype=np.float64)
    n = means.shape[0]
    sm = means.copy()
    sv = covs.copy()
    cross = np.zeros(n - 1 if n > 1 else 0)
    c1 = 1.0 + eps
    for z in range(n - 2, -1, -1):
        m = means[z]
        p = covs[z]
        s = math.sqrt(c1 * p)
        mp = wm0 * m + wmi * ((m + s) + (m - s))
        pp = wc0 * (m - mp) ** 2 + wci * ((m + s - mp) ** 2 + (m - s - mp) ** 2) + q_omega
        cxy = wci * (s * (m + s - mp) - s * (m - s - mp))
        g = cxy / pp
        sm[z] = m + g * (sm[z + 1] - mp)
        sv[z] = p + g * g * (sv[z + 1] - pp)
        if sv[z] < COV_FLOOR:
            sv[z] = COV_FLOOR
        cross[z] = g * sv[z + 1]
    return sm, sv, cross


def synth_rays(gains, cos_phi, init_phase, sin_doa, n_antennas, n_slots, fd, Ts, d_over_lambda):
    """Multi-ray ULA channel synthesis: (n_antennas, n_slots) complex matrix.

    h[m, n] = (1/sqrt(P)) * sum_p gains[p]
              * exp(-j (2 pi fd Ts cos_phi[p] n + init_phase[p]))
              * exp( j 2 pi m d_over_lambda sin_doa[p])
    """
    gains = np.asarray(gains, dtype=np.complex128)
    cos_phi = np.asarray(cos_phi, dtype=np.float64)
    init_phase = np.asarray(init_phase, dtype=np.float64)
    sin_doa = np.asarray(sin_doa, dtype=np.float64)
    m = np.arange(n_antennas)
    n = np.arange(n_slots)
    steer = np.exp(2j * np.pi * d_over_lambda * np.outer(m, sin_doa))
    temporal = np.exp(-1j * (2.0 * np.pi * fd * Ts * np.outer(cos_phi, n) + init_phase[:, None]))
    return (steer @ (gains[:, None] * temporal)) / math.sqrt(len(gains))
