# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: scalar UKF/URTSS recursions and ray synthesis.

Contracts match stbem._kernels_py exactly; see that module for docs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, floor, log, sin, sqrt

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453
cdef double COV_FLOOR = 1e-18


def ukf_forward(obs, double theta0, double p0, double q_omega, double q_u,
                double meas_scale, double eps, double wm0, double wmi,
                double wc0, double wci, bint round_meas):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] obs_arr = np.ascontiguousarray(obs, dtype=np.float64)
    cdef Py_ssize_t n = obs_arr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] means = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] covs = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pred_means = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pred_covs = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y_pred = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pyys = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] innovs = np.empty(n)

    cdef double m = theta0, p = p0, c1 = 1.0 + eps
    cdef double loglik = 0.0
    cdef double s, mp, pp, sp, x0, x1, x2, y, d0, d1, d2, pyy, pxy, k, innov
    cdef Py_ssize_t z
    for z in range(n):
        s = sqrt(c1 * p)
        mp = wm0 * m + wmi * ((m + s) + (m - s))
        pp = wc0 * (m - mp) ** 2 + wci * ((m + s - mp) ** 2 + (m - s - mp) ** 2) + q_omega
        sp = sqrt(c1 * pp)
        x0 = meas_scale * sin(mp)
        x1 = meas_scale * sin(mp + sp)
        x2 = meas_scale * sin(mp - sp)
        if round_meas:
            x0 = floor(x0 + 0.5)
            x1 = floor(x1 + 0.5)
            x2 = floor(x2 + 0.5)
        y = wm0 * x0 + wmi * (x1 + x2)
        d0 = x0 - y
        d1 = x1 - y
        d2 = x2 - y
        pyy = wc0 * d0 * d0 + wci * (d1 * d1 + d2 * d2) + q_u
        pxy = wci * sp * (d1 - d2)
        k = pxy / pyy
        innov = obs_arr[z] - y
        m = mp + k * innov
        p = pp - k * k * pyy
        if p < COV_FLOOR:
            p = COV_FLOOR
        loglik += -0.5 * (LOG_2PI + log(pyy) + innov * innov / pyy)

        pred_means[z] = mp
        pred_covs[z] = pp
        y_pred[z] = y
        pyys[z] = pyy
        innovs[z] = innov
        means[z] = m
        covs[z] = p
    return means, covs, pred_means, pred_covs, y_pred, pyys, innovs, loglik


def urtss_backward(means, covs, double q_omega, double eps, double wm0,
                   double wmi, double wc0, double wci):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ms = np.ascontiguousarray(means, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ps = np.ascontiguousarray(covs, dtype=np.float64)
    cdef Py_ssize_t n = ms.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sm = ms.copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sv = ps.copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cross = np.zeros(n - 1 if n > 1 else 0)
    cdef double c1 = 1.0 + eps
    cdef double m, p, s, mp, pp, cxy, g
    cdef Py_ssize_t z
    for z in range(n - 2, -1, -1):
        m = ms[z]
        p = ps[z]
        s = sqrt(c1 * p)
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


def synth_rays(gains, cos_phi, init_phase, sin_doa, Py_ssize_t n_antennas,
               Py_ssize_t n_slots, double fd, double Ts, double d_over_lambda):
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] g = np.ascontiguousarray(gains, dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cp = np.ascontiguousarray(cos_phi, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ph = np.ascontiguousarray(init_phase, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sd = np.ascontiguousarray(sin_doa, dtype=np.float64)
    cdef Py_ssize_t P = g.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] steer = np.empty((n_antennas, P), dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] temporal = np.empty((P, n_slots), dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] out = np.zeros((n_antennas, n_slots), dtype=np.complex128)
    cdef double two_pi = 6.283185307179586
    cdef double w, arg, scale
    cdef double complex acc
    cdef Py_ssize_t m, p, t

    for p in range(P):
        w = two_pi * d_over_lambda * sd[p]
        for m in range(n_antennas):
            arg = w * m
            steer[m, p] = cos(arg) + 1j * sin(arg)
    for p in range(P):
        w = two_pi * fd * Ts * cp[p]
        for t in range(n_slots):
            arg = -(w * t + ph[p])
            temporal[p, t] = g[p] * (cos(arg) + 1j * sin(arg))
    scale = 1.0 / sqrt(<double> P)
    for m in range(n_antennas):
        for t in range(n_slots):
            acc = 0.0
            for p in range(P):
                acc = acc + steer[m, p] * temporal[p, t]
            out[m, t] = acc * scale
    return out
