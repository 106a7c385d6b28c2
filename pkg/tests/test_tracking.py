"""Sigma-point filter/smoother against closed-form Kalman oracles."""

import math

import numpy as np
import pytest

from stbem.tracking import (
    FilterState,
    NoiseParams,
    SingularInnovationError,
    SigmaPointError,
    UtConfig,
    default_meas_fn,
    sigma_points,
    ukf_filter,
    ukf_step,
    urtss_pass,
)


def kf_filter(obs, A, H, Q, R, m0, P0):
    """Closed-form linear Kalman filter (oracle)."""
    n = obs.shape[0]
    dim = m0.shape[0]
    mf = np.empty((n, dim))
    pf = np.empty((n, dim, dim))
    m, p = m0.copy(), P0.copy()
    for z in range(n):
        mp = A @ m
        pp = A @ p @ A.T + Q
        s = H @ pp @ H.T + R
        k = np.linalg.solve(s.T, (pp @ H.T).T).T
        m = mp + k @ (obs[z] - H @ mp)
        p = pp - k @ s @ k.T
        mf[z], pf[z] = m, p
    return mf, pf


def rts_smoother(mf, pf, A, Q):
    """Closed-form RTS smoother (oracle)."""
    n, dim = mf.shape
    ms, ps = mf.copy(), pf.copy()
    cross = np.zeros((n - 1, dim, dim))
    for z in range(n - 2, -1, -1):
        pp = A @ pf[z] @ A.T + Q
        g = np.linalg.solve(pp.T, (pf[z] @ A.T).T).T
        ms[z] = mf[z] + g @ (ms[z + 1] - A @ mf[z])
        ps[z] = pf[z] + g @ (ps[z + 1] - pp) @ g.T
        cross[z] = g @ ps[z + 1]
    return ms, ps, cross


def random_linear_instance(rng, dim, n_obs=30):
    A = np.eye(dim) * rng.uniform(0.7, 1.0) + 0.1 * rng.standard_normal((dim, dim)) / dim
    H = rng.standard_normal((dim, dim)) + np.eye(dim)
    q = 10.0 ** rng.uniform(-4, -1)
    r = 10.0 ** rng.uniform(-3, 0)
    x = np.zeros(dim)
    obs = np.empty((n_obs, dim))
    for z in range(n_obs):
        x = A @ x + rng.normal(0, math.sqrt(q), dim)
        obs[z] = H @ x + rng.normal(0, math.sqrt(r), dim)
    return A, H, q, r, obs


def test_ut_weights_example():
    ut = UtConfig(alpha=1.0, kappa=2.0, R=1)
    assert ut.eps == pytest.approx(2.0)
    wm, wc = ut.weights()
    assert wm == pytest.approx([2 / 3, 1 / 6, 1 / 6])
    assert wc[0] == pytest.approx(8 / 3)
    assert wm.sum() == pytest.approx(1.0, abs=1e-15)


def test_ut_default_kappa_is_three_minus_r():
    assert UtConfig(R=1).kappa_eff == 2.0
    assert UtConfig(R=3).kappa_eff == 0.0


def test_ut_invalid_scaling_rejected():
    with pytest.raises(ValueError):
        UtConfig(alpha=0.0, kappa=2.0, R=1)


def test_sigma_points_zero_cov_collapse():
    ut = UtConfig(R=1)
    pts = sigma_points(FilterState.of(0.7, 0.0), ut)
    assert np.allclose(pts, 0.7)


def test_sigma_points_spread_example():
    ut = UtConfig(alpha=1.0, kappa=2.0, R=1)
    pts = sigma_points(FilterState.of(0.0, 1.0), ut)
    assert pts[:, 0] == pytest.approx([0.0, math.sqrt(3), -math.sqrt(3)])


def test_sigma_points_jitter_retry_on_singular_psd():
    ut = UtConfig(R=2)
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])  # PSD, rank 1: plain Cholesky fails
    pts = sigma_points(FilterState.of([0.0, 0.0], cov), ut)
    assert pts.shape == (5, 2)


def test_sigma_points_non_psd_raises():
    ut = UtConfig(R=2)
    cov = np.array([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(SigmaPointError):
        sigma_points(FilterState.of([0.0, 0.0], cov), ut)


def test_zero_innovation_fixed_point():
    ut = UtConfig(R=1)
    noise = NoiseParams(q_omega=1e-18, q_u=1e-18)
    truth = 0.37
    fn = default_meas_fn(64.0, round_meas=False)
    state, bundle = ukf_step(FilterState.of(truth, 1e-16), fn(truth), noise, ut, fn)
    assert state.mean[0] == pytest.approx(truth, abs=1e-9)


@pytest.mark.parametrize("dim", [1, 3])
def test_ukf_matches_kf_oracle(dim):
    rng = np.random.default_rng(10 + dim)
    for _ in range(10):
        A, H, q, r, obs = random_linear_instance(rng, dim)
        ut = UtConfig(R=dim)
        noise = NoiseParams(q_omega=q, q_u=r)
        m0 = np.zeros(dim)
        P0 = np.eye(dim)
        traj = ukf_filter(
            obs, FilterState.of(m0, P0), noise, ut, meas_fn=lambda v: H @ v, sys_fn=lambda v: A @ v
        )
        mf, pf = kf_filter(obs, A, H, q * np.eye(dim), r * np.eye(dim), m0, P0)
        assert np.max(np.abs(traj.means - mf)) < 1e-8
        assert np.max(np.abs(traj.covs - pf)) < 1e-8


@pytest.mark.parametrize("dim", [1, 3])
def test_urtss_matches_rts_oracle(dim):
    rng = np.random.default_rng(20 + dim)
    for _ in range(5):
        A, H, q, r, obs = random_linear_instance(rng, dim)
        ut = UtConfig(R=dim)
        noise = NoiseParams(q_omega=q, q_u=r)
        traj = ukf_filter(
            obs,
            FilterState.of(np.zeros(dim), np.eye(dim)),
            noise,
            ut,
            meas_fn=lambda v: H @ v,
            sys_fn=lambda v: A @ v,
        )
        sm = urtss_pass(traj, ut, noise, sys_fn=lambda v: A @ v)
        mf, pf = kf_filter(obs, A, H, q * np.eye(dim), r * np.eye(dim), np.zeros(dim), np.eye(dim))
        ms, ps, cross = rts_smoother(mf, pf, A, q * np.eye(dim))
        assert np.max(np.abs(sm.mean - ms)) < 1e-8
        assert np.max(np.abs(sm.var - ps)) < 1e-8
        assert np.max(np.abs(sm.crossvar - cross)) < 1e-8


def test_oracle_holds_for_any_positive_eps():
    rng = np.random.default_rng(30)
    A, H, q, r, obs = random_linear_instance(rng, 1)
    mf, pf = kf_filter(obs, A, H, q * np.eye(1), r * np.eye(1), np.zeros(1), np.eye(1))
    for alpha in (0.8, 1.0, 1.7):
        ut = UtConfig(alpha=alpha, kappa=2.0, R=1)
        assert ut.eps > 0
        traj = ukf_filter(
            obs,
            FilterState.of(0.0, 1.0),
            NoiseParams(q, r),
            ut,
            meas_fn=lambda v: H @ v,
            sys_fn=lambda v: A @ v,
        )
        assert np.max(np.abs(traj.means[:, 0] - mf[:, 0])) < 1e-8


def test_single_block_smoothing_is_identity():
    ut = UtConfig(R=1)
    noise = NoiseParams(1e-4, 1.0)
    st = FilterState.of(0.3, 0.05)
    sm = urtss_pass([st], ut, noise)
    assert sm.mean[0, 0] == pytest.approx(0.3)
    assert sm.var[0, 0, 0] == pytest.approx(0.05)
    assert sm.crossvar.size == 0


def test_smoothed_variance_never_exceeds_filtered():
    ut = UtConfig(R=1)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        q, r = 1e-4, 0.25
        x = np.cumsum(rng.normal(0, math.sqrt(q), 40))
        obs = 50.0 * np.sin(x) + rng.normal(0, math.sqrt(r), 40)
        noise = NoiseParams(q, r)
        fn = default_meas_fn(50.0, round_meas=False)
        traj = ukf_filter(obs, FilterState.of(0.0, 1e-2), noise, ut, fn)
        sm = urtss_pass(traj, ut, noise)
        assert np.all(sm.var[:, 0, 0] <= traj.covs[:, 0, 0] + 1e-12)


def test_posterior_not_looser_than_prior_linear():
    rng = np.random.default_rng(40)
    A, H, q, r, obs = random_linear_instance(rng, 1)
    ut = UtConfig(R=1)
    traj = ukf_filter(
        obs,
        FilterState.of(0.0, 1.0),
        NoiseParams(q, r),
        ut,
        meas_fn=lambda v: H @ v,
        sys_fn=lambda v: A @ v,
    )
    assert np.all(traj.covs[:, 0, 0] <= traj.pred_covs[:, 0, 0] + 1e-15)


def test_measurement_offset_invariance():
    rng = np.random.default_rng(50)
    q, r = 1e-4, 0.3
    x = np.cumsum(rng.normal(0, math.sqrt(q), 30))
    # linear surrogate
    obs = 40.0 * x + rng.normal(0, math.sqrt(r), 30)
    ut = UtConfig(R=1)
    noise = NoiseParams(q, r)
    base = ukf_filter(obs, FilterState.of(0.0, 1e-2), noise, ut, lambda v: 40.0 * v)
    off = ukf_filter(obs + 11.0, FilterState.of(0.0, 1e-2), noise, ut, lambda v: 40.0 * v + 11.0)
    assert np.max(np.abs(base.means - off.means)) < 1e-12
    # nonlinear map
    fn = default_meas_fn(40.0, round_meas=False)
    obs2 = 40.0 * np.sin(x) + rng.normal(0, math.sqrt(r), 30)
    base2 = ukf_filter(obs2, FilterState.of(0.0, 1e-2), noise, ut, fn)
    off2 = ukf_filter(
        obs2 + 11.0, FilterState.of(0.0, 1e-2), noise, ut, lambda v: fn(v) + 11.0
    )
    assert np.max(np.abs(base2.means - off2.means)) < 1e-10


def test_joint_group_mode_tracks_two_users():
    # R = group-size joint state with diagonal process noise and the
    # vector bin-index measurement map
    rng = np.random.default_rng(60)
    q, r = 1e-6, 0.5
    n = 80
    truth = np.cumsum(rng.normal(0, math.sqrt(q), (n, 2)), axis=0) + np.array([0.2, 0.7])
    fn = default_meas_fn(64.0, round_meas=True)
    obs = np.stack([fn(truth[z]) + rng.normal(0, math.sqrt(r), 2) for z in range(n)])
    ut = UtConfig(R=2)
    noise = NoiseParams(q_omega=q, q_u=r)
    traj = ukf_filter(obs, FilterState.of(truth[0], 1e-4 * np.eye(2)), noise, ut, fn)
    rmse = np.sqrt(np.mean((traj.means - truth) ** 2, axis=0))
    raw = np.sqrt(np.mean((np.arcsin(obs / 64.0) - truth) ** 2, axis=0))
    assert np.all(rmse < raw)


def test_singular_innovation_carries_block_index():
    ut = UtConfig(R=1)
    noise = NoiseParams(q_omega=1e-6, q_u=1e-320)
    fn = lambda v: np.array([v[0], v[0]])  # rank-1 two-dim measurement
    obs = np.zeros((4, 2))
    with pytest.raises(SingularInnovationError) as exc:
        ukf_filter(obs, FilterState.of(0.0, 0.0), noise, ut, fn)
    assert exc.value.block == 0
