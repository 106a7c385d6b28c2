"""Sigma-point Kalman filtering and Rauch-Tung-Striebel smoothing.

Generic in the state dimension R: scalar per-user DOA trackers use R=1;
a joint per-group mode stacks the group's DOAs with diagonal process
noise. On linear-Gaussian systems the unscented transform is exact, so
these routines reproduce the closed-form KF/RTSS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class SingularInnovationError(np.linalg.LinAlgError):
    """Innovation covariance not invertible; carries the block index when known."""

    def __init__(self, msg, block=None):
        super().__init__(msg)
        self.block = block


class SigmaPointError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class NoiseParams:
    """Process / measurement noise variances of the DOA state space.

    q_omega is in radians^2 (random-walk increments), q_u in bins^2
    (central-index observation noise). The joint-group mode may pass
    per-dimension vectors (diagonal noise) or full matrices instead of
    scalars.
    """

    q_omega: float
    q_u: float

    def __post_init__(self):
        for name, v in (("q_omega", self.q_omega), ("q_u", self.q_u)):
            arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
            if arr.ndim == 1 and np.any(arr <= 0):
                raise ValueError(f"{name} must be > 0, got {v}")


@dataclass(frozen=True)
class UtConfig:
    """Unscented-transform scaling.

    kappa defaults to 3 - R; eps = alpha^2 (R + kappa) - R must exceed -R.
    Mean weights are eps/(R+eps) for the center and 1/(2(R+eps)) for the
    spread points, which sum to one; the center covariance weight adds the
    usual 1 - alpha^2 + beta correction.
    """

    alpha: float = 1.0
    kappa: float | None = None
    beta_prior: float = 2.0
    R: int = 1

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if self.R + self.eps <= 0:
            raise ValueError(f"need alpha^2 (R + kappa) > 0, got eps={self.eps} at R={self.R}")

    @property
    def kappa_eff(self) -> float:
        return 3.0 - self.R if self.kappa is None else self.kappa

    @property
    def eps(self) -> float:
        return self.alpha**2 * (self.R + self.kappa_eff) - self.R

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        r, e = self.R, self.eps
        wm = np.full(2 * r + 1, 1.0 / (2.0 * (r + e)))
        wc = wm.copy()
        wm[0] = e / (r + e)
        wc[0] = e / (r + e) + 1.0 - self.alpha**2 + self.beta_prior
        return wm, wc


@dataclass(frozen=True)
class FilterState:
    """Gaussian state belief: mean (R,) and covariance (R, R)."""

    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def of(cls, mean, cov) -> "FilterState":
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        return cls(mean=mean, cov=cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class GainBundle:
    """Gain and the measurement-space moments behind one update."""

    kalman_gain: np.ndarray
    pxy: np.ndarray
    pyy: np.ndarray
    y_pred: np.ndarray


@dataclass
class SmoothedTrajectory:
    """Posterior state statistics over a block sequence.

    crossvar[z] is the smoothed covariance between states z and z+1,
    needed by the EM maximization step.
    """

    mean: np.ndarray
    var: np.ndarray
    crossvar: np.ndarray


@dataclass
class FilterTrajectory:
    """Forward-pass record: filtered and predicted moments per block."""

    means: np.ndarray
    covs: np.ndarray
    pred_means: np.ndarray
    pred_covs: np.ndarray
    y_pred: np.ndarray
    pyy: np.ndarray
    innovations: np.ndarray
    loglik: float = 0.0

    def states(self) -> list[FilterState]:
        return [FilterState.of(self.means[z], self.covs[z]) for z in range(self.means.shape[0])]


def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    if cov.shape == (1, 1):
        v = cov[0, 0]
        if -1e-12 < v < 0:
            v = 0.0
        if v < 0:
            raise SigmaPointError(f"negative scalar variance {v}")
        return np.array([[math.sqrt(v)]])
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jittered = cov + 1e-12 * np.eye(cov.shape[0])
        try:
            return np.linalg.cholesky(jittered)
        except np.linalg.LinAlgError as exc:
            raise SigmaPointError("covariance not PSD even after jitter") from exc


def sigma_points(state: FilterState, ut: UtConfig) -> np.ndarray:
    """2R+1 points: the mean and +/- sqrt(R+eps) times each sqrt-cov column."""
    r = state.dim
    if r != ut.R:
        raise ValueError(f"state dim {r} does not match UtConfig.R={ut.R}")
    root = _sqrt_psd(state.cov) * math.sqrt(r + ut.eps)
    pts = np.empty((2 * r + 1, r))
    pts[0] = state.mean
    for i in range(r):
        pts[1 + i] = state.mean + root[:, i]
        pts[1 + r + i] = state.mean - root[:, i]
    return pts


def _apply(fn, pts: np.ndarray) -> np.ndarray:
    return np.stack([np.atleast_1d(np.asarray(fn(p), dtype=np.float64)) for p in pts], axis=0)


def _noise_matrix(value, dim: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        return float(arr[0]) * np.eye(dim)
    if arr.ndim == 1 and arr.size == dim:
        return np.diag(arr)
    return np.atleast_2d(arr)


def default_meas_fn(beam_scale: float, round_meas: bool = True):
    """Bin-index measurement map q = round(beam_scale * sin(theta)).

    Rounding mirrors what the observation pipeline produces; pass
    round_meas=False for the smooth map.
    """

    def fn(x):
        y = beam_scale * np.sin(np.atleast_1d(x))
        return np.floor(y + 0.5) if round_meas else y

    return fn


def _predict(state: FilterState, noise: NoiseParams, ut: UtConfig, sys_fn):
    wm, wc = ut.weights()
    pts = sigma_points(state, ut)
    prop = _apply(sys_fn, pts) if sys_fn is not None else pts
    m_pred = wm @ prop
    dx = prop - m_pred
    p_pred = (dx.T * wc) @ dx + _noise_matrix(noise.q_omega, state.dim)
    p_pred = 0.5 * (p_pred + p_pred.T)
    cxy = ((pts - state.mean).T * wc) @ dx
    return FilterState.of(m_pred, p_pred), cxy


def _update(pred: FilterState, obs, noise: NoiseParams, ut: UtConfig, meas_fn, block):
    wm, wc = ut.weights()
    obs = np.atleast_1d(np.asarray(obs, dtype=np.float64))
    pts = sigma_points(pred, ut)
    zeta_pts = _apply(meas_fn, pts)
    y_pred = wm @ zeta_pts
    dz = zeta_pts - y_pred
    pyy = (dz.T * wc) @ dz + _noise_matrix(noise.q_u, y_pred.shape[0])
    pxy = ((pts - pred.mean).T * wc) @ dz
    sign, _ = np.linalg.slogdet(pyy)
    if sign <= 0:
        raise SingularInnovationError("innovation covariance not positive definite", block=block)
    gain = np.linalg.solve(pyy, pxy.T).T
    mean = pred.mean + gain @ (obs - y_pred)
    cov = pred.cov - gain @ pyy @ gain.T
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    if w.min() < 0:
        cov = (v * np.maximum(w, 1e-12)) @ v.T
    post = FilterState.of(mean, cov)
    return post, GainBundle(kalman_gain=gain, pxy=pxy, pyy=pyy, y_pred=y_pred)


def ukf_step(
    state: FilterState,
    obs,
    noise: NoiseParams,
    ut: UtConfig,
    meas_fn,
    sys_fn=None,
    block: int | None = None,
) -> tuple[FilterState, GainBundle]:
    """One predict/update cycle of the unscented filter.

    sys_fn defaults to the identity random walk; meas_fn maps an R-vector
    to the measurement space. Predicted sigma points are redrawn from the
    predicted moments before the measurement transform; the returned
    covariance is symmetrized and floored to PSD.
    """
    pred, _ = _predict(state, noise, ut, sys_fn)
    return _update(pred, obs, noise, ut, meas_fn, block)


def ukf_filter(
    obs_seq,
    init: FilterState,
    noise: NoiseParams,
    ut: UtConfig,
    meas_fn,
    sys_fn=None,
) -> FilterTrajectory:
    """Run the filter over an observation sequence, recording all moments.

    loglik accumulates the Gaussian innovation decomposition of the
    observed-data likelihood under the supplied noise parameters.
    """
    obs_seq = np.asarray(obs_seq, dtype=np.float64)
    if obs_seq.ndim == 1:
        obs_seq = obs_seq[:, None]
    n = obs_seq.shape[0]
    r = init.dim
    ny = obs_seq.shape[1]
    traj = FilterTrajectory(
        means=np.empty((n, r)),
        covs=np.empty((n, r, r)),
        pred_means=np.empty((n, r)),
        pred_covs=np.empty((n, r, r)),
        y_pred=np.empty((n, ny)),
        pyy=np.empty((n, ny, ny)),
        innovations=np.empty((n, ny)),
    )
    state = init
    ll = 0.0
    for z in range(n):
        pred, _ = _predict(state, noise, ut, sys_fn)
        state, bundle = _update(pred, obs_seq[z], noise, ut, meas_fn, block=z)
        innov = obs_seq[z] - bundle.y_pred
        _, logdet = np.linalg.slogdet(bundle.pyy)
        ll += -0.5 * (
            ny * math.log(2.0 * math.pi) + logdet + innov @ np.linalg.solve(bundle.pyy, innov)
        )
        traj.pred_means[z] = pred.mean
        traj.pred_covs[z] = pred.cov
        traj.means[z] = state.mean
        traj.covs[z] = state.cov
        traj.y_pred[z] = bundle.y_pred
        traj.pyy[z] = bundle.pyy
        traj.innovations[z] = innov
    traj.loglik = ll
    return traj


def urtss_pass(
    filtered: list[FilterState] | FilterTrajectory,
    ut: UtConfig,
    noise: NoiseParams,
    sys_fn=None,
) -> SmoothedTrajectory:
    """Backward sigma-point RTS smoothing over the filtered states.

    The last block's smoothed statistics equal its filtered ones; the
    returned cross-covariances feed the EM expectation step.
    """
    states = filtered.states() if isinstance(filtered, FilterTrajectory) else list(filtered)
    if not states:
        raise ValueError("need at least one filtered state")
    n = len(states)
    r = states[0].dim
    sm = np.empty((n, r))
    sv = np.empty((n, r, r))
    cross = np.zeros((max(n - 1, 0), r, r))
    sm[n - 1] = states[n - 1].mean
    sv[n - 1] = states[n - 1].cov
    for z in range(n - 2, -1, -1):
        pred, cxy = _predict(states[z], noise, ut, sys_fn)
        sign, _ = np.linalg.slogdet(pred.cov)
        if sign <= 0:
            raise SingularInnovationError("singular predicted covariance", block=z)
        gain = np.linalg.solve(pred.cov, cxy.T).T
        sm[z] = states[z].mean + gain @ (sm[z + 1] - pred.mean)
        pv = states[z].cov + gain @ (sv[z + 1] - pred.cov) @ gain.T
        sv[z] = 0.5 * (pv + pv.T)
        cross[z] = gain @ sv[z + 1]
    return SmoothedTrajectory(mean=sm, var=sv, crossvar=cross)
