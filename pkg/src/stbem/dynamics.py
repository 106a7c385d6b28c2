"""Markov DOA dynamics, central-bin observations, and EM noise learning.

The central DOA of each user follows a random walk across blocks and is
observed through the rounded beamspace index of the strongest bin. The
process and measurement noise variances are unknown a priori and are
learned by expectation-maximization: the E-step smooths the DOA
trajectory under the current variances, the M-step refits them from the
smoothed moments in closed form.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .basis import SsiSet, dft_beamspace
from .tracking import (
    FilterState,
    FilterTrajectory,
    NoiseParams,
    SmoothedTrajectory,
    UtConfig,
    default_meas_fn,
    ukf_filter,
    urtss_pass,
)

VARIANCE_FLOOR = 1e-10
NO_SIGNAL_RATIO = 3.0


class NoSignalError(RuntimeError):
    """Received block carries no detectable spatial peak."""


@dataclass(frozen=True)
class ObservationVector:
    """Observed central bin indices over a learning window of blocks."""

    q_obs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q_obs", np.asarray(self.q_obs, dtype=np.float64))
        if self.q_obs.ndim != 1 or self.q_obs.shape[0] < 2:
            raise ValueError("need at least 2 observations")

    @property
    def n_blocks(self) -> int:
        return self.q_obs.shape[0]


@dataclass(frozen=True)
class TrackerModel:
    """Scalar DOA state space: measurement scale, init belief, UT settings.

    meas_fn overrides the default rounded sin map (used for linear-system
    oracles); it must accept an (R,) vector and return the measurement.
    """

    meas_scale: float
    theta0: float
    p0: float
    ut: UtConfig = field(default_factory=UtConfig)
    round_meas: bool = True
    meas_fn: object = None


def observe_central_ssi(x: np.ndarray, predicted: SsiSet, window: int) -> float:
    """Central-bin observation: peak of the slot-averaged beamspace power.

    Searches within +/- window bins of the predicted center and returns
    the peak index unwrapped onto the integer line through the prediction.
    Raises NoSignalError on all-zero input or when the windowed peak does
    not stand out of the typical bin power by NO_SIGNAL_RATIO. The typical
    level is the median bin power: unlike the mean it is not inflated by
    the peaks of co-scheduled users, so a momentarily faded user is not
    misread as absent.
    """
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[:, None]
    if window < predicted.size:
        raise ValueError(f"window {window} smaller than predicted set size {predicted.size}")
    profile = np.mean(np.abs(dft_beamspace(x)) ** 2, axis=1)
    total = profile.sum()
    if total == 0.0:
        raise NoSignalError("all-zero input block")
    m = profile.shape[0]
    line = np.arange(predicted.center - window, predicted.center + window + 1)
    vals = profile[line % m]
    floor = float(np.median(profile))
    if floor <= 0.0 or vals.max() / floor < NO_SIGNAL_RATIO:
        raise NoSignalError(
            f"peak-to-floor power ratio {vals.max() / max(floor, 1e-300):.2f} below {NO_SIGNAL_RATIO}"
        )
    return float(line[int(np.argmax(vals))])


def markov_step(theta_prev: float, q_omega: float, rng: np.random.Generator) -> float:
    """One random-walk step of the central DOA."""
    if q_omega == 0.0:
        return float(theta_prev)
    return float(theta_prev + rng.normal(0.0, math.sqrt(q_omega)))


def track_scalar(obs, model: TrackerModel, noise: NoiseParams) -> FilterTrajectory:
    """Forward filter for the scalar DOA state.

    Dispatches to the compiled kernel for the default sin measurement map;
    a custom meas_fn falls back to the generic sigma-point filter.
    """
    obs = np.asarray(obs, dtype=np.float64)
    init = FilterState.of(model.theta0, model.p0)
    if model.meas_fn is not None or model.ut.R != 1:
        fn = model.meas_fn if model.meas_fn is not None else default_meas_fn(model.meas_scale, model.round_meas)
        return ukf_filter(obs, init, noise, model.ut, fn)
    wm, wc = model.ut.weights()
    means, covs, pm, pc, yp, pyy, innov, ll = kernels.ukf_forward(
        obs,
        model.theta0,
        model.p0,
        noise.q_omega,
        noise.q_u,
        model.meas_scale,
        model.ut.eps,
        wm[0],
        wm[1],
        wc[0],
        wc[1],
        model.round_meas,
    )
    n = obs.shape[0]
    return FilterTrajectory(
        means=means.reshape(n, 1),
        covs=covs.reshape(n, 1, 1),
        pred_means=pm.reshape(n, 1),
        pred_covs=pc.reshape(n, 1, 1),
        y_pred=yp.reshape(n, 1),
        pyy=pyy.reshape(n, 1, 1),
        innovations=innov.reshape(n, 1),
        loglik=ll,
    )


def smooth_scalar(traj: FilterTrajectory, model: TrackerModel, noise: NoiseParams) -> SmoothedTrajectory:
    """Backward smoothing of a scalar filtered trajectory (kernel-backed)."""
    if traj.means.shape[1] != 1:
        return urtss_pass(traj, model.ut, noise)
    wm, wc = model.ut.weights()
    sm, sv, cross = kernels.urtss_backward(
        traj.means[:, 0], traj.covs[:, 0, 0], noise.q_omega, model.ut.eps, wm[0], wm[1], wc[0], wc[1]
    )
    n = sm.shape[0]
    return SmoothedTrajectory(
        mean=sm.reshape(n, 1), var=sv.reshape(n, 1, 1), crossvar=cross.reshape(max(n - 1, 0), 1, 1)
    )


def _ut_meas_moments(mean: np.ndarray, var: np.ndarray, ut: UtConfig, meas1d):
    """Unscented E{m(theta)} and E{m(theta)^2} under per-block Gaussians."""
    wm, _ = ut.weights()
    s = np.sqrt((1.0 + ut.eps) * var)
    pts = np.stack([mean, mean + s, mean - s])
    m_pts = meas1d(pts)
    em = wm[0] * m_pts[0] + wm[1] * (m_pts[1] + m_pts[2])
    em2 = wm[0] * m_pts[0] ** 2 + wm[1] * (m_pts[1] ** 2 + m_pts[2] ** 2)
    return em, em2


def _meas1d_of(model: TrackerModel):
    if model.meas_fn is None:
        return lambda th: model.meas_scale * np.sin(th)
    fn = model.meas_fn
    return np.vectorize(lambda t: float(np.atleast_1d(fn(np.atleast_1d(t)))[0]))


def em_iterate(
    obs: ObservationVector,
    current: NoiseParams,
    model: TrackerModel,
) -> tuple[NoiseParams, SmoothedTrajectory, float, bool]:
    """One EM cycle: smooth under `current`, refit both variances.

    Returns the updated parameters, the E-step smoothed trajectory, the
    innovation log-likelihood under `current`, and a flag marking whether
    an update was clamped to the variance floor.
    """
    traj = track_scalar(obs.q_obs, model, current)
    smooth = smooth_scalar(traj, model, current)
    mean = smooth.mean[:, 0]
    var = smooth.var[:, 0, 0]
    cross = smooth.crossvar[:, 0, 0] if smooth.crossvar.size else np.zeros(0)

    em, em2 = _ut_meas_moments(mean, var, model.ut, _meas1d_of(model))
    q = obs.q_obs
    q_u = float(np.mean(q**2) + np.mean(em2) - 2.0 * np.mean(q * em))

    e2 = mean**2 + var
    e_cross = mean[:-1] * mean[1:] + cross
    q_omega = float(np.mean(e2[1:] + e2[:-1] - 2.0 * e_cross))

    clamped = False
    if q_u < VARIANCE_FLOOR:
        q_u = VARIANCE_FLOOR
        clamped = True
    if q_omega < VARIANCE_FLOOR:
        q_omega = VARIANCE_FLOOR
        clamped = True
    if clamped:
        warnings.warn("EM variance update clamped to floor", RuntimeWarning, stacklevel=2)
    return NoiseParams(q_omega=q_omega, q_u=q_u), smooth, traj.loglik, clamped


@dataclass
class EmResult:
    params: NoiseParams
    smoothed: SmoothedTrajectory
    loglik_trace: list[float]
    n_iters: int
    converged: bool
    clamped: bool


def em_learn(
    obs: ObservationVector,
    init: NoiseParams,
    model: TrackerModel,
    max_iters: int = 20,
    tol: float = 1e-3,
) -> EmResult:
    """Iterate em_iterate until the relative parameter change drops below tol.

    The returned smoothed trajectory is recomputed under the final
    parameters; loglik_trace[i] is the innovation log-likelihood under the
    parameters entering iteration i.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    params = init
    trace: list[float] = []
    clamped_any = False
    converged = False
    n_done = 0
    for _ in range(max_iters):
        new, _, ll, clamped = em_iterate(obs, params, model)
        trace.append(ll)
        clamped_any |= clamped
        n_done += 1
        rel = max(
            abs(new.q_omega - params.q_omega) / params.q_omega,
            abs(new.q_u - params.q_u) / params.q_u,
        )
        params = new
        if rel < tol:
            converged = True
            break
    traj = track_scalar(obs.q_obs, model, params)
    smoothed = smooth_scalar(traj, model, params)
    return EmResult(
        params=params,
        smoothed=smoothed,
        loglik_trace=trace,
        n_iters=n_done,
        converged=converged,
        clamped=clamped_any,
    )
