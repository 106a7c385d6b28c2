"""Blind angular-spread estimation from the received-signal covariance.

A first-order Taylor expansion of the steering vector around the tracked
central DOA turns the received covariance into a linear model whose
diagonal exposes the ratio of derivative-direction to main-direction
power, which equals the angular offset variance. Under uniform offsets
the maximum spread is sqrt(3) times the offset standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import SsiSet, dft_beamspace
from .channel import steering_vector
from .config import SystemConfig


class DegenerateGeometryError(np.linalg.LinAlgError):
    """Two tracked DOAs are too close for the Taylor dictionary to separate."""


@dataclass(frozen=True)
class TaylorDictionary:
    """M x 2K matrix [a(theta_1)..a(theta_K), da(theta_1)..da(theta_K)]."""

    A: np.ndarray
    thetas: tuple[float, ...]

    @classmethod
    def build(cls, cfg: SystemConfig, thetas) -> "TaylorDictionary":
        thetas = tuple(float(t) for t in thetas)
        cols = [steering_vector(cfg, t) for t in thetas]
        cols += [steering_derivative(cfg, t) for t in thetas]
        return cls(A=np.stack(cols, axis=1), thetas=thetas)


@dataclass(frozen=True)
class SampleCovariance:
    """Hermitian PSD estimate of E[x x^H] with its snapshot count."""

    rx: np.ndarray
    n_samples: int

    def __post_init__(self):
        rx = np.asarray(self.rx)
        if rx.ndim != 2 or rx.shape[0] != rx.shape[1]:
            raise ValueError(f"covariance must be square, got {rx.shape}")
        if np.max(np.abs(rx - rx.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(rx))):
            raise ValueError("covariance is not Hermitian")


def steering_derivative(cfg: SystemConfig, theta: float) -> np.ndarray:
    """Elementwise derivative of the steering vector w.r.t. the DOA."""
    m = np.arange(cfg.M)
    w = 2.0 * np.pi * cfg.d_over_lambda
    return 1j * w * m * math.cos(theta) * np.exp(1j * w * m * math.sin(theta))


def sample_covariance(x: np.ndarray) -> SampleCovariance:
    """(1/L) sum of snapshot outer products, Hermitian-symmetrized."""
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] < 1:
        raise ValueError("need at least one snapshot")
    rx = (x @ x.conj().T) / x.shape[1]
    rx = 0.5 * (rx + rx.conj().T)
    return SampleCovariance(rx=rx, n_samples=x.shape[1])


def estimate_noise_floor(rx: SampleCovariance, n_sources: int) -> float:
    """Mean of the M - 2*n_sources smallest eigenvalues of the covariance."""
    w = np.linalg.eigvalsh(rx.rx)
    keep = rx.rx.shape[0] - 2 * n_sources
    if keep < 1:
        raise ValueError("no noise subspace left to estimate the floor from")
    return float(np.mean(w[:keep]))


def estimate_sigma(
    rx: SampleCovariance,
    thetas,
    cfg: SystemConfig,
    noise_var: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-user angular offset variance and maximum spread.

    thetas are the tracked central DOAs of the co-scheduled users. With
    noise_var None the floor is estimated from the smallest eigenvalues.
    Returns (sigma2, max_as); negative ratios are clamped to zero.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    k = thetas.shape[0]
    if 2 * k > cfg.M:
        raise ValueError(f"need 2K <= M, got K={k}, M={cfg.M}")
    for i in range(k):
        for j in range(i + 1, k):
            if abs(thetas[i] - thetas[j]) < 1e-6:
                raise DegenerateGeometryError(
                    f"tracked DOAs {i} and {j} closer than 1e-6 rad"
                )
    if noise_var is None:
        noise_var = estimate_noise_floor(rx, k)
    dic = TaylorDictionary.build(cfg, thetas)
    pinv = np.linalg.pinv(dic.A, rcond=1e-10)
    sig = pinv @ (rx.rx - noise_var * np.eye(cfg.M)) @ pinv.conj().T
    main = np.real(np.diag(sig)[:k])
    deriv = np.real(np.diag(sig)[k:])
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma2 = np.where(main > 0, deriv / main, 0.0)
    sigma2 = np.clip(sigma2, 0.0, None)
    return sigma2, np.sqrt(3.0 * sigma2)


def moving_median(values: np.ndarray, width: int = 3) -> np.ndarray:
    """Centered moving median with edge-truncated windows."""
    values = np.asarray(values, dtype=np.float64)
    half = width // 2
    out = np.empty_like(values)
    for i in range(values.shape[0]):
        lo = max(0, i - half)
        hi = min(values.shape[0], i + half + 1)
        out[i] = np.median(values[lo:hi])
    return out


def expected_beam_profile(
    cfg: SystemConfig, central_doa: float, max_as: float, n_grid: int = 201
) -> np.ndarray:
    """Ensemble-average beamspace power of a uniform ray cluster.

    Averages |F a(theta)|^2 over a DOA grid spanning the cluster; the ray
    gains are unit-variance so this is the expected per-bin power profile.
    """
    if max_as == 0.0:
        grid = np.array([central_doa])
    else:
        grid = np.linspace(central_doa - max_as, central_doa + max_as, n_grid)
    m = np.arange(cfg.M)
    steer = np.exp(2j * np.pi * cfg.d_over_lambda * np.outer(m, np.sin(grid)))
    beams = dft_beamspace(steer)
    return np.mean(np.abs(beams) ** 2, axis=1)


def implied_support(
    cfg: SystemConfig, central_doa: float, max_as: float, eta: float = 0.98
) -> SsiSet:
    """Spatial signature predicted to hold a fraction eta of cluster power.

    The finite-M leakage skirt makes this wider than the floor/ceil
    interval of the extreme rays; the window is placed around the central
    electrical angle.
    """
    profile = expected_beam_profile(cfg, central_doa, max_as)
    m = cfg.M
    target = eta * profile.sum()
    ext = np.concatenate([profile, profile])
    cs = np.concatenate([[0.0], np.cumsum(ext)])
    center = round(cfg.beam_scale * math.sin(central_doa))
    center_mod = center % m
    for w in range(1, m + 1):
        sums = cs[w : w + m] - cs[:m]
        ok = np.flatnonzero(sums >= target)
        if not ok.size:
            continue
        # prefer the window whose midpoint is closest to the center bin
        mids = ok + (w - 1) / 2.0
        dist = np.abs((mids - center_mod + m / 2.0) % m - m / 2.0)
        start = int(ok[int(np.argmin(dist))])
        off = (center_mod - start) % m
        if off < w:
            lo = center - off
            hi = lo + w - 1
        else:
            # degenerate at tiny eta: grow the window to include the center
            gap_up = (start - center_mod) % m
            gap_down = (center_mod - (start + w - 1)) % m
            if gap_up <= gap_down:
                lo, hi = center, center + min(gap_up + w - 1, m - 1)
            else:
                lo, hi = center - min(gap_down + w - 1, m - 1), center
        return SsiSet(lo=lo, hi=hi, center=center, m=m)
    return SsiSet(lo=center, hi=center + m - 1, center=center, m=m)


def dft_search_support(
    profile: np.ndarray, center_bin: int, window: int, noise_var: float, eta: float = 0.98
) -> int:
    """Support size read directly off a noisy beamspace profile.

    Subtracts the known noise floor inside a +/- window around the peak
    and counts the smallest contiguous span holding eta of the remaining
    power. Fluctuates strongly with noise and leakage; serves as the
    searching baseline.
    """
    m = profile.shape[0]
    idx = np.arange(center_bin - window, center_bin + window + 1) % m
    seg = np.clip(profile[idx] - noise_var, 0.0, None)
    if seg.sum() == 0.0:
        return 1
    return contiguous_support_size_linear(seg, eta)


def contiguous_support_size_linear(seg: np.ndarray, eta: float) -> int:
    """Smallest contiguous (non-circular) span holding eta of a segment's sum."""
    target = eta * seg.sum()
    n = seg.shape[0]
    cs = np.concatenate([[0.0], np.cumsum(seg)])
    for w in range(1, n + 1):
        if np.max(cs[w:] - cs[: n - w + 1]) >= target:
            return w
    return n
