"""Beamspace (DFT) and temporal (complex-exponential) expansions, SSI sets.

The spatial expansion spans a channel by the DFT columns indexed by a small
contiguous interval of beamspace bins (the spatial signature). The temporal
expansion captures within-block Doppler variation with mu+1 complex
exponentials centered on DC. Their composition reduces an M x N channel to
a (set size) x (mu+1) coefficient grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig


@dataclass(frozen=True)
class SsiSet:
    """Contiguous (mod m) interval of beamspace bins with its central index.

    lo <= center <= hi hold on the unwrapped integer line; members are the
    line values reduced mod m. Wrapping intervals are represented by bounds
    outside [0, m).
    """

    lo: int
    hi: int
    center: int
    m: int

    def __post_init__(self):
        if not self.lo <= self.center <= self.hi:
            raise ValueError(f"need lo <= center <= hi, got {self.lo}, {self.center}, {self.hi}")
        if self.hi - self.lo + 1 > self.m:
            raise ValueError(f"interval size {self.hi - self.lo + 1} exceeds m={self.m}")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    @property
    def wraps(self) -> bool:
        return (self.lo % self.m) + self.size - 1 >= self.m

    def bins(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1) % self.m

    def contains(self, q: int) -> bool:
        return ((q - self.lo) % self.m) < self.size

    def overlaps(self, other: "SsiSet") -> bool:
        return any(other.contains(int(b)) for b in self.bins())

    def shifted(self, delta: int) -> "SsiSet":
        return SsiSet(self.lo + delta, self.hi + delta, self.center + delta, self.m)

    def padded(self, size: int) -> "SsiSet":
        """Grow (or trim around the center) to exactly `size` bins."""
        size = max(1, min(size, self.m))
        lo, hi = self.lo, self.hi
        while hi - lo + 1 < size:
            if (self.center - lo) <= (hi - self.center):
                lo -= 1
            else:
                hi += 1
        while hi - lo + 1 > size:
            if (self.center - lo) >= (hi - self.center):
                lo += 1
            else:
                hi -= 1
        return SsiSet(lo=lo, hi=hi, center=min(max(self.center, lo), hi), m=self.m)


def ssi_interval(center: int, size: int, m: int) -> SsiSet:
    """Interval of a given size centered (left-biased) on a bin."""
    size = max(1, min(size, m))
    lo = center - (size - 1) // 2
    return SsiSet(lo, lo + size - 1, center, m)


@dataclass(frozen=True)
class BemConfig:
    """Temporal basis order and block length.

    mu is forced even (the basis is indexed r - mu/2); an odd request is
    rounded up.
    """

    mu: int
    N: int

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.mu % 2:
            object.__setattr__(self, "mu", self.mu + 1)
        if self.N < 1:
            raise ValueError("N must be >= 1")

    @classmethod
    def for_system(cls, cfg: SystemConfig) -> "BemConfig":
        """Smallest even order with enough Doppler degrees of freedom."""
        need = 2 * math.ceil(cfg.fd * cfg.N * cfg.Ts)
        return cls(mu=max(2, need), N=cfg.N)


@dataclass(frozen=True)
class BemCoefficients:
    """Per-user coefficient matrix, one (mu+1)-row per beamspace bin."""

    gamma: np.ndarray

    @property
    def mu(self) -> int:
        return self.gamma.shape[1] - 1


def dft_beamspace(h: np.ndarray) -> np.ndarray:
    """Unitary M-point DFT along axis 0: [F]_pq = exp(-j2pi pq/M)/sqrt(M)."""
    h = np.asarray(h)
    return np.fft.fft(h, axis=0) / math.sqrt(h.shape[0])


def inverse_beamspace(ht: np.ndarray) -> np.ndarray:
    ht = np.asarray(ht)
    return np.fft.ifft(ht, axis=0) * math.sqrt(ht.shape[0])


def ssi_from_angles(cfg: SystemConfig, central_doa: float, max_as: float) -> SsiSet:
    """Spatial signature interval from cluster geometry.

    Bounds are floor/ceil of the electrical angles of the extreme rays; the
    center is the rounded electrical angle of the central DOA. Negative
    electrical angles wrap mod M.
    """
    if abs(central_doa) + max_as >= np.pi / 2:
        raise ValueError("cluster must satisfy |central_doa| + max_as < pi/2")
    c = cfg.beam_scale
    lo = math.floor(c * math.sin(central_doa - max_as))
    hi = math.ceil(c * math.sin(central_doa + max_as))
    center = round(c * math.sin(central_doa))
    return SsiSet(lo=lo, hi=hi, center=center, m=cfg.M)


def asymptotic_ssi_size(cfg: SystemConfig, central_doa: float, max_as: float) -> int:
    """Large-M interval size: ceil(2 M (d/lambda) |cos(central)| max_as).

    Undershoots at finite M because of spectral leakage; exposed as a
    diagnostic only.
    """
    return math.ceil(2.0 * cfg.beam_scale * abs(math.cos(central_doa)) * max_as)


def basis_matrix(bem: BemConfig, slots) -> np.ndarray:
    """Temporal basis sampled at the given slots: (mu+1, len(slots)).

    Column n is [exp(-j(2pi n/N)(mu/2)), ..., exp(j(2pi n/N)(mu/2))]^T.
    """
    slots = np.atleast_1d(np.asarray(slots))
    r = np.arange(bem.mu + 1) - bem.mu / 2.0
    return np.exp(2j * np.pi * np.outer(r, slots) / bem.N)


def cebem_fit(series: np.ndarray, bem: BemConfig, slots=None) -> np.ndarray:
    """Least-squares temporal coefficients of one beamspace bin series."""
    series = np.asarray(series)
    if slots is None:
        slots = np.arange(series.shape[0])
    if series.shape[0] < bem.mu + 1:
        raise ValueError(f"need at least mu+1={bem.mu + 1} samples, got {series.shape[0]}")
    C = basis_matrix(bem, slots)
    gamma, _, rank, _ = np.linalg.lstsq(C.T, series, rcond=None)
    if rank < bem.mu + 1:
        raise np.linalg.LinAlgError("temporal basis is rank deficient on these slots")
    return gamma


def fit_block(ht: np.ndarray, ssi: SsiSet, bem: BemConfig) -> BemCoefficients:
    """Fit every SSI bin of a beamspace block (M, N); other rows stay zero."""
    gamma = np.zeros((ht.shape[0], bem.mu + 1), dtype=np.complex128)
    C = basis_matrix(bem, np.arange(ht.shape[1]))
    sol, _, _, _ = np.linalg.lstsq(C.T, ht[ssi.bins(), :].T, rcond=None)
    gamma[ssi.bins(), :] = sol.T
    return BemCoefficients(gamma=gamma)


def stbem_reconstruct(gamma: BemCoefficients | np.ndarray, ssi: SsiSet, bem: BemConfig, slots) -> np.ndarray:
    """Channel reconstruction h(n) = sum_{q in ssi} (gamma_q^T c_n) f_q.

    Returns (M, len(slots)) for array slots, (M,) for a scalar slot.
    """
    g = gamma.gamma if isinstance(gamma, BemCoefficients) else np.asarray(gamma)
    scalar = np.isscalar(slots)
    C = basis_matrix(bem, slots)
    ht = np.zeros((g.shape[0], C.shape[1]), dtype=np.complex128)
    rows = ssi.bins()
    ht[rows, :] = g[rows, :] @ C
    out = inverse_beamspace(ht)
    return out[:, 0] if scalar else out


def power_support_size(power: np.ndarray, eta: float) -> int:
    """Bins needed to capture a fraction eta of total power, best-first."""
    power = np.asarray(power, dtype=np.float64)
    srt = np.sort(power)[::-1]
    cum = np.cumsum(srt)
    return int(np.searchsorted(cum, eta * cum[-1]) + 1)


def block_support_size(ht: np.ndarray, eta: float) -> int:
    """Size of the bin set capturing eta of power in every slot of a block.

    Union over slots of the per-slot best-first supports; this is the set a
    block-constant spatial signature must cover.
    """
    pw = np.abs(np.asarray(ht)) ** 2
    union: set[int] = set()
    for n in range(pw.shape[1]):
        p = pw[:, n]
        idx = np.argsort(p)[::-1]
        cum = np.cumsum(p[idx])
        k = int(np.searchsorted(cum, eta * cum[-1]) + 1)
        union.update(idx[:k].tolist())
    return len(union)


def contiguous_support_size(power: np.ndarray, eta: float) -> int:
    """Smallest circular window holding a fraction eta of total power."""
    power = np.asarray(power, dtype=np.float64)
    m = power.shape[0]
    target = eta * power.sum()
    ext = np.concatenate([power, power])
    cs = np.concatenate([[0.0], np.cumsum(ext)])
    for w in range(1, m + 1):
        if np.max(cs[w : w + m] - cs[:m]) >= target:
            return w
    return m
