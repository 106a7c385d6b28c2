"""Ground-truth multi-ray time-varying channels for a ULA uplink.

Each user's channel in a block is a normalized sum of P rays with complex
gains, per-ray Doppler shifts set by the motion angle, and DOAs drawn
around a slowly moving central direction. Rays are redrawn independently
per block; the central DOA and angular spread persist across blocks.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from . import kernels
from .config import SystemConfig

_MAGIC = b"STBM"


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class SpatialState:
    """Cluster geometry of one user in one block.

    central_doa and max_as are in radians; the angular-spread offsets are
    uniform on [-max_as, max_as], so the offset variance is max_as**2 / 3.
    """

    central_doa: float
    max_as: float

    def __post_init__(self):
        if self.max_as < 0:
            raise ChannelError(f"max_as must be >= 0, got {self.max_as}")

    @property
    def as_var(self) -> float:
        return self.max_as**2 / 3.0


@dataclass(frozen=True)
class RayParams:
    """One propagation ray: complex gain, motion geometry and DOA."""

    gain: complex
    motion_angle: float
    init_phase: float
    doa: float
    as_offset: float


@dataclass(frozen=True)
class ChannelBlock:
    """Per-user channel matrices (M x N) plus the rays that generated them."""

    block_index: int
    h: list[np.ndarray]
    rays: list[list[RayParams]]

    @property
    def n_users(self) -> int:
        return len(self.h)


def steering_vector(cfg: SystemConfig, theta: float) -> np.ndarray:
    """ULA steering vector; element m is exp(j 2 pi m (d/lambda) sin theta)."""
    m = np.arange(cfg.M)
    return np.exp(2j * np.pi * m * cfg.d_over_lambda * np.sin(theta))


def draw_rays(spatial: SpatialState, n_rays: int, rng: np.random.Generator) -> list[RayParams]:
    """Draw i.i.d. rays for one user and one block.

    Gains are circularly-symmetric complex Gaussian with unit variance;
    motion angles and initial phases are uniform on [0, 2 pi); angular
    offsets are uniform on [-max_as, max_as].
    """
    g = (rng.standard_normal(n_rays) + 1j * rng.standard_normal(n_rays)) / math.sqrt(2.0)
    phi = rng.uniform(0.0, 2.0 * np.pi, n_rays)
    ph0 = rng.uniform(0.0, 2.0 * np.pi, n_rays)
    off = rng.uniform(-spatial.max_as, spatial.max_as, n_rays) if spatial.max_as > 0 else np.zeros(n_rays)
    return [
        RayParams(
            gain=complex(g[p]),
            motion_angle=float(phi[p]),
            init_phase=float(ph0[p]),
            doa=float(spatial.central_doa + off[p]),
            as_offset=float(off[p]),
        )
        for p in range(n_rays)
    ]


def channel_from_rays(cfg: SystemConfig, rays: list[RayParams], n_slots: int | None = None) -> np.ndarray:
    """Synthesize the (M, n_slots) channel matrix implied by a ray set."""
    if n_slots is None:
        n_slots = cfg.N
    gains = np.array([r.gain for r in rays], dtype=np.complex128)
    cos_phi = np.array([math.cos(r.motion_angle) for r in rays])
    ph0 = np.array([r.init_phase for r in rays])
    sin_doa = np.array([math.sin(r.doa) for r in rays])
    return kernels.synth_rays(gains, cos_phi, ph0, sin_doa, cfg.M, n_slots, cfg.fd, cfg.Ts, cfg.d_over_lambda)


def generate_block(
    cfg: SystemConfig,
    spatial: list[SpatialState],
    zeta: int,
    rng: np.random.Generator,
    n_slots: int | None = None,
) -> ChannelBlock:
    """Generate one block of per-user channels from per-user cluster states."""
    for s in spatial:
        if s.max_as >= np.pi / 2:
            raise ChannelError(f"max_as {s.max_as} exceeds pi/2; cluster geometry is degenerate")
    hs, rays = [], []
    for s in spatial:
        r = draw_rays(s, cfg.P, rng)
        rays.append(r)
        hs.append(channel_from_rays(cfg, r, n_slots))
    return ChannelBlock(block_index=zeta, h=hs, rays=rays)


def regenerate_dl_block(
    block: ChannelBlock,
    cfg_dl: SystemConfig,
    rng: np.random.Generator,
    n_slots: int | None = None,
) -> ChannelBlock:
    """Downlink twin of an uplink block: same ray angles, fresh gains/phases.

    Angle reciprocity holds across the FDD carrier offset while the
    small-scale fading realizations do not; cfg_dl carries the downlink
    spacing d/lambda_dl.
    """
    hs, rays = [], []
    for ul_rays in block.rays:
        n_rays = len(ul_rays)
        g = (rng.standard_normal(n_rays) + 1j * rng.standard_normal(n_rays)) / math.sqrt(2.0)
        phi = rng.uniform(0.0, 2.0 * np.pi, n_rays)
        ph0 = rng.uniform(0.0, 2.0 * np.pi, n_rays)
        r = [
            RayParams(
                gain=complex(g[p]),
                motion_angle=float(phi[p]),
                init_phase=float(ph0[p]),
                doa=ul_rays[p].doa,
                as_offset=ul_rays[p].as_offset,
            )
            for p in range(n_rays)
        ]
        rays.append(r)
        hs.append(channel_from_rays(cfg_dl, r, n_slots))
    return ChannelBlock(block_index=block.block_index, h=hs, rays=rays)


def uplink_received(
    block: ChannelBlock,
    symbols: np.ndarray,
    cfg: SystemConfig,
    rng: np.random.Generator,
    noise_var: float | None = None,
) -> np.ndarray:
    """Superimpose user transmissions and AWGN: x(n) = sum_k h_k(n) s_k(n) + w(n).

    symbols is (K, N) with unit average power; returns (M, N).
    """
    symbols = np.asarray(symbols)
    if symbols.ndim != 2 or symbols.shape[0] != block.n_users:
        raise ChannelError(f"symbols must be (K, N) with K={block.n_users}, got {symbols.shape}")
    n_slots = block.h[0].shape[1]
    if symbols.shape[1] != n_slots:
        raise ChannelError(f"symbols have {symbols.shape[1]} slots, block has {n_slots}")
    nv = cfg.noise_var if noise_var is None else noise_var
    x = np.zeros((cfg.M, n_slots), dtype=np.complex128)
    for k in range(block.n_users):
        x += block.h[k] * symbols[k][None, :]
    if nv > 0:
        x += math.sqrt(nv / 2.0) * (
            rng.standard_normal((cfg.M, n_slots)) + 1j * rng.standard_normal((cfg.M, n_slots))
        )
    return x


def theoretical_correlation(
    cfg: SystemConfig,
    spatial: SpatialState,
    lag_m: int,
    antenna_pair: tuple[int, int],
) -> complex:
    """Ensemble space-time correlation E{h_i(n) h_l(n+m)^*}.

    Separates into a zeroth-order Bessel Doppler factor and an angular
    factor integrated over the cluster's DOA range.
    """
    i, l = antenna_pair
    doppler = special.j0(2.0 * np.pi * cfg.fd * lag_m * cfg.Ts)
    x = 2.0 * np.pi * cfg.d_over_lambda * (l - i)
    return complex(doppler * _angular_factor(x, spatial))


def _angular_factor(x: float, spatial: SpatialState) -> complex:
    if x == 0.0:
        return 1.0 + 0.0j
    if spatial.max_as == 0.0:
        return complex(np.exp(-1j * x * math.sin(spatial.central_doa)))
    lo = spatial.central_doa - spatial.max_as
    hi = spatial.central_doa + spatial.max_as
    re, _ = integrate.quad(lambda y: math.cos(x * math.sin(y)), lo, hi, epsabs=1e-8)
    im, _ = integrate.quad(lambda y: -math.sin(x * math.sin(y)), lo, hi, epsabs=1e-8)
    return complex(re, im) / (2.0 * spatial.max_as)


def save_blocks(path, blocks: list[ChannelBlock], cfg: SystemConfig) -> None:
    """Columnar binary dump of channel blocks for external cross-checking.

    Layout (all little-endian):
      magic "STBM" | uint32 M | uint32 N | uint32 K | uint32 n_blocks
      then per block: int32 block_index, then K users x N slots x M antennas
      of complex64 with interleaved (re, im) float32 pairs; each slot's
      M-vector is contiguous.
    """
    n_slots = blocks[0].h[0].shape[1] if blocks else cfg.N
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIII", cfg.M, n_slots, blocks[0].n_users if blocks else cfg.K, len(blocks)))
        for b in blocks:
            fh.write(struct.pack("<i", b.block_index))
            for h in b.h:
                fh.write(np.ascontiguousarray(h.T, dtype="<c8").tobytes())


def load_blocks(path) -> tuple[dict, list[tuple[int, list[np.ndarray]]]]:
    """Read a dump produced by save_blocks.

    Returns the header dict and a list of (block_index, per-user (M, N)
    complex64 matrices).
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ChannelError(f"bad magic {magic!r}")
        M, N, K, n_blocks = struct.unpack("<IIII", fh.read(16))
        out = []
        for _ in range(n_blocks):
            (zeta,) = struct.unpack("<i", fh.read(4))
            users = []
            for _k in range(K):
                raw = fh.read(8 * M * N)
                h = np.frombuffer(raw, dtype="<c8").reshape(N, M).T
                users.append(np.array(h))
            out.append((zeta, users))
    return {"M": M, "N": N, "K": K, "n_blocks": n_blocks}, out
