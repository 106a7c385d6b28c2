"""Pilot design, uplink LS gain estimation, and downlink angle reciprocity.

Groups with disjoint spatial signatures share one pilot sequence; the
sequences of different groups are phase-shift orthogonal over an
equi-spaced comb, so one LS inversion separates all groups. The downlink
signature follows from the uplink one through the carrier wavelength
ratio, after which per-bin training recovers the downlink coefficients
with a pilot count proportional to the signature size instead of the
array size.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .basis import BemCoefficients, BemConfig, SsiSet, basis_matrix, dft_beamspace


class PilotError(ValueError):
    pass


@dataclass(frozen=True)
class PilotBook:
    """Pilot comb plus per-sequence symbols.

    slots is the realized integer comb round(i * N / T); the sequences are
    unit-total-energy rows s[g, i] = sqrt(1/T) exp(j 2 pi i g (mu+1) / T).
    Orthogonality in the sense of the optimal-design identities holds
    exactly on the ideal equi-spaced grid n_i = i N / T (design_basis);
    estimators model the realized comb via model_basis.
    """

    slots: tuple[int, ...]
    sequences: np.ndarray
    mu: int
    N: int
    mode: str

    @property
    def T(self) -> int:
        return len(self.slots)

    @property
    def n_seq(self) -> int:
        return self.sequences.shape[0]

    def design_basis(self) -> np.ndarray:
        """Temporal basis on the ideal fractional grid: exp(j2pi i (r-mu/2)/T)."""
        r = np.arange(self.mu + 1) - self.mu / 2.0
        i = np.arange(self.T)
        return np.exp(2j * np.pi * np.outer(r, i) / self.T)

    def model_basis(self) -> np.ndarray:
        """Temporal basis at the realized integer slots."""
        return basis_matrix(BemConfig(mu=self.mu, N=self.N), np.array(self.slots))

    def to_manifest(self) -> dict:
        return {
            "mode": self.mode,
            "mu": self.mu,
            "N": self.N,
            "slots": list(self.slots),
            "sequences_hex": [
                "".join(struct.pack("<dd", v.real, v.imag).hex() for v in row)
                for row in self.sequences
            ],
        }


@dataclass(frozen=True)
class DownlinkMap:
    """Downlink signature derived from the uplink one by angle reciprocity."""

    ul_wavelength: float
    dl_wavelength: float
    ssi_dl: SsiSet

    @property
    def tau(self) -> int:
        return self.ssi_dl.size


def design_pilots(n_seq: int, mu: int, N: int, mode: str = "uplink") -> PilotBook:
    """Equi-powered, equi-spaced, phase-shift orthogonal pilot book.

    n_seq is the group count for uplink books and the signature size tau
    for downlink books; T = n_seq * (mu + 1) symbols are placed on the
    comb round(i * N / T).
    """
    if mode not in ("uplink", "downlink"):
        raise PilotError(f"unknown mode {mode!r}")
    if n_seq < 1:
        raise PilotError("need at least one sequence")
    T = n_seq * (mu + 1)
    if T > N:
        raise PilotError(f"infeasible pilot count T={T} exceeds block length N={N}")
    # nearest-integer equi-spacing keeps the comb covering the whole block;
    # a floor-spaced comb leaves a tail gap whose extrapolation rings badly
    slots = tuple(int(round(i * N / T)) for i in range(T))
    i = np.arange(T)
    seqs = np.stack(
        [np.sqrt(1.0 / T) * np.exp(2j * np.pi * i * g * (mu + 1) / T) for g in range(n_seq)]
    )
    book = PilotBook(slots=slots, sequences=seqs, mu=mu, N=N, mode=mode)
    dev = verify_orthogonality(book)
    if dev > 1e-12:
        raise PilotError(f"pilot construction failed the orthogonality identities: {dev:.2e}")
    return book


def pilot_cross_gram(book: PilotBook, g: int, g2: int, basis: np.ndarray | None = None) -> np.ndarray:
    """The (mu+1)x(mu+1) matrix C S_g S_g2^H C^H for a pair of sequences."""
    C = book.design_basis() if basis is None else basis
    s = book.sequences
    return (C * (s[g] * s[g2].conj())[None, :]) @ C.conj().T


def verify_orthogonality(book: PilotBook) -> float:
    """Max deviation of the optimal-design identities over all sequence pairs."""
    dev = 0.0
    eye = np.eye(book.mu + 1)
    for g in range(book.n_seq):
        for g2 in range(book.n_seq):
            gram = pilot_cross_gram(book, g, g2)
            ref = eye if g == g2 else 0.0
            dev = max(dev, float(np.max(np.abs(gram - ref))))
    return dev


def stacked_pilot_matrix(book: PilotBook) -> np.ndarray:
    """The (n_seq*(mu+1), T) stacked matrix with row-blocks C S_g."""
    C = book.model_basis()
    return np.vstack([C * book.sequences[g][None, :] for g in range(book.n_seq)])


def ls_estimate_gamma(Y: np.ndarray, book: PilotBook, bem: BemConfig) -> np.ndarray:
    """LS estimate of the stacked group coefficient matrix, (M, n_seq*(mu+1)).

    Y is the M x T received pilot matrix. With the optimal book the
    pseudo-inverse reduces to a scaled conjugate transpose; rank
    deficiency signals a broken pilot design.
    """
    Y = np.asarray(Y)
    if bem.mu != book.mu or bem.N != book.N:
        raise PilotError("BemConfig does not match the pilot book")
    if Y.ndim != 2 or Y.shape[1] != book.T:
        raise PilotError(f"expected Y with {book.T} columns, got {Y.shape}")
    W = stacked_pilot_matrix(book)
    if np.linalg.matrix_rank(W, tol=1e-10 * book.T) < W.shape[0]:
        raise PilotError("stacked pilot matrix is rank deficient; pilot design violated")
    return dft_beamspace(Y) @ np.linalg.pinv(W)


def ls_mse_prediction(book: PilotBook, M: int, noise_var: float) -> float:
    """Expected Frobenius error of the stacked LS estimate."""
    W = stacked_pilot_matrix(book)
    return float(M * noise_var * np.trace(np.linalg.inv(W @ W.conj().T)).real)


def extract_user_gamma(
    gamma_hat: np.ndarray,
    ssi: SsiSet,
    group_slot: int,
    mu: int,
    power: float = 1.0,
) -> BemCoefficients:
    """Restrict a group's coefficient block to one user's signature rows.

    Rows outside the signature are zeroed (the zero-padded form); `power`
    removes the user's uplink amplitude scaling.
    """
    block = gamma_hat[:, group_slot * (mu + 1) : (group_slot + 1) * (mu + 1)] / math.sqrt(power)
    out = np.zeros_like(block)
    rows = ssi.bins()
    out[rows, :] = block[rows, :]
    return BemCoefficients(gamma=out)


def reciprocity_map(ssi_ul: SsiSet, lam_ul: float, lam_dl: float) -> DownlinkMap:
    """Downlink signature interval from the uplink one.

    Electrical angles scale by the wavelength ratio, so the interval
    bounds map through floor/ceil of the scaled extremes.
    """
    ratio = lam_ul / lam_dl
    lo = math.floor(ratio * ssi_ul.lo)
    hi = math.ceil(ratio * ssi_ul.hi)
    center = min(max(round(ratio * ssi_ul.center), lo), hi)
    return DownlinkMap(
        ul_wavelength=lam_ul,
        dl_wavelength=lam_dl,
        ssi_dl=SsiSet(lo=lo, hi=hi, center=center, m=ssi_ul.m),
    )


def downlink_design_matrix(book: PilotBook, power: float, tau: int) -> np.ndarray:
    """T x tau(mu+1) user-side design matrix [sqrt(P/tau) S_i C^T]_{i=1..tau}."""
    C = book.model_basis()
    blocks = [
        math.sqrt(power / tau) * (book.sequences[i][:, None] * C.T) for i in range(tau)
    ]
    return np.hstack(blocks)


_DL_SOLVER_CACHE: dict[tuple, np.ndarray] = {}


def _dl_solver(book: PilotBook, power: float, tau: int) -> np.ndarray:
    """Cached pseudo-inverse of the downlink design matrix.

    The design matrix is a pure function of (book, power, tau); one trial
    reuses it across every block and user.
    """
    key = (book.mode, book.mu, book.N, book.T, float(power), tau, book.sequences.tobytes())
    pinv = _DL_SOLVER_CACHE.get(key)
    if pinv is None:
        if verify_orthogonality(book) > 1e-9:
            raise PilotError("downlink pilot book violates the orthogonality identities")
        D = downlink_design_matrix(book, power, tau)
        # normal equations: the gram is near-identity by construction, and
        # avoiding the SVD sidesteps LAPACK gesdd convergence failures
        gram = D.conj().T @ D
        w = np.linalg.eigvalsh(gram)
        if w[0] <= 1e-10 * max(w[-1], 1e-300):
            raise PilotError("downlink design matrix is rank deficient")
        pinv = np.linalg.solve(gram, D.conj().T)
        if len(_DL_SOLVER_CACHE) > 16:
            _DL_SOLVER_CACHE.clear()
        _DL_SOLVER_CACHE[key] = pinv
    return pinv


def downlink_train_estimate(
    y_dl: np.ndarray,
    book: PilotBook,
    bem: BemConfig,
    tau: int,
    power: float,
) -> np.ndarray:
    """User-side LS recovery of its tau(mu+1) downlink coefficients.

    Needs no knowledge of which physical bins the coefficients belong to;
    returns a (tau, mu+1) matrix ordered by the pilot sequence index.
    """
    y_dl = np.asarray(y_dl).reshape(-1)
    if bem.mu != book.mu or bem.N != book.N:
        raise PilotError("BemConfig does not match the pilot book")
    if tau != book.n_seq:
        raise PilotError(f"book carries {book.n_seq} per-bin sequences, need tau={tau}")
    if y_dl.shape[0] != book.T:
        raise PilotError(f"expected {book.T} received pilot samples, got {y_dl.shape[0]}")
    sol = _dl_solver(book, power, tau) @ y_dl
    return sol.reshape(tau, bem.mu + 1)


def embed_downlink(rows: np.ndarray, ssi_dl: SsiSet, M: int) -> BemCoefficients:
    """Zero-pad user-side downlink coefficients onto the full bin grid."""
    gamma = np.zeros((M, rows.shape[1]), dtype=np.complex128)
    gamma[ssi_dl.bins(), :] = rows
    return BemCoefficients(gamma=gamma)
