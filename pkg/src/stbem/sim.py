"""Monte Carlo experiment harness wiring channels, tracking, pilots and metrics.

Each trial draws a clustered user geometry, evolves the central DOAs as a
random walk, and per block: generates the multi-ray channel, forms the
scheduled uplink data, observes the central bins, and (depending on the
scenario) estimates angular spreads, trains the gains, reconstructs the
channel and scores it. Trials are deterministic functions of
(config, spec, seed) regardless of worker scheduling.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .astrack import (
    dft_search_support,
    estimate_sigma,
    implied_support,
    moving_median,
    sample_covariance,
)
from .basis import BemConfig, SsiSet, dft_beamspace, ssi_from_angles, ssi_interval, stbem_reconstruct
from .channel import ChannelBlock, SpatialState, channel_from_rays, generate_block, regenerate_dl_block
from .config import ConfigError, ExperimentSpec, SystemConfig
from .dynamics import (
    EmResult,
    NoSignalError,
    ObservationVector,
    TrackerModel,
    em_learn,
    markov_step,
    observe_central_ssi,
    track_scalar,
)
from .grouping import GroupingConfig, GroupPlan, group_users
from .pilots import (
    DownlinkMap,
    PilotBook,
    design_pilots,
    downlink_train_estimate,
    embed_downlink,
    extract_user_gamma,
    ls_estimate_gamma,
    reciprocity_map,
)
from .tracking import NoiseParams, SingularInnovationError

CSV_HEADER = "scenario,snr_db,block,method,trial,value"

EM_INIT = NoiseParams(q_omega=math.radians(0.1) ** 2, q_u=1.0)

_TRIAL_ERRORS = (NoSignalError, SingularInnovationError, np.linalg.LinAlgError, ValueError)


class NumericalError(RuntimeError):
    """Every trial of a run aborted with a numerical failure."""


@dataclass(frozen=True)
class MetricRow:
    scenario: str
    snr_db: float
    block: int
    method: str
    trial: int
    value: float


def rows_to_csv(rows: list[MetricRow]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.scenario},{r.snr_db:.10g},{r.block},{r.method},{r.trial},{r.value:.10g}"
        )
    return "\n".join(lines) + "\n"


def snr_to_noise_var(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def score_mse(true_h, est_h, return_details: bool = False):
    """Slot-normalized channel MSE averaged over users and slots.

    true_h/est_h are per-user (M, N) matrices (or a single pair). Zero-norm
    truth columns are skipped; the skip count is reported with
    return_details=True.
    """
    if isinstance(true_h, np.ndarray) and true_h.ndim == 2:
        true_h, est_h = [true_h], [est_h]
    if len(true_h) != len(est_h):
        raise ValueError("user count mismatch")
    total = 0.0
    count = 0
    skipped = 0
    for ht, he in zip(true_h, est_h):
        ht = np.asarray(ht)
        he = np.asarray(he)
        if ht.shape != he.shape:
            raise ValueError(f"shape mismatch {ht.shape} vs {he.shape}")
        norms = np.sum(np.abs(ht) ** 2, axis=0)
        errs = np.sum(np.abs(ht - he) ** 2, axis=0)
        ok = norms > 0
        skipped += int(np.sum(~ok))
        total += float(np.sum(errs[ok] / norms[ok]))
        count += int(np.sum(ok))
    if count == 0:
        raise ValueError("all truth slots have zero norm")
    mse = total / count
    return (mse, skipped) if return_details else mse


# ---------------------------------------------------------------------------
# trial setup


def draw_cluster_doas(cfg: SystemConfig, spec: ExperimentSpec, rng: np.random.Generator):
    """Clustered initial DOAs: centers in [-60, 60] deg with >= 15 deg gaps."""
    n_clusters = min(4, cfg.K)
    for _ in range(1000):
        centers = np.sort(rng.uniform(-60.0, 60.0, n_clusters))
        if n_clusters == 1 or np.min(np.diff(centers)) >= 15.0:
            break
    else:
        centers = np.linspace(-45.0, 45.0, n_clusters)
    assign = np.arange(cfg.K) % n_clusters
    offsets = rng.uniform(-1.0, 1.0, cfg.K)
    thetas = np.deg2rad(centers[assign] + offsets)
    return thetas, assign


@dataclass
class TrialContext:
    cfg: SystemConfig
    spec: ExperimentSpec
    bem: BemConfig
    q_true: float
    theta0: np.ndarray
    max_as: float
    init_obs: np.ndarray
    init_ssi: list[SsiSet]
    plan: GroupPlan
    book_ul: PilotBook
    pilot_slots: tuple[int, ...]
    windows: np.ndarray
    pred_sizes: np.ndarray
    models: list[TrackerModel]


def _block_duration(cfg: SystemConfig) -> float:
    return cfg.N * cfg.Ts


def truth_process_var(cfg: SystemConfig, spec: ExperimentSpec) -> float:
    """Per-block DOA increment variance implied by the user speed."""
    v = spec.speed_kmh / 3.6
    sigma = v * _block_duration(cfg) / spec.cell_radius_m
    return sigma**2


def setup_trial(cfg: SystemConfig, spec: ExperimentSpec, rng: np.random.Generator) -> TrialContext:
    bem = BemConfig(mu=spec.mu, N=cfg.N) if spec.mu else BemConfig.for_system(cfg)
    thetas, _ = draw_cluster_doas(cfg, spec, rng)
    max_as = math.radians(spec.as_deg)

    # initial acquisition: noiseless beamspace search at block 1 geometry
    spatial = [SpatialState(central_doa=float(t), max_as=max_as) for t in thetas]
    init_block = generate_block(cfg, spatial, 0, rng)
    init_obs = np.empty(cfg.K)
    init_ssi = []
    for k in range(cfg.K):
        pw = np.mean(np.abs(dft_beamspace(init_block.h[k])) ** 2, axis=1)
        q = int(np.argmax(pw))
        if q > cfg.M // 2:
            q -= cfg.M
        init_obs[k] = q
        theta_hat = math.asin(max(-1.0, min(1.0, q / cfg.beam_scale)))
        init_ssi.append(ssi_from_angles(cfg, theta_hat, max_as))

    plan = group_users(init_ssi, GroupingConfig(guard=spec.guard))
    needs_pilots = spec.scenario in ("ul_mse",)
    book_ul = design_pilots(plan.n_groups, bem.mu, cfg.N, mode="uplink")
    pilot_slots = book_ul.slots if needs_pilots else ()

    # observation windows: wide enough for the predicted set, narrow enough
    # to exclude same-group neighbors
    pred_sizes = np.array([s.size for s in init_ssi])
    windows = np.empty(cfg.K, dtype=int)
    for k in range(cfg.K):
        g = plan.group_of(k)
        gaps = [
            abs(init_ssi[k].center - init_ssi[j].center)
            for j in plan.groups[g]
            if j != k
        ]
        limit = (min(gaps) // 2) if gaps else spec.obs_window
        windows[k] = max(pred_sizes[k], min(spec.obs_window, limit))

    models = []
    for k in range(cfg.K):
        theta_hat = math.asin(max(-1.0, min(1.0, init_obs[k] / cfg.beam_scale)))
        p0 = (1.0 / cfg.beam_scale) ** 2 / max(math.cos(theta_hat) ** 2, 0.1)
        models.append(TrackerModel(meas_scale=cfg.beam_scale, theta0=theta_hat, p0=p0))

    return TrialContext(
        cfg=cfg,
        spec=spec,
        bem=bem,
        q_true=truth_process_var(cfg, spec),
        theta0=thetas,
        max_as=max_as,
        init_obs=init_obs,
        init_ssi=init_ssi,
        plan=plan,
        book_ul=book_ul,
        pilot_slots=pilot_slots,
        windows=windows,
        pred_sizes=pred_sizes,
        models=models,
    )


# ---------------------------------------------------------------------------
# shared per-block simulation and tracking


@dataclass
class BlockRecord:
    thetas: np.ndarray
    rays: list
    obs: np.ndarray
    data_slots: list[np.ndarray]
    rx: list | None = None
    profiles: list | None = None


@dataclass
class TrackingResult:
    records: list[BlockRecord]
    obs: np.ndarray
    em: list[EmResult]
    smoothed_theta: np.ndarray
    noem_theta: np.ndarray
    dft_theta: np.ndarray
    truth_theta: np.ndarray
    sigma2_hat: np.ndarray | None = None
    dtheta_hat: np.ndarray | None = None


def _qpsk(rng: np.random.Generator, shape) -> np.ndarray:
    bits = rng.integers(0, 2, size=(2, *shape))
    return ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / math.sqrt(2.0)


def _group_data_slots(cfg: SystemConfig, pilot_slots, n_groups: int) -> list[np.ndarray]:
    data = np.array([n for n in range(cfg.N) if n not in set(pilot_slots)])
    return [data[g::n_groups] for g in range(n_groups)]


def simulate_blocks(
    ctx: TrialContext, noise_var: float, rng: np.random.Generator, collect_cov: bool
) -> list[BlockRecord]:
    cfg, spec = ctx.cfg, ctx.spec
    slots_by_group = _group_data_slots(cfg, ctx.pilot_slots, ctx.plan.n_groups)
    prev_obs = ctx.init_obs.copy()
    thetas = ctx.theta0.copy()
    records = []
    for zeta in range(1, spec.n_blocks + 1):
        if zeta > 1:
            thetas = np.array([markov_step(t, ctx.q_true, rng) for t in thetas])
        spatial = [SpatialState(central_doa=float(t), max_as=ctx.max_as) for t in thetas]
        block = generate_block(cfg, spatial, zeta, rng)
        symbols = _qpsk(rng, (cfg.K, cfg.N))
        obs = np.empty(cfg.K)
        rx = [] if collect_cov else None
        profiles = [] if collect_cov else None
        for g, members in enumerate(ctx.plan.groups):
            sl = slots_by_group[g]
            x = np.zeros((cfg.M, sl.shape[0]), dtype=np.complex128)
            for k in members:
                x += block.h[k][:, sl] * symbols[k, sl][None, :]
            if noise_var > 0:
                x += math.sqrt(noise_var / 2.0) * (
                    rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
                )
            if collect_cov:
                rx.append(sample_covariance(x))
                profiles.append(np.mean(np.abs(dft_beamspace(x)) ** 2, axis=1))
            for k in members:
                predicted = ssi_interval(int(round(prev_obs[k])), int(ctx.pred_sizes[k]), cfg.M)
                try:
                    obs[k] = observe_central_ssi(x, predicted, int(ctx.windows[k]))
                except NoSignalError:
                    # deep fade or noise burying the peak: coast on the last fix
                    obs[k] = prev_obs[k]
                prev_obs[k] = obs[k]
        records.append(
            BlockRecord(
                thetas=thetas.copy(),
                rays=block.rays,
                obs=obs,
                data_slots=slots_by_group,
                rx=rx,
                profiles=profiles,
            )
        )
    return records


def run_tracking(
    ctx: TrialContext, noise_var: float, rng: np.random.Generator, need_as: bool = False
) -> TrackingResult:
    cfg, spec = ctx.cfg, ctx.spec
    records = simulate_blocks(ctx, noise_var, rng, collect_cov=need_as)
    n = len(records)
    obs = np.stack([r.obs for r in records], axis=1)
    truth = np.stack([r.thetas for r in records], axis=1)

    em_results = []
    smoothed = np.empty((cfg.K, n))
    noem = np.empty((cfg.K, n))
    dft = np.empty((cfg.K, n))
    for k in range(cfg.K):
        vec = ObservationVector(q_obs=obs[k])
        res = em_learn(vec, EM_INIT, ctx.models[k], max_iters=spec.em_iters, tol=spec.em_tol)
        em_results.append(res)
        smoothed[k] = res.smoothed.mean[:, 0]
        noem[k] = track_scalar(obs[k], ctx.models[k], EM_INIT).means[:, 0]
        dft[k] = np.arcsin(np.clip(obs[k] / cfg.beam_scale, -1.0, 1.0))

    result = TrackingResult(
        records=records,
        obs=obs,
        em=em_results,
        smoothed_theta=smoothed,
        noem_theta=noem,
        dft_theta=dft,
        truth_theta=truth,
    )
    if need_as:
        sigma2 = np.zeros((cfg.K, n))
        for z, rec in enumerate(records):
            for g, members in enumerate(ctx.plan.groups):
                thetas_g = smoothed[members, z]
                try:
                    s2, _ = estimate_sigma(rec.rx[g], thetas_g, cfg, noise_var)
                except np.linalg.LinAlgError:
                    s2 = sigma2[members, z - 1] if z else np.full(len(members), ctx.max_as**2 / 3)
                sigma2[members, z] = s2
        dtheta = np.sqrt(3.0 * sigma2)
        for k in range(cfg.K):
            dtheta[k] = moving_median(dtheta[k], 3)
        result.sigma2_hat = sigma2
        result.dtheta_hat = dtheta
    return result


# ---------------------------------------------------------------------------
# scenario scoring


def _resynth(ctx: TrialContext, rec: BlockRecord) -> list[np.ndarray]:
    return [channel_from_rays(ctx.cfg, rays) for rays in rec.rays]


def _tracked_ssi(ctx: TrialContext, tr: TrackingResult, k: int, z: int) -> SsiSet:
    dth = float(tr.dtheta_hat[k, z]) if tr.dtheta_hat is not None else ctx.max_as
    dth = min(dth, math.pi / 2 - abs(tr.smoothed_theta[k, z]) - 1e-6)
    return implied_support(ctx.cfg, float(tr.smoothed_theta[k, z]), max(dth, 0.0), ctx.spec.eta_support)


def _rows_doa(ctx, tr: TrackingResult, snr, trial, per_block) -> list[MetricRow]:
    spec = ctx.spec
    methods = {"em_ukf": tr.smoothed_theta}
    if not spec.baselines or "no_em" in spec.baselines:
        methods["no_em"] = tr.noem_theta
    if not spec.baselines or "dft_search" in spec.baselines:
        methods["dft_search"] = tr.dft_theta
    rows = []
    for name, est in methods.items():
        rmse = float(np.sqrt(np.mean((est - tr.truth_theta) ** 2)))
        rows.append(MetricRow(spec.scenario, snr, -1, name, trial, rmse))
    if per_block:
        for z in range(tr.truth_theta.shape[1]):
            rows.append(
                MetricRow(spec.scenario, snr, z + 1, "truth", trial, math.degrees(tr.truth_theta[0, z]))
            )
            for name, est in methods.items():
                rows.append(
                    MetricRow(spec.scenario, snr, z + 1, name, trial, math.degrees(est[0, z]))
                )
    return rows


def _rows_as(ctx, tr: TrackingResult, snr, trial, noise_var, per_block) -> list[MetricRow]:
    cfg, spec = ctx.cfg, ctx.spec
    k = 0
    g = ctx.plan.group_of(k)
    n = tr.truth_theta.shape[1]
    taylor = np.empty(n)
    ref = np.empty(n)
    dft = np.empty(n)
    for z in range(n):
        taylor[z] = _tracked_ssi(ctx, tr, k, z).size
        ref[z] = implied_support(cfg, float(tr.truth_theta[k, z]), ctx.max_as, spec.eta_support).size
        dft[z] = dft_search_support(
            tr.records[z].profiles[g],
            int(round(tr.obs[k, z])),
            int(ctx.windows[k]),
            noise_var,
            spec.eta_support,
        )
    rows = []
    if per_block:
        for z in range(n):
            rows.append(MetricRow(spec.scenario, snr, z + 1, "taylor", trial, float(taylor[z])))
            rows.append(MetricRow(spec.scenario, snr, z + 1, "dft_search", trial, float(dft[z])))
            rows.append(MetricRow(spec.scenario, snr, z + 1, "reference", trial, float(ref[z])))
    rows.append(MetricRow(spec.scenario, snr, -1, "taylor_mad", trial, float(np.mean(np.abs(taylor - ref)))))
    rows.append(MetricRow(spec.scenario, snr, -1, "dft_search_mad", trial, float(np.mean(np.abs(dft - ref)))))
    return rows


def _receive_pilots(
    ctx: TrialContext, hs: list[np.ndarray], book: PilotBook, power_per_user: np.ndarray,
    seq_of_user: dict[int, int], noise_var: float, rng: np.random.Generator,
) -> np.ndarray:
    cfg = ctx.cfg
    comb = np.array(book.slots)
    Y = np.zeros((cfg.M, book.T), dtype=np.complex128)
    for k, seq_idx in seq_of_user.items():
        Y += math.sqrt(power_per_user[k]) * hs[k][:, comb] * book.sequences[seq_idx][None, :]
    if noise_var > 0:
        Y += math.sqrt(noise_var / 2.0) * (
            rng.standard_normal(Y.shape) + 1j * rng.standard_normal(Y.shape)
        )
    return Y


def _rows_ul(ctx, tr: TrackingResult, snr, trial, noise_var, rng) -> list[MetricRow]:
    cfg, spec, bem = ctx.cfg, ctx.spec, ctx.bem
    book = ctx.book_ul
    full_ssi = SsiSet(lo=0, hi=cfg.M - 1, center=cfg.M // 2, m=cfg.M)
    p_ul = np.full(cfg.K, float(book.T))
    seq_of_user = {k: ctx.plan.group_of(k) for k in range(cfg.K)}
    slots = np.arange(cfg.N)

    upsilons = tuple(spec.fixed_upsilon) if "fixed_upsilon" in spec.baselines else ()
    want_aging = "aging" in spec.baselines
    want_static = "sbem_static" in spec.baselines
    want_cl = "conventional_ls" in spec.baselines
    book_cl = None
    if want_cl:
        book_cl = design_pilots(cfg.K, bem.mu, cfg.N, mode="uplink")
    static_ssi = [ctx.init_ssi[k].padded(_tracked_ssi(ctx, tr, k, 0).size) for k in range(cfg.K)]

    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    aging_est = None
    for z, rec in enumerate(tr.records):
        hs = _resynth(ctx, rec)
        Y = _receive_pilots(ctx, hs, book, p_ul, seq_of_user, noise_var, rng)
        gamma_hat = ls_estimate_gamma(Y, book, bem)

        def reconstruct(ssi_k: list[SsiSet]) -> list[np.ndarray]:
            out = []
            for k in range(cfg.K):
                coeff = extract_user_gamma(
                    gamma_hat, ssi_k[k], seq_of_user[k], bem.mu, power=p_ul[k]
                )
                out.append(stbem_reconstruct(coeff, ssi_k[k], bem, slots))
            return out

        tracked = [_tracked_ssi(ctx, tr, k, z) for k in range(cfg.K)]
        estimates = {"stbem_tracked": reconstruct(tracked)}
        for ups in upsilons:
            ssis = [ssi_interval(tracked[k].center, ups, cfg.M) for k in range(cfg.K)]
            estimates[f"fixed_upsilon_{ups}"] = reconstruct(ssis)
        if want_static:
            estimates["sbem_static"] = reconstruct(static_ssi)
        if want_aging:
            if aging_est is None:
                aging_est = estimates["stbem_tracked"]
            estimates["aging"] = aging_est
        if want_cl:
            Y_cl = _receive_pilots(
                ctx, hs, book_cl, np.full(cfg.K, float(book_cl.T)),
                {k: k for k in range(cfg.K)}, noise_var, rng,
            )
            g_cl = ls_estimate_gamma(Y_cl, book_cl, bem)
            est = []
            for k in range(cfg.K):
                coeff = extract_user_gamma(g_cl, full_ssi, k, bem.mu, power=float(book_cl.T))
                est.append(stbem_reconstruct(coeff, full_ssi, bem, slots))
            estimates["conventional_ls"] = est

        for name, est in estimates.items():
            sums[name] = sums.get(name, 0.0) + score_mse(hs, est)
            counts[name] = counts.get(name, 0) + 1

    return [
        MetricRow(spec.scenario, snr, -1, name, trial, sums[name] / counts[name])
        for name in sorted(sums)
    ]


def _dl_geometry(ctx: TrialContext):
    cfg, spec = ctx.cfg, ctx.spec
    ratio = spec.dl_wavelength_ratio
    cfg_dl = cfg.replace(d_over_lambda=cfg.d_over_lambda * ratio)
    tau = spec.dl_tau or max(1, cfg.M // spec.dl_pilot_factor)
    return cfg_dl, ratio, tau


def _beam_columns(cfg: SystemConfig, bins: np.ndarray) -> np.ndarray:
    """conj(f_q) transmit beams for the given bins, stacked as columns."""
    m = np.arange(cfg.M)
    return np.exp(-2j * np.pi * np.outer(m, bins) / cfg.M) / math.sqrt(cfg.M)


def _estimate_dl_block(
    ctx, g_true: list[np.ndarray], maps: list[DownlinkMap], members, book_dl: PilotBook,
    tau: int, power: float, noise_var: float, rng, slots,
) -> list[np.ndarray]:
    """ST-BEM downlink training of one group; returns per-member (M, |slots|)."""
    cfg, bem = ctx.cfg, ctx.bem
    comb = np.array(book_dl.slots)
    X = np.zeros((cfg.M, book_dl.T), dtype=np.complex128)
    for i_k, k in enumerate(members):
        beams = _beam_columns(cfg, maps[i_k].ssi_dl.bins())
        for i in range(tau):
            X += math.sqrt(power / tau) * np.outer(beams[:, i], book_dl.sequences[i])
    out = []
    for i_k, k in enumerate(members):
        y = np.einsum("mt,mt->t", g_true[i_k][:, comb], X)
        if noise_var > 0:
            y = y + math.sqrt(noise_var / 2.0) * (
                rng.standard_normal(book_dl.T) + 1j * rng.standard_normal(book_dl.T)
            )
        rows = downlink_train_estimate(y, book_dl, bem, tau, power)
        coeff = embed_downlink(rows, maps[i_k].ssi_dl, cfg.M)
        out.append(stbem_reconstruct(coeff, maps[i_k].ssi_dl, bem, slots))
    return out


def _estimate_dl_conventional(
    ctx, g_true: list[np.ndarray], members, book_cl: PilotBook, power: float,
    noise_var: float, rng, slots, X: np.ndarray,
) -> list[np.ndarray]:
    """Full-dimension per-bin LS over all M beams (broadcast pilots)."""
    cfg, bem = ctx.cfg, ctx.bem
    comb = np.array(book_cl.slots)
    full = SsiSet(lo=0, hi=cfg.M - 1, center=cfg.M // 2, m=cfg.M)
    out = []
    for i_k, k in enumerate(members):
        y = np.einsum("mt,mt->t", g_true[i_k][:, comb], X)
        if noise_var > 0:
            y = y + math.sqrt(noise_var / 2.0) * (
                rng.standard_normal(book_cl.T) + 1j * rng.standard_normal(book_cl.T)
            )
        rows = downlink_train_estimate(y, book_cl, bem, cfg.M, power)
        coeff = embed_downlink(rows, full, cfg.M)
        out.append(stbem_reconstruct(coeff, full, bem, slots))
    return out


def _rows_dl(ctx, tr: TrackingResult, snr, trial, noise_var, rng, ber_mode: bool):
    cfg, spec, bem = ctx.cfg, ctx.spec, ctx.bem
    cfg_dl, ratio, tau = _dl_geometry(ctx)
    book_dl = design_pilots(tau, bem.mu, cfg.N, mode="downlink")
    kappa = cfg.M * (bem.mu + 1)
    e_total = float(kappa) * spec.train_power_boost
    members = ctx.plan.groups[0]
    want_cl = "conventional_ls" in spec.baselines
    want_perfect = "perfect_csi" in spec.baselines or ber_mode
    book_cl = design_pilots(cfg.M, bem.mu, cfg.N, mode="downlink") if want_cl else None
    slots = np.arange(cfg.N)
    X_cl = None
    if want_cl:
        beams = _beam_columns(cfg, np.arange(cfg.M))
        X_cl = math.sqrt(e_total / cfg.M) * (beams @ book_cl.sequences)

    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    errors: dict[str, int] = {}
    bits: dict[str, int] = {}
    for z, rec in enumerate(tr.records):
        ul_block = ChannelBlock(block_index=z + 1, h=[], rays=rec.rays)
        dl_block = regenerate_dl_block(ul_block, cfg_dl, rng)
        g_true = [dl_block.h[k] for k in members]
        maps = [
            DownlinkMap(
                ul_wavelength=1.0,
                dl_wavelength=1.0 / ratio,
                ssi_dl=reciprocity_map(_tracked_ssi(ctx, tr, k, z), 1.0, 1.0 / ratio).ssi_dl.padded(tau),
            )
            for k in members
        ]
        estimates = {
            "stbem_tracked": _estimate_dl_block(
                ctx, g_true, maps, members, book_dl, tau, e_total, noise_var, rng, slots
            )
        }
        if want_cl:
            estimates["conventional_ls"] = _estimate_dl_conventional(
                ctx, g_true, members, book_cl, e_total, noise_var, rng, slots, X_cl
            )
        if want_perfect:
            estimates["perfect_csi"] = g_true

        if not ber_mode:
            for name, est in estimates.items():
                sums[name] = sums.get(name, 0.0) + score_mse(g_true, est)
                counts[name] = counts.get(name, 0) + 1
            continue

        # matched-filter QPSK downlink on the method's data slots
        for name, est in estimates.items():
            comb = book_cl.slots if name == "conventional_ls" else book_dl.slots
            data = np.array([n for n in range(cfg.N) if n not in set(comb)])
            syms = _qpsk(rng, (len(members), data.shape[0]))
            G = np.stack([g[:, data] for g in g_true])
            W = np.stack([e[:, data].conj() for e in est])
            norms = np.linalg.norm(W, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            W = W / norms
            x = np.einsum("kmn,kn->mn", W, syms)
            y = np.einsum("kmn,mn->kn", G, x)
            if noise_var > 0:
                y = y + math.sqrt(noise_var / 2.0) * (
                    rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
                )
            h_eff = np.einsum("kmn,kmn->kn", G, W)
            h_eff = np.where(np.abs(h_eff) == 0, 1.0, h_eff)
            s_hat = y / h_eff
            err = int(np.sum(np.sign(s_hat.real) != np.sign(syms.real)))
            err += int(np.sum(np.sign(s_hat.imag) != np.sign(syms.imag)))
            errors[name] = errors.get(name, 0) + err
            bits[name] = bits.get(name, 0) + 2 * syms.size

    rows = []
    if ber_mode:
        for name in sorted(errors):
            rows.append(
                MetricRow(spec.scenario, snr, -1, name, trial, errors[name] / max(bits[name], 1))
            )
    else:
        for name in sorted(sums):
            rows.append(MetricRow(spec.scenario, snr, -1, name, trial, sums[name] / counts[name]))
    return rows


# ---------------------------------------------------------------------------
# experiment driver


def _validate(spec: ExperimentSpec, cfg: SystemConfig) -> None:
    bem = BemConfig(mu=spec.mu, N=cfg.N) if spec.mu else BemConfig.for_system(cfg)
    if bem.mu + 1 > cfg.N:
        raise ConfigError(f"CE-BEM order mu={bem.mu} does not fit N={cfg.N}")
    if spec.scenario == "ul_mse" and cfg.G * (bem.mu + 1) > cfg.N:
        raise ConfigError("uplink pilot count G*(mu+1) exceeds the block length")
    if spec.scenario in ("dl_mse", "ber"):
        tau = spec.dl_tau or max(1, cfg.M // spec.dl_pilot_factor)
        if tau * (bem.mu + 1) > cfg.N:
            raise ConfigError("downlink pilot count tau*(mu+1) exceeds the block length")
        if "conventional_ls" in spec.baselines and cfg.M * (bem.mu + 1) > cfg.N:
            raise ConfigError(
                "conventional LS needs M*(mu+1) pilot slots; reduce M or mu, or raise N"
            )


def _run_task(cfg, spec, snr, trial, seed_seq, per_block):
    rng = np.random.default_rng(seed_seq)
    noise_var = snr_to_noise_var(snr)
    ctx = setup_trial(cfg, spec, rng)
    extras = None
    try:
        need_as = spec.scenario in ("as_track", "ul_mse", "dl_mse", "ber")
        tr = run_tracking(ctx, noise_var, rng, need_as=need_as)
        if spec.scenario == "doa_track":
            rows = _rows_doa(ctx, tr, snr, trial, per_block and trial == 0)
        elif spec.scenario == "as_track":
            rows = _rows_as(ctx, tr, snr, trial, noise_var, per_block and trial == 0)
        elif spec.scenario == "ul_mse":
            rows = _rows_ul(ctx, tr, snr, trial, noise_var, rng)
        elif spec.scenario == "dl_mse":
            rows = _rows_dl(ctx, tr, snr, trial, noise_var, rng, ber_mode=False)
        else:
            rows = _rows_dl(ctx, tr, snr, trial, noise_var, rng, ber_mode=True)
        extras = {
            "group_plan": ctx.plan.to_manifest(),
            "pilot_book": ctx.book_ul.to_manifest(),
            "learned_noise": [
                {"user": k, "q_omega": r.params.q_omega, "q_u": r.params.q_u}
                for k, r in enumerate(tr.em)
            ],
            "truth_process_var": ctx.q_true,
            "bem_mu": ctx.bem.mu,
        }
        return rows, extras, None
    except _TRIAL_ERRORS as exc:
        row = MetricRow(
            spec.scenario, snr, getattr(exc, "block", -1) or -1,
            f"error:{type(exc).__name__}", trial, 0.0,
        )
        return [row], extras, exc


def run_experiment(
    spec: ExperimentSpec, cfg: SystemConfig, per_block: bool = False
) -> tuple[list[MetricRow], dict]:
    """Run all (snr, trial) tasks; returns sorted metric rows and the manifest.

    Deterministic for fixed (spec, cfg, cfg.seed) regardless of the worker
    pool size (STBEM_THREADS).
    """
    _validate(spec, cfg)
    tasks = [
        (si, snr, t)
        for si, snr in enumerate(spec.snr_grid)
        for t in range(spec.n_trials)
    ]
    children = np.random.SeedSequence(cfg.seed).spawn(len(tasks))
    workers = int(os.environ.get("STBEM_THREADS", "1") or "1")

    results: dict[int, tuple] = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {
                pool.submit(_run_task, cfg, spec, snr, t, children[i], per_block): i
                for i, (si, snr, t) in enumerate(tasks)
            }
            for fut, i in futs.items():
                results[i] = fut.result()
    else:
        for i, (si, snr, t) in enumerate(tasks):
            results[i] = _run_task(cfg, spec, snr, t, children[i], per_block)

    rows: list[MetricRow] = []
    extras = None
    failures = 0
    for i in range(len(tasks)):
        task_rows, task_extras, exc = results[i]
        rows.extend(task_rows)
        if extras is None and task_extras is not None:
            extras = task_extras
        if exc is not None:
            failures += 1
    if failures == len(tasks):
        raise NumericalError(f"all {failures} trials failed; first rows: {rows[:1]}")

    rows.sort(key=lambda r: (r.snr_db, r.trial, r.block, r.method))
    manifest = {
        "config": asdict(cfg),
        "experiment": asdict(spec),
        "kernel_backend": kernels.BACKEND,
        "n_tasks": len(tasks),
        "n_failed": failures,
    }
    if extras:
        manifest.update(extras)
    return rows, manifest


def write_outputs(rows: list[MetricRow], manifest: dict, out_dir: str) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "results.csv")
    man_path = os.path.join(out_dir, "manifest.json")
    with open(csv_path, "w") as fh:
        fh.write(rows_to_csv(rows))
    with open(man_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, man_path


# ---------------------------------------------------------------------------
# trace diagnostics (beam profile, CE-BEM fit, per-block tracker trace)


def trace_run(cfg: SystemConfig, spec: ExperimentSpec, snr: float):
    """Single-trial diagnostics for the figure kit.

    Returns (metric rows, tracker trace lines). The metric rows carry the
    beamspace profile of a reference cluster and the temporal-fit series of
    its strongest bin; the trace lines are per-(block, user) tracker and
    spread diagnostics.
    """
    from .basis import cebem_fit

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    rows: list[MetricRow] = []

    # reference cluster for the profile and fit figures
    theta_ref, as_ref = math.radians(28.0), math.radians(1.0)
    spatial = [SpatialState(central_doa=theta_ref, max_as=as_ref)]
    block = generate_block(cfg, spatial, 0, rng)
    ht = dft_beamspace(block.h[0])
    power = np.mean(np.abs(ht) ** 2, axis=1)
    for q in range(cfg.M):
        rows.append(MetricRow("beam_profile", snr, q, "beamspace_power", 0, float(power[q])))
    qc = int(np.argmax(power))
    series = ht[qc]
    rows.extend(
        MetricRow("cebem_fit", snr, n, "true", 0, float(series[n].real)) for n in range(cfg.N)
    )
    for mu in (2, 4):
        bem = BemConfig(mu=mu, N=cfg.N)
        gamma = cebem_fit(series, bem)
        fit = gamma @ _basis_full(bem)
        rows.extend(
            MetricRow("cebem_fit", snr, n, f"mu{mu}", 0, float(fit[n].real)) for n in range(cfg.N)
        )

    # one tracked trial with spread diagnostics
    tr_spec = spec.replace(scenario="as_track", n_trials=1, snr_grid=(snr,))
    ctx = setup_trial(cfg, tr_spec, rng)
    tr = run_tracking(ctx, snr_to_noise_var(snr), rng, need_as=True)
    trace_lines = ["block,user,obs,pred_mean,pred_var,mean,var,innovation,sigma2_hat,dtheta_hat,ssi_lo,ssi_hi"]
    for k in range(cfg.K):
        traj = track_scalar(tr.obs[k], ctx.models[k], tr.em[k].params)
        for z in range(tr.obs.shape[1]):
            ssi = _tracked_ssi(ctx, tr, k, z)
            trace_lines.append(
                ",".join(
                    [
                        str(z + 1),
                        str(k),
                        f"{tr.obs[k, z]:.10g}",
                        f"{traj.pred_means[z, 0]:.10g}",
                        f"{traj.pred_covs[z, 0, 0]:.10g}",
                        f"{traj.means[z, 0]:.10g}",
                        f"{traj.covs[z, 0, 0]:.10g}",
                        f"{traj.innovations[z, 0]:.10g}",
                        f"{tr.sigma2_hat[k, z]:.10g}",
                        f"{tr.dtheta_hat[k, z]:.10g}",
                        str(ssi.lo),
                        str(ssi.hi),
                    ]
                )
            )
    return rows, trace_lines


def _basis_full(bem: BemConfig) -> np.ndarray:
    from .basis import basis_matrix

    return basis_matrix(bem, np.arange(bem.N))
