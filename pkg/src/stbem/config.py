"""System constants, experiment specifications and the on-disk config format.

Config files are TOML with two tables, ``[system]`` and ``[experiment]``,
whose keys mirror the field names of :class:`SystemConfig` and
:class:`ExperimentSpec`.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml


SCENARIOS = ("doa_track", "as_track", "ul_mse", "dl_mse", "ber")
BASELINES = (
    "dft_search",
    "no_em",
    "aging",
    "fixed_upsilon",
    "conventional_ls",
    "sbem_static",
    "perfect_csi",
)


class ConfigError(ValueError):
    """A configuration file or object failed validation."""


@dataclass(frozen=True)
class SystemConfig:
    """Physical and frame constants of the uplink.

    Attributes
    ----------
    M : int
        Base-station antenna count (uniform linear array).
    d_over_lambda : float
        Antenna spacing in carrier wavelengths, at most half.
    K : int
        Number of single-antenna users.
    G : int
        Expected number of spatial groups (informational; the grouping
        module derives the actual partition).
    N : int
        Time slots per block.
    Ts : float
        Sampling period in seconds.
    fd : float
        Maximum Doppler frequency in Hz.
    P : int
        Rays per user cluster.
    noise_var : float
        Receiver noise power (linear) per antenna element.
    seed : int
        Master RNG seed.
    """

    M: int = 128
    d_over_lambda: float = 0.5
    K: int = 12
    G: int = 3
    N: int = 100
    Ts: float = 1e-4
    fd: float = 200.0
    P: int = 16
    noise_var: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ConfigError(f"M must be >= 2, got {self.M}")
        if not 0.0 < self.d_over_lambda <= 0.5:
            raise ConfigError(f"d_over_lambda must be in (0, 0.5], got {self.d_over_lambda}")
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if not self.fd * self.Ts < 0.5:
            raise ConfigError(
                f"fd*Ts must be < 0.5 for an identifiable Doppler spectrum, got {self.fd * self.Ts}"
            )
        if self.P < 1:
            raise ConfigError(f"P must be >= 1, got {self.P}")
        if self.noise_var < 0:
            raise ConfigError(f"noise_var must be >= 0, got {self.noise_var}")

    @property
    def beam_scale(self) -> float:
        """Bins per unit sin(DOA): M*d/lambda, the measurement-map scale."""
        return self.M * self.d_over_lambda

    def replace(self, **kw) -> "SystemConfig":
        d = asdict(self)
        d.update(kw)
        return SystemConfig(**d)


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte Carlo experiment: scenario, SNR grid and baselines.

    ``mu = 0`` selects the smallest even CE-BEM order satisfying the
    Doppler degrees-of-freedom bound for the bound system config.
    """

    scenario: str = "doa_track"
    snr_grid: tuple[float, ...] = (10.0,)
    n_blocks: int = 100
    n_trials: int = 1
    baselines: tuple[str, ...] = ()
    speed_kmh: float = 80.0
    fixed_upsilon: tuple[int, ...] = (4, 6)
    mu: int = 0
    guard: int = 4
    obs_window: int = 8
    em_iters: int = 8
    em_tol: float = 1e-3
    as_deg: float = 2.0
    eta_support: float = 0.98
    dl_wavelength_ratio: float = 0.95
    dl_pilot_factor: int = 4
    dl_tau: int = 0
    cell_radius_m: float = 500.0
    train_power_boost: float = 1.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if not self.snr_grid:
            raise ConfigError("snr_grid must be nonempty")
        if self.n_trials < 1:
            raise ConfigError(f"n_trials must be >= 1, got {self.n_trials}")
        for b in self.baselines:
            if b not in BASELINES:
                raise ConfigError(f"unknown baseline {b!r}; expected subset of {BASELINES}")
        if self.dl_pilot_factor < 1:
            raise ConfigError("dl_pilot_factor must be >= 1")

    def replace(self, **kw) -> "ExperimentSpec":
        d = asdict(self)
        d.update(kw)
        for key in ("snr_grid", "baselines", "fixed_upsilon"):
            d[key] = tuple(d[key])
        return ExperimentSpec(**d)


def _coerce(dc_type, table: dict, where: str):
    known = {f.name: f for f in fields(dc_type)}
    kw = {}
    for key, val in table.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        if isinstance(val, list):
            val = tuple(val)
        kw[key] = val
    return dc_type(**kw)


def load_config(path) -> tuple[SystemConfig, ExperimentSpec]:
    """Parse a TOML config file into (SystemConfig, ExperimentSpec)."""
    with open(path, "rb") as fh:
        try:
            data = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    cfg = _coerce(SystemConfig, data.get("system", {}), "system")
    spec = _coerce(ExperimentSpec, data.get("experiment", {}), "experiment")
    return cfg, spec


def default_config_for(scenario: str) -> tuple[SystemConfig, ExperimentSpec]:
    """Built-in configurations reproducing the reference experiments.

    The downlink scenarios run at reduced array size so the conventional
    full-dimension LS baseline (M*(mu+1) pilot symbols) fits in one block.
    """
    if scenario in ("doa_track", "as_track", "ul_mse"):
        cfg = SystemConfig()
        spec = ExperimentSpec(scenario=scenario)
        if scenario == "ul_mse":
            spec = spec.replace(baselines=("fixed_upsilon", "aging"))
        elif scenario == "doa_track":
            spec = spec.replace(baselines=("dft_search", "no_em"))
        return cfg, spec
    if scenario == "dl_mse":
        cfg = SystemConfig(M=64, K=12, G=3, N=200, fd=50.0, Ts=1e-4, P=16)
        spec = ExperimentSpec(
            scenario=scenario, mu=2, baselines=("conventional_ls",), snr_grid=(-10.0, -5.0, 0.0)
        )
        return cfg, spec
    if scenario == "ber":
        # wider array separates the per-bin training beams of co-scheduled
        # users; short blocks keep the within-block basis residual small
        # while M*(mu+1) conventional pilots still fit in one block
        cfg = SystemConfig(M=128, K=12, G=3, N=400, fd=25.0, Ts=1e-5, P=16)
        spec = ExperimentSpec(
            scenario=scenario,
            mu=2,
            baselines=("conventional_ls", "perfect_csi"),
            snr_grid=tuple(float(s) for s in range(-20, -5, 2)),
            dl_tau=12,
            train_power_boost=4.0,
        )
        return cfg, spec
    raise ConfigError(f"unknown scenario {scenario!r}")
