"""Command-line interface: simulate, sweep, trace and selftest subcommands.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ConfigError, ExperimentSpec, SystemConfig, default_config_for, load_config
from .sim import NumericalError, rows_to_csv, run_experiment, trace_run, write_outputs


def _parse_snr(text: str) -> tuple[float, ...]:
    """Either a single value or an a:step:b inclusive grid."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"bad SNR grid {text!r}; expected start:step:stop")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError("SNR grid step must be > 0")
        grid = []
        v = start
        while v <= stop + 1e-9:
            grid.append(round(v, 10))
            v += step
        return tuple(grid)
    return (float(text),)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file ([system] + [experiment])")
    p.add_argument("--scenario", help="doa_track | as_track | ul_mse | dl_mse | ber")
    p.add_argument("--snr", help="single value or start:step:stop grid (dB)")
    p.add_argument("--trials", type=int, help="Monte Carlo trials per SNR point")
    p.add_argument("--seed", type=int, help="master RNG seed")
    p.add_argument("--blocks", type=int, help="blocks per trial")
    p.add_argument("--baselines", help="comma-separated baseline list")
    p.add_argument("--out", default="stbem_out", help="output directory")


def _resolve(args) -> tuple[SystemConfig, ExperimentSpec]:
    if args.config:
        cfg, spec = load_config(args.config)
        if args.scenario:
            spec = spec.replace(scenario=args.scenario)
    else:
        scenario = args.scenario or "doa_track"
        cfg, spec = default_config_for(scenario)
    if args.snr:
        spec = spec.replace(snr_grid=_parse_snr(args.snr))
    if args.trials is not None:
        spec = spec.replace(n_trials=args.trials)
    if args.blocks is not None:
        spec = spec.replace(n_blocks=args.blocks)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.baselines is not None:
        names = tuple(b for b in args.baselines.split(",") if b)
        spec = spec.replace(baselines=names)
    return cfg, spec


def _join_negative_snr(argv):
    """Let `--snr -10:2:20` parse: argparse mistakes the value for a flag."""
    if argv is None:
        argv = sys.argv[1:]
    out = []
    skip = False
    for i, a in enumerate(argv):
        if skip:
            skip = False
            continue
        if a == "--snr" and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"--snr={argv[i + 1]}")
            skip = True
        else:
            out.append(a)
    return out


def main(argv=None) -> int:
    argv = _join_negative_snr(argv)
    parser = argparse.ArgumentParser(
        prog="stbem",
        description="Time-varying massive MIMO channel tracking simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one scenario (per-block rows for trial 0)")
    _add_common(p_sim)
    p_sweep = sub.add_parser("sweep", help="run a scenario over an SNR grid")
    _add_common(p_sweep)
    p_trace = sub.add_parser("trace", help="per-block diagnostics and figure source data")
    _add_common(p_trace)
    sub.add_parser("selftest", help="run the built-in verification suites")

    args = parser.parse_args(argv)

    if args.command == "selftest":
        from .selftest import run_selftest

        return run_selftest()

    try:
        cfg, spec = _resolve(args)
        if args.command in ("simulate", "sweep"):
            rows, manifest = run_experiment(spec, cfg, per_block=args.command == "simulate")
            csv_path, man_path = write_outputs(rows, manifest, args.out)
            print(f"wrote {csv_path} ({len(rows)} rows) and {man_path}")
            return 0
        # trace
        snr = spec.snr_grid[0]
        rows, trace_lines = trace_run(cfg, spec, snr)
        os.makedirs(args.out, exist_ok=True)
        csv_path = os.path.join(args.out, "trace.csv")
        with open(csv_path, "w") as fh:
            fh.write(rows_to_csv(rows))
        tr_path = os.path.join(args.out, "tracker_trace.csv")
        with open(tr_path, "w") as fh:
            fh.write("\n".join(trace_lines) + "\n")
        man_path = os.path.join(args.out, "manifest.json")
        with open(man_path, "w") as fh:
            json.dump(
                {"config": cfg.__dict__, "experiment": spec.__dict__, "mode": "trace"},
                fh, indent=2, sort_keys=True, default=list,
            )
            fh.write("\n")
        print(f"wrote {csv_path}, {tr_path} and {man_path}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
