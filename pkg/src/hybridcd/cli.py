"""Command-line entry point: ``hybridcd {run,thresholds,case-study,validate}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, bundled_config, bundled_configs, load_config

EXIT_INVALID = 2


def _config_path(value: str) -> Path:
    """A file path, or the name of a bundled scenario file."""
    p = Path(value)
    if p.exists():
        return p
    try:
        return bundled_config(value)
    except FileNotFoundError:
        raise ConfigError([("config", f"{value!r} is neither a file nor a bundled config "
                                      f"({', '.join(bundled_configs())})")]) from None


def _load(args) -> dict:
    overrides = {"seed": args.seed, "reps": args.reps, "engine": args.engine}
    return load_config(_config_path(args.config), overrides)


def _add_common(p: argparse.ArgumentParser, with_config: bool = True) -> None:
    if with_config:
        p.add_argument("config", help="scenario JSON file or bundled config name (e.g. table1)")
    p.add_argument("--out", default="results", help="output directory (default: ./results)")
    p.add_argument("--seed", type=int, help="override the seed in the config")
    p.add_argument("--reps", type=int, help="override the Monte Carlo replicate count")
    p.add_argument("--engine", choices=["closed_form", "quadrature", "monte_carlo", "enumeration"],
                   help="override the evaluation engine")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on this)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridcd",
        description="Operating characteristics of compromise decisions for hybrid-control trials.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="evaluate TIE/power (and optional averages, recalibration)")
    _add_common(p_run)
    p_thr = sub.add_parser("thresholds", help="emit critical z, kappa and gamma curves per rule")
    _add_common(p_thr)
    p_case = sub.add_parser("case-study", help="binomial case study by complete enumeration")
    _add_common(p_case, with_config=False)
    p_val = sub.add_parser("validate", help="check a scenario file and report every problem")
    p_val.add_argument("config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    from . import runner

    try:
        if args.command == "validate":
            cfg = load_config(_config_path(args.config))
            print(f"ok: {len(cfg['scenarios'])} scenario(s)")
            return 0
        if args.command == "case-study":
            args.config = "case_study"
        cfg = _load(args)
        if args.command == "thresholds":
            rows = runner.emit_thresholds(cfg, args.out)
        else:
            rows = runner.run_scenario(cfg, args.out, jobs=args.jobs, command=args.command)
    except ConfigError as exc:
        for loc, msg in exc.errors:
            print(f"error: {loc}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(rows)} rows to {Path(args.out) / 'results.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
