"""Command line entry point.

    arsvhedge moments
    arsvhedge simulate --seed 7 --out paths/ --n-paths 5 --horizon 250
    arsvhedge filter --prices paths/path_00000.csv --method hlik --out vol.csv
    arsvhedge hedge --prices paths/path_00000.csv --strike 100 --maturity 12 --method lrm-mmm-kalman
    arsvhedge experiment --config exercise2.json --out results/ --threads 4

Exit status is 0 on success, 1 for configuration or input errors and 2 for
numerical failures.  Errors are reported on stderr as one JSON object per line.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .filters import METHODS as FILTERS
from .filters import run_filter
from .harness import (
    ALL_METHODS, PRESETS, ConfigError, ExperimentConfig, emit_report, hedge_prices,
    load_config, resolve_threads, run_experiment,
)
from .lrm import OptionSpec
from .model import read_prices_csv, simulate_paths, stationary_moments, write_path_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _diag(kind: str, message: str, **extra) -> None:
    print(json.dumps({"level": "error", "kind": kind, "message": message, **extra}), file=sys.stderr)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory or file")
    p.add_argument("--threads", type=int, help="worker processes")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arsvhedge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("moments", help="print stationary moments of the model")
    _common(p)

    p = sub.add_parser("simulate", help="simulate price paths to CSV")
    _common(p)
    p.add_argument("--n-paths", type=int, default=1)
    p.add_argument("--horizon", type=int, default=252)

    p = sub.add_parser("filter", help="volatility forecasts from a price CSV")
    _common(p)
    p.add_argument("--prices", type=Path, required=True)
    p.add_argument("--method", choices=FILTERS, default="kalman")

    p = sub.add_parser("hedge", help="replicate one call option along a price CSV")
    _common(p)
    p.add_argument("--prices", type=Path, required=True)
    p.add_argument("--strike", type=float, required=True)
    p.add_argument("--maturity", type=int, help="steps (default: all prices)")
    p.add_argument("--method", choices=ALL_METHODS, default="lrm-mmm-kalman")
    p.add_argument("--j", type=int, default=1, help="steps between rebalances")
    p.add_argument("--n-mc", type=int, help="inner Monte Carlo paths (overrides the config)")
    p.add_argument("--path-index", type=int, default=0, help="inner stream index")

    p = sub.add_parser("experiment", help="run a hedging experiment from a JSON config")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), help="use a built-in configuration")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError(["--seed must lie in [0, 2**64)"])
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _write_text(dest: Path | None, text: str) -> None:
    if dest is None:
        sys.stdout.write(text)
        return
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(text, encoding="utf-8", newline="\n")


def _as_file(out: Path | None, default_name: str) -> Path | None:
    if out is None:
        return None
    return out / default_name if (out.is_dir() or not out.suffix) else out


def cmd_moments(args) -> int:
    cfg = _config(args)
    m = stationary_moments(cfg.params).as_dict()
    if args.format == "json":
        text = json.dumps(m, indent=2) + "\n"
    else:
        text = "".join(f"{k},{v!r}\n" for k, v in m.items())
        text = "quantity,value\n" + text
    _write_text(_as_file(args.out, f"moments.{args.format}"), text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.n_paths < 1 or args.horizon < 1:
        raise ConfigError(["--n-paths and --horizon must be >= 1"])
    paths = simulate_paths(cfg.params, cfg.s0, args.horizon, args.n_paths, cfg.seed)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "json":
        doc = [{"t": list(range(p.horizon + 1)), "b": [p.b0, *p.b.tolist()],
                "y": [None, *p.y.tolist()], "s": p.s.tolist()} for p in paths]
        (out / "paths.json").write_text(json.dumps(doc) + "\n", encoding="utf-8", newline="\n")
    else:
        for i, p in enumerate(paths):
            write_path_csv(p, out / f"path_{i:05d}.csv")
    return EXIT_OK


def cmd_filter(args) -> int:
    cfg = _config(args)
    prices = read_prices_csv(args.prices)
    fs = run_filter(args.method, cfg.params, prices)
    aux = list(fs.aux)
    if args.format == "json":
        doc = {"method": fs.method, "sigma_hat": fs.sigma_hat.tolist(), "sigma_next": fs.sigma_next,
               "n_floored": fs.n_floored,
               "aux": {k: [float(x) for x in v] for k, v in fs.aux.items()}}
        text = json.dumps(doc, indent=2) + "\n"
    else:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "sigma_hat", "method", *aux])
        for t in range(1, len(fs) + 1):
            wr.writerow([t, repr(float(fs.sigma_hat[t - 1])), fs.method,
                         *[repr(float(fs.aux[k][t - 1])) for k in aux]])
        text = buf.getvalue()
    _write_text(_as_file(args.out, f"forecast.{args.format}"), text)
    return EXIT_OK


def cmd_hedge(args) -> int:
    cfg = _config(args)
    prices = read_prices_csv(args.prices)
    T = args.maturity if args.maturity is not None else len(prices) - 1
    try:
        option = OptionSpec(args.strike, T, cfg.params.r)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from None
    if args.j < 1 or T % args.j:
        raise ConfigError([f"maturity {T} is not a multiple of --j {args.j}"])
    if len(prices) < T + 1:
        raise ConfigError([f"{args.prices}: need {T + 1} prices for maturity {T}, got {len(prices)}"])
    n_mc = args.n_mc if args.n_mc is not None else cfg.n_mc
    if n_mc < 100:
        raise ConfigError(["--n-mc must be >= 100"])
    run = hedge_prices(prices, cfg.params, args.method, option, args.j, n_mc=n_mc, seed=cfg.seed,
                       path=args.path_index, alt_numerator_discount=cfg.alt_numerator_discount,
                       centered=cfg.centered, undiscounted=cfg.undiscounted_error)
    doc = run.to_dict()
    doc["seed"] = cfg.seed
    doc["n_mc"] = n_mc
    _write_text(_as_file(args.out, "hedge.json"), json.dumps(_finite(doc), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_finite(v) for v in x]
    return x


def cmd_experiment(args) -> int:
    if args.config is None and args.preset is None:
        raise ConfigError(["experiment needs --config PATH or --preset NAME"])
    cfg = _config(args) if args.config else PRESETS[args.preset]
    if args.config is None and args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    report = run_experiment(cfg, threads=resolve_threads(args.threads))
    files = emit_report(report, args.out or Path("results"), args.format)
    logging.getLogger("arsvhedge").info("wrote %s in %.1fs", ", ".join(str(f) for f in files),
                                        report.wall_time["total_seconds"])
    return EXIT_OK


COMMANDS = {
    "moments": cmd_moments,
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "hedge": cmd_hedge,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for problem in exc.problems:
            _diag("config", problem)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        _diag("numerical", f"{type(exc).__name__}: {exc}")
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        _diag("input", str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
