"""Hedging experiments: many evaluation paths, many methods, one report.

Every evaluation path is simulated once at the longest maturity and shared
by all methods and options (common random numbers).  On each path the
hedger filters volatility from prices alone, and at every rebalance time
draws a fresh sub-path bundle from the stream

    (seed, INNER_MC, path, maturity, t, filter, measure)

which is shared by all strikes and by the LRM and Duan hedges built on the
same kernel and filter.  Method names are ``lrm-<measure>-<filter>``,
``duan-<measure>-<filter>`` and ``bs``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from ._backend import BACKEND
from .baselines import BsParams, bs_delta, bs_price, duan_from_bundle
from .filters import METHODS as FILTERS
from .filters import VolForecastSeries, run_filter
from .kernels import MEASURES
from .lrm import OptionSpec, quote_from_bundle, rebalance_times, replicate, simulate_subpaths
from .model import DEFAULT_PARAMS, ModelParams, ParameterError, simulate_paths
from .rng import INNER_MC, substream

log = logging.getLogger(__name__)

THREADS_ENV = "ARSVHEDGE_THREADS"
LRM_METHODS = tuple(f"lrm-{m}-{f}" for m in MEASURES for f in FILTERS)
DUAN_METHODS = tuple(f"duan-{m}-{f}" for m in MEASURES for f in FILTERS)
ALL_METHODS = LRM_METHODS + ("bs",) + DUAN_METHODS


class ConfigError(ValueError):
    """Invalid experiment configuration; ``problems`` lists one message per issue."""

    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    family: str
    measure: str | None = None
    filter: str | None = None

    @classmethod
    def parse(cls, name: str) -> "MethodSpec":
        if name == "bs":
            return cls(name, "bs")
        parts = name.split("-")
        if len(parts) == 3 and parts[0] in ("lrm", "duan") and parts[1] in MEASURES and parts[2] in FILTERS:
            return cls(name, parts[0], parts[1], parts[2])
        raise ValueError(f"unknown method {name!r}")


def expand_methods(names: Iterable[str]) -> tuple[str, ...]:
    """Expand ``lrm-*`` / ``duan-*`` and drop duplicates, keeping order."""
    out: list[str] = []
    for name in names:
        group = {"lrm-*": LRM_METHODS, "duan-*": DUAN_METHODS}.get(name, (name,))
        for g in group:
            MethodSpec.parse(g)
            if g not in out:
                out.append(g)
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams = DEFAULT_PARAMS
    s0: float = 100.0
    moneyness: tuple = (1.11, 1.0, 0.90)
    maturities: tuple = (6, 8, 10, 12)
    j: int = 1
    methods: tuple = ALL_METHODS
    n_eval: int = 200
    n_mc: int = 2500
    seed: int = 0
    name: str = "custom"
    alt_numerator_discount: bool = False
    undiscounted_error: bool = False
    centered: bool = False

    def __post_init__(self):
        problems = []
        if not self.s0 > 0:
            problems.append("s0 must be positive")
        if not self.moneyness or any(not m > 0 for m in self.moneyness):
            problems.append("moneyness values must be positive")
        if self.j < 1:
            problems.append("j must be >= 1")
        for T in self.maturities:
            if T < 1 or (self.j >= 1 and T % self.j):
                problems.append(f"maturity {T} is not a positive multiple of j={self.j}")
        if not self.maturities:
            problems.append("at least one maturity is required")
        if self.n_eval < 1:
            problems.append("n_eval must be >= 1")
        if self.n_mc < 100:
            problems.append("n_mc must be >= 100")
        if self.seed < 0:
            problems.append("seed must be non-negative")
        if not self.methods:
            problems.append("at least one method is required")
        if problems:
            raise ConfigError(problems)

    def strikes(self) -> tuple:
        return tuple(self.s0 / m for m in self.moneyness)

    def with_(self, **changes) -> "ExperimentConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ExperimentConfig(**values)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["params"] = {k: getattr(self.params, k) for k in ("r", "gamma", "phi", "sigma_w")}
        for k in ("moneyness", "maturities", "methods"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, data: dict, text: str | None = None) -> "ExperimentConfig":
        """Build a config from parsed JSON; ``text`` (the raw file) adds line numbers to errors."""
        problems = []

        def where(key):
            line = _line_of(text, key)
            return f"line {line}: " if line else ""

        if not isinstance(data, dict):
            raise ConfigError(["top level must be a JSON object"])
        base = {}
        preset = data.get("preset")
        if preset is not None:
            if preset not in PRESETS:
                problems.append(f"{where('preset')}unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            else:
                base = PRESETS[preset].to_dict()
        known = {f.name for f in fields(cls)} | {"preset"}
        for key in data:
            if key not in known:
                problems.append(f"{where(key)}unknown key {key!r}")
        merged = {**base, **{k: v for k, v in data.items() if k != "preset"}}
        kwargs = {}
        if "params" in merged:
            p = merged["params"]
            if not isinstance(p, dict) or set(p) - {"r", "gamma", "phi", "sigma_w"}:
                problems.append(f"{where('params')}params must be an object with keys r, gamma, phi, sigma_w")
            else:
                try:
                    vals = {k: getattr(DEFAULT_PARAMS, k) for k in ("r", "gamma", "phi", "sigma_w")}
                    vals.update({k: float(v) for k, v in p.items()})
                    kwargs["params"] = ModelParams(**vals)
                except (TypeError, ValueError, ParameterError) as exc:
                    problems.append(f"{where('params')}{exc}")
        casts = {
            "s0": float, "j": int, "n_eval": int, "n_mc": int, "seed": int, "name": str,
            "alt_numerator_discount": bool, "undiscounted_error": bool, "centered": bool,
        }
        for key, cast in casts.items():
            if key in merged:
                v = merged[key]
                ok = isinstance(v, bool) if cast is bool else (
                    isinstance(v, str) if cast is str else
                    isinstance(v, (int, float)) and not isinstance(v, bool) and (cast is float or float(v).is_integer()))
                if not ok:
                    problems.append(f"{where(key)}{key} must be of type {cast.__name__}")
                else:
                    kwargs[key] = cast(v)
        for key, cast in (("moneyness", float), ("maturities", int)):
            if key in merged:
                v = merged[key]
                if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
                    problems.append(f"{where(key)}{key} must be a list of numbers")
                else:
                    kwargs[key] = tuple(cast(x) for x in v)
        if "methods" in merged:
            v = merged["methods"]
            try:
                if not isinstance(v, list):
                    raise ValueError("methods must be a list of names")
                kwargs["methods"] = expand_methods(v)
            except ValueError as exc:
                problems.append(f"{where('methods')}{exc}")
        if problems:
            raise ConfigError(problems)
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            raise ConfigError([f"{where(_guess_key(p))}{p}" for p in exc.problems]) from None


def _guess_key(problem: str) -> str:
    for key in ("maturity", "moneyness", "n_eval", "n_mc", "seed", "s0", "methods", "j"):
        if problem.startswith(key):
            return "maturities" if key == "maturity" else key
    return ""


def _line_of(text: str | None, key: str) -> int | None:
    if not text or not key:
        return None
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    try:
        return ExperimentConfig.from_dict(data, text)
    except ConfigError as exc:
        raise ConfigError([f"{path}: {p}" for p in exc.problems]) from None


PRESETS = {
    "exercise1": ExperimentConfig(name="exercise1", maturities=(6, 8, 10, 12), j=1,
                                  methods=ALL_METHODS),
    "exercise2": ExperimentConfig(name="exercise2", maturities=(10, 20, 30, 40), j=10,
                                  methods=LRM_METHODS + ("bs",)),
    "exercise3": ExperimentConfig(name="exercise3", maturities=(20, 40, 60, 80, 100, 120), j=20,
                                  methods=LRM_METHODS + ("bs",)),
}
FULL_SCALE_EVAL = {"exercise1": 1000, "exercise2": 1000, "exercise3": 600}


# -- per-path evaluation -----------------------------------------------------

@dataclass
class PathRecord:
    path: int
    method: str
    maturity: int
    moneyness: float
    strike: float
    error: float
    ok: bool
    censored_fraction: float = 0.0
    min_n_effective: float = float("nan")
    message: str = ""


@dataclass
class _QuoteTable:
    values: np.ndarray
    lrm: np.ndarray
    duan: np.ndarray
    censored: float
    min_ess: float


def _quote_table(cfg, i, T, s, states, flt, measure, need_duan, strikes) -> _QuoteTable:
    times = rebalance_times(T, cfg.j)
    values = np.empty((len(times), len(strikes)))
    lrm = np.empty_like(values)
    duan = np.empty_like(values)
    censored, min_ess = 0.0, math.inf
    fid, mid = FILTERS.index(flt), MEASURES.index(measure)
    for row, t in enumerate(times):
        state = states.state_at(int(t))
        rng = substream(cfg.seed, INNER_MC, i, T, int(t), fid, mid)
        bundle = simulate_subpaths(cfg.params, int(t), s[t], state.log_variance(), state,
                                   T - int(t), cfg.n_mc, rng)
        quotes = quote_from_bundle(bundle, strikes, measure, cfg.j, cfg.alt_numerator_discount, cfg.centered)
        values[row] = [q.value for q in quotes]
        lrm[row] = [q.ratio for q in quotes]
        censored = max(censored, quotes[0].censored_fraction)
        min_ess = min(min_ess, quotes[0].n_effective)
        if need_duan:
            duan[row] = duan_from_bundle(bundle, strikes, measure)
    return _QuoteTable(values, lrm, duan, censored, min_ess)


def evaluate_path(cfg: ExperimentConfig, i: int, prices: np.ndarray) -> list[PathRecord]:
    """Hedge every (method, maturity, strike) cell of ``cfg`` along one price path."""
    import warnings

    strikes = cfg.strikes()
    specs = [MethodSpec.parse(m) for m in cfg.methods]
    records: list[PathRecord] = []
    series: dict[str, VolForecastSeries | Exception] = {}
    for flt in sorted({sp.filter for sp in specs if sp.filter}):
        try:
            series[flt] = run_filter(flt, cfg.params, prices)
        except (ArithmeticError, ValueError) as exc:
            series[flt] = exc
    bsp = BsParams.from_model(cfg.params) if any(sp.family == "bs" for sp in specs) else None
    for T in cfg.maturities:
        times = rebalance_times(T, cfg.j)
        s = prices[: T + 1]
        tables: dict[tuple, _QuoteTable | Exception] = {}
        combos = {(sp.filter, sp.measure) for sp in specs if sp.family != "bs"}
        for flt, measure in sorted(combos):
            need_duan = any(sp.family == "duan" and (sp.filter, sp.measure) == (flt, measure) for sp in specs)
            if isinstance(series[flt], Exception):
                tables[(flt, measure)] = series[flt]
                continue
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    tables[(flt, measure)] = _quote_table(
                        cfg, i, T, s, series[flt], flt, measure, need_duan, strikes)
            except (ArithmeticError, ValueError) as exc:
                tables[(flt, measure)] = exc
        for sp in specs:
            for m, k in zip(cfg.moneyness, strikes):
                option = OptionSpec(k, T, cfg.params.r)
                rec = PathRecord(path=i, method=sp.name, maturity=T, moneyness=m, strike=k,
                                 error=float("nan"), ok=False)
                col = strikes.index(k)
                if sp.family == "bs":
                    ratios = [bs_delta(s[t], k, T - t, bsp) for t in times]
                    values = [bs_price(s[t], k, T - t, bsp) for t in times]
                else:
                    tab = tables[(sp.filter, sp.measure)]
                    if isinstance(tab, Exception):
                        rec.message = f"{type(tab).__name__}: {tab}"
                        records.append(rec)
                        continue
                    values = tab.values[:, col]
                    ratios = (tab.lrm if sp.family == "lrm" else tab.duan)[:, col]
                    rec.censored_fraction = tab.censored
                    rec.min_n_effective = tab.min_ess
                run = replicate(s, option, cfg.j, values, ratios, method=sp.name,
                                undiscounted=cfg.undiscounted_error)
                if math.isfinite(run.terminal_error):
                    rec.error = run.terminal_error
                    rec.ok = True
                else:
                    rec.message = "non-finite terminal error"
                records.append(rec)
    return records


def _evaluate_chunk(args):
    cfg, first, prices = args
    return [evaluate_path(cfg, first + k, p) for k, p in enumerate(prices)]


def resolve_threads(threads: int | None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError([f"{THREADS_ENV}={env!r} is not an integer"]) from None
    threads = 1 if threads is None else threads
    if threads < 1:
        raise ConfigError(["thread count must be >= 1"])
    return threads


# -- aggregation -------------------------------------------------------------

SUMMARY_COLUMNS = ("method", "maturity", "moneyness", "mse", "stderr", "n_ok", "n_fail",
                   "censored_mean", "censored_max")
PER_PATH_COLUMNS = ("path", "method", "maturity", "moneyness", "strike", "error", "status",
                    "censored_fraction", "min_n_effective", "message")
PLOT_COLUMNS = ("method", "maturity", "mse", "stderr")


@dataclass
class SummaryRow:
    method: str
    maturity: int
    moneyness: float
    mse: float
    stderr: float
    n_ok: int
    n_fail: int
    censored_mean: float
    censored_max: float


def summarise(records: Sequence[PathRecord], methods, maturities, moneyness) -> list[SummaryRow]:
    cells: dict[tuple, list[PathRecord]] = {}
    for r in records:
        cells.setdefault((r.method, r.maturity, r.moneyness), []).append(r)
    rows = []
    for method in methods:
        for T in maturities:
            for m in moneyness:
                cell = cells.get((method, T, m), [])
                errs = [r.error for r in cell if r.ok]
                cens = [r.censored_fraction for r in cell if r.ok]
                rows.append(SummaryRow(
                    method=method, maturity=T, moneyness=m,
                    mse=aggregate_mse(errs), stderr=aggregate_stderr(errs),
                    n_ok=len(errs), n_fail=len(cell) - len(errs),
                    censored_mean=math.fsum(cens) / len(cens) if cens else float("nan"),
                    censored_max=max(cens) if cens else float("nan"),
                ))
    return rows


def aggregate_mse(errors: Sequence[float]) -> float:
    return math.fsum(errors) / len(errors) if errors else float("nan")


def aggregate_stderr(errors: Sequence[float]) -> float:
    n = len(errors)
    if n < 2:
        return float("nan")
    mean = math.fsum(errors) / n
    return math.sqrt(math.fsum((e - mean) ** 2 for e in errors) / (n - 1) / n)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list[PathRecord]
    summary: list[SummaryRow]
    wall_time: dict = field(default_factory=dict)
    backend: str = BACKEND

    def errors(self, method: str, maturity: int, moneyness: float) -> np.ndarray:
        """Per-path terminal errors of one cell, indexed by path (NaN where failed)."""
        out = np.full(self.config.n_eval, np.nan)
        for r in self.records:
            if (r.method, r.maturity, r.moneyness) == (method, maturity, moneyness) and r.ok:
                out[r.path] = r.error
        return out

    def cell(self, method: str, maturity: int, moneyness: float) -> SummaryRow:
        for row in self.summary:
            if (row.method, row.maturity, row.moneyness) == (method, maturity, moneyness):
                return row
        raise KeyError((method, maturity, moneyness))


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentReport:
    """Run every configured method over ``cfg.n_eval`` shared evaluation paths."""
    threads = resolve_threads(threads)
    start = time.perf_counter()
    horizon = max(cfg.maturities)
    paths = simulate_paths(cfg.params, cfg.s0, horizon, cfg.n_eval, cfg.seed)
    chunks = _chunks(cfg, paths.s, threads)
    if threads == 1:
        nested = [_evaluate_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            nested = list(pool.map(_evaluate_chunk, chunks))
    records = [r for chunk in nested for recs in chunk for r in recs]
    summary = summarise(records, cfg.methods, cfg.maturities, cfg.moneyness)
    n_fail = sum(not r.ok for r in records)
    if n_fail:
        log.warning("%d of %d hedging cells failed", n_fail, len(records))
    return ExperimentReport(config=cfg, records=records, summary=summary,
                            wall_time={"total_seconds": time.perf_counter() - start,
                                       "threads": threads})


def _chunks(cfg, prices, threads):
    n = len(prices)
    size = max(1, math.ceil(n / (threads * 4))) if threads > 1 else n
    return [(cfg, a, prices[a: a + size]) for a in range(0, n, size)]


# -- output ------------------------------------------------------------------

def _cell(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else repr(x))
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([_cell(x) for x in row])
    try:
        path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def plot_filename(moneyness: float) -> str:
    return f"plot_moneyness_{moneyness:g}.csv"


def emit_report(report: ExperimentReport, out_dir, fmt: str = "csv") -> list[Path]:
    """Write summary, per-path, plot-data and manifest files; returns their paths.

    ``fmt='json'`` additionally writes ``summary.json``.  Timing is left out
    of every file so reruns with the same seed are byte-identical.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
    cfg = report.config
    written = []
    p = out / "summary.csv"
    _write_csv(p, SUMMARY_COLUMNS, [
        (r.method, r.maturity, r.moneyness, r.mse, r.stderr, r.n_ok, r.n_fail,
         r.censored_mean, r.censored_max) for r in report.summary])
    written.append(p)
    p = out / "per_path.csv"
    _write_csv(p, PER_PATH_COLUMNS, [
        (r.path, r.method, r.maturity, r.moneyness, r.strike, r.error,
         "ok" if r.ok else "fail", r.censored_fraction, r.min_n_effective, r.message)
        for r in report.records])
    written.append(p)
    for m in cfg.moneyness:
        p = out / plot_filename(m)
        _write_csv(p, PLOT_COLUMNS, [
            (r.method, r.maturity, r.mse, r.stderr) for r in report.summary if r.moneyness == m])
        written.append(p)
    if fmt == "json":
        p = out / "summary.json"
        _write_json(p, [{c: getattr(r, c) for c in SUMMARY_COLUMNS} for r in report.summary])
        written.append(p)
    manifest = {
        "package": "arsvhedge",
        "version": __version__,
        "backend": report.backend,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "n_records": len(report.records),
        "n_failed": sum(not r.ok for r in report.records),
        "files": [w.name for w in written],
    }
    p = out / "manifest.json"
    _write_json(p, manifest)
    written.append(p)
    return written


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def _write_json(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_per_path(path) -> list[PathRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [PathRecord(
        path=int(r["path"]), method=r["method"], maturity=int(r["maturity"]),
        moneyness=float(r["moneyness"]), strike=float(r["strike"]), error=float(r["error"]),
        ok=r["status"] == "ok", censored_fraction=float(r["censored_fraction"]),
        min_n_effective=float(r["min_n_effective"]), message=r["message"],
    ) for r in rows]


# -- single replication ------------------------------------------------------

def hedge_prices(
    prices,
    params: ModelParams,
    method: str,
    option: OptionSpec,
    j: int,
    n_mc: int = 2500,
    seed: int = 0,
    path: int = 0,
    alt_numerator_discount: bool = False,
    centered: bool = False,
    undiscounted: bool = False,
):
    """Replicate one option along an observed price series with one method.

    Uses the same inner streams as :func:`run_experiment` would for
    evaluation path ``path``.
    """
    import warnings

    sp = MethodSpec.parse(method)
    prices = np.asarray(prices, dtype=np.float64)
    T = option.maturity
    if len(prices) < T + 1:
        raise ValueError(f"need {T + 1} prices for maturity {T}, got {len(prices)}")
    s = prices[: T + 1]
    times = rebalance_times(T, j)
    diagnostics = {}
    if sp.family == "bs":
        bsp = BsParams.from_model(params)
        values = [bs_price(s[t], option.strike, T - t, bsp) for t in times]
        ratios = [bs_delta(s[t], option.strike, T - t, bsp) for t in times]
    else:
        cfg = ExperimentConfig(params=params, s0=float(s[0]), moneyness=(1.0,), maturities=(T,),
                               j=j, methods=(method,), n_eval=path + 1, n_mc=n_mc, seed=seed,
                               alt_numerator_discount=alt_numerator_discount, centered=centered)
        series = run_filter(sp.filter, params, s)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tab = _quote_table(cfg, path, T, s, series, sp.filter, sp.measure,
                               sp.family == "duan", (option.strike,))
        values = tab.values[:, 0]
        ratios = (tab.lrm if sp.family == "lrm" else tab.duan)[:, 0]
        diagnostics = {"censored_fraction_max": tab.censored, "min_n_effective": tab.min_ess,
                       "n_floored": series.n_floored}
    run = replicate(s, option, j, values, ratios, method=method, undiscounted=undiscounted,
                    measure=sp.measure, filter=sp.filter)
    run.diagnostics = diagnostics
    return run
