import csv
import json
import math

import numpy as np
import pytest

from arsvhedge import harness, model
from arsvhedge.harness import (
    ALL_METHODS, LRM_METHODS, PRESETS, ConfigError, ExperimentConfig, MethodSpec, aggregate_mse,
    emit_report, expand_methods, hedge_prices, load_config, read_per_path, resolve_threads,
    run_experiment,
)
from arsvhedge.lrm import OptionSpec
from arsvhedge.model import DEFAULT_PARAMS, ModelParams, simulate_paths

SMALL = ExperimentConfig(maturities=(2, 4), j=2, n_eval=4, n_mc=200, seed=5,
                         methods=("lrm-mmm-kalman", "lrm-mc-hlik", "bs", "duan-mmm-kalman"))


@pytest.fixture(scope="module")
def small_report():
    return run_experiment(SMALL, threads=1)


def test_method_names():
    assert len(ALL_METHODS) == 9 and len(LRM_METHODS) == 4
    sp = MethodSpec.parse("duan-mc-hlik")
    assert (sp.family, sp.measure, sp.filter) == ("duan", "mc", "hlik")
    assert MethodSpec.parse("bs").filter is None
    with pytest.raises(ValueError):
        MethodSpec.parse("lrm-esscher-kalman")
    assert expand_methods(["lrm-*", "bs"]) == LRM_METHODS + ("bs",)


def test_presets():
    assert PRESETS["exercise1"].maturities == (6, 8, 10, 12) and PRESETS["exercise1"].j == 1
    assert PRESETS["exercise2"].maturities == (10, 20, 30, 40) and PRESETS["exercise2"].j == 10
    assert PRESETS["exercise3"].j == 20
    assert PRESETS["exercise1"].strikes() == pytest.approx((100 / 1.11, 100.0, 100 / 0.9))


def test_config_validation_collects_all_problems():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(maturities=(10, 15), j=10, n_mc=50, seed=-1)
    text = str(info.value)
    assert "15" in text and "n_mc" in text and "seed" in text


def test_config_file_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "preset": "exercise2",\n  "n_eval": 3,\n  "maturities": [10, 15]\n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert "line 4" in str(info.value)
    p.write_text('{\n  "n_eval": 3,\n  "bogus": 1\n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert "line 3" in str(info.value) and "bogus" in str(info.value)
    p.write_text('{\n  "n_eval": 3,,\n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(p)
    assert "line 2" in str(info.value)


def test_config_round_trip(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(SMALL.to_dict()))
    assert load_config(p) == SMALL
    p.write_text(json.dumps({"preset": "exercise2", "n_eval": 7, "params": {"sigma_w": 0.5}}))
    cfg = load_config(p)
    assert cfg.maturities == (10, 20, 30, 40) and cfg.n_eval == 7 and cfg.params.sigma_w == 0.5
    assert cfg.params.gamma == DEFAULT_PARAMS.gamma


def test_thread_resolution(monkeypatch):
    monkeypatch.delenv(harness.THREADS_ENV, raising=False)
    assert resolve_threads(None) == 1
    assert resolve_threads(3) == 3
    monkeypatch.setenv(harness.THREADS_ENV, "2")
    assert resolve_threads(5) == 2
    monkeypatch.setenv(harness.THREADS_ENV, "x")
    with pytest.raises(ConfigError):
        resolve_threads(None)


def test_report_shape(small_report):
    rep = small_report
    assert len(rep.records) == 4 * 4 * 2 * 3
    assert len(rep.summary) == 4 * 2 * 3
    assert all(r.ok for r in rep.records)
    assert all(row.n_ok == 4 and row.n_fail == 0 for row in rep.summary)


def test_determinism_and_thread_independence(small_report):
    again = run_experiment(SMALL, threads=1)
    assert [r.error for r in again.records] == [r.error for r in small_report.records]
    par = run_experiment(SMALL, threads=2)
    key = lambda r: (r.path, r.method, r.maturity, r.moneyness)
    a = sorted(small_report.records, key=key)
    b = sorted(par.records, key=key)
    assert [r.error for r in a] == [r.error for r in b]


def test_common_evaluation_paths(small_report):
    # every method sees the same evaluation path: the BS error is reproducible from the path alone
    paths = simulate_paths(SMALL.params, SMALL.s0, 4, SMALL.n_eval, SMALL.seed)
    k = 100.0
    for i in range(SMALL.n_eval):
        run = hedge_prices(paths.s[i], SMALL.params, "bs", OptionSpec(k, 4, SMALL.params.r), 2)
        assert small_report.errors("bs", 4, 1.0)[i] == run.terminal_error


def test_single_replication_matches_experiment(small_report):
    paths = simulate_paths(SMALL.params, SMALL.s0, 4, SMALL.n_eval, SMALL.seed)
    for method in ("lrm-mmm-kalman", "duan-mmm-kalman", "lrm-mc-hlik"):
        run = hedge_prices(paths.s[2], SMALL.params, method, OptionSpec(100.0, 4, SMALL.params.r), 2,
                           n_mc=SMALL.n_mc, seed=SMALL.seed, path=2)
        assert small_report.errors(method, 4, 1.0)[2] == run.terminal_error


def test_aggregation_recomputes_from_per_path_file(small_report, tmp_path):
    files = emit_report(small_report, tmp_path)
    names = sorted(f.name for f in files)
    assert names == sorted(["summary.csv", "per_path.csv", "manifest.json",
                            "plot_moneyness_1.11.csv", "plot_moneyness_1.csv", "plot_moneyness_0.9.csv"])
    recs = read_per_path(tmp_path / "per_path.csv")
    with (tmp_path / "summary.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        errs = [r.error for r in recs if r.ok and r.method == row["method"]
                and r.maturity == int(row["maturity"]) and r.moneyness == float(row["moneyness"])]
        assert float(row["mse"]) == aggregate_mse(errs)
    assert all(b"\r\n" not in f.read_bytes() for f in files)


def test_emitted_files_are_byte_identical(small_report, tmp_path):
    emit_report(small_report, tmp_path / "a", "json")
    emit_report(run_experiment(SMALL, threads=2), tmp_path / "b", "json")
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_plot_data_structure(tmp_path):
    cfg = PRESETS["exercise2"].with_(n_eval=2, n_mc=100)
    rep = run_experiment(cfg)
    emit_report(rep, tmp_path)
    plots = sorted(tmp_path.glob("plot_moneyness_*.csv"))
    assert len(plots) == 3
    for p in plots:
        with p.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4 * 5
        assert {int(r["maturity"]) for r in rows} == {10, 20, 30, 40}


def test_empty_cells_emit_header_only(tmp_path):
    rep = harness.ExperimentReport(config=SMALL, records=[], summary=[])
    emit_report(rep, tmp_path)
    assert (tmp_path / "summary.csv").read_text() == ",".join(harness.SUMMARY_COLUMNS) + "\n"


def test_stream_families_are_disjoint(monkeypatch):
    seen = []

    def recording(real):
        def wrapper(seed, *key):
            seen.append((seed, *key))
            return real(seed, *key)
        return wrapper

    monkeypatch.setattr(model, "substream", recording(model.substream))
    monkeypatch.setattr(harness, "substream", recording(harness.substream))
    cfg = SMALL.with_(n_eval=2)
    run_experiment(cfg)
    families = {k[1] for k in seen}
    assert families == {model.EVAL_PATHS, harness.INNER_MC}
    # every evaluation path key is used once; inner keys repeat only across strikes and
    # the LRM/Duan pair, which share one bundle per (path, maturity, time, filter, measure)
    evals = [k for k in seen if k[1] == model.EVAL_PATHS]
    assert len(evals) == len(set(evals)) == 2
    inner = [k for k in seen if k[1] == harness.INNER_MC]
    assert len(inner) == len(set(inner))


def _degenerate_config(centered):
    p = ModelParams(r=DEFAULT_PARAMS.r, gamma=2 * math.log(1e-5), phi=0.0, sigma_w=0.0)
    return ExperimentConfig(params=p, maturities=(4,), j=1, n_eval=3, n_mc=200, seed=1,
                            moneyness=(1.11,), centered=centered,
                            methods=("lrm-mmm-kalman", "lrm-mc-kalman", "bs", "duan-mmm-kalman",
                                     "duan-mc-kalman", "lrm-mmm-hlik"))


def _assert_riskless(rep):
    for method in ("lrm-mmm-kalman", "lrm-mc-kalman", "bs", "duan-mmm-kalman", "duan-mc-kalman"):
        row = rep.cell(method, 4, 1.11)
        # the residual is the Monte Carlo error of V_0, of order (sigma s sqrt(T))^2 / n_mc
        assert row.n_ok == 3 and row.mse < 1e-6, (method, row.mse)
    # the h-likelihood filter needs volatility noise and reports failures instead
    assert rep.cell("lrm-mmm-hlik", 4, 1.11).n_fail == 3


def test_degenerate_volatility_config():
    # almost deterministic prices: ITM calls are replicated with near-zero error
    _assert_riskless(run_experiment(_degenerate_config(centered=True)))


@pytest.mark.xfail(strict=True, reason="the uncentred LRM numerator carries (s-K) * mean(dS) noise "
                   "of relative size (s-K) / (sigma s sqrt(n)), which diverges as sigma -> 0")
def test_degenerate_volatility_config_uncentred():
    _assert_riskless(run_experiment(_degenerate_config(centered=False)))
