"""End-to-end acceptance checks, one test per criterion.

Every test prints a line ``ACCEPTANCE <n>: PASS|FAIL ...``; the lines are
collected again in the terminal summary.  Tolerances are the contractual
ones and are not relaxed when a check fails.
"""
import math
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest
from scipy import optimize, stats

from arsvhedge.filters import hlik_gradient, hlik_update, prior_state, run_filter
from arsvhedge.harness import LRM_METHODS, PRESETS, run_experiment
from arsvhedge.lrm import (
    LowSampleWarning, OptionSpec, SubpathBundle, denominator_estimates, discrete_sampler, lrm_quote,
    quote_from_bundle, simulate_subpaths, state_from_b,
)
from arsvhedge.model import DEFAULT_PARAMS as P
from arsvhedge.model import simulate_paths, stationary_moments
from arsvhedge.tree import build_tree, hedge_relation_check, lrm_quote_minimal, lrm_quote_physical, tree_bundle

ALPHA = 0.05


def _cli(*argv):
    return subprocess.run([sys.executable, "-m", "arsvhedge.cli", *map(str, argv)],
                          capture_output=True, text=True)


def test_1_stationary_moments(acceptance):
    start = time.perf_counter()
    r = _cli("moments", "--format", "json")
    import json

    m = json.loads(r.stdout)
    var_b = P.sigma_w ** 2 / (1 - P.phi ** 2)
    closed = math.exp(P.gamma / (1 - P.phi) + var_b / 2)
    ok_closed = abs(m["var_y"] - closed) < 1e-6 and abs(m["kurtosis_y"] - 33.00) <= 0.05
    path = simulate_paths(P, 100.0, 10 ** 6, 1, seed=0)
    y = path.y[0]
    x = y - y.mean()
    var_s = x.var()
    kurt_s = np.mean(x ** 4) / var_s ** 2
    elapsed = time.perf_counter() - start
    ok_sim = abs(var_s / m["var_y"] - 1) < 0.03 and abs(kurt_s / m["kurtosis_y"] - 1) < 0.25
    ok = acceptance(1, ok_closed and ok_sim and elapsed < 30 and r.returncode == 0,
                    f"var_y={m['var_y']:.7e} (closed form {closed:.7e}) kurtosis={m['kurtosis_y']:.4f}; "
                    f"simulated var_y={var_s:.4e} ({var_s / m['var_y'] - 1:+.2%}) "
                    f"kurtosis={kurt_s:.2f} ({kurt_s / m['kurtosis_y'] - 1:+.1%}); {elapsed:.1f}s")
    assert ok


def _martingale_checks(measure, sigma_kind, n=100_000, T=12, seed=2):
    if sigma_kind == "true":
        # oracle volatility: the kernels are built from the realised sigma_t
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((n, T))
        eps = rng.standard_normal((n, T))
        b = np.empty((n, T))
        prev = np.full(n, P.mean_b)
        for t in range(T):
            prev = P.gamma + P.phi * prev + P.sigma_w * w[:, t]
            b[:, t] = prev
        sigma = np.exp(b / 2)
        z = sigma * eps
        s = 100.0 * np.exp(np.cumsum(P.r + z, axis=1))
        s = np.concatenate((np.full((n, 1), 100.0), s), axis=1)
        bundle = SubpathBundle(0, 100.0, P.r, s, z, sigma, np.full(n, 1.0 / n))
    else:
        state = state_from_b(sigma_kind, P, 0, P.mean_b)
        bundle = simulate_subpaths(P, 0, 100.0, P.mean_b, state, T, n, np.random.default_rng(seed))
    zt, censored = bundle.weights(measure)
    zt = np.where(censored, 0.0, zt)
    s_disc = bundle.s[:, -1] * math.exp(-P.r * T)
    mean_z = zt.mean()
    se_z = zt.std(ddof=1) / math.sqrt(n)
    rel_s = abs(np.mean(zt * s_disc) - 100.0) / 100.0
    cens = censored.mean()
    ok = abs(mean_z - 1) < 3 * se_z and rel_s < 0.005 and cens < 0.001
    return ok, (f"{measure}/{sigma_kind}: mean Z_T-1={mean_z - 1:+.2e} ({(mean_z - 1) / se_z:+.1f} se) "
                f"|E[Z S]-S0|/S0={rel_s:.2%} censored={cens:.2e}")


def test_2_kernel_martingale_property(acceptance):
    start = time.perf_counter()
    results = [_martingale_checks(m, k) for k in ("kalman", "hlik") for m in ("mc", "mmm")]
    elapsed = time.perf_counter() - start
    ok = all(r[0] for r in results) and elapsed < 60
    acceptance(2, ok, "; ".join(r[1] for r in results) + f"; {elapsed:.1f}s")
    # the same checks with the realised volatility isolate the effect of filtering
    for m in ("mc", "mmm"):
        _, detail = _martingale_checks(m, "true")
        acceptance.note("reference " + detail)
    assert ok


def test_3_tree_oracle(acceptance):
    tree = build_tree(P, 100.0, 2)
    option = OptionSpec(100.0, 2, P.r)
    state = state_from_b("kalman", P, 0, P.mean_b)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LowSampleWarning)
        exact = quote_from_bundle(tree_bundle(tree, state), [option.strike], "mmm", 1)[0]
    sampler = discrete_sampler([-1.0, 1.0], [0.5, 0.5], [-1.0, 1.0], [0.5, 0.5])
    mc = lrm_quote(option, 0, 100.0, P.mean_b, P, "mmm", "kalman", 1, 100_000, seed=0, sampler=sampler)
    dv = abs(mc.value / exact.value - 1)
    dxi = abs(mc.ratio / exact.ratio - 1)
    rel = hedge_relation_check(option, tree)
    gap = abs(lrm_quote_physical(option, tree).v0 - lrm_quote_minimal(option, tree).v0)
    ok = dv < 0.005 and dxi < 0.005 and rel.max_abs < 1e-10 and gap < 1e-10
    acceptance(3, ok, f"V0 mc={mc.value:.6f} exact={exact.value:.6f} ({dv:.3%}); "
                      f"xi1 mc={mc.ratio:.6f} exact={exact.ratio:.6f} ({dxi:.3%}); "
                      f"hedge relation residual={rel.max_abs:.1e}; |V0_P - V0_Qmin|={gap:.1e}")
    assert ok


def test_4_filter_quality(acceptance):
    paths = simulate_paths(P, 100.0, 10_000, 50, seed=4)
    truth = 0.5 * paths.b
    const = 0.5 * P.mean_b
    sq = {"kalman": [], "hlik": []}
    wins = {"kalman": 0, "hlik": 0}
    sq_const = []
    for i in range(50):
        sq_const.append(np.mean((const - truth[i]) ** 2))
        for method in sq:
            fs = run_filter(method, P, paths.s[i])
            e = np.mean((np.log(fs.sigma_hat) - truth[i]) ** 2)
            sq[method].append(e)
            wins[method] += e < sq_const[-1]
    rmse = {k: math.sqrt(np.mean(v)) for k, v in sq.items()}
    rmse_const = math.sqrt(np.mean(sq_const))
    rng = np.random.default_rng(44)
    worst_res, worst_gap = 0.0, 0.0
    for _ in range(1000):
        z = rng.normal(0, 0.05) * rng.choice([1.0, 10.0])
        b_pred = rng.uniform(-14, 0)
        sw = rng.uniform(0.05, 2.0)
        b = hlik_update(P.shifted(sigma_w=sw), z, b_pred)
        oracle = optimize.bisect(lambda x: hlik_gradient(x, z, b_pred, sw), b_pred - 80, b_pred + 80,
                                 xtol=1e-13, maxiter=500)
        worst_res = max(worst_res, abs(hlik_gradient(b, z, b_pred, sw)))
        worst_gap = max(worst_gap, abs(b - oracle))
    ok = (rmse["kalman"] < rmse_const and rmse["hlik"] < rmse_const
          and worst_res < 1e-10 and worst_gap < 1e-8)
    acceptance(4, ok, f"log-vol RMSE kalman={rmse['kalman']:.4f} hlik={rmse['hlik']:.4f} "
                      f"constant={rmse_const:.4f} (paths won: kalman {wins['kalman']}/50, "
                      f"hlik {wins['hlik']}/50); h-lik residual max={worst_res:.1e}, "
                      f"bisection gap max={worst_gap:.1e}")
    assert ok


@pytest.fixture(scope="module")
def desk_reports():
    start = time.perf_counter()
    reports = {name: run_experiment(PRESETS[name].with_(n_eval=200, n_mc=1000))
               for name in ("exercise1", "exercise2")}
    return reports, time.perf_counter() - start


def _greater(report, worse, better, T, m):
    """One-sided paired p-value for mse(worse) > mse(better) on common paths."""
    a, b = report.errors(worse, T, m), report.errors(better, T, m)
    d = (a - b)[np.isfinite(a - b)]
    return float(stats.ttest_1samp(d, 0.0, alternative="greater").pvalue)


def test_5a_duan_worse_than_lrm(acceptance, desk_reports):
    reports, elapsed = desk_reports
    rep = reports["exercise1"]
    duans = [m for m in rep.config.methods if m.startswith("duan-")]
    fails = []
    for T in rep.config.maturities:
        for d in duans:
            for lrm in LRM_METHODS:
                p = _greater(rep, d, lrm, T, 1.0)
                if not p < ALPHA:
                    fails.append(f"{d}>{lrm} T={T} p={p:.2f}")
    ok = not fails
    n = len(rep.config.maturities) * len(duans) * len(LRM_METHODS)
    acceptance("5a", ok, f"{n - len(fails)}/{n} ATM orderings significant"
               + (f"; not significant e.g. {', '.join(fails[:3])}" if fails else "") + f"; {elapsed:.0f}s")
    assert ok


def test_5b_lrm_beats_black_scholes(acceptance, desk_reports):
    reports, _ = desk_reports
    rep = reports["exercise2"]
    detail, ok = [], True
    for m, label in ((1.0, "ATM"), (1.11, "ITM")):
        for T in (20, 30, 40):
            p = _greater(rep, "bs", "lrm-mmm-kalman", T, m)
            ok &= p < ALPHA
            detail.append(f"{label} T={T} p={p:.3f}")
    acceptance("5b", ok, "bs>lrm-mmm-kalman: " + ", ".join(detail))
    assert ok


def test_5c_mmm_kalman_best_lrm(acceptance, desk_reports):
    reports, elapsed = desk_reports
    beaten, n = [], 0
    for name, rep in reports.items():
        for T in rep.config.maturities:
            for m in rep.config.moneyness:
                for other in LRM_METHODS:
                    if other == "lrm-mmm-kalman":
                        continue
                    n += 1
                    p = _greater(rep, "lrm-mmm-kalman", other, T, m)
                    if p < ALPHA:
                        beaten.append(f"{name} m={m:g} T={T} by {other} p={p:.3f}")
    ok = not beaten and elapsed < 3600
    acceptance("5c", ok, f"lrm-mmm-kalman significantly beaten in {len(beaten)}/{n} comparisons"
               + (f": {'; '.join(beaten[:4])}" if beaten else "") + f"; total runtime {elapsed:.0f}s")
    assert ok


def test_6_determinism(acceptance, tmp_path):
    import json

    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"maturities": [2, 4], "j": 2, "n_eval": 4, "n_mc": 150,
                               "methods": ["lrm-*", "bs", "duan-mmm-kalman"]}))
    src = tmp_path / "src"
    assert _cli("simulate", "--seed", "1", "--out", src, "--horizon", "12").returncode == 0
    prices = src / "path_00000.csv"
    commands = {
        "moments": ["moments", "--format", "json"],
        "simulate": ["simulate", "--n-paths", "3", "--horizon", "20"],
        "filter": ["filter", "--prices", prices, "--method", "hlik"],
        "hedge": ["hedge", "--prices", prices, "--strike", "100", "--maturity", "12", "--n-mc", "300"],
        "experiment": ["experiment", "--config", cfg, "--format", "json"],
        "experiment-threads": ["experiment", "--config", cfg, "--threads", "2"],
    }
    bad = []
    for name, argv in commands.items():
        snaps = []
        for k in range(2):
            out = tmp_path / f"{name}-{k}"
            out.mkdir()
            r = _cli(*argv, "--seed", "13", "--out", out)
            assert r.returncode == 0, r.stderr
            snaps.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
        if snaps[0] != snaps[1] or not snaps[0]:
            bad.append(name)
    ok = not bad
    acceptance(6, ok, f"{len(commands) - len(bad)}/{len(commands)} CLI runs byte-identical on rerun"
               + (f"; differing: {bad}" if bad else ""))
    assert ok


def test_7_denominator_estimator_variance(acceptance):
    state = state_from_b("kalman", P, 0, P.mean_b)
    bundle = simulate_subpaths(P, 0, 100.0, P.mean_b, state, 12, 2500, np.random.default_rng(7))
    rng = np.random.default_rng(77)
    var_form, mom_form = [], []
    for _ in range(100):
        idx = rng.integers(0, len(bundle), len(bundle))
        boot = SubpathBundle(0, bundle.s_t, bundle.r, bundle.s[idx], bundle.z[idx],
                             bundle.sigma_hat[idx], bundle.prob[idx])
        d = denominator_estimates(boot, "mmm", 1)
        var_form.append(d["variance"])
        mom_form.append(d["second_moment"])
    v1, v2 = np.var(var_form, ddof=1), np.var(mom_form, ddof=1)
    ok = v1 < v2
    acceptance(7, ok, f"bootstrap variance: variance form {v1:.4e}, second-moment form {v2:.4e} "
                      f"(ratio {v1 / v2:.3f})")
    assert ok
