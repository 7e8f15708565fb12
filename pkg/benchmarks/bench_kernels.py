"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeat 7 --json bench.json

Two workloads per kernel: one long path (the filters along an evaluation
path) and a wide short batch (a sub-path bundle at one rebalance time).
"""
import argparse
import json
import sys
import timeit

import numpy as np

from arsvhedge import _backend
from arsvhedge.filters import HLIK_MAX_ITER, HLIK_TOL, KalmanConstants
from arsvhedge.model import DEFAULT_PARAMS as P

SHAPES = {"long path": (1, 10_000), "bundle": (2500, 12)}


def _cases(mod, n, h, rng):
    w = rng.standard_normal((n, h))
    eps = rng.standard_normal((n, h))
    b0 = np.full(n, P.mean_b)
    _, y = mod.arsv_recursion(w, eps, b0, P.r, P.gamma, P.phi, P.sigma_w)
    z = y - P.r
    kc = KalmanConstants.from_params(P)
    l = np.log(np.abs(z))
    return {
        "arsv_recursion": lambda: mod.arsv_recursion(w, eps, b0, P.r, P.gamma, P.phi, P.sigma_w),
        "kalman_run": lambda: mod.kalman_run(l, np.full(n, kc.alpha_k), 1.0, kc.alpha_k, kc.phi,
                                             kc.var_eta, kc.mu_xi, kc.var_xi),
        "hlik_run": lambda: mod.hlik_run(z, b0, P.gamma, P.phi, P.sigma_w, HLIK_TOL, HLIK_MAX_ITER),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the timings to this file")
    args = ap.parse_args(argv)
    backends = _backend.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the fallback only", file=sys.stderr)
    rows = []
    for shape_name, (n, h) in SHAPES.items():
        for name in ("arsv_recursion", "kalman_run", "hlik_run"):
            row = {"kernel": name, "workload": shape_name, "n": n, "h": h}
            for bname, mod in backends.items():
                fn = _cases(mod, n, h, np.random.default_rng(0))[name]
                number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
                best = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
                row[bname] = best
            rows.append(row)
    print(f"{'kernel':<16}{'workload':<12}{'python (ms)':>13}{'cython (ms)':>13}{'speed-up':>10}")
    for r in rows:
        cy = r.get("cython")
        print(f"{r['kernel']:<16}{r['workload']:<12}{1e3 * r['python']:>13.3f}"
              + (f"{1e3 * cy:>13.3f}{r['python'] / cy:>9.1f}x" if cy else f"{'-':>13}{'-':>10}"))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
