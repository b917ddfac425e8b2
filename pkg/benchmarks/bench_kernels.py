"""Wall-clock comparison of the compiled and pure-Python step loops.

Both backends consume the same streams, so each pair of timings covers
identical trajectories; the script checks that the results agree.

    python3 benchmarks/bench_kernels.py [--runs N] [--lam L] [--t-max T]
"""
from __future__ import annotations

import argparse
import time

from snails import _backend
from snails.model import ModelParams, auto_window, run
from snails.rng import RngStream


def time_backend(name, params, window, n_runs, t_max, seed):
    rows = []
    start = time.perf_counter()
    for i in range(n_runs):
        res, _ = run(params, window, RngStream(seed, i), t_max=t_max, backend=name)
        rows.append(repr(res.row()))  # repr so NaN fields compare equal
    return time.perf_counter() - start, rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--lam", type=float, default=1.0)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--t-max", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--c-win", type=float, default=3.0, help="front speed used to size the window")
    args = ap.parse_args(argv)

    if "compiled" not in _backend.available():
        raise SystemExit("compiled kernel not built; run: python3 setup.py build_ext --inplace")
    params = ModelParams(lam=args.lam, alpha=args.alpha)
    window = auto_window(params, args.t_max, c_win=args.c_win)
    results = {}
    for name in ("compiled", "python"):
        elapsed, rows = time_backend(name, params, window, args.runs, args.t_max, args.seed)
        results[name] = (elapsed, rows)
        print(f"{name:>9}: {elapsed:8.3f} s  ({elapsed / args.runs * 1e3:8.2f} ms/run)")
    same = results["compiled"][1] == results["python"][1]
    print(f"  speedup: {results['python'][0] / results['compiled'][0]:.1f}x  identical results: {same}")
    return 0 if same else 1


if __name__ == "__main__":
    raise SystemExit(main())
