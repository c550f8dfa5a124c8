"""Compare the compiled and numpy tree kernels.

    python3 benchmarks/bench_kernels.py [--rows 50000] [--features 24] [--repeat 5]

Reports best-of-N wall time for the histogram kernel, tree prediction and a
full boosting fit, and checks that both backends give identical results.
"""

import argparse
import sys
import time

import numpy as np

from cfaudit.learn import GBTHyper, _backend, train_gbt
from cfaudit.learn.gbt import bin_codes, candidate_thresholds


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=50_000)
    ap.add_argument("--features", type=int, default=24)
    ap.add_argument("--rounds", type=int, default=30)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = _backend.available()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    X = rng.normal(size=(args.rows, args.features))
    y = (rng.uniform(size=args.rows) < 1 / (1 + np.exp(-X[:, 0] - X[:, 1] * X[:, 2]))).astype(float)
    thr = candidate_thresholds(X, 32)
    codes = bin_codes(X, thr)
    rows = np.sort(rng.choice(args.rows, args.rows // 2, replace=False)).astype(np.intp)
    g, h = rng.normal(size=args.rows), rng.uniform(size=args.rows)
    hyper = GBTHyper(n_rounds=args.rounds)

    results = {}
    for name in backends:
        k = _backend.get(name)
        t_hist, hist = best_of(lambda: k.histogram(codes, rows, g, h, 33), args.repeat)
        t_fit, model = best_of(lambda: train_gbt(X, y, hyper, backend=name), max(1, args.repeat // 2))
        tree = model.trees[-1]
        t_pred, pred = best_of(
            lambda: k.predict_tree(X, tree.feature, tree.threshold, tree.left, tree.right, tree.value), args.repeat
        )
        results[name] = (t_hist, t_pred, t_fit, hist, pred, model.to_dict())

    print(f"rows={args.rows} features={args.features} rounds={args.rounds}")
    print(f"{'backend':8s} {'histogram ms':>13s} {'predict ms':>11s} {'fit s':>8s}")
    for name, (th, tp, tf, *_) in results.items():
        print(f"{name:8s} {th * 1e3:13.2f} {tp * 1e3:11.2f} {tf:8.2f}")
    if len(results) == 2:
        py, cy = results["python"], results["cython"]
        print(f"speedup  {py[0] / cy[0]:13.1f}x {py[1] / cy[1]:10.1f}x {py[2] / cy[2]:7.1f}x")
        same = (
            all(np.array_equal(a, b) for a, b in zip(py[3], cy[3]))
            and np.array_equal(py[4], cy[4])
            and py[5] == cy[5]
        )
        print("outputs identical:", same)
        return 0 if same else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
