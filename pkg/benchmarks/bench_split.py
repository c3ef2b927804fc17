"""Compare the compiled and numpy split kernels, alone and inside a forest fit.

    python benchmarks/bench_split.py [--repeat 5]
"""

import argparse
import importlib
import os
import sys
import timeit

import numpy as np


def load_backends():
    from dbtune._core import _split_py
    backends = {"python": _split_py.best_split}
    try:
        backends["cython"] = importlib.import_module("dbtune._core._split").best_split
    except ImportError:
        print("compiled kernel not built; only the numpy fallback is timed", file=sys.stderr)
    return backends


def node_inputs(rng, k, n):
    xs = np.sort(rng.random((k, n)), axis=1)
    ys = rng.normal(size=(k, n))
    return np.ascontiguousarray(xs), np.ascontiguousarray(ys)


def bench_kernel(backends, repeat):
    rng = np.random.default_rng(0)
    print(f"{'k x n':>12} " + " ".join(f"{b:>12}" for b in backends) + "     speedup")
    for k, n in [(117, 8), (117, 50), (350, 200), (350, 1000)]:
        xs, ys = node_inputs(rng, k, n)
        ref = None
        times = {}
        for name, fn in backends.items():
            out = fn(xs, ys, 2)
            if ref is None:
                ref = out
            elif out[:2] != ref[:2] or not np.isclose(out[2], ref[2], rtol=1e-10):
                raise SystemExit(f"backends disagree at {k}x{n}: {ref} vs {out}")
            number = max(1, int(2e5 // (k * n)))
            times[name] = min(timeit.repeat(lambda: fn(xs, ys, 2), number=number, repeat=repeat)) / number
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{f'{k} x {n}':>12} " + " ".join(f"{times[b] * 1e6:>10.1f}us" for b in backends)
              + f"  {speed:>9.1f}x")


def bench_forest(backends):
    import dbtune._core as core
    from dbtune.forest import fit_forest
    rng = np.random.default_rng(1)
    X = rng.random((200, 350))
    y = 10 * X[:, 3] + np.where(X[:, 7] > 0.8, -5.0, 0.0) + rng.normal(0, 0.1, 200)
    for name, fn in backends.items():
        core.best_split = fn
        t = timeit.timeit(lambda: fit_forest(X, y, n_trees=20, seed=0), number=1)
        print(f"forest fit (200 x 350, 20 trees) with {name:>6}: {t:.2f}s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    os.environ.pop("DBTUNE_PURE_PYTHON", None)
    backends = load_backends()
    bench_kernel(backends, args.repeat)
    bench_forest(backends)


if __name__ == "__main__":
    main()
