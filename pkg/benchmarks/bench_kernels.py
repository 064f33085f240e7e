"""
Wall-clock comparison of the compiled and pure-Python two-marginal IPFP loops.

Usage::

    python benchmarks/bench_kernels.py [--sizes 100,300,1000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from otmatch import _fallback

try:
    from otmatch import _kernels
except ImportError:  # extension not built
    _kernels = None


def problem(n, seed=0):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(n, 2)), rng.normal(size=(n // 2 + 1, 2))
    C = np.ascontiguousarray(((x[:, None] - y[None]) ** 2).sum(-1))
    return C, np.full(C.shape[0], -np.log(C.shape[0])), np.full(C.shape[1], -np.log(C.shape[1]))


def timed(fn, C, la, lb, eps, damp, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        f, g = np.zeros(C.shape[0]), np.zeros(C.shape[1])
        t = time.perf_counter()
        it, change, status = fn(C, la, lb, f, g, eps, damp, damp, False, 1e-9, 100000)
        best = min(best, time.perf_counter() - t)
        out = (it, status, f)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    p.add_argument("--sizes", default="100,300,1000")
    p.add_argument("--eps", type=float, nargs="+", default=[1e-1, 1e-2])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if _kernels is None:
        raise SystemExit("compiled extension not available; run `pip install -e .` first")
    print(f"{'n':>6} {'eps':>8} {'sweeps':>7} {'compiled s':>11} {'python s':>10} "
          f"{'speed-up':>9} {'max |df|':>9}")
    for n in (int(v) for v in args.sizes.split(",")):
        C, la, lb = problem(n)
        for eps in args.eps:
            damp = 1.0 / (1.0 + eps)
            tc, (it, _, fc) = timed(_kernels.ipfp2, C, la, lb, eps, damp, args.repeat)
            tp, (_, _, fp) = timed(_fallback.ipfp2, C, la, lb, eps, damp, args.repeat)
            print(f"{n:>6} {eps:>8g} {it:>7} {tc:>11.4f} {tp:>10.4f} {tp / tc:>9.1f} "
                  f"{np.abs(fc - fp).max():>9.1e}")


if __name__ == "__main__":
    main()
