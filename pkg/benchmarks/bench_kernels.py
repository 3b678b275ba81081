"""Compare the compiled and numpy shadow-distance kernels.

Run with ``python benchmarks/bench_kernels.py [--n 20000] [--repeat 3]``.
Prints wall time per backend, the speed-up and the largest disagreement.
"""

import argparse
import time

import numpy as np

from hrps import _kernels_py
from hrps.core import random_orthogonal

try:
    from hrps import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def make_batch(n, d, spread, seed):
    rng = np.random.default_rng(seed)
    U = np.array([random_orthogonal(d, rng) for _ in range(n)])
    mu = np.sort(rng.normal(scale=spread, size=(n, d)), axis=1)[:, ::-1]
    mu = np.ascontiguousarray(mu - mu.mean(axis=1, keepdims=True))
    return U, mu


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--r", type=float, default=2.0)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled kernel unavailable; build with pip install -e . --no-build-isolation")
        return 1
    print(f"{'d':>2} {'early':>5} {'python s':>9} {'cython s':>9} {'speed-up':>8} {'max |df|':>9}")
    for d in (2, 3, 4, 6):
        U, mu = make_batch(args.n, d, 3.0, seed=d)
        for early in (False, True):
            tp, (fp, sp, _) = best_time(lambda: _kernels_py.minimize_batch(U, mu, args.r**2, early_stop=early), args.repeat)
            tc, (fc, sc, _) = best_time(lambda: _compiled.minimize_batch(U, mu, args.r**2, early_stop=early), args.repeat)
            both = (sp == 1) | (sc == 1) if early else np.ones(sp.size, bool)
            diff = float(np.nanmax(np.abs(fp[both] - fc[both]))) if both.any() else 0.0
            print(f"{d:>2} {str(early):>5} {tp:9.3f} {tc:9.3f} {tp / tc:8.1f} {diff:9.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
