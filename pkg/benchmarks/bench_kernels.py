"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 200000]
"""
import argparse
import timeit

import numpy as np

from softcut import _fallback

try:
    from softcut import _kernels
except ImportError:
    _kernels = None


def cases(n, rng):
    x = rng.uniform(1e-3, 200, n)
    side = int(np.sqrt(n))
    counts = rng.integers(0, 40, size=(side, side)).astype(float)
    counts[rng.random(counts.shape) < 0.5] = 0
    pi = rng.uniform(0, 1, counts.shape)
    mu = 10 ** rng.uniform(-2, 3, counts.shape)
    th = 10 ** rng.uniform(-1, 2, counts.shape)
    Q = rng.dirichlet(np.ones(8), size=2000)
    log_k = 50 * np.log(Q)
    log_col = np.log(np.full(8, 2000 / 8))
    return {
        "lgamma": lambda k: k.lgamma(x),
        "digamma": lambda k: k.digamma(x),
        "zinb_nll_terms": lambda k: k.zinb_nll_terms(counts, pi, mu, th, 1e-10),
        "sinkhorn_log": lambda k: k.sinkhorn_log(log_k, log_col, 200, 0.0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=200_000)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install --no-build-isolation -e .` first")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, fn in cases(args.size, rng).items():
        py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        cc = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{py:>12.2f}{cc:>14.2f}{py / cc:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
