"""Time the numba kernels against the numpy fallback, and factored BADGE against naive.

    python benchmarks/bench_kernels.py            # reduced scale, a few seconds
    python benchmarks/bench_kernels.py --full     # n=20000, K=100, d=512, B=100 BADGE case

Numba compilation happens once before timing (and is cached on disk).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from embal import _kernels
from embal.strategies.badge import naive_min_update_chunked


def best_of(fn, repeat=3):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def sgd_case(impl, tier, n=2000, d=32, k=10, batch=64):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((n, d))
    y = rng.integers(0, k, n)
    w = np.full(n, 1.0 / batch)
    offsets = np.arange(0, n + batch, batch).clip(max=n)
    offsets = np.unique(offsets)
    if tier == "linear":
        params = [rng.standard_normal((k, d)) * 0.1, np.zeros(k)]
        fn = impl.sgd_linear_epoch
    else:
        params = [rng.standard_normal((d, d)) * 0.1, np.zeros(d), rng.standard_normal((k, d)) * 0.1, np.zeros(k)]
        fn = impl.sgd_shallow_epoch
    vel = [np.zeros_like(p) for p in params]
    return lambda: fn(*params, *vel, X, y, w, offsets, 0.01, 0.9, 1e-4)


def min_update_case(impl, kind, n=20000, d=32, k=10, centers=20):
    rng = np.random.default_rng(1)
    if kind == "euclid":
        X = rng.standard_normal((n, d))

        def run():
            mind = np.full(n, np.inf)
            for c in range(centers):
                impl.euclid_min_update(X, X[c], mind)
    else:
        q = rng.standard_normal((n, k))
        v = rng.standard_normal((n, d))
        sq = (q * q).sum(1) * (v * v).sum(1)

        def run():
            mind = np.full(n, np.inf)
            for c in range(centers):
                impl.factored_min_update(q, v, sq, c, mind)
    return run


def badge_case(n, k, d, B, naive):
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.full(k, 0.2), size=n)
    q = -p
    q[np.arange(n), p.argmax(1)] += 1.0
    v = rng.standard_normal((n, d))
    sq = (q * q).sum(1) * (v * v).sum(1)
    centers = rng.choice(n, B, replace=False)

    def run():
        mind = np.full(n, np.inf)
        for c in centers:
            if naive:
                naive_min_update_chunked(q, v, c, mind)
            else:
                _kernels.active.factored_min_update(q, v, sq, c, mind)
        return mind

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--full", action="store_true", help="run the full-size BADGE distance comparison")
    args = ap.parse_args(argv)

    impls = [i for i in (_kernels.numpy_impl, _kernels.numba_impl) if i is not None]
    print(f"active backend: {_kernels.active.name}")
    print(f"{'kernel':<28}" + "".join(f"{i.name:>12}" for i in impls) + f"{'speedup':>10}")
    cases = [
        ("sgd epoch, linear", lambda i: sgd_case(i, "linear")),
        ("sgd epoch, shallow", lambda i: sgd_case(i, "shallow")),
        ("coreset min-dist, 20 ctr", lambda i: min_update_case(i, "euclid")),
        ("badge min-dist, 20 ctr", lambda i: min_update_case(i, "factored")),
    ]
    for name, make in cases:
        times = []
        for impl in impls:
            fn = make(impl)
            fn()  # warm-up / compile
            times.append(best_of(fn))
        speed = f"{times[0] / times[-1]:>9.1f}x" if len(times) > 1 else ""
        print(f"{name:<28}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times) + speed)

    n, k, d, B = (20000, 100, 512, 100) if args.full else (2000, 100, 512, 10)
    print(f"\nBADGE distance updates, n={n} K={k} d={d} B={B}")
    fact = badge_case(n, k, d, B, naive=False)
    naive = badge_case(n, k, d, B, naive=True)
    a = fact()
    t_fact = best_of(fact)
    t0 = time.perf_counter()
    b = naive()
    t_naive = time.perf_counter() - t0
    # relative to the largest distance: near-zero entries are pure cancellation noise
    err = float(np.max(np.abs(a - b)) / np.max(b))
    print(f"factored {t_fact:.3f}s  naive {t_naive:.3f}s  speedup {t_naive / t_fact:.1f}x  max scaled diff {err:.1e}")


if __name__ == "__main__":
    main()
