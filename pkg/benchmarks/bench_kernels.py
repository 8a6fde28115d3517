"""Compare the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so the GDREC_PURE_PYTHON switch does
not matter here. Outputs are checked for equality before timing.
"""
import argparse
import time

import numpy as np

from gdrec import _pykernels

try:
    from gdrec import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def random_codes(n_seq, n_sites, rng):
    codes = rng.integers(0, 4, size=(n_seq, n_sites)).astype(np.int8)
    holes = rng.random(codes.shape) < 0.02
    codes[holes] = rng.choice([4, 5], size=int(holes.sum()))
    return codes


def random_distances(n, rng):
    pts = rng.random((n, 5))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    return 0.5 * (d + d.T)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the numpy fallback is available")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12}{'size':>16}{'numpy (s)':>12}{'compiled (s)':>14}{'speedup':>10}")
    for n_seq, n_sites in ((12, 157), (50, 600), (200, 1000)):
        codes = random_codes(n_seq, n_sites, rng)
        w = np.ones(n_sites, dtype=np.int64)
        assert np.array_equal(_pykernels.pair_counts_all(codes, w), _kernels.pair_counts_all(codes, w))
        tp = best_of(lambda: _pykernels.pair_counts_all(codes, w), args.repeat)
        tc = best_of(lambda: _kernels.pair_counts_all(codes, w), args.repeat)
        print(f"{'pair_counts':<12}{f'{n_seq}x{n_sites}':>16}{tp:>12.4f}{tc:>14.4f}{tp / tc:>10.1f}")
    for n in (12, 100, 400):
        d = random_distances(n, rng)
        jp, jc = _pykernels.nj_joins(d)[0], _kernels.nj_joins(d)[0]
        # same joins; lengths agree up to summation-order round-off
        assert [j[:3] for j in jp] == [j[:3] for j in jc]
        assert np.allclose([j[3:] for j in jp], [j[3:] for j in jc], rtol=1e-9, atol=1e-12)
        tp = best_of(lambda: _pykernels.nj_joins(d), args.repeat)
        tc = best_of(lambda: _kernels.nj_joins(d), args.repeat)
        print(f"{'nj_joins':<12}{f'{n} taxa':>16}{tp:>12.4f}{tc:>14.4f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
