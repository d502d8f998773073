"""Time the numba kernels against their pure-numpy twins.

Run with ``python benchmarks/bench_kernels.py [--sizes N ...] [--repeat R]``.
For every problem size each line reports the best-of-R wall time per call for both paths, the
speedup and the largest absolute difference between their outputs.
"""
import argparse
import timeit

import numpy as np

from scorebayes import _accel, kernels


def cases(size, rng):
    x = rng.exponential(3.0, size)
    rows = rng.standard_normal((size // 10, 10))
    means, ssw = kernels.eqcorr_rowstats_np(rows)
    X = np.column_stack([np.ones(size), rng.standard_normal((size, 2))])
    y = X @ np.array([1.0, 2.0, -1.0]) + rng.standard_normal(size)
    beta = np.array([1.0, 2.0, -1.0])
    u = rng.random((size, 3))
    r = kernels.best_fisher_r(3.0)

    def fill(f):
        def call():
            out = np.empty(size)
            return out[: f(u, out, 0, 3.0, r, 0.0)]
        return call

    return {
        "bessel_ratio_A1": (lambda: kernels.a1_array_nb(x), lambda: kernels.a1_array_np(x)),
        "vonmises_fill": (fill(kernels.vonmises_fill_nb), fill(kernels.vonmises_fill_np)),
        "eqcorr_rowstats": (lambda: kernels.eqcorr_rowstats_nb(rows)[1],
                            lambda: kernels.eqcorr_rowstats_np(rows)[1]),
        "eqcorr_pointwise": (lambda: kernels.eqcorr_pointwise_nb(means, ssw, 10.0, 0.0, 1.0, 0.5),
                             lambda: kernels.eqcorr_pointwise_np(means, ssw, 10.0, 0.0, 1.0, 0.5)),
        "tsallis_linreg": (lambda: kernels.tsallis_linreg_nb(y, X, beta, 1.0, 1.25),
                           lambda: kernels.tsallis_linreg_np(y, X, beta, 1.0, 1.25)),
    }


def best_time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[30, 1_000, 100_000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy path exists")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<18}{'size':>8}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}{'max |diff|':>13}")
    for size in args.sizes:
        for name, (nb, py) in cases(size, rng).items():
            diff = float(np.max(np.abs(np.asarray(nb()) - np.asarray(py()))))  # also warms the JIT
            t_nb, t_np = best_time(nb, args.repeat), best_time(py, args.repeat)
            print(f"{name:<18}{size:>8}{1e3 * t_nb:>12.3f}{1e3 * t_np:>12.3f}{t_np / t_nb:>10.2f}{diff:>13.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
