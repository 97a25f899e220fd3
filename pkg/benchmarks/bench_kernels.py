"""Benchmark the compiled depthwise-conv kernels against the NumPy fallback.

Runs both backends on the shapes the default model actually uses and on the
tiny gradient-check geometry, times forward and both backward passes, and
verifies the backends agree numerically.  Equivalence is asserted in float64,
where accumulation order is immaterial at the tolerance used; for the float32
timing inputs the deviation of each backend from the float64 oracle is
reported but not asserted, because the kernel-gradient pass reduces ~1e5
terms and its float32 rounding spread legitimately reaches ~1e-3 relative.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 30] [--batch 32]
"""

import argparse
import time

import numpy as np

from fcanet.kernels import compiled_backend, numpy_backend

# (label, N, C, F, T, kf, kt) — stem/mixer blocks of the default model plus
# the tiny geometry used by the gradient checks
SHAPES = [
    ("default 5x5", 32, 3, 40, 101, 5, 5),
    ("default 1x9", 32, 3, 40, 101, 1, 9),
    ("tiny 3x3", 8, 8, 8, 12, 3, 3),
]


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_inputs(n, c, f, t, kf, kt, rng):
    """Float32 padded input, kernel and upstream gradient for one shape."""
    fp, tp = f + kf - 1, t + kt - 1          # "same" padding, stride 1
    xp = rng.standard_normal((n, c, fp, tp)).astype(np.float32)
    k = rng.standard_normal((c, kf, kt)).astype(np.float32)
    g = rng.standard_normal((n, c, f, t)).astype(np.float32)
    return xp, k, g


def run_passes(backend, xp, k, g, kf, kt):
    fp, tp = xp.shape[2], xp.shape[3]
    return (backend.dwconv2d_forward(xp, k, 1, 1),
            backend.dwconv2d_backward_x(g, k, 1, 1, fp, tp),
            backend.dwconv2d_backward_k(xp, g, 1, 1, kf, kt))


def bench_case(backend, xp, k, g, kf, kt, repeat):
    fp, tp = xp.shape[2], xp.shape[3]
    return {
        "forward": timeit(lambda: backend.dwconv2d_forward(xp, k, 1, 1),
                          repeat),
        "backward_x": timeit(
            lambda: backend.dwconv2d_backward_x(g, k, 1, 1, fp, tp), repeat),
        "backward_k": timeit(
            lambda: backend.dwconv2d_backward_k(xp, g, 1, 1, kf, kt), repeat),
    }


def max_rel_dev(got, oracle):
    scale = max(1.0, float(np.max(np.abs(oracle))))
    return float(np.max(np.abs(got.astype(np.float64) - oracle))) / scale


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=30,
                    help="timing repetitions (best-of)")
    ap.add_argument("--batch", type=int, default=None,
                    help="override the batch size of every shape")
    args = ap.parse_args()

    if compiled_backend is None:
        print("compiled backend not built; showing NumPy numbers only")
        backends = [("numpy", numpy_backend)]
    else:
        backends = [("compiled", compiled_backend), ("numpy", numpy_backend)]

    pass_names = ("forward", "backward_x", "backward_k")
    for label, n, c, f, t, kf, kt in SHAPES:
        if args.batch:
            n = args.batch
        print(f"\n{label}: batch={n} channels={c} map={f}x{t} "
              f"kernel={kf}x{kt}")
        rng = np.random.default_rng(0)
        xp, k, g = make_inputs(n, c, f, t, kf, kt, rng)
        rows = {name: bench_case(backend, xp, k, g, kf, kt, args.repeat)
                for name, backend in backends}
        for pass_name in pass_names:
            line = f"  {pass_name:<10}"
            for name, _ in backends:
                line += f"  {name}: {1e3 * rows[name][pass_name]:8.3f} ms"
            if len(backends) == 2:
                speedup = (rows["numpy"][pass_name]
                           / rows["compiled"][pass_name])
                line += f"  ({speedup:5.2f}x)"
            print(line)

        # correctness: float64 results must match across backends
        xp64, k64, g64 = (a.astype(np.float64) for a in (xp, k, g))
        oracle = run_passes(numpy_backend, xp64, k64, g64, kf, kt)
        for name, backend in backends:
            got64 = run_passes(backend, xp64, k64, g64, kf, kt)
            for a, b in zip(got64, oracle):
                np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)
            devs = ", ".join(
                f"{pn} {max_rel_dev(r, o):.1e}"
                for pn, r, o in zip(pass_names,
                                    run_passes(backend, xp, k, g, kf, kt),
                                    oracle))
            print(f"  {name}: float64 exact; float32 dev vs oracle: {devs}")


if __name__ == "__main__":
    main()
