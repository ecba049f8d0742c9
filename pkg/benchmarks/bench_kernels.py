"""Time the numba simulation kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py --n 5000 --repeats 3

Both paths consume the same counter-based streams, so the benchmark also
reports whether their records agree.  With GIRSANOV_GRAD_DISABLE_NUMBA=1 set
only the numpy path is timed.
"""
import argparse
import time

import numpy as np

from girsanov_grad import _accel
from girsanov_grad import model
from girsanov_grad.simulate import simulate

PROBLEMS = {
    "brownian-exit": lambda: (model.brownian_exit(b=1.0, dt=1e-3), [1.0]),
    "brownian-exit-bridge": lambda: (model.brownian_exit(b=1.0, dt=1e-3, bridge=True), [1.0]),
    "double-well": lambda: (model.double_well(), [0.3, -0.2, 0.5]),
}


def best_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def agreement(x, y):
    """Largest relative difference over the floating record fields."""
    worst = 0.0
    for f in ("tau", "phi", "m", "gram"):
        a, b = getattr(x, f), getattr(y, f)
        worst = max(worst, float(np.max(np.abs(a - b) / (1.0 + np.abs(a)))))
    return worst


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=5000, help="paths per run")
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--problems", nargs="+", default=sorted(PROBLEMS), choices=PROBLEMS)
    args = parser.parse_args()

    print(f"numba available: {_accel.HAVE_NUMBA}, enabled: {_accel.USE_NUMBA}")
    print(f"{'problem':<22}{'numpy s':>10}{'numba s':>10}{'speedup':>9}{'max rel diff':>14}")
    for name in args.problems:
        spec, a = PROBLEMS[name]()
        run = lambda flag: simulate(spec, a, args.n, args.seed, threads=args.threads,  # noqa: E731
                                    use_numba=flag)
        t_np = best_time(lambda: run(False), args.repeats)
        if _accel.USE_NUMBA:
            run(True)  # compile outside the timed runs
            t_nb = best_time(lambda: run(True), args.repeats)
            diff = agreement(run(False), run(True))
            print(f"{name:<22}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>9.1f}{diff:>14.1e}")
        else:
            print(f"{name:<22}{t_np:>10.3f}{'-':>10}{'-':>9}{'-':>14}")


if __name__ == "__main__":
    main()
