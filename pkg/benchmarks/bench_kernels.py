"""Time the compiled and numpy kernel backends on the same inner loops.

    python3 benchmarks/bench_kernels.py [--n 5000] [--d 50] [--steps 20000] [--repeat 5]

Prints steps per second for each backend and kernel, and the speedup of the
compiled backend when it is available.
"""
import argparse
import time

import numpy as np

from ksvrg.data import synth_logistic
from ksvrg.kernels import available_backends
from ksvrg.objective import FiniteSumObjective, Loss


def _inner(mod, obj, samples):
    ds, d = obj.dataset, obj.dim
    x = np.zeros(d)
    snaps = np.zeros((2, d))
    assign = (np.arange(obj.n) % 2).astype(np.int32)
    mod.inner_loop(ds.indptr, ds.indices, ds.data, ds.labels, obj.loss.code, obj.lam, 0.01, 0.999,
                   x, np.zeros(d), snaps, assign, samples, np.zeros(d), True,
                   np.zeros(d), np.zeros(obj.n, dtype=np.uint8), np.zeros(len(samples), dtype=np.int64), 0)


def _saga(mod, obj, samples):
    ds, d = obj.dataset, obj.dim
    table = np.zeros((obj.n, d))
    mod.saga_loop(ds.indptr, ds.indices, ds.data, ds.labels, obj.loss.code, obj.lam, 0.01,
                  np.zeros(d), table, np.zeros(d), samples, np.zeros(d))


def _sgd(mod, obj, samples):
    ds = obj.dataset
    mod.sgd_loop(ds.indptr, ds.indices, ds.data, ds.labels, obj.loss.code, obj.lam, 0.01, np.zeros(obj.dim), samples)


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    obj = FiniteSumObjective(synth_logistic(args.n, args.d, 0), Loss.LOGISTIC)
    samples = np.random.default_rng(0).integers(0, args.n, size=args.steps).astype(np.int64)
    backends = available_backends()
    print(f"n={args.n} d={args.d} steps={args.steps} backends={sorted(backends)}")
    for name, kernel in (("inner_loop", _inner), ("saga_loop", _saga), ("sgd_loop", _sgd)):
        rates = {}
        for bname, mod in sorted(backends.items()):
            t = best_time(lambda: kernel(mod, obj, samples), args.repeat)
            rates[bname] = args.steps / t
            print(f"{name:11s} {bname:7s} {rates[bname]:14,.0f} steps/s")
        if "cython" in rates:
            print(f"{name:11s} speedup {rates['cython'] / rates['python']:.1f}x")


if __name__ == "__main__":
    main()
