"""Compare the compiled and pure-numpy kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are fed identical inputs and their outputs are checked for
equality before timing.
"""
import argparse
import importlib.util
import time

import numpy as np

from cora import kernels
from cora.lattice import build_hierarchy
from cora.learning import _block_unary
from cora.model import layer_tables, random_model


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, N, S, rng):
    levels = max(1, int(np.log2(N)) - 2)  # only layer 1 is exercised
    m = random_model(build_hierarchy(N, levels), n, 1.0, rng)
    layer = m.layer(1)
    M = N // 2
    tri, box = layer_tables(layer)
    coarse = rng.integers(0, n, (S, M))
    sample_args = (tri, box, coarse, rng.random((S, M)), rng.random((S, M)))
    phi = _block_unary(layer, M, n, np.full((M, n), 1.0 / n))
    boxes = np.stack([b.table for b in layer.boxes])
    fine = rng.integers(0, n, (S, N))
    ring_args = (phi, boxes, np.ones((M, n, n)), fine, rng.random((S, M)))
    return sample_args, ring_args


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--samples", type=int, default=2000)
    args = p.parse_args()
    if importlib.util.find_spec("cora._ckernels") is None:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12} {'n':>2} {'N':>5} {'python s':>10} {'cython s':>10} {'speedup':>8}")
    for n, N in [(2, 16), (2, 64), (2, 256), (3, 64)]:
        sample_args, ring_args = cases(n, N, args.samples, rng)
        for name, fn, a in [("sample", kernels.sample_layer, sample_args),
                            ("ring_ffbs", kernels.ring_ffbs, ring_args)]:
            out_py = fn(*a, backend="python")
            out_cy = fn(*a, backend="cython")
            first = lambda o: o[0] if isinstance(o, tuple) else o  # noqa: E731
            assert np.array_equal(first(out_py), first(out_cy)), name
            t_py = best_of(lambda: fn(*a, backend="python"), args.repeat)
            t_cy = best_of(lambda: fn(*a, backend="cython"), args.repeat)
            print(f"{name:<12} {n:>2} {N:>5} {t_py:>10.4f} {t_cy:>10.4f} {t_py / t_cy:>8.1f}")


if __name__ == "__main__":
    main()
