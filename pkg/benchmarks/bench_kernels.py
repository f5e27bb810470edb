"""Time each hot kernel in its numba-compiled and pure-numpy forms.

    python benchmarks/bench_kernels.py [--repeat 5]

Inputs are sized like one training run on the default synthetic network.
Without numba installed only the numpy column is filled in.
"""

import argparse
import time

import numpy as np

from tapem import kernels
from tapem._accel import HAVE_NUMBA, jit
from tapem.hetgraph import NodeType
from tapem.synth import generate_synthetic
from tapem.walker import APA


def make_inputs():
    g, _ = generate_synthetic(seed=0)
    rng = np.random.default_rng(0)
    starts = np.repeat(g.authors, 5).astype(np.int64)
    cycle = np.array([int(t) for t in APA.cycle], dtype=np.int64)
    walk_args = (g.walk_indptr, g.walk_indices, starts, cycle, rng.random((len(starts), 19)))
    walks, lengths = kernels.metapath_walks(*walk_args)
    pair_args = (walks, lengths, g.node_type == NodeType.PAPER, g.node_type == NodeType.AUTHOR, 3)

    n_rows = 256 * 24
    scatter_args = (np.zeros((1000, 32)), rng.integers(0, 1000, size=n_rows), rng.normal(size=(n_rows, 32)))

    T, B, H = 26, 256, 32
    mask = np.ones((T, B))
    mask[rng.integers(10, T, size=B), np.arange(B)] = 0
    mask = np.minimum.accumulate(mask, axis=0)
    U = rng.normal(size=(3 * H, H)) / np.sqrt(H)
    _, h_prev, gates = kernels.gru_scan(rng.normal(size=(T, B, 3 * H)), mask, U)
    gru_args = (rng.normal(size=(T, B, H)), mask, h_prev, gates, U)
    return {
        "metapath_walks": walk_args,
        "pair_positions": pair_args,
        "scatter_add_rows": scatter_args,
        "gru_scan_backward": gru_args,
    }


def best_time(fn, args, repeat):
    times = []
    for _ in range(repeat):
        fresh = tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)
        t0 = time.perf_counter()
        fn(*fresh)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    inputs = make_inputs()
    print(f"numba available: {HAVE_NUMBA}")
    print(f"{'kernel':<20} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, (loop, vec) in kernels.KERNELS.items():
        a = inputs[name]
        t_np = best_time(vec, a, args.repeat) * 1e3
        if HAVE_NUMBA:
            compiled = jit(loop)
            compiled(*a)  # compile outside the timing
            t_nb = best_time(compiled, a, args.repeat) * 1e3
            print(f"{name:<20} {t_nb:10.2f} {t_np:10.2f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:<20} {'-':>10} {t_np:10.2f} {'-':>8}")


if __name__ == "__main__":
    main()
