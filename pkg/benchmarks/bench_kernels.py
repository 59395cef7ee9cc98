#!/usr/bin/env python3
"""Time the numba kernels against their pure-numpy fallbacks.

Covers the two hot spots: branch-region counting on large methods and the
full-height convolution used by the executable and UI models.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from lowrating import _accel
from lowrating.cfg import back_edges, branch_kernel_args, build_cfg, dominators, post_dominators
from lowrating.corpus import ProgramWriter, EXEC_TYPES
from lowrating.ir import parse_program


def best_of(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def branch_case(size, seed=0):
    rng = np.random.default_rng(seed)
    w = ProgramWriter(rng, np.zeros(len(EXEC_TYPES)), branch_rate=0.25, call_rate=0.0)
    prog, _ = parse_program(w.method("big", size, []))
    g = build_cfg(prog.methods["big"])
    be = back_edges(g, dominators(g))
    return branch_kernel_args(g, be, post_dominators(g, be))


def conv_case(batch, rows, width, filters=10, k=20, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, rows, width))
    w = rng.standard_normal((filters, rows, k))
    b = rng.standard_normal(filters)
    dout = rng.standard_normal((batch, filters, width - k + 1))
    return (x, w, b), (x, w, dout)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAS_NUMBA:
        print("numba not installed; only the numpy path is available")
        return

    rows = []
    for size in (200, 1000, 4000):
        a = branch_case(size)
        assert np.array_equal(_accel.branch_counts_numpy(*a), _accel.branch_counts_numba(*a))
        rows.append((f"branch_counts n={a[0]} regions={len(a[4])}",
                     best_of(_accel.branch_counts_numpy, a, args.repeat),
                     best_of(_accel.branch_counts_numba, a, args.repeat)))
    for batch, h, width in ((128, 3, 41), (128, 2, 26), (1000, 3, 41)):
        fwd, bwd = conv_case(batch, h, width)
        assert np.allclose(_accel.conv_forward_numpy(*fwd), _accel.conv_forward_numba(*fwd))
        rows.append((f"conv_forward B={batch} H={h} W={width}",
                     best_of(_accel.conv_forward_numpy, fwd, args.repeat),
                     best_of(_accel.conv_forward_numba, fwd, args.repeat)))
        rows.append((f"conv_backward B={batch} H={h} W={width}",
                     best_of(_accel.conv_backward_numpy, bwd, args.repeat),
                     best_of(_accel.conv_backward_numba, bwd, args.repeat)))

    print(f"{'kernel':<44}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, t_np, t_nb in rows:
        print(f"{name:<44}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>9.2f}")


if __name__ == "__main__":
    main()
