#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy reference.

Times the fused train-mode loss/gradient kernel and the eval-mode forward
across layer widths, and reports the speedup of the compiled core. The
compiled path wins where per-op dispatch overhead dominates (narrow
layers); BLAS catches up as the matrices grow.

Run after building the extension:

    python benchmarks/bench_kernels.py [--batch 64] [--repeats 3000]
"""

import argparse
import time

import numpy as np

from mvrml import _kernels_py
from mvrml.nn_core import ArchSpec, _param_views, _stats_views, init_model, n_params
from mvrml.rng import RngStream

try:
    from mvrml import _kernels as compiled
except ImportError:
    compiled = None


def time_fn(fn, repeats):
    for _ in range(max(repeats // 10, 10)):
        fn()
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench(width: int, batch: int, repeats: int):
    arch = ArchSpec(2, (width, width), 3, use_batchnorm_after=(0, 1))
    model = init_model(arch, RngStream(0))
    gen = np.random.default_rng(0)
    X = gen.normal(size=(batch, 2))
    y = gen.integers(0, 3, size=batch)
    Ws, bs, gs, bts = _param_views(arch, model.params)
    means, variances = _stats_views(arch, model.bn_stats)

    rows = {}
    backends = [("numpy", _kernels_py)] + ([("cython", compiled)] if compiled else [])
    for name, mod in backends:
        grad = np.zeros(n_params(arch))
        grad_views = _param_views(arch, grad)
        rows[name] = {
            "loss_grad": time_fn(
                lambda: mod.loss_grad(X, y, Ws, bs, gs, bts, *grad_views), repeats
            ),
            "forward_eval": time_fn(
                lambda: mod.forward_eval(X, Ws, bs, gs, bts, means, variances), repeats
            ),
        }
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=3000)
    parser.add_argument("--widths", type=int, nargs="+", default=[8, 16, 32, 48, 64])
    args = parser.parse_args()

    if compiled is None:
        print("compiled kernels unavailable; timing the NumPy reference only")
    header = f"{'width':>6} {'kernel':>14} {'numpy us':>10}"
    if compiled:
        header += f" {'cython us':>10} {'speedup':>8}"
    print(header)
    for width in args.widths:
        rows = bench(width, args.batch, args.repeats)
        for kernel in ("loss_grad", "forward_eval"):
            line = f"{width:>6} {kernel:>14} {rows['numpy'][kernel] * 1e6:>10.1f}"
            if compiled:
                cy = rows["cython"][kernel]
                line += f" {cy * 1e6:>10.1f} {rows['numpy'][kernel] / cy:>7.2f}x"
            print(line)


if __name__ == "__main__":
    main()
