#!/usr/bin/env python3
"""Benchmark the compiled convolution/pooling kernels against the numpy path.

Times both backends in one process by calling the implementations directly,
then times a full training step of the small-64 config with each backend
selected. Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from pem.model import kernels


def best_of(fn, repeat: int) -> float:
    fn()  # warmup
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


SHAPES = [
    ("tiny conv 4ch 32px k5/s4", dict(n=8, c=4, h=32, f=3, k=5, stride=4, pad=2)),
    ("small conv 16ch 32px k3", dict(n=8, c=16, h=32, f=32, k=3, stride=1, pad=1)),
    ("alexnet conv2 96ch 30px k5", dict(n=4, c=96, h=30, f=256, k=5, stride=1, pad=2)),
]


def bench_kernels(repeat: int):
    rows = []
    rng = np.random.default_rng(0)
    for name, s in SHAPES:
        x = rng.normal(size=(s["n"], s["c"], s["h"], s["h"])).astype(np.float32)
        w = rng.normal(size=(s["f"], s["c"], s["k"], s["k"])).astype(np.float32)
        b = rng.normal(size=s["f"]).astype(np.float32)
        oh = kernels.conv_out_size(s["h"], s["k"], s["stride"], s["pad"])
        dy = rng.normal(size=(s["n"], s["f"], oh, oh)).astype(np.float32)

        t_np = best_of(lambda: kernels._conv2d_forward_np(x, w, b, s["stride"], s["pad"]), repeat)
        t_np_b = best_of(lambda: kernels._conv2d_backward_np(x, w, s["stride"], s["pad"], dy), repeat)
        if kernels._convkern is not None:
            out = np.empty((s["n"], s["f"], oh, oh), dtype=np.float32)
            t_cy = best_of(
                lambda: kernels._convkern.conv2d_forward(x, w, b, s["stride"], s["pad"], out),
                repeat,
            )

            def cy_backward():
                dx = np.zeros_like(x)
                dw = np.zeros_like(w)
                db = np.zeros(s["f"], dtype=np.float32)
                kernels._convkern.conv2d_backward(x, w, s["stride"], s["pad"], dy, dx, dw, db)

            t_cy_b = best_of(cy_backward, repeat)
        else:
            t_cy = t_cy_b = float("nan")
        rows.append((f"{name} fwd", t_np, t_cy))
        rows.append((f"{name} bwd", t_np_b, t_cy_b))
    return rows


def bench_training_step(repeat: int):
    """One batch-32 training step of the small-64 config per backend."""
    from pem.model.config import small_config
    from pem.model.network import Network

    cfg = small_config(seed=0)
    net = Network(cfg)
    params = net.init_params()
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (32, 4, 64, 64)).astype(np.float32)
    t = rng.uniform(0, 1, 32).astype(np.float32)

    rows = []
    saved = kernels._use_ext
    try:
        kernels._use_ext = False
        t_np = best_of(lambda: net.loss_and_grad(params, x, t), repeat)
        if kernels._convkern is not None:
            kernels._use_ext = True
            t_cy = best_of(lambda: net.loss_and_grad(params, x, t), repeat)
        else:
            t_cy = float("nan")
    finally:
        kernels._use_ext = saved
    rows.append(("small-64 train step (batch 32)", t_np, t_cy))

    single = rng.uniform(0, 1, (1, 4, 64, 64)).astype(np.float32)
    try:
        kernels._use_ext = False
        t_np = best_of(lambda: net.forward_batch(params, single), repeat)
        if kernels._convkern is not None:
            kernels._use_ext = True
            t_cy = best_of(lambda: net.forward_batch(params, single), repeat)
        else:
            t_cy = float("nan")
    finally:
        kernels._use_ext = saved
    rows.append(("small-64 single-frame forward", t_np, t_cy))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    print(f"active backend: {kernels.BACKEND}")
    print(f"{'case':<36} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for name, t_np, t_cy in bench_kernels(args.repeat) + bench_training_step(args.repeat):
        ratio = t_np / t_cy if t_cy == t_cy and t_cy > 0 else float("nan")
        print(f"{name:<36} {t_np * 1e3:>8.2f}ms {t_cy * 1e3:>8.2f}ms {ratio:>7.2f}x")


if __name__ == "__main__":
    main()
