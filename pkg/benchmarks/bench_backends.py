"""Time the numba and numpy kernel paths side by side.

    python benchmarks/bench_backends.py [--repeat 5] [--batch 64] [--channels 32] [--json out.json]

Both paths are checked for identical results before timing. The backend is
switched in-process; the dispatchers read ``degree_sr._backend.BACKEND`` on
every call.
"""
import argparse
import json
import platform
import time

import numpy as np

from degree_sr import _backend, kernels
from degree_sr.imaging import bicubic_resize
from degree_sr.network import DegreeConfig, DegreeNetwork
from degree_sr.tensor import ConvParams, conv2d_backward, conv2d_forward


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(args):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.batch, args.channels, 33, 33)).astype(np.float32)
    g = rng.standard_normal(x.shape).astype(np.float32)
    conv = ConvParams.he_normal(args.channels, args.channels, 3, rng)
    img = rng.random((256, 256))
    net = DegreeNetwork.build(DegreeConfig(recurrences=4, channels=args.channels))
    y = rng.random((args.batch, 1, 33, 33)).astype(np.float32)
    edges = rng.random((args.batch, 4, 33, 33)).astype(np.float32)

    def train_step():
        tr = net.forward(y, edges)
        res = net.loss(tr, y, edges)
        net.backward(tr, res.grad_x_hat, res.grad_edge)

    return {
        "im2col": lambda: kernels.im2col(x, 3),
        "conv forward": lambda: conv2d_forward(x, conv),
        "conv backward": lambda: conv2d_backward(x, conv, g),
        "bicubic x1/3 + x3 (256x256)": lambda: bicubic_resize(bicubic_resize(img, 1 / 3), 3),
        "forward+backward K=4": train_step,
    }


def check_parity(args):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 3, 9, 10)).astype(np.float32)
    assert np.array_equal(kernels.im2col_np(x, 3), kernels.im2col_nb(x, 3))
    img = rng.random((40, 30))
    outs = []
    for b in ("numpy", "numba"):
        _backend.BACKEND = b
        outs.append(bicubic_resize(img, 0.5))
    assert np.array_equal(*outs)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--channels", type=int, default=32)
    ap.add_argument("--json", default=None, help="also write results as JSON")
    args = ap.parse_args()
    if not _backend.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    original = _backend.BACKEND
    check_parity(args)
    results = {}
    try:
        for name, fn in cases(args).items():
            row = {}
            for b in ("numpy", "numba"):
                _backend.BACKEND = b
                row[b] = best_of(fn, args.repeat)
            results[name] = row
    finally:
        _backend.BACKEND = original
    print(f"batch={args.batch} channels={args.channels} repeat={args.repeat} ({platform.processor() or platform.machine()})")
    print(f"{'kernel':<30}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, row in results.items():
        print(f"{name:<30}{row['numpy'] * 1e3:>12.2f}{row['numba'] * 1e3:>12.2f}{row['numpy'] / row['numba']:>9.2f}x")
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"args": vars(args), "seconds": results}, f, indent=2)


if __name__ == "__main__":
    main()
