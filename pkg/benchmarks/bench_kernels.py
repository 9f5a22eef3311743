"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints per-kernel timings for shapes taken from the deep network, then one
full training step of each variant under both backends.
"""
import argparse
import time

import numpy as np

from incres_affect import kernels
from incres_affect.data import frames_to_arrays, synth_generate
from incres_affect.layers import Mode
from incres_affect.nets import build_network
from incres_affect.tensor import Rng, Tensor
from incres_affect.training import mse_loss, sgd_step


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(g):
    # 3x3 conv on the 25x25x32 stem map, batch 32, same padding
    xp = g.normal(size=(32, 27, 27, 32))
    cols = kernels.NUMPY_KERNELS["im2col"](xp, 3, 3, 1, 1, 25, 25)
    dcols = g.normal(size=cols.shape)
    # 3x3/2 max pool on the 13x13x64 map
    xm = g.normal(size=(32, 15, 15, 64))
    _, arg = kernels.NUMPY_KERNELS["maxpool_forward"](xm, 3, 3, 2, 2, 7, 7)
    dpool = g.normal(size=(32, 7, 7, 64))
    # batchnorm over a 32 x 25 x 25 x 32 activation
    xb = g.normal(size=(32 * 25 * 25, 32))
    mean, var = kernels.NUMPY_KERNELS["channel_stats"](xb)
    inv = 1 / np.sqrt(var + 1e-3)
    gamma, beta = np.ones(32), np.zeros(32)
    out, xhat = kernels.NUMPY_KERNELS["bn_forward"](xb, mean, inv, gamma, beta, True)
    return {
        "im2col": lambda k: k["im2col"](xp, 3, 3, 1, 1, 25, 25),
        "col2im": lambda k: k["col2im"](dcols, 32, 27, 27, 32, 3, 3, 1, 1, 25, 25),
        "maxpool_forward": lambda k: k["maxpool_forward"](xm, 3, 3, 2, 2, 7, 7),
        "maxpool_backward": lambda k: k["maxpool_backward"](dpool, arg, 15, 15, 3, 3, 2, 2),
        "channel_stats": lambda k: k["channel_stats"](xb),
        "bn_forward": lambda k: k["bn_forward"](xb, mean, inv, gamma, beta, True),
        "bn_backward": lambda k: k["bn_backward"](xb, out, xhat, gamma, inv, True, True),
    }


def train_step(variant, images, labels):
    net = build_network(variant)
    params = net.named_parameters()
    rng = Rng(0)

    def step():
        net.zero_grad()
        loss = mse_loss(net.forward(Tensor(images), Mode.TRAIN, rng), labels)
        loss.backward()
        sgd_step(params)
    step()  # warm-up
    return step


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if kernels.COMPILED_KERNELS is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e .` first")

    g = np.random.default_rng(0)
    backends = {"numpy": kernels.NUMPY_KERNELS, "cython": kernels.COMPILED_KERNELS}
    print(f"{'kernel':<18}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, case in kernel_cases(g).items():
        t = {b: best_of(lambda: case(k), args.repeat) * 1e3 for b, k in backends.items()}
        print(f"{name:<18}{t['numpy']:>10.2f}{t['cython']:>11.2f}{t['numpy'] / t['cython']:>8.1f}x")

    images, labels = frames_to_arrays(synth_generate(4, 8, 0.6, Rng(0)))
    print(f"\n{'train step (n=32)':<18}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    before = kernels.active_backend()
    try:
        for variant in ("shallow", "deep", "lstm"):
            t = {}
            for backend in ("numpy", "cython"):
                kernels.use_backend(backend)
                t[backend] = best_of(train_step(variant, images, labels), max(1, args.repeat // 2)) * 1e3
            print(f"{variant:<18}{t['numpy']:>10.1f}{t['cython']:>11.1f}{t['numpy'] / t['cython']:>8.1f}x")
    finally:
        kernels.use_backend(before)


if __name__ == "__main__":
    main()
