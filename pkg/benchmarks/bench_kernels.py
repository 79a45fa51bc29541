"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times each hot kernel on shapes typical of a 64x64 training step, checks
that both backends agree bit-for-bit, then times one full training step
of the default model under each backend.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from sanet import kernels
from sanet import tensor as T
from sanet.metrics import soft_iou_loss
from sanet.network import SANetConfig, build
from sanet.tensor import Tensor


def _time(fn, repeat: int) -> float:
    fn()
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def kernel_cases(rng):
    x = rng.standard_normal((8, 16, 64, 64)).astype(np.float32)
    cols_shape = (8, 16, 64, 64)
    pool_in = rng.standard_normal((8, 32, 64, 64)).astype(np.float32)
    mask = (rng.random((256, 256)) < 0.3).astype(np.uint8)

    def im2col(m):
        return lambda: m.im2col(x, 3, 3, 1, (1, 1, 1, 1))

    cols = kernels.get_backend("python").im2col(x, 3, 3, 1, (1, 1, 1, 1))

    def col2im(m):
        return lambda: m.col2im(cols, cols_shape, 3, 3, 1, (1, 1, 1, 1))

    def pool_f(m):
        return lambda: m.maxpool2_forward(pool_in)

    _, arg = kernels.get_backend("python").maxpool2_forward(pool_in)
    g = rng.standard_normal((8, 32, 32, 32)).astype(np.float32)

    def pool_b(m):
        return lambda: m.maxpool2_backward(g, arg)

    def label(m):
        return lambda: m.label8(mask)

    return {"im2col 3x3": im2col, "col2im 3x3": col2im, "maxpool fwd": pool_f, "maxpool bwd": pool_b, "label8 256^2": label}


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def train_step(repeat: int) -> dict:
    rng = np.random.default_rng(0)
    x = Tensor(rng.random((8, 1, 64, 64)), dtype=np.float32)
    y = (rng.random((8, 1, 64, 64)) < 0.02).astype(np.float32)
    out = {}
    for name in kernels.available_backends():
        kernels.use_backend(name)
        model = build(SANetConfig(stages=4, input_size=(64, 64)), seed=0)

        def step():
            model.zero_grad()
            T.backward(soft_iou_loss(model(x), y))

        out[name] = _time(step, repeat)
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=10)
    args = ap.parse_args(argv)
    names = kernels.available_backends()
    original = kernels.BACKEND
    print(f"backends: {', '.join(names)}")
    if "cython" not in names:
        print("compiled kernels not built; only the numpy fallback is timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}" + "".join(f"{n + ' ms':>14}" for n in names) + f"{'speedup':>10}{'identical':>11}")
    for label, make in kernel_cases(rng).items():
        ms = {n: _time(make(kernels.get_backend(n)), args.repeat) * 1e3 for n in names}
        res = [make(kernels.get_backend(n))() for n in names]
        same = all(_same(res[0], r) for r in res[1:])
        speed = ms["python"] / ms["cython"] if "cython" in ms else float("nan")
        print(f"{label:<16}" + "".join(f"{ms[n]:>14.3f}" for n in names) + f"{speed:>9.2f}x{str(same):>11}")
    step = train_step(max(2, args.repeat // 3))
    print("\nfull training step, batch 8, stages 4, 64x64:")
    for n, t in step.items():
        print(f"  {n:<8} {t * 1e3:9.1f} ms")
    kernels.use_backend(original)


if __name__ == "__main__":
    main()
