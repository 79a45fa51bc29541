"""Named finite-difference checks for every differentiable layer and the tiny network.

Each check builds its own float64 inputs from a seed and returns a
:class:`~sanet.tensor.GradcheckReport`. A weighted sum with fixed random
weights turns non-scalar layer outputs into a scalar.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .dsm import CBAM, DSM, ChannelAttention, SpatialAttention
from .metrics import soft_iou_loss
from .network import SANetConfig, build
from .pinwheel import PinwheelConv
from .safm import SAFM
from .tensor import GradcheckReport, Tensor, gradcheck

F64 = np.float64


def _x(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), dtype=F64)


def _weighted(rng, shape) -> Callable[[Tensor], Tensor]:
    w = Tensor(rng.standard_normal(shape), dtype=F64)
    return lambda y: T.sum(T.mul(y, w))


def _sample(rng, shape, k: int) -> list[tuple]:
    """Up to ``k`` distinct coordinates of an array of ``shape``."""
    n = int(np.prod(shape))
    flat = rng.choice(n, size=min(k, n), replace=False)
    return [tuple(int(i) for i in np.unravel_index(f, shape)) for f in sorted(flat)]


def _layer(rng, x: Tensor, fn) -> GradcheckReport:
    with T.no_grad():
        shape = fn(x).shape
    head = _weighted(rng, shape)
    return gradcheck(lambda t: head(fn(t)), x)


def check_conv2d(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    w = Tensor(rng.standard_normal((3, 2, 3, 2)), requires_grad=True, dtype=F64)
    b = Tensor(rng.standard_normal(3), requires_grad=True, dtype=F64)
    x = _x(rng, 2, 2, 5, 6)
    r1 = _layer(rng, x, lambda t: T.conv2d(t, w, b, 1, (1, 0, 2, 1)))
    r2 = _layer(rng, w, lambda t: T.conv2d(x, t, b, 2, 1))
    r3 = _layer(rng, b, lambda t: T.conv2d(x, w, t, 1, 0))
    return _worst(r1, r2, r3)


def check_transposed_conv2d(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    w = Tensor(rng.standard_normal((3, 2, 2, 2)), dtype=F64)
    b = Tensor(rng.standard_normal(2), dtype=F64)
    x = _x(rng, 2, 3, 3, 4)
    return _worst(
        _layer(rng, x, lambda t: T.transposed_conv2d(t, w, b)),
        _layer(rng, w, lambda t: T.transposed_conv2d(x, t, b)),
        _layer(rng, b, lambda t: T.transposed_conv2d(x, w, t)),
    )


def check_max_pool(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    return _layer(rng, _x(rng, 2, 3, 4, 6), T.max_pool2d)


def check_reductions(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    x = _x(rng, 2, 3, 4, 5)
    return _worst(
        _layer(rng, x, lambda t: T.reduce_channels(t, "avg")),
        _layer(rng, x, lambda t: T.reduce_channels(t, "max")),
        _layer(rng, x, lambda t: T.reduce_spatial(t, "avg")),
        _layer(rng, x, lambda t: T.reduce_spatial(t, "max")),
    )


def check_activations(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    x = _x(rng, 2, 3, 4, 4)
    return _worst(_layer(rng, x, T.sigmoid), _layer(rng, x, T.relu))


def check_batch_norm(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    g = Tensor(rng.uniform(0.5, 1.5, 3), dtype=F64)
    b = Tensor(rng.standard_normal(3), dtype=F64)
    x = _x(rng, 2, 3, 3, 4)

    def bn(t, training=True):
        return T.batch_norm2d(t, g, b, np.zeros(3), np.ones(3), training)

    return _worst(
        _layer(rng, x, bn),
        _layer(rng, g, lambda t: T.batch_norm2d(x, t, b, np.zeros(3), np.ones(3), True)),
        _layer(rng, x, lambda t: bn(t, False)),
    )


def check_pinwheel(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    m = PinwheelConv(3, 8, 3, rng, dtype=F64)
    return _worst(_layer(rng, _x(rng, 1, 3, 6, 7), m), _layer(rng, m.fuse.w, lambda _: m(_x(np.random.default_rng(1), 1, 3, 6, 7))))


def check_channel_attention(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    m = ChannelAttention(8, rng, dtype=F64)
    return _layer(rng, _x(rng, 2, 8, 3, 3), m)


def check_spatial_attention(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    m = SpatialAttention(rng, dtype=F64)
    return _layer(rng, _x(rng, 1, 3, 7, 8), m)


def check_cbam(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    return _worst(
        *(_layer(rng, _x(rng, 1, 8, 7, 7), CBAM(8, rng, order, dtype=F64)) for order in ("channel_first", "spatial_first"))
    )


def check_dsm(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    m = DSM(2, 4, rng, dtype=F64)
    x = _x(rng, 2, 2, 7, 7)
    return _layer(rng, x, m)


def check_safm(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    m = SAFM(3, rng, dtype=F64)
    m.lam.data[...] = 0.7
    e, d = _x(rng, 1, 3, 7, 7), _x(rng, 1, 3, 7, 7)
    return _worst(
        _layer(rng, e, lambda t: m(t, d)),
        _layer(rng, d, lambda t: m(e, t)),
        _layer(rng, m.lam, lambda _: m(e, d)),
    )


def check_soft_iou(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    p = Tensor(rng.uniform(0.05, 0.95, (2, 1, 4, 5)), dtype=F64)
    y = (rng.random((2, 1, 4, 5)) < 0.3).astype(F64)
    return gradcheck(lambda t: soft_iou_loss(t, y), p)


def tiny_config() -> SANetConfig:
    return SANetConfig(base_channels=8, stages=3, input_size=(28, 28))


NETWORK_EPS = 1e-6
NETWORK_ATOL = 1e-9


def check_network(seed: int = 0, n_input: int = 48, n_param: int = 8) -> GradcheckReport:
    """End-to-end Soft-IoU gradient of the tiny network, sampled coordinates.

    Checks ``n_input`` input pixels plus ``n_param`` entries of every
    parameter tensor. Lambdas are set to nonzero values so the fusion
    path contributes.

    The step is 1e-6 rather than 1e-5: the net has ~10^5 relu and max
    kinks, and a wider step lands across one often enough to spoil the
    difference quotient. ``atol`` covers biases that feed batch norm,
    whose exact gradient is zero.
    """
    rng = np.random.default_rng(seed)
    model = build(tiny_config(), seed=seed, dtype=F64)
    for _, s in model.safm.items():
        s.lam.data[...] = rng.uniform(0.3, 0.9)
    x = _x(rng, 2, 1, 28, 28)
    y = np.zeros((2, 1, 28, 28))
    y[:, :, 6:20, 4:16] = 1

    def loss(_):
        return soft_iou_loss(model(x), y)

    kw = dict(eps=NETWORK_EPS, atol=NETWORK_ATOL)
    reports = [gradcheck(loss, x, indices=_sample(rng, x.shape, n_input), **kw)]
    for _, p in model.named_parameters():
        reports.append(gradcheck(loss, p, indices=_sample(rng, p.shape, n_param), **kw))
    return _worst(*reports)


def _worst(*reports: GradcheckReport) -> GradcheckReport:
    worst = max(reports, key=lambda r: (not r.passed, r.worst_rel_error))
    checked = sum(r.checked for r in reports)
    return GradcheckReport(all(r.passed for r in reports), worst.worst_rel_error, worst.worst_index, checked, worst.message)


SUITE: dict[str, Callable[..., GradcheckReport]] = {
    "conv2d": check_conv2d,
    "transposed_conv2d": check_transposed_conv2d,
    "max_pool2d": check_max_pool,
    "reductions": check_reductions,
    "sigmoid_relu": check_activations,
    "batch_norm2d": check_batch_norm,
    "pinwheel": check_pinwheel,
    "channel_attention": check_channel_attention,
    "spatial_attention": check_spatial_attention,
    "cbam": check_cbam,
    "dsm": check_dsm,
    "safm": check_safm,
    "soft_iou_loss": check_soft_iou,
    "network": check_network,
}


def run_suite(seed: int = 0) -> dict[str, GradcheckReport]:
    return {name: fn(seed) for name, fn in SUITE.items()}
