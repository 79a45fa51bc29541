"""Dual-path encoder block with CBAM recalibration.

Branch A is two 3x3 conv units; branch B is a cascade of pinwheel units
with strip lengths 3, 5, 3 (or plain 3x3 units when pinwheels are
ablated). The two are concatenated, fused by a 3x3 conv unit, then
rescaled by channel and spatial attention gates.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, ConvUnit, Linear, Module
from .pinwheel import PinwheelConv
from .tensor import Tensor

CASCADE = (3, 5, 3)
CBAM_ORDERS = ("channel_first", "spatial_first")


class ChannelAttention(Module):
    """Shared two-layer MLP over global average- and max-pooled descriptors."""

    def __init__(self, c: int, rng, reduction: int = 8, min_hidden: int = 4, dtype=np.float32):
        super().__init__()
        self.c = c
        self.hidden = max(c // reduction, min_hidden)
        self.mlp_reduce = self.add_child("mlp_reduce", Linear(c, self.hidden, rng, dtype))
        self.mlp_expand = self.add_child("mlp_expand", Linear(self.hidden, c, rng, dtype))

    def mlp(self, v: Tensor) -> Tensor:
        return self.mlp_expand(T.relu(self.mlp_reduce(v)))

    def forward(self, f: Tensor) -> Tensor:
        return channel_attention(f, self)


class SpatialAttention(Module):
    """7x7 conv over the channel-mean and channel-max maps."""

    def __init__(self, rng, dtype=np.float32):
        super().__init__()
        self.conv7 = self.add_child("conv7", Conv2d(2, 1, 7, rng, padding=3, dtype=dtype))

    def forward(self, f: Tensor) -> Tensor:
        return spatial_attention(f, self)


def channel_attention(f: Tensor, p: ChannelAttention) -> Tensor:
    """Gate of shape ``[N, C, 1, 1]``."""
    n, c = f.shape[:2]
    avg = T.reshape(T.reduce_spatial(f, "avg"), (n, c))
    mx = T.reshape(T.reduce_spatial(f, "max"), (n, c))
    logits = T.add(p.mlp(avg), p.mlp(mx))
    return T.sigmoid(T.reshape(logits, (n, c, 1, 1)))


def spatial_attention(f: Tensor, p: SpatialAttention) -> Tensor:
    """Gate of shape ``[N, 1, H, W]``."""
    if min(f.shape[2:]) < 7:
        raise ValueError(f"spatial attention needs H, W >= 7, got {f.shape[2:]}")
    pooled = T.concat_channels(T.reduce_channels(f, "avg"), T.reduce_channels(f, "max"))
    return T.sigmoid(p.conv7(pooled))


class CBAM(Module):
    def __init__(self, c: int, rng, order: str = "channel_first", reduction: int = 8, dtype=np.float32):
        super().__init__()
        if order not in CBAM_ORDERS:
            raise ValueError(f"cbam order must be one of {CBAM_ORDERS}, got {order!r}")
        self.order = order
        self.ch = self.add_child("ch", ChannelAttention(c, rng, reduction, dtype=dtype))
        self.sp = self.add_child("sp", SpatialAttention(rng, dtype=dtype))

    def forward(self, f: Tensor) -> Tensor:
        if self.order == "channel_first":
            f = T.mul(f, self.ch(f))
            return T.mul(f, self.sp(f))
        f = T.mul(f, self.sp(f))
        return T.mul(f, self.ch(f))


class DSM(Module):
    """Encoder block; see module docstring.

    ``dual_path=False`` drops branch B and the fusion conv, leaving a
    classic two-conv U-Net block.
    """

    def __init__(
        self,
        cin: int,
        cout: int,
        rng,
        use_pinwheel: bool = True,
        use_cbam: bool = True,
        cbam_order: str = "channel_first",
        dual_path: bool = True,
        dtype=np.float32,
    ):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.use_pinwheel, self.use_cbam, self.dual_path = use_pinwheel, use_cbam, dual_path
        self.a0 = self.add_child("a0", ConvUnit("conv", Conv2d(cin, cout, 3, rng, dtype=dtype), cout, dtype))
        self.a1 = self.add_child("a1", ConvUnit("conv", Conv2d(cout, cout, 3, rng, dtype=dtype), cout, dtype))
        self.branch_b: list[ConvUnit] = []
        if dual_path:
            c_in = cin
            for j, k in enumerate(CASCADE):
                if use_pinwheel:
                    unit = ConvUnit("pconv", PinwheelConv(c_in, cout, k, rng, dtype=dtype), cout, dtype)
                else:
                    unit = ConvUnit("conv", Conv2d(c_in, cout, 3, rng, dtype=dtype), cout, dtype)
                self.branch_b.append(self.add_child(f"b{j}", unit))
                c_in = cout
            self.fuse = self.add_child(
                "fuse", ConvUnit("conv", Conv2d(2 * cout, cout, 3, rng, dtype=dtype), cout, dtype)
            )
        self.cbam = self.add_child("cbam", CBAM(cout, rng, cbam_order, dtype=dtype)) if use_cbam else None

    def fused_feature(self, x: Tensor) -> Tensor:
        """Pre-attention output."""
        a = self.a1(self.a0(x))
        if not self.dual_path:
            return a
        b = x
        for unit in self.branch_b:
            b = unit(b)
        return self.fuse(T.concat_channels(a, b))

    def forward(self, x: Tensor) -> Tensor:
        return dsm_forward(x, self)


def dsm_forward(x: Tensor, p: DSM) -> Tensor:
    if x.shape[1] != p.cin:
        raise ValueError(f"DSM expects {p.cin} input channels, got {x.shape[1]}")
    f = p.fused_feature(x)
    return p.cbam(f) if p.cbam is not None else f
