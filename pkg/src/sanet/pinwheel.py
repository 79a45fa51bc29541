"""Pinwheel-shaped convolution.

Four strip kernels, each padded on one side only so that its receptive
field extends in a single direction from the output pixel:

======  ========  =========================  =====================
branch  kernel    padding (t, b, l, r)       looks toward
======  ========  =========================  =====================
hl      1 x k     (0, 0, k-1, 0)             left
hr      1 x k     (0, 0, 0, k-1)             right
vt      k x 1     (k-1, 0, 0, 0)             up
vb      k x 1     (0, k-1, 0, 0)             down
======  ========  =========================  =====================

Each branch produces ``out/4`` channels; the concatenation (in the order
above) is mixed by a bias-free 1x1 convolution.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import Tensor

BRANCHES = ("hl", "hr", "vt", "vb")


def branch_geometry(k: int) -> dict[str, tuple[tuple[int, int], tuple[int, int, int, int]]]:
    """Kernel shape and padding of each branch for strip length ``k``."""
    e = k - 1
    return {
        "hl": ((1, k), (0, 0, e, 0)),
        "hr": ((1, k), (0, 0, 0, e)),
        "vt": ((k, 1), (e, 0, 0, 0)),
        "vb": ((k, 1), (0, e, 0, 0)),
    }


class PinwheelConv(Module):
    def __init__(self, in_channels: int, out_channels: int, k: int, rng, dtype=np.float32):
        super().__init__()
        if out_channels % 4:
            raise ValueError(f"pinwheel out_channels must be divisible by 4, got {out_channels}")
        if k < 1 or k % 2 == 0:
            raise ValueError(f"pinwheel strip length must be odd, got {k}")
        self.in_channels, self.out_channels, self.k = in_channels, out_channels, k
        q = out_channels // 4
        for name, (kernel, pad) in branch_geometry(k).items():
            self.add_child(name, Conv2d(in_channels, q, kernel, rng, padding=pad, dtype=dtype))
        self.fuse = self.add_child("fuse", Conv2d(out_channels, out_channels, 1, rng, bias=False, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return pinwheel_forward(x, self)

    def branch_outputs(self, x: Tensor) -> list[Tensor]:
        return [self._children[name](x) for name in BRANCHES]

    def macs(self, h: int, w: int) -> int:
        return sum(self._children[n].macs(h, w) for n in BRANCHES) + self.fuse.macs(h, w)


def pinwheel_forward(x: Tensor, p: PinwheelConv) -> Tensor:
    if x.shape[1] != p.in_channels:
        raise ValueError(f"pinwheel expects {p.in_channels} input channels, got {x.shape[1]}")
    hl, hr, vt, vb = p.branch_outputs(x)
    cat = T.concat_channels(T.concat_channels(hl, hr), T.concat_channels(vt, vb))
    return p.fuse(cat)


def pinwheel_param_count(cin: int, cout: int, k: int) -> int:
    """Closed form: four strips with biases plus the square 1x1 mix."""
    return cin * cout * k + cout + cout * cout
