"""End-to-end encoder/decoder assembly."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .dsm import CBAM_ORDERS, DSM
from .nn import Conv2d, ConvUnit, Module, kaiming_uniform
from .safm import SAFM
from .tensor import Tensor


@dataclass
class SANetConfig:
    base_channels: int = 16
    stages: int = 5
    use_pinwheel: bool = True
    use_cbam: bool = True
    cbam_order: str = "channel_first"
    dual_path: bool = True
    use_safm: bool = True
    safm_residual: bool = True
    lambda_learnable: bool = True
    input_size: Optional[tuple] = None

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(self.stages)]

    @property
    def divisor(self) -> int:
        return 2 ** (self.stages - 1)

    def validate(self) -> None:
        if self.stages < 2:
            raise ValueError(f"stages must be >= 2, got {self.stages}")
        if self.base_channels < 4 or self.base_channels % 4:
            raise ValueError(f"base_channels must be a positive multiple of 4, got {self.base_channels}")
        if self.cbam_order not in CBAM_ORDERS:
            raise ValueError(f"cbam_order must be one of {CBAM_ORDERS}, got {self.cbam_order!r}")
        if self.input_size is not None:
            self.check_input(*self.input_size)

    def check_input(self, h: int, w: int) -> None:
        d = self.divisor
        if h % d or w % d:
            raise ValueError(f"input {h}x{w} must be divisible by {d} for {self.stages} stages")
        if h // d < 7 or w // d < 7:
            raise ValueError(
                f"input {h}x{w} gives a {h // d}x{w // d} bottleneck; attention kernels need >= 7"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["input_size"] is not None:
            d["input_size"] = list(d["input_size"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SANetConfig":
        names = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in names}
        if kw.get("input_size") is not None:
            kw["input_size"] = tuple(kw["input_size"])
        return cls(**kw)


class Upsample(Module):
    """Stride-2 2x2 transposed conv, ``cin -> cout``."""

    def __init__(self, cin: int, cout: int, rng, dtype=np.float32):
        super().__init__()
        self.cin, self.cout = cin, cout
        # each output pixel sees exactly cin inputs
        self.w = self.add_param("w", kaiming_uniform(rng, (cin, cout, 2, 2), cin, dtype))
        self.b = self.add_param("b", Tensor(np.zeros(cout), dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.transposed_conv2d(x, self.w, self.b)

    def macs(self, h: int, w: int) -> int:
        return self.cin * self.cout * 4 * h * w


class SANet(Module):
    def __init__(self, config: SANetConfig, rng, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        ch = config.channels
        self.enc: list[DSM] = []
        cin = 1
        for i, c in enumerate(ch, start=1):
            self.enc.append(
                self.add_child(
                    f"enc{i}",
                    _Stage(
                        "dsm",
                        DSM(cin, c, rng, config.use_pinwheel, config.use_cbam, config.cbam_order,
                            config.dual_path, dtype),
                    ),
                ).inner
            )
            cin = c
        self.up: dict[int, Upsample] = {}
        self.safm: dict[int, Optional[SAFM]] = {}
        self.dec_fuse: dict[int, ConvUnit] = {}
        for i in range(len(ch) - 1, 0, -1):
            c = ch[i - 1]
            dec = self.add_child(f"dec{i}", Module())
            self.up[i] = dec.add_child("up", Upsample(ch[i], c, rng, dtype))
            self.safm[i] = (
                dec.add_child("safm", SAFM(c, rng, config.safm_residual, config.lambda_learnable, dtype))
                if config.use_safm
                else None
            )
            self.dec_fuse[i] = dec.add_child(
                "fuse", ConvUnit("conv", Conv2d(2 * c, c, 3, rng, dtype=dtype), c, dtype)
            )
        self.head = self.add_child("head", Conv2d(ch[0], 1, 3, rng, dtype=dtype))

    def encode(self, x: Tensor) -> list[Tensor]:
        feats = []
        h = x
        for i, dsm in enumerate(self.enc):
            if i:
                h = T.max_pool2d(h)
            h = dsm(h)
            feats.append(h)
        return feats

    def skip(self, i: int, e: Tensor, d: Tensor) -> Tensor:
        block = self.safm[i]
        return T.concat_channels(e, d) if block is None else block(e, d)

    def forward(self, x: Tensor) -> Tensor:
        return forward(self, x)

    def lambdas(self) -> dict[int, float]:
        return {i: s.lam.item() for i, s in self.safm.items() if s is not None and s.lam is not None}


class _Stage(Module):
    """Wraps an encoder block under a fixed child name (``enc{i}.dsm``)."""

    def __init__(self, name: str, inner: Module):
        super().__init__()
        self.inner = self.add_child(name, inner)


def build(config: SANetConfig, seed: int = 0, dtype=np.float32) -> SANet:
    """Kaiming-uniform weights, zero biases, unit BN scale, lambda = 0."""
    return SANet(config, np.random.default_rng(seed), dtype)


def _check_input(model: SANet, x: Tensor) -> None:
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"expected input [N, 1, H, W], got {x.shape}")
    model.config.check_input(*x.shape[2:])


def _decode(model: SANet, feats: list[Tensor], skip) -> Tensor:
    d = feats[-1]
    for i in range(len(feats) - 1, 0, -1):
        u = model.up[i](d)
        d = model.dec_fuse[i](skip(i, feats[i - 1], u))
    return T.sigmoid(model.head(d))


def forward(model: SANet, x: Tensor) -> Tensor:
    _check_input(model, x)
    return _decode(model, model.encode(x), model.skip)


def concat_skip_forward(model: SANet, x: Tensor) -> Tensor:
    """Same weights, but every skip is a plain channel concatenation."""
    _check_input(model, x)
    return _decode(model, model.encode(x), lambda i, e, d: T.concat_channels(e, d))


# --------------------------------------------------------------------------
# complexity accounting


def count_params_flops(model: SANet, h: int, w: int) -> tuple[int, int]:
    """Trainable parameters and FLOPs (2 x MACs) of one forward at ``h x w``.

    MACs are counted for every convolution, transposed convolution and
    linear layer; normalization, activations, pooling and elementwise
    gating are not counted.
    """
    macs = 0
    for i, dsm in enumerate(model.enc):
        s = 2**i
        macs += _dsm_macs(dsm, h // s, w // s)
    for i in model.up:
        s = 2 ** (i - 1)
        hh, ww = h // s, w // s
        macs += model.up[i].macs(hh // 2, ww // 2)
        blk = model.safm[i]
        if blk is not None:
            macs += blk.conv7.macs(hh, ww) + blk.conv1.macs(hh, ww)
        macs += model.dec_fuse[i].op.macs(hh, ww)
    macs += model.head.macs(h, w)
    return model.num_parameters(), 2 * macs


def _dsm_macs(dsm: DSM, h: int, w: int) -> int:
    m = dsm.a0.op.macs(h, w) + dsm.a1.op.macs(h, w)
    for unit in dsm.branch_b:
        m += unit.op.macs(h, w)
    if dsm.dual_path:
        m += dsm.fuse.op.macs(h, w)
    if dsm.cbam is not None:
        ch = dsm.cbam.ch
        m += 2 * (ch.c * ch.hidden + ch.hidden * ch.c)
        m += dsm.cbam.sp.conv7.macs(h, w)
    return m
