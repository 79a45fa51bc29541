"""Selective attention fusion of encoder and decoder features.

Given same-shaped ``E`` and ``D``::

    X   = concat(E, D)
    SAF = conv7(concat(mean_c(X), max_c(X)))
    Y   = E * sigmoid(SAF) + D * sigmoid(1 - SAF)
    out = lam * (conv1(Y) * X) + X

``conv1`` lifts ``Y`` from C to 2C channels so it can gate ``X``. The
two sigmoid weights are not complementary; they coincide only where
``SAF == 0.5``.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import Tensor


class SAFM(Module):
    """Holds ``conv7``, ``conv1`` and the scalar ``lambda``.

    ``residual=False`` returns ``conv1(Y) * X`` alone. ``lambda_learnable=False``
    pins lambda to 1 and removes it from the trainable parameters.
    """

    def __init__(self, c: int, rng, residual: bool = True, lambda_learnable: bool = True, dtype=np.float32):
        super().__init__()
        self.c = c
        self.residual = residual
        self.lambda_learnable = lambda_learnable
        self.conv7 = self.add_child("conv7", Conv2d(2, 1, 7, rng, padding=3, dtype=dtype))
        self.conv1 = self.add_child("conv1", Conv2d(c, 2 * c, 1, rng, padding=0, dtype=dtype))
        if residual and lambda_learnable:
            self.lam = self.add_param("lambda", Tensor(np.zeros(()), dtype=dtype))
        elif residual:
            self.lam = Tensor(np.ones(()), dtype=dtype)
        else:
            self.lam = None

    def attention_map(self, x: Tensor) -> Tensor:
        pooled = T.concat_channels(T.reduce_channels(x, "avg"), T.reduce_channels(x, "max"))
        return self.conv7(pooled)

    def forward(self, e: Tensor, d: Tensor) -> Tensor:
        return safm_forward(e, d, self)


def fusion_weights(saf: Tensor) -> tuple[Tensor, Tensor]:
    """Encoder and decoder weights ``sigmoid(SAF)`` and ``sigmoid(1 - SAF)``."""
    return T.sigmoid(saf), T.sigmoid(T.add_scalar(T.scale(saf, -1.0), 1.0))


def safm_forward(e: Tensor, d: Tensor, p: SAFM) -> Tensor:
    if e.shape != d.shape:
        raise ValueError(f"SAFM needs equal encoder/decoder shapes, got {e.shape} and {d.shape}")
    if e.shape[1] != p.c:
        raise ValueError(f"SAFM built for {p.c} channels, got {e.shape[1]}")
    if min(e.shape[2:]) < 7:
        raise ValueError(f"SAFM needs H, W >= 7, got {e.shape[2:]}")
    x = T.concat_channels(e, d)
    w_e, w_d = fusion_weights(p.attention_map(x))
    y = T.add(T.mul(e, w_e), T.mul(d, w_d))
    gated = T.mul(p.conv1(y), x)
    if p.lam is None:
        return gated
    return T.add(T.mul(p.lam, gated), x)
