"""Parameter containers and the small layers everything else is built from."""
from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Ordered tree of named parameters, buffers and child modules."""

    def __init__(self):
        self._params: dict[str, Optional[Tensor]] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def add_param(self, name: str, value: Optional[Tensor]) -> Optional[Tensor]:
        if value is not None:
            value.requires_grad = True
        self._params[name] = value
        return value

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            if p is not None:
                yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()], dtype=np.int64))

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters and buffers by dotted name (arrays are live views)."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, arr in own.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ValueError(f"{name}: expected shape {arr.shape}, got {src.shape}")
            arr[...] = src

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), dtype=dtype)


class Conv2d(Module):
    """Zero-padded convolution holding ``w`` (and optionally ``b``)."""

    def __init__(self, cin, cout, kernel, rng, padding=None, bias=True, dtype=np.float32):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if padding is None:
            padding = ((kh - 1) // 2, kh // 2, (kw - 1) // 2, kw // 2)
        self.cin, self.cout, self.kernel = cin, cout, (kh, kw)
        self.padding = T._pad4(padding)
        self.w = self.add_param("w", kaiming_uniform(rng, (cout, cin, kh, kw), cin * kh * kw, dtype))
        self.b = self.add_param("b", Tensor(np.zeros(cout), dtype=dtype) if bias else None)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, 1, self.padding)

    def macs(self, h: int, w: int) -> int:
        kh, kw = self.kernel
        return self.cout * self.cin * kh * kw * h * w


class BatchNorm2d(Module):
    def __init__(self, c: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.add_param("gamma", Tensor(np.ones(c), dtype=dtype))
        self.beta = self.add_param("beta", Tensor(np.zeros(c), dtype=dtype))
        self.mean = self.add_buffer("mean", np.zeros(c, dtype=dtype))
        self.var = self.add_buffer("var", np.ones(c, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm2d(
            x, self.gamma, self.beta, self.mean, self.var, self.training, self.momentum, self.eps
        )


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng, dtype=np.float32):
        super().__init__()
        self.fin, self.fout = fin, fout
        self.w = self.add_param("w", kaiming_uniform(rng, (fout, fin), fin, dtype))
        self.b = self.add_param("b", Tensor(np.zeros(fout), dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)


class ConvUnit(Module):
    """``relu(bn(op(x)))`` where ``op`` is any shape-preserving conv layer."""

    def __init__(self, name: str, op: Module, cout: int, dtype=np.float32):
        super().__init__()
        self.op = self.add_child(name, op)
        self.bn = self.add_child("bn", BatchNorm2d(cout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.bn(self.op(x)))
