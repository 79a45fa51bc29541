"""Dense NCHW tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a contiguous numpy array of float32 or float64.
Every differentiable op records a node (inputs plus an adjoint closure)
on its output when any input requires a gradient; :func:`backward`
replays those nodes in reverse execution order.

Broadcasting is deliberately narrow. Binary ops accept identical shapes,
plus three forms the network needs:

* a ``[N,1,H,W]`` map against ``[N,C,H,W]`` (spatial gates),
* a ``[N,C,1,1]`` vector against ``[N,C,H,W]`` (channel gates),
* a 0-d tensor against anything (learnable scalars).
"""
from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

from . import kernels

_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_seq = itertools.count()
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _contiguous(arr: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray would turn 0-d arrays into 1-d
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


class _Node:
    __slots__ = ("op", "inputs", "adjoint", "seq")

    def __init__(self, op: str, inputs: tuple, adjoint: Callable):
        self.op = op
        self.inputs = inputs
        self.adjoint = adjoint
        self.seq = next(_seq)


class Tensor:
    """N-dimensional array with optional gradient tracking.

    Precision is fixed at creation; ops never mix float32 and float64.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype not in _DTYPES:
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data = _contiguous(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[_Node] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = _contiguous(arr)
        t.requires_grad = False
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar over the functional ops
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0)) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _check_dtypes(*ts: Tensor) -> None:
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise TypeError(f"mixed precision: {dt} vs {t.dtype}")


def _result(arr: np.ndarray, inputs: tuple, adjoint: Callable, op: str) -> Tensor:
    out = Tensor._wrap(arr)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _Node(op, inputs, adjoint)
    return out


# --------------------------------------------------------------------------
# tape and backward


@dataclass
class Tape:
    """Non-leaf tensors of a graph, in execution order."""

    entries: list = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen: set[int] = set()
        found: list[Tensor] = []
        stack = [out]
        while stack:
            t = stack.pop()
            if id(t) in seen or t._node is None:
                continue
            seen.add(id(t))
            found.append(t)
            stack.extend(t._node.inputs)
        found.sort(key=lambda t: t._node.seq)
        return cls(found)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def ops(self) -> list[str]:
        return [t._node.op for t in self.entries]


def backward(output: Tensor, tape: Optional[Tape] = None) -> None:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``output``.

    Gradients accumulate into existing ``.grad`` buffers; clear them
    between independent passes.
    """
    if output.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        raise ValueError("output does not depend on any tensor that requires grad")
    if tape is None:
        tape = Tape.from_output(output)
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for t in reversed(tape.entries):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t._node
        in_grads = node.adjoint(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = gi.astype(inp.dtype, copy=True) if inp.grad is None else inp.grad + gi
            else:
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi
    if output._node is None:
        output.grad = np.ones_like(output.data) if output.grad is None else output.grad + 1


# --------------------------------------------------------------------------
# convolution family


def _pad4(padding) -> tuple[int, int, int, int]:
    if isinstance(padding, int):
        return (padding,) * 4
    p = tuple(int(v) for v in padding)
    if len(p) == 2:
        return (p[0], p[0], p[1], p[1])
    if len(p) != 4 or min(p) < 0:
        raise ValueError(f"padding must be (top, bottom, left, right) non-negative ints, got {padding}")
    return p


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding=0) -> Tensor:
    """2-D cross-correlation with per-side zero padding ``(top, bottom, left, right)``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(f"conv2d channel mismatch: input has {cin} channels, weight expects {wcin}")
    if stride < 1:
        raise ValueError("stride must be positive")
    top, bottom, left, right = pad = _pad4(padding)
    if h + top + bottom < kh or w + left + right < kw:
        raise ValueError(
            f"kernel {kh}x{kw} larger than padded input {h + top + bottom}x{w + left + right}"
        )
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} does not match {cout} output channels")
    ins = (x, weight) if bias is None else (x, weight, bias)
    _check_dtypes(*ins)
    ho = (h + top + bottom - kh) // stride + 1
    wo = (w + left + right - kw) // stride + 1

    pointwise = kh == kw == 1 and stride == 1 and not any(pad)
    # patch rows are output pixels, columns (ky, kx, cin)
    if pointwise:
        cols = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, cin)
    else:
        cols = kernels.im2col(x.data, kh, kw, stride, pad)
    w2 = weight.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def adjoint(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = None
        if weight.requires_grad:
            # for wide patch rows BLAS is faster on the transposed product
            gw2 = (cols.T @ g2).T if cols.shape[1] >= 256 else g2.T @ cols
            gw = gw2.reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad:
            gcols = g2 @ w2
            if pointwise:
                gx = gcols.reshape(n, h, w, cin).transpose(0, 3, 1, 2)
            else:
                gx = kernels.col2im(gcols, x.shape, kh, kw, stride, pad)
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    return _result(out, ins, adjoint, "conv2d")


def transposed_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Stride-2, 2x2 transposed convolution; weight is ``[Cin, Cout, 2, 2]``."""
    n, cin, h, w = x.shape
    if weight.ndim != 4 or weight.shape[0] != cin or weight.shape[2:] != (2, 2):
        raise ValueError(f"transposed_conv2d weight must be [{cin}, Cout, 2, 2], got {weight.shape}")
    cout = weight.shape[1]
    ins = (x, weight) if bias is None else (x, weight, bias)
    _check_dtypes(*ins)
    xm = x.data.transpose(1, 0, 2, 3).reshape(cin, n * h * w)
    wm = weight.data.reshape(cin, cout * 4)
    y = wm.T @ xm  # (Cout*2*2, N*H*W)
    out = y.reshape(cout, 2, 2, n, h, w).transpose(3, 0, 4, 1, 5, 2).reshape(n, cout, 2 * h, 2 * w)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def adjoint(g):
        gm = g.reshape(n, cout, h, 2, w, 2).transpose(1, 3, 5, 0, 2, 4).reshape(cout * 4, n * h * w)
        gx = (wm @ gm).reshape(cin, n, h, w).transpose(1, 0, 2, 3) if x.requires_grad else None
        gw = (xm @ gm.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    return _result(np.ascontiguousarray(out), ins, adjoint, "transposed_conv2d")


def max_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """2x2/stride-2 max pooling; ties send the gradient to the first cell in row-major order."""
    if k != 2:
        raise ValueError("only k=2 pooling is supported")
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"max_pool2d needs even H and W, got {x.shape}")
    out, arg = kernels.maxpool2_forward(x.data)

    def adjoint(g):
        return (kernels.maxpool2_backward(np.ascontiguousarray(g), arg),)

    return _result(out, (x,), adjoint, "max_pool2d")


# --------------------------------------------------------------------------
# reductions


def reduce_channels(x: Tensor, mode: str = "avg") -> Tensor:
    """Per-pixel mean or max across channels, keeping a 1-channel axis."""
    if mode == "avg":
        c = x.shape[1]
        out = x.data.mean(axis=1, keepdims=True)

        def adjoint(g):
            return (np.broadcast_to(g / c, x.shape).copy(),)

    elif mode == "max":
        idx = x.data.argmax(axis=1)[:, None]
        out = np.take_along_axis(x.data, idx, axis=1)

        def adjoint(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx, g, axis=1)
            return (gx,)

    else:
        raise ValueError(f"mode must be 'avg' or 'max', got {mode!r}")
    return _result(out, (x,), adjoint, f"reduce_channels_{mode}")


def reduce_spatial(x: Tensor, mode: str = "avg") -> Tensor:
    """Per-channel global mean or max, giving ``[N, C, 1, 1]``."""
    n, c, h, w = x.shape
    if mode == "avg":
        out = x.data.mean(axis=(2, 3), keepdims=True)

        def adjoint(g):
            return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    elif mode == "max":
        flat = x.data.reshape(n, c, h * w)
        idx = flat.argmax(axis=2)[..., None]
        out = np.take_along_axis(flat, idx, axis=2).reshape(n, c, 1, 1)

        def adjoint(g):
            gx = np.zeros((n, c, h * w), dtype=x.dtype)
            np.put_along_axis(gx, idx, g.reshape(n, c, 1), axis=2)
            return (gx.reshape(x.shape),)

    else:
        raise ValueError(f"mode must be 'avg' or 'max', got {mode!r}")
    return _result(out, (x,), adjoint, f"reduce_spatial_{mode}")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def adjoint(g):
        return (np.full(x.shape, g, dtype=x.dtype),)

    return _result(out, (x,), adjoint, "sum")


# --------------------------------------------------------------------------
# elementwise


def _broadcast_kind(a: tuple, b: tuple) -> Optional[str]:
    if a == b:
        return "same"
    if len(a) == 0 or len(b) == 0:
        return "scalar"
    if len(a) == len(b) == 4 and a[0] == b[0]:
        if a[2:] == b[2:] and 1 in (a[1], b[1]):
            return "channel"
        if a[1] == b[1] and (a[2:] == (1, 1) or b[2:] == (1, 1)):
            return "spatial"
    return None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _binary_check(a: Tensor, b: Tensor, op: str) -> None:
    _check_dtypes(a, b)
    if _broadcast_kind(a.shape, b.shape) is None:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "add")
    out = a.data + b.data

    def adjoint(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), adjoint, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "mul")
    out = a.data * b.data

    def adjoint(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), adjoint, "mul")


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ValueError(f"op must be 'add' or 'mul', got {op!r}")


def scale(x: Tensor, s: float) -> Tensor:
    s_ = x.dtype.type(s)
    out = x.data * s_

    def adjoint(g):
        return (g * s_,)

    return _result(out, (x,), adjoint, "scale")


def add_scalar(x: Tensor, s: float) -> Tensor:
    out = x.data + x.dtype.type(s)

    def adjoint(g):
        return (g,)

    return _result(out, (x,), adjoint, "add_scalar")


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)

    def adjoint(g):
        return (g * out * (1 - out),)

    return _result(out, (x,), adjoint, "sigmoid")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, x.dtype.type(0))

    def adjoint(g):
        return (g * (out > 0),)

    return _result(out, (x,), adjoint, "relu")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    _check_dtypes(a, b)
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def adjoint(g):
        return g[:, :ca], g[:, ca:]

    return _result(out, (a, b), adjoint, "concat_channels")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)

    def adjoint(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), adjoint, "reshape")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x: [N, in]``, ``weight: [out, in]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    ins = (x, weight) if bias is None else (x, weight, bias)
    _check_dtypes(*ins)
    out = x.data @ weight.data.T
    if bias is not None:
        out += bias.data

    def adjoint(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    return _result(out, ins, adjoint, "linear")


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    In training mode the batch statistics are used and the running buffers
    are updated in place (unbiased variance, as in common frameworks).
    """
    n, c, h, w = x.shape
    _check_dtypes(x, gamma, beta)
    g_ = gamma.data[None, :, None, None]
    if training:
        m = n * h * w
        mean = x.data.mean(axis=(0, 2, 3))
        xc = x.data - mean[None, :, None, None]
        var = (xc * xc).mean(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
        xhat = xc * inv[None, :, None, None]
        mom = momentum
        running_mean *= 1 - mom
        running_mean += (mom * mean).astype(running_mean.dtype)
        running_var *= 1 - mom
        running_var += (mom * var * (m / max(m - 1, 1))).astype(running_var.dtype)
        out = xhat * g_ + beta.data[None, :, None, None]

        def adjoint(g):
            gbeta = g.sum(axis=(0, 2, 3))
            ggamma = (g * xhat).sum(axis=(0, 2, 3))
            gx = None
            if x.requires_grad:
                gxhat = g * g_
                gx = (inv / m)[None, :, None, None] * (
                    m * gxhat
                    - gxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                    - xhat * (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
                )
            return gx, ggamma, gbeta

    else:
        inv = 1.0 / np.sqrt(running_var.astype(x.dtype) + x.dtype.type(eps))
        xhat = (x.data - running_mean.astype(x.dtype)[None, :, None, None]) * inv[None, :, None, None]
        out = xhat * g_ + beta.data[None, :, None, None]

        def adjoint(g):
            gx = g * (g_ * inv[None, :, None, None]) if x.requires_grad else None
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _result(out, (x, gamma, beta), adjoint, "batch_norm2d")


# --------------------------------------------------------------------------
# gradient checking


@dataclass
class GradcheckReport:
    passed: bool
    worst_rel_error: float
    worst_index: Optional[tuple]
    checked: int
    message: str = ""

    def __bool__(self) -> bool:
        return self.passed


def gradcheck(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    rtol: float = 1e-4,
    indices: Optional[Iterable[tuple]] = None,
    atol: float = 1e-12,
) -> GradcheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``x`` with central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, atol / rtol)``,
    so a coordinate passes when ``|a - n| <= max(rtol * max(|a|, |n|), atol)``.
    ``atol`` matters only where the true gradient is (near) zero and the
    difference quotient is pure roundoff. ``indices`` restricts the check
    to a subset of coordinates.
    """
    if x.dtype != np.float64:
        raise TypeError("gradcheck requires a float64 tensor")
    x.requires_grad = True
    x.grad = None
    out = f(x)
    if out.size != 1:
        raise ValueError("gradcheck needs a scalar-valued function")
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    if not np.all(np.isfinite(analytic)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(analytic))[0])
        return GradcheckReport(False, math.inf, bad, 0, f"non-finite analytic gradient at {bad}")

    floor = atol / rtol
    idx_list = list(np.ndindex(x.shape)) if indices is None else [tuple(i) for i in indices]
    worst, worst_at = 0.0, None
    base = x.data
    with no_grad():
        for idx in idx_list:
            orig = base[idx]
            base[idx] = orig + eps
            fp = f(x).item()
            base[idx] = orig - eps
            fm = f(x).item()
            base[idx] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                return GradcheckReport(False, math.inf, idx, len(idx_list), f"non-finite value at {idx}")
            num = (fp - fm) / (2 * eps)
            a = float(analytic[idx])
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            if rel > worst:
                worst, worst_at = rel, idx
    ok = worst <= rtol
    msg = "ok" if ok else f"worst relative error {worst:.3e} at {worst_at}"
    return GradcheckReport(ok, worst, worst_at, len(idx_list), msg)
