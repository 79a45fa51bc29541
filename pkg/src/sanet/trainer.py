"""Adam with cosine-annealed learning rate, the training loop and evaluation."""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import Sample, augment_flip, stack
from .metrics import MetricReport, evaluate_masks, soft_iou_loss
from .network import SANet
from .tensor import Tensor

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    epochs: int = 50
    batch: int = 8
    eta_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    clip_grad: float = 0.0  # global-norm clip; 0 disables
    eval_every: int = 1  # epochs between held-out evaluations; the last epoch is always evaluated
    checkpoint_every: int = 0  # epochs between checkpoints; 0 keeps only the final one
    threshold: float = 0.5
    match_radius: float = 3.0

    def validate(self) -> None:
        if not self.lr0 >= 0:
            raise ValueError(f"lr0 must be >= 0, got {self.lr0}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.eta_min < 0 or self.eta_min > self.lr0:
            raise ValueError(f"eta_min must lie in [0, lr0], got {self.eta_min}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# --------------------------------------------------------------------------
# optimizer


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(
    named_params: Sequence[tuple[str, Tensor]],
    state: OptimState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update from each parameter's ``.grad``.

    All gradients are checked before anything is modified, so a
    non-finite gradient leaves parameters and state untouched.
    """
    b1, b2 = betas
    for name, p in named_params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {name}")
    state.t += 1
    t = state.t
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in named_params:
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype, copy=False)


def cosine_lr(t: int, total: int, lr0: float, eta_min: float = 0.0) -> float:
    if t > total:
        warnings.warn(f"step {t} past schedule end {total}; using eta_min", RuntimeWarning, stacklevel=2)
        return eta_min
    if t < 0:
        raise ValueError(f"step must be >= 0, got {t}")
    return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + math.cos(math.pi * t / total))


def _clip(named_params, max_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for _, p in named_params if p.grad is not None))
    if total > max_norm:
        s = max_norm / total
        for _, p in named_params:
            if p.grad is not None:
                p.grad *= s


# --------------------------------------------------------------------------
# loop


HISTORY_COLUMNS = ("epoch", "lr", "loss", "iou", "niou", "pd", "fa")


@dataclass
class History:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.rows:
            w.writerow(["" if r.get(c) is None else repr(r[c]) if isinstance(r[c], float) else r[c] for c in HISTORY_COLUMNS])
        return buf.getvalue()

    def losses(self) -> list[float]:
        return [r["loss"] for r in self.rows]


@dataclass
class TrainResult:
    model: SANet
    history: History
    state: OptimState
    report: Optional[MetricReport] = None


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + size] for i in range(0, n, size)]


def train(
    model: SANet,
    dataset: Sequence[Sample],
    config: TrainConfig,
    test_set: Optional[Sequence[Sample]] = None,
    out_dir=None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Seeded mini-batch training; evaluates on ``test_set`` when given."""
    config.validate()
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(config.seed)
    steps_per_epoch = math.ceil(len(dataset) / config.batch)
    total = config.epochs * steps_per_epoch
    state = OptimState()
    named = list(model.named_parameters())
    history = History()
    out_dir = Path(out_dir) if out_dir is not None else None
    report = None
    step = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        loss_sum, count = 0.0, 0
        lr = cosine_lr(step, total, config.lr0, config.eta_min)
        for idx in _batches(len(dataset), config.batch, rng):
            items = [dataset[i] for i in idx]
            if config.augment:
                items = [augment_flip(s, rng) for s in items]
            x, y = stack(items, model.dtype)
            lr = cosine_lr(step, total, config.lr0, config.eta_min)
            model.zero_grad()
            pred = model(Tensor(x))
            loss = soft_iou_loss(pred, y)
            lv = loss.item()
            if not math.isfinite(lv):
                raise NumericalError(f"non-finite loss at epoch {epoch}; batch ids {[s.id for s in items]}")
            T.backward(loss)
            if config.clip_grad > 0:
                _clip(named, config.clip_grad)
            try:
                adam_step(named, state, lr, (config.beta1, config.beta2), config.adam_eps)
            except NumericalError as exc:
                raise NumericalError(f"{exc} at epoch {epoch}; batch ids {[s.id for s in items]}") from None
            step += 1
            loss_sum += lv * len(items)
            count += len(items)
        row = {"epoch": epoch, "lr": lr, "loss": loss_sum / count}
        if test_set and (epoch % config.eval_every == 0 or epoch == config.epochs):
            report = evaluate(model, test_set, config.threshold, config.match_radius)
            row.update(iou=report.iou, niou=report.niou, pd=report.pd, fa=report.fa)
        history.rows.append(row)
        log.info("epoch %d lr %.3g loss %.4f", epoch, lr, row["loss"])
        if on_epoch is not None:
            on_epoch(row)
        if out_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_e{epoch:04d}.ckpt", model, step)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out_dir / "checkpoint.ckpt", model, step)
        (out_dir / "history.csv").write_text(history.to_csv())
    model.eval()
    return TrainResult(model, history, state, report)


def predict(model: SANet, images: np.ndarray, batch: int = 16) -> np.ndarray:
    """Probability maps ``[N,1,H,W]`` in inference mode."""
    was = model.training
    model.eval()
    out = []
    with T.no_grad():
        for i in range(0, len(images), batch):
            out.append(model(Tensor(np.ascontiguousarray(images[i : i + batch], dtype=model.dtype))).data)
    model.train(was)
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:], dtype=model.dtype)


def evaluate(
    model: SANet, dataset: Sequence[Sample], threshold: float = 0.5, match_radius: float = 3.0, batch: int = 16
) -> MetricReport:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    x, _ = stack(list(dataset), model.dtype)
    probs = predict(model, x, batch)
    return evaluate_masks(
        [p[0] for p in probs], [s.mask[0] for s in dataset], threshold, match_radius, [s.id for s in dataset]
    )
