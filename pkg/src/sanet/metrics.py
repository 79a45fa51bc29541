"""Soft-IoU loss and target-level detection metrics.

Metric conventions:

* IoU uses global pixel tallies over the whole image set.
* Targets are 8-connected components. A predicted component detects a
  ground-truth component when their centroids lie within
  ``match_radius`` pixels; matching is greedy over all candidate pairs
  in order of (distance, gt label, pred label), one-to-one.
* nIoU averages ``TP_k / (T_k + P_k - TP_k)`` over ground-truth
  components, where ``P_k`` is the matched prediction's pixel count.
* Fa is false pixels (pixels of unmatched predicted components) over
  non-target pixels.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from . import tensor as T
from .tensor import Tensor

SOFT_IOU_EPS = 1.0


# --------------------------------------------------------------------------
# loss


def soft_iou_loss(pred: Tensor, target, eps: float = SOFT_IOU_EPS) -> Tensor:
    """``1 - (sum p*y + eps) / (sum p + sum y - sum p*y + eps)`` over the batch."""
    y = target.data if isinstance(target, Tensor) else np.asarray(target)
    if y.shape != pred.shape:
        raise ValueError(f"target shape {y.shape} does not match prediction {pred.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("soft_iou_loss target must be binary (values in {0, 1})")
    y = y.astype(pred.dtype, copy=False)
    p = pred.data
    inter = float(np.sum(p * y, dtype=np.float64))
    sp = float(np.sum(p, dtype=np.float64))
    sy = float(np.sum(y, dtype=np.float64))
    union = sp + sy - inter + eps
    num = inter + eps
    loss = 1.0 - num / union

    def adjoint(g):
        # dL/dp = -(y * union - num * (1 - y)) / union^2
        coef = -float(g) / (union * union)
        return ((coef * (y * union - num * (1.0 - y))).astype(pred.dtype),)

    return T._result(np.asarray(loss, dtype=pred.dtype), (pred,), adjoint, "soft_iou_loss")


# --------------------------------------------------------------------------
# masks and components


def binarize(pred, threshold: float = 0.5) -> np.ndarray:
    arr = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    return arr >= threshold


@dataclass
class ComponentSet:
    labels: np.ndarray  # int32 [H, W], 0 = background, 1..K
    count: int
    sizes: np.ndarray  # int64 [K]
    centroids: np.ndarray  # float64 [K, 2] as (row, col)

    def pixels(self, k: int) -> np.ndarray:
        """Row/col coordinates of component ``k`` (1-based)."""
        return np.argwhere(self.labels == k)


def connected_components(mask) -> ComponentSet:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {m.shape}")
    labels, k = kernels.label8(np.ascontiguousarray(m, dtype=np.uint8))
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=k + 1)[1:].astype(np.int64)
    rows, cols = np.indices(m.shape)
    if k:
        cy = np.bincount(flat, weights=rows.ravel().astype(np.float64), minlength=k + 1)[1:] / sizes
        cx = np.bincount(flat, weights=cols.ravel().astype(np.float64), minlength=k + 1)[1:] / sizes
        cent = np.stack([cy, cx], axis=1)
    else:
        cent = np.zeros((0, 2))
    return ComponentSet(labels, int(k), sizes, cent)


# --------------------------------------------------------------------------
# per-image matching


@dataclass
class ImageTally:
    """Everything aggregation needs from one image."""

    id: str
    pixels: int
    gt_pixels: int
    pred_pixels: int
    inter_pixels: int
    gt_targets: int
    pred_targets: int
    matched: int
    false_pixels: int
    # per ground-truth instance IoU, in gt label order
    instance_iou: list = field(default_factory=list)
    matching: list = field(default_factory=list)


def _check_pair(pred_mask, gt_mask) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred_mask, dtype=bool)
    g = np.asarray(gt_mask, dtype=bool)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    if p.ndim != 2:
        raise ValueError(f"expected 2-D masks, got {p.shape}")
    return p, g


def match_components(pc: ComponentSet, gc: ComponentSet, match_radius: float) -> list[tuple[int, int, float]]:
    """One-to-one greedy matching; returns ``(gt_label, pred_label, distance)``."""
    if pc.count == 0 or gc.count == 0:
        return []
    d = np.sqrt(((gc.centroids[:, None, :] - pc.centroids[None, :, :]) ** 2).sum(-1))
    gi, pi = np.nonzero(d <= match_radius)
    order = np.lexsort((pi, gi, d[gi, pi]))
    used_g, used_p, out = set(), set(), []
    for j in order:
        g, p = int(gi[j]), int(pi[j])
        if g in used_g or p in used_p:
            continue
        used_g.add(g)
        used_p.add(p)
        out.append((g + 1, p + 1, float(d[g, p])))
    out.sort()
    return out


def tally(pred_mask, gt_mask, match_radius: float = 3.0, image_id: str = "") -> ImageTally:
    p, g = _check_pair(pred_mask, gt_mask)
    pc, gc = connected_components(p), connected_components(g)
    matching = match_components(pc, gc, match_radius)
    matched_pred = {pl for _, pl, _ in matching}
    false_px = int(sum(pc.sizes[k - 1] for k in range(1, pc.count + 1) if k not in matched_pred))
    by_gt = {gl: pl for gl, pl, _ in matching}
    inst = []
    for k in range(1, gc.count + 1):
        tk = int(gc.sizes[k - 1])
        pl = by_gt.get(k)
        if pl is None:
            inst.append(0.0)
            continue
        pmask = pc.labels == pl
        tp = int(np.count_nonzero(pmask & (gc.labels == k)))
        pk = int(pc.sizes[pl - 1])
        inst.append(tp / (tk + pk - tp))
    return ImageTally(
        id=image_id,
        pixels=int(p.size),
        gt_pixels=int(np.count_nonzero(g)),
        pred_pixels=int(np.count_nonzero(p)),
        inter_pixels=int(np.count_nonzero(p & g)),
        gt_targets=gc.count,
        pred_targets=pc.count,
        matched=len(matching),
        false_pixels=false_px,
        instance_iou=inst,
        matching=matching,
    )


# --------------------------------------------------------------------------
# single-pair metrics


def pixel_iou(pred_mask, gt_mask) -> float:
    p, g = _check_pair(pred_mask, gt_mask)
    union = np.count_nonzero(p | g)
    return 1.0 if union == 0 else np.count_nonzero(p & g) / union


def niou(pred_mask, gt_mask, match_radius: float = 3.0) -> float:
    t = tally(pred_mask, gt_mask, match_radius)
    return _niou_from([t])


def pd_fa(pred_mask, gt_mask, match_radius: float = 3.0):
    """``(pd, fa, matching)``; ``pd`` is ``None`` (with a warning) without targets."""
    t = tally(pred_mask, gt_mask, match_radius)
    return _pd_from([t]), _fa_from([t]), t.matching


def _niou_from(ts: Sequence[ImageTally]) -> float:
    inst = [v for t in ts for v in t.instance_iou]
    if inst:
        return float(np.mean(inst))
    # no targets anywhere: perfect only if nothing was predicted
    return 1.0 if all(t.pred_pixels == 0 for t in ts) else 0.0


def _pd_from(ts: Sequence[ImageTally]) -> Optional[float]:
    total = sum(t.gt_targets for t in ts)
    if total == 0:
        warnings.warn("Pd undefined: no ground-truth targets", RuntimeWarning, stacklevel=3)
        return None
    return sum(t.matched for t in ts) / total


def _fa_from(ts: Sequence[ImageTally]) -> float:
    bg = sum(t.pixels - t.gt_pixels for t in ts)
    return 0.0 if bg == 0 else sum(t.false_pixels for t in ts) / bg


# --------------------------------------------------------------------------
# dataset report


@dataclass
class MetricReport:
    iou: float
    niou: float
    pd: Optional[float]
    fa: float
    threshold: float
    match_radius: float
    images: int
    gt_targets: int
    pred_targets: int
    tp_targets: int
    fp_targets: int
    fn_targets: int
    gt_pixels: int
    pred_pixels: int
    inter_pixels: int
    union_pixels: int
    false_pixels: int
    background_pixels: int
    iou_mode: str = "global pixel tallies"
    per_image: list = field(default_factory=list, repr=False)

    @property
    def fa_e6(self) -> float:
        return self.fa * 1e6

    @classmethod
    def from_tallies(cls, ts: Sequence[ImageTally], threshold: float, match_radius: float) -> "MetricReport":
        gt = sum(t.gt_pixels for t in ts)
        pr = sum(t.pred_pixels for t in ts)
        inter = sum(t.inter_pixels for t in ts)
        union = gt + pr - inter
        matched = sum(t.matched for t in ts)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pd = _pd_from(ts)
        if pd is None and ts:
            warnings.warn("Pd undefined: no ground-truth targets", RuntimeWarning, stacklevel=2)
        rows = []
        for t in ts:
            u = t.gt_pixels + t.pred_pixels - t.inter_pixels
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ipd = _pd_from([t])
            rows.append(
                {
                    "id": t.id,
                    "iou": 1.0 if u == 0 else t.inter_pixels / u,
                    "niou": _niou_from([t]),
                    "pd": ipd,
                    "fa": _fa_from([t]),
                    "fa_e6": _fa_from([t]) * 1e6,
                    "gt_targets": t.gt_targets,
                    "pred_targets": t.pred_targets,
                    "tp_targets": t.matched,
                    "false_pixels": t.false_pixels,
                }
            )
        return cls(
            iou=1.0 if union == 0 else inter / union,
            niou=_niou_from(ts),
            pd=pd,
            fa=_fa_from(ts),
            threshold=float(threshold),
            match_radius=float(match_radius),
            images=len(ts),
            gt_targets=sum(t.gt_targets for t in ts),
            pred_targets=sum(t.pred_targets for t in ts),
            tp_targets=matched,
            fp_targets=sum(t.pred_targets for t in ts) - matched,
            fn_targets=sum(t.gt_targets for t in ts) - matched,
            gt_pixels=gt,
            pred_pixels=pr,
            inter_pixels=inter,
            union_pixels=union,
            false_pixels=sum(t.false_pixels for t in ts),
            background_pixels=sum(t.pixels - t.gt_pixels for t in ts),
            per_image=rows,
        )

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_image")
        d["fa_e6"] = self.fa_e6
        return d

    def to_json(self) -> str:
        d = self.summary()
        d["per_image"] = self.per_image
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        cols = ["id", "iou", "niou", "pd", "fa", "fa_e6", "gt_targets", "pred_targets", "tp_targets", "false_pixels"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.per_image:
            w.writerow([_fmt(r[c]) for c in cols])
        agg = {
            "id": "ALL",
            "iou": self.iou,
            "niou": self.niou,
            "pd": self.pd,
            "fa": self.fa,
            "fa_e6": self.fa_e6,
            "gt_targets": self.gt_targets,
            "pred_targets": self.pred_targets,
            "tp_targets": self.tp_targets,
            "false_pixels": self.false_pixels,
        }
        w.writerow([_fmt(agg[c]) for c in cols])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def evaluate_masks(
    preds: Sequence, gts: Sequence, threshold: float = 0.5, match_radius: float = 3.0, ids: Optional[Sequence[str]] = None
) -> MetricReport:
    """Aggregate metrics over paired probability maps (or masks) and ground truths."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    ids = ids or [str(i) for i in range(len(preds))]
    ts = [
        tally(binarize(np.squeeze(np.asarray(p)), threshold), np.squeeze(np.asarray(g)) > 0, match_radius, i)
        for p, g, i in zip(preds, gts, ids)
    ]
    return MetricReport.from_tallies(ts, threshold, match_radius)
