"""Independent loop-based reference implementations used by the tests.

Nothing here imports the package's kernels; each oracle is written
straight from the definition with explicit loops.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np


def conv2d(x, w, b=None, stride=1, pad=(0, 0, 0, 0)):
    """Direct sliding-window cross-correlation with (top, bottom, left, right) zero padding."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    t, bo, l, r = pad
    xp = np.zeros((n, cin, h + t + bo, wd + l + r), dtype=np.float64)
    xp[:, :, t : t + h, l : l + wd] = x
    oh = (h + t + bo - kh) // stride + 1
    ow = (wd + l + r - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for i in range(n):
        for o in range(cout):
            for y in range(oh):
                for xx in range(ow):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, c, y * stride + u, xx * stride + v] * w[o, c, u, v]
                    out[i, o, y, xx] = acc
    return out


def transposed_conv2x2(x, w, b=None):
    """Stride-2 2x2 transposed conv by scattering each input pixel."""
    n, cin, h, wd = x.shape
    cout = w.shape[1]
    out = np.zeros((n, cout, 2 * h, 2 * wd))
    for i in range(n):
        for c in range(cin):
            for y in range(h):
                for xx in range(wd):
                    for o in range(cout):
                        for u in range(2):
                            for v in range(2):
                                out[i, o, 2 * y + u, 2 * xx + v] += x[i, c, y, xx] * w[c, o, u, v]
    if b is not None:
        out += np.asarray(b).reshape(1, -1, 1, 1)
    return out


def max_pool2(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for i in range(n):
        for k in range(c):
            for y in range(h // 2):
                for xx in range(w // 2):
                    out[i, k, y, xx] = max(
                        x[i, k, 2 * y, 2 * xx], x[i, k, 2 * y, 2 * xx + 1],
                        x[i, k, 2 * y + 1, 2 * xx], x[i, k, 2 * y + 1, 2 * xx + 1],
                    )
    return out


def sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def flood_fill_labels(mask):
    """8-connected labeling by BFS, labels assigned in row-major first-pixel order."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    lab = np.zeros((h, w), dtype=np.int64)
    k = 0
    for y in range(h):
        for x in range(w):
            if m[y, x] and not lab[y, x]:
                k += 1
                lab[y, x] = k
                q = deque([(y, x)])
                while q:
                    cy, cx = q.popleft()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < h and 0 <= nx < w and m[ny, nx] and not lab[ny, nx]:
                                lab[ny, nx] = k
                                q.append((ny, nx))
    return lab, k


def metrics(pred, gt, radius=3.0):
    """Per-image IoU, nIoU, Pd, Fa by brute force over component lists.

    Matching: repeatedly take the globally closest unmatched (gt, pred)
    pair within ``radius``; ties go to the smaller gt label, then the
    smaller pred label.
    """
    pred, gt = np.asarray(pred, bool), np.asarray(gt, bool)
    pl, pk = flood_fill_labels(pred)
    gl, gk = flood_fill_labels(gt)

    def cent(lab, k):
        ys, xs = np.nonzero(lab == k)
        return ys.mean(), xs.mean()

    pc = {k: cent(pl, k) for k in range(1, pk + 1)}
    gc = {k: cent(gl, k) for k in range(1, gk + 1)}
    cands = []
    for g in gc:
        for p in pc:
            d = math.dist(gc[g], pc[p])
            if d <= radius:
                cands.append((d, g, p))
    cands.sort()
    used_g, used_p, pairs = set(), set(), {}
    for d, g, p in cands:
        if g not in used_g and p not in used_p:
            used_g.add(g)
            used_p.add(p)
            pairs[g] = p
    inter = int((pred & gt).sum())
    union = int((pred | gt).sum())
    iou = 1.0 if union == 0 else inter / union
    inst = []
    for g in range(1, gk + 1):
        gm = gl == g
        if g in pairs:
            pm = pl == pairs[g]
            tp = int((gm & pm).sum())
            inst.append(tp / (gm.sum() + pm.sum() - tp))
        else:
            inst.append(0.0)
    false_px = sum(int((pl == p).sum()) for p in pc if p not in used_p)
    bg = pred.size - int(gt.sum())
    return {
        "iou": iou,
        "niou": float(np.mean(inst)) if inst else None,
        "pd": len(pairs) / gk if gk else None,
        "fa": false_px / bg,
    }


def adam_scalar(theta, grads_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    """Hand-stepped scalar Adam with bias correction, using math only."""
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grads_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        theta = theta - lr * mh / (math.sqrt(vh) + eps)
        out.append(theta)
    return out
