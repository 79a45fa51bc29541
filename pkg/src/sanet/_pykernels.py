"""Pure numpy/scipy implementations of the hot kernels.

Same signatures and bit-identical outputs as the compiled ``_ckernels``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage


def _out_size(h, w, kh, kw, stride, padding):
    top, bottom, left, right = padding
    return (h + top + bottom - kh) // stride + 1, (w + left + right - kw) // stride + 1


def im2col(x, kh, kw, stride, padding):
    """Patch matrix of an NCHW image: rows (n, oy, ox), columns (ky, kx, c)."""
    top, bottom, left, right = padding
    n, c, h, w = x.shape
    ho, wo = _out_size(h, w, kh, kw, stride, padding)
    xl = x.transpose(0, 2, 3, 1)
    if any(padding):
        xl = np.pad(xl, ((0, 0), (top, bottom), (left, right), (0, 0)))
    win = sliding_window_view(xl, (kh, kw), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (N, Ho, Wo, C, kh, kw) -> (N, Ho, Wo, kh, kw, C)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * c)


def col2im(cols, shape, kh, kw, stride, padding):
    """Scatter-add a patch matrix back onto an NCHW image of ``shape``."""
    top, bottom, left, right = padding
    n, c, h, w = shape
    ho, wo = _out_size(h, w, kh, kw, stride, padding)
    cols = cols.reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros((n, h + top + bottom, w + left + right, c), dtype=cols.dtype)
    for ky in range(kh):
        ys = slice(ky, ky + (ho - 1) * stride + 1, stride)
        for kx in range(kw):
            xs = slice(kx, kx + (wo - 1) * stride + 1, stride)
            dxp[:, ys, xs] += cols[:, :, :, ky, kx]
    return np.ascontiguousarray(dxp[:, top : top + h, left : left + w].transpose(0, 3, 1, 2))


def maxpool2_forward(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2_backward(g, arg):
    n, c, ho, wo = g.shape
    win = np.zeros((n, c, ho, wo, 4), dtype=g.dtype)
    np.put_along_axis(win, arg[..., None].astype(np.intp), g[..., None], axis=-1)
    return np.ascontiguousarray(
        win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    )


_EIGHT = np.ones((3, 3), dtype=bool)


def label8(mask):
    """8-connected labeling; labels numbered by first pixel in row-major scan."""
    lab, k = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    lab = lab.astype(np.int32)
    if k:
        # scipy already scans row-major, but do not rely on it
        values, first = np.unique(lab.ravel(), return_index=True)
        keep = values > 0
        values, first = values[keep], first[keep]
        remap = np.zeros(k + 1, dtype=np.int32)
        remap[values[np.argsort(first)]] = np.arange(1, k + 1, dtype=np.int32)
        lab = remap[lab]
    return lab, int(k)
