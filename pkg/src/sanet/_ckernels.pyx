# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled gather/scatter kernels.

Every routine mirrors a function in ``_pykernels`` and must produce
bit-identical results; accumulation order in ``col2im`` follows the
fallback's (ky, kx) loop. Patch matrices are pixel-major with columns
ordered (ky, kx, c), which keeps both the gather and the GEMM that
consumes it cache-friendly.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def _im2col(real[:, :, :, ::1] x, real[:, ::1] cols, int kh, int kw, int stride,
            int top, int left, int ho, int wo):
    # x is channels-last (N, H, W, C); column index is (ky, kx, c)
    cdef Py_ssize_t n_img = x.shape[0], h = x.shape[1], w = x.shape[2], chans = x.shape[3]
    cdef Py_ssize_t n, ky, kx, oy, ox, iy, ix, c, r, k0
    with nogil:
        for n in range(n_img):
            for oy in range(ho):
                for ox in range(wo):
                    r = (n * ho + oy) * wo + ox
                    for ky in range(kh):
                        iy = oy * stride + ky - top
                        for kx in range(kw):
                            ix = ox * stride + kx - left
                            k0 = (ky * kw + kx) * chans
                            if iy < 0 or iy >= h or ix < 0 or ix >= w:
                                for c in range(chans):
                                    cols[r, k0 + c] = 0
                            else:
                                for c in range(chans):
                                    cols[r, k0 + c] = x[n, iy, ix, c]


def im2col(x, int kh, int kw, int stride, padding):
    """Patch matrix of an NCHW image: rows (n, oy, ox), columns (ky, kx, c)."""
    top, bottom, left, right = padding
    n, c, h, w = x.shape
    ho = (h + top + bottom - kh) // stride + 1
    wo = (w + left + right - kw) // stride + 1
    xl = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    cols = np.empty((n * ho * wo, kh * kw * c), dtype=x.dtype)
    _im2col(xl, cols, kh, kw, stride, top, left, ho, wo)
    return cols


def _col2im(real[:, ::1] cols, real[:, :, :, ::1] dx, real[::1] acc, int kh, int kw,
            int stride, int top, int left, int ho, int wo):
    # Gather form: each cell of the channels-last dx sums its contributions
    # in ascending (ky, kx) order, the same order the numpy fallback adds
    # its shifted slices, so results are bit-identical.
    cdef Py_ssize_t n_img = dx.shape[0], h = dx.shape[1], w = dx.shape[2], chans = dx.shape[3]
    cdef Py_ssize_t n, ky, kx, oy, ox, iy, ix, c, r, k0, ty, tx
    with nogil:
        for n in range(n_img):
            for iy in range(h):
                for ix in range(w):
                    for c in range(chans):
                        acc[c] = 0
                    for ky in range(kh):
                        ty = iy + top - ky
                        if ty < 0 or ty % stride != 0:
                            continue
                        oy = ty // stride
                        if oy >= ho:
                            continue
                        for kx in range(kw):
                            tx = ix + left - kx
                            if tx < 0 or tx % stride != 0:
                                continue
                            ox = tx // stride
                            if ox >= wo:
                                continue
                            r = (n * ho + oy) * wo + ox
                            k0 = (ky * kw + kx) * chans
                            for c in range(chans):
                                acc[c] += cols[r, k0 + c]
                    for c in range(chans):
                        dx[n, iy, ix, c] = acc[c]


def col2im(cols, shape, int kh, int kw, int stride, padding):
    """Scatter-add a patch matrix back onto an NCHW image of ``shape``."""
    top, bottom, left, right = padding
    n, c, h, w = shape
    ho = (h + top + bottom - kh) // stride + 1
    wo = (w + left + right - kw) // stride + 1
    cols = np.ascontiguousarray(cols)
    dx = np.empty((n, h, w, c), dtype=cols.dtype)
    acc = np.empty(c, dtype=cols.dtype)
    _col2im(cols, dx, acc, kh, kw, stride, top, left, ho, wo)
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2))


def _pool_fwd(real[:, :, :, ::1] x, real[:, :, :, ::1] out, cnp.int8_t[:, :, :, ::1] arg):
    cdef Py_ssize_t n_img = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t n, c, i, j
    cdef real best, v
    cdef cnp.int8_t k
    with nogil:
        for n in range(n_img):
            for c in range(chans):
                for i in range(ho):
                    for j in range(wo):
                        best = x[n, c, 2 * i, 2 * j]
                        k = 0
                        v = x[n, c, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 1
                        v = x[n, c, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            k = 2
                        v = x[n, c, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 3
                        out[n, c, i, j] = best
                        arg[n, c, i, j] = k


def maxpool2_forward(x):
    n, c, h, w = x.shape
    x = np.ascontiguousarray(x)
    out = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
    arg = np.empty((n, c, h // 2, w // 2), dtype=np.int8)
    _pool_fwd(x, out, arg)
    return out, arg


def _pool_bwd(real[:, :, :, ::1] g, cnp.int8_t[:, :, :, ::1] arg, real[:, :, :, ::1] dx):
    cdef Py_ssize_t n_img = g.shape[0], chans = g.shape[1]
    cdef Py_ssize_t ho = g.shape[2], wo = g.shape[3]
    cdef Py_ssize_t n, c, i, j
    cdef cnp.int8_t k
    with nogil:
        for n in range(n_img):
            for c in range(chans):
                for i in range(ho):
                    for j in range(wo):
                        k = arg[n, c, i, j]
                        dx[n, c, 2 * i + (k >> 1), 2 * j + (k & 1)] = g[n, c, i, j]


def maxpool2_backward(g, arg):
    n, c, ho, wo = g.shape
    g = np.ascontiguousarray(g)
    dx = np.zeros((n, c, 2 * ho, 2 * wo), dtype=g.dtype)
    _pool_bwd(g, arg, dx)
    return dx


cdef Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t a) noexcept nogil:
    cdef Py_ssize_t root = a, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


cdef void _union(Py_ssize_t[::1] parent, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label8(mask):
    """8-connected labeling; labels numbered by first pixel in row-major scan."""
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    out = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] lab = out
    parent_arr = np.arange(h * w, dtype=np.intp)
    cdef Py_ssize_t[::1] parent = parent_arr
    cdef Py_ssize_t y, x, p, r
    cdef int nxt = 0
    with nogil:
        for y in range(h):
            for x in range(w):
                if not m[y, x]:
                    continue
                p = y * w + x
                if x > 0 and m[y, x - 1]:
                    _union(parent, p, p - 1)
                if y > 0:
                    if x > 0 and m[y - 1, x - 1]:
                        _union(parent, p, p - w - 1)
                    if m[y - 1, x]:
                        _union(parent, p, p - w)
                    if x + 1 < w and m[y - 1, x + 1]:
                        _union(parent, p, p - w + 1)
        # roots are the minimal flat index of each set, so they are met first in scan order
        for y in range(h):
            for x in range(w):
                if not m[y, x]:
                    continue
                p = y * w + x
                r = _find(parent, p)
                if r == p:
                    nxt += 1
                    lab[y, x] = nxt
                else:
                    lab[y, x] = lab[r // w, r % w]
    return out, nxt
