"""Hot loops shared by the convolution engine and the image pipeline.

Every kernel has a pure-numpy implementation (``*_np``) and, when numba is
importable, a jitted twin (``*_nb``). The public names dispatch on
:data:`degree_sr._backend.BACKEND`. Results of the two paths agree exactly:
they perform the same multiply-adds in the same order, or pure data movement.
"""
import numpy as np

from . import _backend

# ---------------------------------------------------------------------------
# im2col: (n, c, h, w) -> (c*k*k, n*h*w) patch matrix for a same-size,
# stride-1 convolution with zero padding (k - 1) // 2.
# Row index is (c, u, v) in C order so it matches weights.reshape(c_out, -1);
# column index is (n, y, x).
# ---------------------------------------------------------------------------


def im2col_np(x, k):
    n, c, h, w = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    # win: (n, c, h, w, k, k) -> (c, k, k, n, h, w)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * h * w)


# ---------------------------------------------------------------------------
# 1-D resampling along the first axis: out[i] = sum_j weights[i, j] * src[idx[i, j]]
# src is 2-D (length, width); the second axis is carried along untouched.
# ---------------------------------------------------------------------------


def resample_rows_np(src, weights, indices):
    out = np.zeros((weights.shape[0], src.shape[1]), dtype=np.float64)
    for j in range(weights.shape[1]):
        out += weights[:, j : j + 1] * src[indices[:, j]]
    return out


if _backend.NUMBA_AVAILABLE:
    from numba import njit

    # Outputs are allocated by numpy and filled in place: numpy requests huge
    # pages for big buffers, which makes first-touch far cheaper than numba's
    # own allocator on large patch matrices.

    @njit(cache=True, boundscheck=False)
    def _im2col_fill(x, k, out):
        n, c, h, w = x.shape
        p = (k - 1) // 2
        for ci in range(c):
            for u in range(k):
                for v in range(k):
                    r = (ci * k + u) * k + v
                    # Columns [x0, x1) read input column xx + v - p; the rest is padding.
                    x0 = max(0, p - v)
                    x1 = min(w, w + p - v)
                    shift = v - p
                    col = 0
                    for b in range(n):
                        for y in range(h):
                            sy = y + u - p
                            if sy < 0 or sy >= h:
                                for xx in range(w):
                                    out[r, col + xx] = 0
                            else:
                                for xx in range(x0):
                                    out[r, col + xx] = 0
                                for xx in range(x0, x1):
                                    out[r, col + xx] = x[b, ci, sy, xx + shift]
                                for xx in range(x1, w):
                                    out[r, col + xx] = 0
                            col += w

    def im2col_nb(x, k):
        n, c, h, w = x.shape
        out = np.empty((c * k * k, n * h * w), dtype=x.dtype)
        _im2col_fill(np.ascontiguousarray(x), k, out)
        return out

    @njit(cache=True, boundscheck=False)
    def _resample_fill(src, weights, indices, out):
        m, taps = weights.shape
        width = src.shape[1]
        for j in range(taps):
            for i in range(m):
                wgt = weights[i, j]
                s = indices[i, j]
                for col in range(width):
                    out[i, col] += wgt * src[s, col]

    def resample_rows_nb(src, weights, indices):
        out = np.zeros((weights.shape[0], src.shape[1]), dtype=np.float64)
        _resample_fill(src, weights, indices, out)
        return out

else:  # pragma: no cover - exercised only without numba
    im2col_nb = None
    resample_rows_nb = None


def im2col(x, k):
    """Patch matrix of ``x`` for a k x k same-size convolution."""
    if _backend.BACKEND == "numba":
        return im2col_nb(x, k)
    return im2col_np(x, k)


def resample_rows(src, weights, indices):
    """Apply a sparse 1-D resampling matrix along axis 0 of a 2-D array."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    if _backend.BACKEND == "numba":
        return resample_rows_nb(src, weights, indices)
    return resample_rows_np(src, weights, indices)
