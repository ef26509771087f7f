"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics. The active
implementation is chosen once at import time:

* ``DUALROT_NO_NUMBA=1`` forces the numpy path.
* otherwise numba is used if it imports cleanly.

Both paths are always importable as ``<name>_numpy`` / ``<name>_numba`` so
tests and ``benchmarks/bench_kernels.py`` can compare them directly.
"""

from __future__ import annotations

import math
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    if os.environ.get("DUALROT_NO_NUMBA", "").strip() not in ("", "0"):
        raise ImportError("numba disabled by DUALROT_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in CI
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# im2col / col2im
# --------------------------------------------------------------------------


def im2col_numpy(xp, k, stride, ho, wo):
    """Unfold padded input ``[N,C,Hp,Wp]`` into ``[N*ho*wo, C*k*k]`` rows."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)


def col2im_numpy(cols, shape, k, stride, ho, wo):
    """Adjoint of :func:`im2col_numpy`: scatter-add rows back into ``shape``."""
    n, c, hp, wp = shape
    out = np.zeros(shape, dtype=np.float64)
    g = cols.reshape(n, ho, wo, c, k, k)
    for di in range(k):
        for dj in range(k):
            out[:, :, di : di + (ho - 1) * stride + 1 : stride, dj : dj + (wo - 1) * stride + 1 : stride] += (
                g[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
            )
    return out


@njit(cache=True)
def _im2col_nb(xp, k, stride, ho, wo):
    n, c = xp.shape[0], xp.shape[1]
    out = np.empty((n * ho * wo, c * k * k), dtype=np.float64)
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                row = (b * ho + i) * wo + j
                col = 0
                for ch in range(c):
                    for di in range(k):
                        for dj in range(k):
                            out[row, col] = xp[b, ch, i * stride + di, j * stride + dj]
                            col += 1
    return out


@njit(cache=True)
def _col2im_nb(cols, n, c, hp, wp, k, stride, ho, wo):
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                row = (b * ho + i) * wo + j
                col = 0
                for ch in range(c):
                    for di in range(k):
                        for dj in range(k):
                            out[b, ch, i * stride + di, j * stride + dj] += cols[row, col]
                            col += 1
    return out


def im2col_numba(xp, k, stride, ho, wo):
    return _im2col_nb(np.ascontiguousarray(xp, dtype=np.float64), k, stride, ho, wo)


def col2im_numba(cols, shape, k, stride, ho, wo):
    n, c, hp, wp = shape
    return _col2im_nb(np.ascontiguousarray(cols, dtype=np.float64), n, c, hp, wp, k, stride, ho, wo)


# --------------------------------------------------------------------------
# bilinear sampling at arbitrary (pre-clipped) source coordinates
# --------------------------------------------------------------------------


def _corners(si, sj, h, w):
    i0 = np.minimum(np.floor(si).astype(np.int64), h - 2)
    j0 = np.minimum(np.floor(sj).astype(np.int64), w - 2)
    return i0, j0, si - i0, sj - j0


def bilinear_numpy(img, si, sj):
    """Sample ``img[C,H,W]`` at coordinates already clipped to ``[0,H-1]x[0,W-1]``.

    Uses the lerp form ``a + f*(b-a)`` so constant regions stay exactly constant.
    """
    h, w = img.shape[1:]
    i0, j0, fy, fx = _corners(si, sj, h, w)
    a = img[:, i0, j0]
    b = img[:, i0, j0 + 1]
    c = img[:, i0 + 1, j0]
    d = img[:, i0 + 1, j0 + 1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    return top + fy * (bot - top)


def all4_numpy(mask, si, sj):
    """True where all four bilinear neighbours of the source point are set."""
    h, w = mask.shape
    i0, j0, _, _ = _corners(si, sj, h, w)
    return mask[i0, j0] & mask[i0, j0 + 1] & mask[i0 + 1, j0] & mask[i0 + 1, j0 + 1]


@njit(cache=True)
def _bilinear_nb(img, si, sj):
    c, h, w = img.shape
    ho, wo = si.shape
    out = np.empty((c, ho, wo), dtype=np.float64)
    for i in range(ho):
        for j in range(wo):
            y = si[i, j]
            x = sj[i, j]
            i0 = min(int(math.floor(y)), h - 2)
            j0 = min(int(math.floor(x)), w - 2)
            fy = y - i0
            fx = x - j0
            for ch in range(c):
                a = img[ch, i0, j0]
                b = img[ch, i0 + 1, j0]
                top = a + fx * (img[ch, i0, j0 + 1] - a)
                bot = b + fx * (img[ch, i0 + 1, j0 + 1] - b)
                out[ch, i, j] = top + fy * (bot - top)
    return out


@njit(cache=True)
def _all4_nb(mask, si, sj):
    h, w = mask.shape
    ho, wo = si.shape
    out = np.empty((ho, wo), dtype=np.bool_)
    for i in range(ho):
        for j in range(wo):
            i0 = min(int(math.floor(si[i, j])), h - 2)
            j0 = min(int(math.floor(sj[i, j])), w - 2)
            out[i, j] = mask[i0, j0] and mask[i0, j0 + 1] and mask[i0 + 1, j0] and mask[i0 + 1, j0 + 1]
    return out


def bilinear_numba(img, si, sj):
    return _bilinear_nb(np.ascontiguousarray(img, dtype=np.float64), si, sj)


def all4_numba(mask, si, sj):
    return _all4_nb(np.ascontiguousarray(mask, dtype=np.bool_), si, sj)


# --------------------------------------------------------------------------
# separable 'valid'-mode correlation (SSIM local statistics, blurs)
# --------------------------------------------------------------------------


def sep_filter_valid_numpy(img, k1d):
    """Correlate 2-D ``img`` with ``outer(k1d, k1d)``, keeping only full windows."""
    rows = sliding_window_view(img, k1d.size, axis=1) @ k1d
    return sliding_window_view(rows, k1d.size, axis=0) @ k1d


@njit(cache=True)
def _sep_filter_valid_nb(img, k1d):
    h, w = img.shape
    m = k1d.size
    wo = w - m + 1
    ho = h - m + 1
    rows = np.empty((h, wo), dtype=np.float64)
    for i in range(h):
        for j in range(wo):
            acc = 0.0
            for t in range(m):
                acc += img[i, j + t] * k1d[t]
            rows[i, j] = acc
    out = np.empty((ho, wo), dtype=np.float64)
    for i in range(ho):
        for j in range(wo):
            acc = 0.0
            for t in range(m):
                acc += rows[i + t, j] * k1d[t]
            out[i, j] = acc
    return out


def sep_filter_valid_numba(img, k1d):
    return _sep_filter_valid_nb(
        np.ascontiguousarray(img, dtype=np.float64), np.ascontiguousarray(k1d, dtype=np.float64)
    )


# im2col stays on numpy under both backends: it is one strided copy, which
# numpy does faster than the compiled loop (see benchmarks/bench_kernels.py)
im2col = im2col_numpy
if HAVE_NUMBA:
    col2im = col2im_numba
    bilinear, all4 = bilinear_numba, all4_numba
    sep_filter_valid = sep_filter_valid_numba
else:
    col2im = col2im_numpy
    bilinear, all4 = bilinear_numpy, all4_numpy
    sep_filter_valid = sep_filter_valid_numpy
