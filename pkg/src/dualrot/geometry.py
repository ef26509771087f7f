"""Rotation of images and probability maps about the image centre.

Angles are in degrees, counter-clockwise positive as seen on screen (row 0 at
the top). The canvas keeps its size; destination pixels whose inverse-mapped
source point falls outside the source footprint are zero and flagged invalid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

# tolerance for deciding that an inverse-mapped coordinate sits on the border
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class RotatedView:
    data: np.ndarray
    angle_deg: float
    valid: np.ndarray

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean())


def _trig(angle_deg: float) -> tuple[float, float]:
    """cos/sin with exact values at multiples of 90 degrees."""
    q = angle_deg / 90.0
    if q == round(q):
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[int(round(q)) % 4]
    t = math.radians(angle_deg)
    return math.cos(t), math.sin(t)


def source_coords(shape: tuple[int, int], angle_deg: float):
    """Inverse-map every destination pixel to (row, col) source coordinates."""
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    c, s = _trig(angle_deg)
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    x = jj - cx
    yu = cy - ii  # y axis pointing up
    xs = c * x + s * yu
    ys = -s * x + c * yu
    return cy - ys, xs + cx


def _footprint(si, sj, h, w):
    return (si >= -_EDGE_TOL) & (si <= h - 1 + _EDGE_TOL) & (sj >= -_EDGE_TOL) & (sj <= w - 1 + _EDGE_TOL)


def _as_chw(data):
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None], True
    if arr.ndim == 3:
        return arr, False
    raise ValueError(f"rotate expects [H,W] or [C,H,W], got shape {arr.shape}")


def rotate(data, angle_deg: float, valid=None) -> RotatedView:
    """Rotate ``data`` by ``angle_deg`` with bilinear interpolation.

    If ``valid`` is given (a mask in the input frame), the output mask also
    requires all four bilinear source neighbours to be valid.
    """
    chw, squeeze = _as_chw(data)
    h, w = chw.shape[1:]
    if h < 2 or w < 2:
        raise ValueError(f"rotate needs H,W >= 2, got {h}x{w}")
    angle = float(angle_deg)
    if angle == 0.0 and valid is None:
        out = chw.copy()
        return RotatedView(out[0] if squeeze else out, 0.0, np.ones((h, w), dtype=bool))

    si, sj = source_coords((h, w), angle)
    ok = _footprint(si, sj, h, w)
    si = np.clip(si, 0.0, h - 1.0)
    sj = np.clip(sj, 0.0, w - 1.0)
    if valid is not None:
        vmask = np.asarray(valid, dtype=bool)
        if vmask.shape != (h, w):
            raise ValueError(f"valid mask shape {vmask.shape} does not match map {h}x{w}")
        ok &= _kernels.all4(vmask, si, sj)
    out = _kernels.bilinear(chw, si, sj)
    out[:, ~ok] = 0.0
    return RotatedView(out[0] if squeeze else out, angle, ok)


def rotate_mask(mask, angle_deg: float) -> np.ndarray:
    """Rotate a validity mask: a destination pixel stays valid only if it lies
    in the footprint and all four source neighbours are valid."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    if float(angle_deg) == 0.0:
        return m.copy()
    si, sj = source_coords((h, w), angle_deg)
    ok = _footprint(si, sj, h, w)
    si = np.clip(si, 0.0, h - 1.0)
    sj = np.clip(sj, 0.0, w - 1.0)
    return ok & _kernels.all4(m, si, sj)


def unrotate(view: RotatedView) -> RotatedView:
    """Rotate a view back to the horizontal frame; validity is the carried
    mask rotated back, intersected with the new footprint."""
    back = rotate(view.data, -view.angle_deg, valid=view.valid)
    return RotatedView(back.data, 0.0, back.valid)


def joint_valid(a, b) -> np.ndarray:
    """Pixelwise AND of two validity masks (views or raw boolean arrays)."""
    ma = a.valid if isinstance(a, RotatedView) else np.asarray(a, dtype=bool)
    mb = b.valid if isinstance(b, RotatedView) else np.asarray(b, dtype=bool)
    if ma.shape != mb.shape:
        raise ValueError(f"joint_valid: shape mismatch {ma.shape} vs {mb.shape}")
    return ma & mb
