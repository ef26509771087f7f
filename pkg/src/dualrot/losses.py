"""Segmentation losses on :class:`~dualrot.gradcore.Tensor` predictions.

Targets, weights and validity masks are plain arrays (never differentiated).
Averages run over valid pixels only; for batched inputs the valid pixels of
the whole batch are pooled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .gradcore import EPS, Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_pc: float = 8.0
    lambda_ic: float = 0.3

    def __post_init__(self):
        for name in ("lambda_pc", "lambda_ic"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def _coef(shape, weight, valid, what):
    """Per-pixel factor folding weight, validity and the 1/count average."""
    v = np.ones(shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if v.shape != shape:
        raise gc.ShapeError(f"{what}: valid mask {v.shape} vs prediction {shape}")
    count = int(v.sum())
    if count == 0:
        raise ValueError(f"{what}: no valid pixels")
    w = v.astype(np.float64)
    if weight is not None:
        wt = np.asarray(weight, dtype=np.float64)
        if wt.shape != shape:
            raise gc.ShapeError(f"{what}: weight {wt.shape} vs prediction {shape}")
        w = w * wt
    return w / count


def _target(target, shape, what):
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != shape:
        raise gc.ShapeError(f"{what}: target {t.shape} vs prediction {shape}")
    return t


def bce(pred: Tensor, target, weight=None, valid=None) -> Tensor:
    """-mean_valid( w * [t log p + (1-t) log(1-p)] ), p clamped to [eps, 1-eps]."""
    pred = gc.as_tensor(pred)
    t = _target(target, pred.shape, "bce")
    coef = _coef(pred.shape, weight, valid, "bce")
    p = gc.clamp(pred, EPS, 1.0 - EPS)
    ll = t * gc.log(p) + (1.0 - t) * gc.log(1.0 - p)
    return -gc.sum(ll * coef)


def soft_iou(pred: Tensor, target, instance_weight=1.0, valid=None, eps: float = EPS) -> Tensor:
    """Per-pixel soft IoU loss ``1 - (p t + eps) / (p + t - p t + eps)``.

    ``instance_weight`` is a scalar or, for batched ``[N,H,W]`` input, one
    weight per sample.
    """
    pred = gc.as_tensor(pred)
    t = _target(target, pred.shape, "soft_iou")
    iw = np.asarray(instance_weight, dtype=np.float64)
    if np.any(iw < 0):
        raise ValueError("instance weight must be >= 0")
    if iw.ndim == 1:
        if pred.ndim != 3 or iw.shape[0] != pred.shape[0]:
            raise gc.ShapeError(f"soft_iou: {iw.shape[0]} instance weights for prediction {pred.shape}")
        wmap = np.broadcast_to(iw[:, None, None], pred.shape)
    else:
        wmap = np.full(pred.shape, float(iw))
    coef = _coef(pred.shape, wmap, valid, "soft_iou")
    inter = pred * t + eps
    union = pred * (1.0 - t) + (t + eps)
    return gc.sum((1.0 - inter / union) * coef)


def total_loss(l_s, l_pc, l_ic, w: LossWeights = LossWeights()):
    """l_s + lambda_pc * l_pc + lambda_ic * l_ic (Tensors or floats)."""
    return l_s + w.lambda_pc * l_pc + w.lambda_ic * l_ic
