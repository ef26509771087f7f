"""Dual-rotation consistency weights.

Two teacher predictions of the same image, each made under a different
rotation and rotated back to the horizontal frame (``h1``, ``h2``), are
compared to weight pseudo-label supervision:

* per pixel, by how much the views disagree and how far their mean sits
  from the undecided value ``mu``;
* per image, by the structural similarity of the two views.

Everything here is plain numpy: the weights are constants for the student's
loss, so no gradient flows through them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels


class PixelWeightVariant(str, enum.Enum):
    PSEUDO = "pseudo"  # w = y_h
    DIST = "dist"  # w = (y_h - mu)^2
    ONE_MINUS_DELTA = "one_minus_delta"  # w = 1 - delta^alpha
    DELTA_TIMES_PSEUDO = "delta_times_pseudo"  # w = (1 - delta^alpha) * y_h
    FULL = "full"  # w = (1 - delta^alpha) * (y_h - mu)^2
    UNIFORM = "uniform"  # w = 1, plain mean-teacher baseline


@dataclass(frozen=True)
class PixelWeightConfig:
    alpha: float = 0.25
    mu: float = 0.5
    variant: PixelWeightVariant = PixelWeightVariant.FULL

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must be in [0,1], got {self.mu}")
        object.__setattr__(self, "variant", PixelWeightVariant(self.variant))


@dataclass(frozen=True)
class SSIMConfig:
    window: int = 11
    sigma: float = 1.5
    c1: float = 0.01**2
    c2: float = 0.03**2

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"SSIM window must be odd and >= 3, got {self.window}")
        if self.c1 <= 0 or self.c2 <= 0 or self.sigma <= 0:
            raise ValueError("SSIM sigma, c1 and c2 must be positive")


@dataclass(frozen=True)
class InstanceWeightConfig:
    beta: float = 4.0
    ssim: SSIMConfig = SSIMConfig()
    # False gives every pseudo-label weight 1 (baseline without instance weighting)
    enabled: bool = True

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")


class InsufficientValidArea(ValueError):
    pass


def _pair(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def pixel_inconsistency(h1, h2, valid=None) -> np.ndarray:
    """|h1 - h2| on valid pixels, 0 elsewhere."""
    a, b = _pair(h1, h2, "pixel_inconsistency")
    delta = np.abs(a - b)
    if valid is not None:
        v = np.asarray(valid, dtype=bool)
        if v.shape != delta.shape:
            raise ValueError(f"pixel_inconsistency: valid mask {v.shape} vs maps {delta.shape}")
        delta = np.where(v, delta, 0.0)
    return delta


def mean_horizontal(h1, h2) -> np.ndarray:
    a, b = _pair(h1, h2, "mean_horizontal")
    return (a + b) / 2.0


def pixel_weight(delta, y_h, cfg: PixelWeightConfig = PixelWeightConfig()) -> np.ndarray:
    d, y = _pair(delta, y_h, "pixel_weight")
    v = cfg.variant
    if v is PixelWeightVariant.UNIFORM:
        return np.ones_like(y)
    if v is PixelWeightVariant.PSEUDO:
        return y.copy()
    dist = (y - cfg.mu) ** 2
    if v is PixelWeightVariant.DIST:
        return dist
    agree = 1.0 - np.power(d, cfg.alpha)
    if v is PixelWeightVariant.ONE_MINUS_DELTA:
        return agree
    if v is PixelWeightVariant.DELTA_TIMES_PSEUDO:
        return agree * y
    return agree * dist


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(t**2) / (2.0 * sigma**2))
    return g / g.sum()


def effective_window(cfg: SSIMConfig, shape) -> int:
    side = min(shape)
    largest_odd = side if side % 2 else side - 1
    return min(cfg.window, largest_odd)


def ssim_map(a, b, cfg: SSIMConfig = SSIMConfig()):
    """Local SSIM at every full window position (top-left aligned, 'valid' mode)."""
    x, y = _pair(a, b, "ssim")
    win = effective_window(cfg, x.shape)
    if win < 1:
        raise InsufficientValidArea("insufficient valid area")
    k = gaussian_window(win, cfg.sigma)
    filt = _kernels.sep_filter_valid
    mx, my = filt(x, k), filt(y, k)
    sxx = filt(x * x, k) - mx * mx
    syy = filt(y * y, k) - my * my
    sxy = filt(x * y, k) - mx * my
    num = (2.0 * mx * my + cfg.c1) * (2.0 * sxy + cfg.c2)
    den = (mx * mx + my * my + cfg.c1) * (sxx + syy + cfg.c2)
    return num / den, win


def window_validity(valid, win: int) -> np.ndarray:
    """True for window positions whose every pixel is valid."""
    bad = ~np.asarray(valid, dtype=bool)
    ii = np.pad(np.cumsum(np.cumsum(bad, axis=0), axis=1), ((1, 0), (1, 0)))
    counts = ii[win:, win:] - ii[:-win, win:] - ii[win:, :-win] + ii[:-win, :-win]
    return counts == 0


def ssim(a, b, valid=None, cfg: SSIMConfig = SSIMConfig()) -> float:
    """Mean local SSIM over windows lying entirely in the valid region."""
    smap, win = ssim_map(a, b, cfg)
    if valid is None:
        ok = np.ones_like(smap, dtype=bool)
    else:
        v = np.asarray(valid, dtype=bool)
        if v.shape != np.shape(a):
            raise ValueError(f"ssim: valid mask {v.shape} vs maps {np.shape(a)}")
        ok = window_validity(v, win)
    if not ok.any():
        raise InsufficientValidArea("insufficient valid area")
    return float(smap[ok].mean())


def instance_weight(h1, h2, valid=None, cfg: InstanceWeightConfig = InstanceWeightConfig()) -> float:
    """clamp(SSIM(h1, h2), 0, 1) ** beta; 1 when instance weighting is disabled."""
    s = ssim(h1, h2, valid, cfg.ssim)
    if not cfg.enabled:
        return 1.0
    return float(np.clip(s, 0.0, 1.0) ** cfg.beta)
