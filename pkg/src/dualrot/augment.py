"""Weak (geometric) and strong (photometric) augmentation.

Strong ops never move pixels, so a weight map computed for an image stays
aligned with any strongly augmented copy of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from . import _kernels

STRONG_OPS = (
    "identity",
    "autocontrast",
    "equalize",
    "gaussian_blur",
    "contrast",
    "sharpness",
    "color",
    "brightness",
    "hue",
    "posterize",
    "solarize",
)


@dataclass
class AugmentSpec:
    flip_prob: float = 0.5
    scale_range: tuple[float, float] = (0.8, 1.2)
    ops: tuple[str, ...] = STRONG_OPS
    max_ops: int = 3

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must be in [0,1], got {self.flip_prob}")
        if self.max_ops < 0:
            raise ValueError("max_ops must be >= 0")
        unknown = set(self.ops) - set(STRONG_OPS)
        if unknown:
            raise ValueError(f"unknown strong ops: {sorted(unknown)}")
        self.scale_range = (float(lo), float(hi))
        self.ops = tuple(self.ops)


# --------------------------------------------------------------------------
# weak
# --------------------------------------------------------------------------


def hflip(arr: np.ndarray) -> np.ndarray:
    return arr[..., ::-1].copy()


def scale_about_center(image: np.ndarray, factor: float, mask: np.ndarray | None = None):
    """Zoom by ``factor`` about the centre, keeping the canvas size.

    Equivalent to resizing then center-cropping (factor > 1) or padding with
    replicated edges (factor < 1). Images are resampled bilinearly, masks by
    nearest neighbour.
    """
    h, w = image.shape[-2:]
    if factor == 1.0:
        return image.copy(), None if mask is None else mask.copy()
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    si = np.clip((ii - cy) / factor + cy, 0.0, h - 1.0)
    sj = np.clip((jj - cx) / factor + cx, 0.0, w - 1.0)
    img = _kernels.bilinear(image.reshape(-1, h, w), si, sj).reshape(image.shape)
    out_mask = None
    if mask is not None:
        out_mask = mask[np.rint(si).astype(np.int64), np.rint(sj).astype(np.int64)]
    return img, out_mask


def weak_augment(image, mask=None, rng=None, spec: AugmentSpec | None = None, *, force_flip: bool | None = None):
    """Random horizontal flip and random scale; the mask follows the image."""
    spec = spec or AugmentSpec()
    rng = rng if rng is not None else np.random.default_rng()
    img = np.asarray(image, dtype=np.float64)
    m = None if mask is None else np.asarray(mask)
    flip = rng.random() < spec.flip_prob if force_flip is None else force_flip
    lo, hi = spec.scale_range
    factor = float(rng.uniform(lo, hi)) if hi > lo else lo
    if flip:
        img = hflip(img)
        m = None if m is None else hflip(m)
    img, m = scale_about_center(img, factor, m)
    return img, m


# --------------------------------------------------------------------------
# strong
# --------------------------------------------------------------------------


def _blur5(img: np.ndarray, sigma: float) -> np.ndarray:
    t = np.arange(5, dtype=np.float64) - 2.0
    k = np.exp(-(t**2) / (2.0 * sigma**2))
    k /= k.sum()
    out = np.empty_like(img)
    for ch in range(img.shape[0]):
        padded = np.pad(img[ch], 2, mode="reflect")
        out[ch] = _kernels.sep_filter_valid(padded, k)
    return out


def autocontrast(img):
    lo = img.min(axis=(1, 2), keepdims=True)
    hi = img.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    return np.where(span > 0, (img - lo) / np.where(span > 0, span, 1.0), img)


def equalize(img):
    """256-bin histogram equalization per channel."""
    out = np.empty_like(img)
    for ch in range(img.shape[0]):
        q = np.clip(np.rint(img[ch] * 255.0), 0, 255).astype(np.int64)
        cdf = np.cumsum(np.bincount(q.ravel(), minlength=256))
        n = q.size
        cmin = cdf[cdf > 0][0]
        if n == cmin:
            out[ch] = img[ch]
        else:
            out[ch] = (cdf[q] - cmin) / (n - cmin)
    return out


def gaussian_blur(img, sigma):
    return _blur5(img, sigma)


def contrast(img, factor):
    m = img.mean(axis=(1, 2), keepdims=True)
    return (img - m) * factor + m


def sharpness(img, amount):
    return img + amount * (img - _blur5(img, 1.0))


def brightness(img, factor):
    return img * factor


def posterize(img, bits):
    levels = 2**int(bits) - 1
    return np.rint(img * levels) / levels


def solarize(img, threshold):
    return np.where(img >= threshold, 1.0 - img, img)


def _hsv(img):
    return rgb_to_hsv(np.clip(img, 0.0, 1.0).transpose(1, 2, 0))


def _rgb(hsv):
    return hsv_to_rgb(hsv).transpose(2, 0, 1)


def color(img, factor):
    if img.shape[0] != 3:
        return img
    hsv = _hsv(img)
    hsv[..., 1] = np.clip(hsv[..., 1] * factor, 0.0, 1.0)
    return _rgb(hsv)


def hue(img, shift):
    if img.shape[0] != 3:
        return img
    hsv = _hsv(img)
    hsv[..., 0] = np.mod(hsv[..., 0] + shift, 1.0)
    return _rgb(hsv)


def _apply(name: str, img: np.ndarray, rng) -> np.ndarray:
    if name == "identity":
        return img
    if name == "autocontrast":
        return autocontrast(img)
    if name == "equalize":
        return equalize(img)
    if name == "gaussian_blur":
        return gaussian_blur(img, rng.uniform(0.1, 1.0))
    if name == "contrast":
        return contrast(img, rng.uniform(0.5, 1.5))
    if name == "sharpness":
        return sharpness(img, rng.uniform(0.0, 1.0))
    if name == "color":
        return color(img, rng.uniform(0.5, 1.5))
    if name == "brightness":
        return brightness(img, rng.uniform(0.5, 1.5))
    if name == "hue":
        return hue(img, rng.uniform(-0.1, 0.1))
    if name == "posterize":
        return posterize(img, rng.integers(2, 8))
    if name == "solarize":
        return solarize(img, rng.uniform(0.5, 1.0))
    raise ValueError(f"unknown strong op {name!r}")


def sample_strong_ops(rng, spec: AugmentSpec) -> list[str]:
    limit = min(spec.max_ops, len(spec.ops))
    k = int(rng.integers(0, limit + 1))
    idx = rng.choice(len(spec.ops), size=k, replace=False)
    return [spec.ops[i] for i in idx]


def strong_augment(image, rng=None, spec: AugmentSpec | None = None, ops: list[str] | None = None) -> np.ndarray:
    """Apply up to ``max_ops`` photometric ops in random order, then clamp to [0,1]."""
    spec = spec or AugmentSpec()
    rng = rng if rng is not None else np.random.default_rng()
    img = np.asarray(image, dtype=np.float64)
    chosen = sample_strong_ops(rng, spec) if ops is None else ops
    for name in chosen:
        img = _apply(name, img, rng)
    return np.clip(img, 0.0, 1.0)
