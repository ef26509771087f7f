"""Synthetic camouflage scenes and on-disk image/mask datasets.

A scene is a smooth random texture; the object is a metaball blob filled
with an independent draw of the same texture, shifted in luminance by a
per-image contrast. Small contrasts give well camouflaged objects.

On disk a dataset is::

    <root>/images/<id>.ppm
    <root>/masks/<id>.pgm
    <root>/manifest.csv          # id,labeled
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _kernels, netpbm


@dataclass
class Sample:
    image: np.ndarray  # [3,H,W] in [0,1]
    mask: np.ndarray | None  # [H,W] in {0,1}; present iff labeled
    id: str
    # ground truth kept aside for analysis of unlabeled samples; training never reads it
    reference: np.ndarray | None = None

    @property
    def labeled(self) -> bool:
        return self.mask is not None

    @property
    def gt(self) -> np.ndarray | None:
        return self.mask if self.mask is not None else self.reference


@dataclass(frozen=True)
class CamoGenConfig:
    size: int = 64
    texture_scale: float = 1.5
    contrast_delta: float = 0.2
    blob_complexity: int = 3
    seed: int = 0
    # per-image contrast is contrast_delta + U(-spread, spread), clipped to [0, 0.5]
    contrast_spread: float = 0.15
    texture_amplitude: float = 0.12

    def __post_init__(self):
        if self.size < 16:
            raise ValueError(f"size must be >= 16, got {self.size}")
        if not 0.0 <= self.contrast_delta <= 0.5:
            raise ValueError(f"contrast_delta must be in [0, 0.5], got {self.contrast_delta}")
        if not 1 <= self.blob_complexity <= 5:
            raise ValueError(f"blob_complexity must be in 1..5, got {self.blob_complexity}")
        if self.contrast_spread < 0 or self.texture_amplitude < 0 or self.texture_scale <= 0:
            raise ValueError("contrast_spread, texture_amplitude must be >= 0 and texture_scale > 0")


_MIN_COVER, _MAX_COVER = 0.05, 0.40


def _texture(rng, size, scale):
    field = ndimage.gaussian_filter(rng.standard_normal((3, size, size)), sigma=(0, scale, scale), mode="wrap")
    field -= field.mean(axis=(1, 2), keepdims=True)
    field /= field.std(axis=(1, 2), keepdims=True)
    return field


def _blob(rng, size, complexity):
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    while True:
        count = int(rng.integers(1, complexity + 1))
        target = rng.uniform(0.08, 0.30)
        centre = rng.uniform(0.3, 0.7, size=2) * size
        field = np.zeros((size, size))
        base_r = np.sqrt(target * size * size / np.pi) / np.sqrt(count)
        for _ in range(count):
            c = centre + rng.normal(0.0, 0.12 * size, size=2)
            r = base_r * rng.uniform(0.7, 1.3)
            field += r * r / ((yy - c[0]) ** 2 + (xx - c[1]) ** 2 + 1e-6)
        blob = field >= 1.0
        labels, n = ndimage.label(blob)  # 4-connectivity
        if n == 0:
            continue
        largest = 1 + int(np.argmax(ndimage.sum_labels(blob, labels, index=range(1, n + 1))))
        blob = ndimage.binary_fill_holes(labels == largest)
        cover = blob.mean()
        if _MIN_COVER <= cover <= _MAX_COVER:
            return blob


def generate_one(cfg: CamoGenConfig, index: int) -> Sample:
    rng = np.random.default_rng([cfg.seed, index])
    size = cfg.size
    mask = _blob(rng, size, cfg.blob_complexity)
    base = rng.uniform(0.25, 0.55, size=3)[:, None, None]
    delta = float(np.clip(cfg.contrast_delta + rng.uniform(-cfg.contrast_spread, cfg.contrast_spread), 0.0, 0.5))
    bg = _texture(rng, size, cfg.texture_scale)
    fg = _texture(rng, size, cfg.texture_scale)
    # equal texture means inside and outside, so the object differs only by delta
    fg += (bg[:, ~mask].mean(axis=1) - fg[:, mask].mean(axis=1))[:, None, None]
    tex = np.where(mask[None], fg, bg)
    image = np.clip(base + cfg.texture_amplitude * tex + delta * mask[None], 0.0, 1.0)
    return Sample(image=image, mask=mask.astype(np.float64), id=f"s{index:05d}")


def generate(cfg: CamoGenConfig, count: int, start: int = 0) -> list[Sample]:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return [generate_one(cfg, i) for i in range(start, start + count)]


def split(samples, labeled_fraction: float, seed: int):
    """Deterministic shuffle, then the first ``round(fraction * n)`` are labeled."""
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError(f"labeled_fraction must be in (0, 1], got {labeled_fraction}")
    n = len(samples)
    n_lab = int(round(labeled_fraction * n))
    if n_lab == 0:
        raise ValueError(f"labeled_fraction {labeled_fraction} of {n} samples yields no labeled data")
    order = np.random.default_rng(seed).permutation(n)
    labeled = [samples[i] for i in order[:n_lab]]
    unlabeled = [replace(samples[i], mask=None, reference=samples[i].gt) for i in order[n_lab:]]
    return labeled, unlabeled


# --------------------------------------------------------------------------
# file IO
# --------------------------------------------------------------------------


def resize_bilinear(chw: np.ndarray, size: int) -> np.ndarray:
    c, h, w = chw.shape
    if h == size and w == size:
        return chw.copy()
    if h < 2 or w < 2:
        return np.repeat(np.repeat(chw[:, :1, :1], size, axis=1), size, axis=2)
    si = np.clip((np.arange(size) + 0.5) * (h / size) - 0.5, 0.0, h - 1.0)
    sj = np.clip((np.arange(size) + 0.5) * (w / size) - 0.5, 0.0, w - 1.0)
    gi, gj = np.meshgrid(si, sj, indexing="ij")
    return _kernels.bilinear(chw, gi, gj)


def resize_nearest(hw: np.ndarray, size: int) -> np.ndarray:
    h, w = hw.shape
    if h == size and w == size:
        return hw.copy()
    ii = np.minimum((np.arange(size) * h) // size, h - 1)
    jj = np.minimum((np.arange(size) * w) // size, w - 1)
    return hw[np.ix_(ii, jj)]


def load_pair(image_path, mask_path=None, size: int | None = None, sample_id: str | None = None) -> Sample:
    """Read a P6 image (scaled to [0,1]) and optional P5 mask (binarized at 128)."""
    raw = netpbm.read(image_path)
    if raw.ndim != 3:
        raise netpbm.NetpbmError(f"{image_path}: expected a P6 colour image", 0)
    image = raw.transpose(2, 0, 1).astype(np.float64) / 255.0
    mask = None
    if mask_path is not None:
        m = netpbm.read(mask_path)
        if m.ndim != 2:
            raise netpbm.NetpbmError(f"{mask_path}: expected a P5 greyscale mask", 0)
        mask = (m >= 128).astype(np.float64)
        if size is None and mask.shape != image.shape[1:]:
            raise ValueError(f"image {image.shape[1:]} and mask {mask.shape} sizes differ")
    if size is not None:
        image = resize_bilinear(image, size)
        mask = None if mask is None else resize_nearest(mask, size)
    return Sample(image=image, mask=mask, id=sample_id or Path(image_path).stem)


def to_uint8_image(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def write_pair(sample: Sample, image_path, mask_path=None) -> None:
    netpbm.write(image_path, to_uint8_image(sample.image))
    gt = sample.gt
    if mask_path is not None and gt is not None:
        netpbm.write(mask_path, (np.asarray(gt) > 0.5).astype(np.uint8) * 255)


def write_dataset(root, samples, labeled_ids) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    labeled_ids = set(labeled_ids)
    with open(root / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "labeled"])
        for s in samples:
            write_pair(s, root / "images" / f"{s.id}.ppm", root / "masks" / f"{s.id}.pgm")
            writer.writerow([s.id, int(s.id in labeled_ids)])


def read_manifest(root) -> list[tuple[str, bool]]:
    with open(Path(root) / "manifest.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(r["id"], r["labeled"].strip() == "1") for r in rows]


def read_dataset(root, size: int | None = None):
    """Load a dataset directory into (labeled, unlabeled) sample lists.

    Unlabeled samples carry their mask (if the file exists) only as
    ``reference``.
    """
    root = Path(root)
    labeled, unlabeled = [], []
    for sid, is_lab in read_manifest(root):
        mpath = root / "masks" / f"{sid}.pgm"
        s = load_pair(root / "images" / f"{sid}.ppm", mpath if mpath.exists() else None, size, sid)
        if is_lab:
            if s.mask is None:
                raise ValueError(f"labeled sample {sid} has no mask file")
            labeled.append(s)
        else:
            unlabeled.append(replace(s, mask=None, reference=s.mask))
    return labeled, unlabeled
