"""Evaluation metrics and pseudo-label noise analyses."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage import measure

from .consistency import SSIMConfig, pixel_inconsistency, ssim

BETA2 = 0.3
THRESHOLDS = np.arange(256) / 255.0


def _pair(pred, gt, what):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"{what}: shape mismatch {p.shape} vs {g.shape}")
    return p, g


def mae(pred, gt) -> float:
    p, g = _pair(pred, gt, "mae")
    return float(np.abs(p - g).mean())


def f_curve(pred, gt) -> np.ndarray:
    """F-measure (beta^2 = 0.3) for every threshold k/255, binarizing pred > t."""
    p, g = _pair(pred, gt, "f_measure")
    pos = g > 0.5
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("undefined recall: ground truth has no positive pixels")
    pv = np.sort(p.ravel())
    pv_pos = np.sort(p[pos])
    # counts of values strictly above each threshold
    predicted = pv.size - np.searchsorted(pv, THRESHOLDS, side="right")
    tp = pv_pos.size - np.searchsorted(pv_pos, THRESHOLDS, side="right")
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 0.0)
        recall = tp / n_pos
        den = BETA2 * precision + recall
        f = np.where(den > 0, (1 + BETA2) * precision * recall / np.where(den > 0, den, 1.0), 0.0)
    return f


def f_measure(pred, gt, mode: str = "mean") -> float:
    f = f_curve(pred, gt)
    if mode == "mean":
        return float(f.mean())
    if mode == "max":
        return float(f.max())
    raise ValueError(f"mode must be 'mean' or 'max', got {mode!r}")


def iou(pred, gt, threshold: float = 0.5) -> float:
    p, g = _pair(pred, gt, "iou")
    a = p > threshold
    b = g > 0.5
    union = int((a | b).sum())
    return 1.0 if union == 0 else float((a & b).sum() / union)


@dataclass
class MetricsReport:
    mae: float
    f_mean: float
    f_max: float
    iou: float
    rows: list[tuple[str, float, float, float]] = field(default_factory=list)

    HEADER = ("id", "mae", "f_mean", "ssim_to_gt")

    def to_csv_lines(self) -> list[str]:
        out = [",".join(self.HEADER)]
        for sid, m, f, s in self.rows:
            out.append(f"{sid},{m:.10g},{f:.10g},{s:.10g}")
        out.append(f"MEAN,{self.mae:.10g},{self.f_mean:.10g},")
        return out


def evaluate(preds, gts, ids=None, ssim_cfg: SSIMConfig = SSIMConfig()) -> MetricsReport:
    """Per-sample metrics averaged over the set. Samples with empty GT are
    skipped for F-measure."""
    ids = ids or [str(i) for i in range(len(preds))]
    rows, maes, fm, fx, ious = [], [], [], [], []
    for sid, p, g in zip(ids, preds, gts):
        m = mae(p, g)
        maes.append(m)
        ious.append(iou(p, g))
        if (np.asarray(g) > 0.5).any():
            curve = f_curve(p, g)
            fm.append(float(curve.mean()))
            fx.append(float(curve.max()))
            f_here = fm[-1]
        else:
            f_here = float("nan")
        rows.append((sid, m, f_here, ssim(p, g, cfg=ssim_cfg)))
    nanmean = lambda v: float(np.mean(v)) if v else float("nan")  # noqa: E731
    return MetricsReport(nanmean(maes), nanmean(fm), nanmean(fx), nanmean(ious), rows)


# --------------------------------------------------------------------------
# region-wise noise (inconsistency vs error by background/foreground/boundary)
# --------------------------------------------------------------------------


class Region(enum.IntEnum):
    BACKGROUND = 0
    FOREGROUND = 1
    BOUNDARY = 2


def default_band(height: int) -> int:
    """Band width scaled from 20 px at 352 px resolution."""
    return max(2, int(round(20 * height / 352)))


@dataclass
class RegionPartition:
    labels: np.ndarray
    band_px: int

    def counts(self) -> dict[Region, int]:
        return {r: int((self.labels == r).sum()) for r in Region}


def edge_distance(gt) -> np.ndarray:
    """Distance from each pixel centre to the object outline.

    The outline is the 0.5 level line of the mask after a 1 px Gaussian
    smoothing, which removes the pixel staircase; distances to a staircase
    run systematically short.
    """
    fg = (np.asarray(gt) > 0.5).astype(np.float64)
    h, w = fg.shape
    pad = 3
    smooth = ndimage.gaussian_filter(np.pad(fg, pad, mode="edge"), 1.0, mode="nearest")
    pts = []
    for c in measure.find_contours(smooth, 0.5):
        c = c - pad
        seg = np.diff(c, axis=0)
        steps = np.maximum(1, np.ceil(np.hypot(seg[:, 0], seg[:, 1]) / 0.05).astype(int))
        for a, d, n in zip(c[:-1], seg, steps):
            pts.append(a + np.outer(np.arange(n) / n, d))
        pts.append(c[-1:])
    if not pts:
        return np.full((h, w), np.inf)
    tree = cKDTree(np.concatenate(pts))
    grid = np.stack(np.mgrid[:h, :w], axis=-1).reshape(-1, 2).astype(np.float64)
    dist, _ = tree.query(grid)
    return dist.reshape(h, w)


def partition(gt, band_px: int) -> RegionPartition:
    """Boundary = pixels within ``band_px`` of the object outline, on either side."""
    if band_px < 1:
        raise ValueError(f"band_px must be >= 1, got {band_px}")
    fg = np.asarray(gt) > 0.5
    labels = np.where(fg, Region.FOREGROUND, Region.BACKGROUND).astype(np.int64)
    if fg.any() and (~fg).any():
        labels[edge_distance(fg) < band_px] = Region.BOUNDARY
    return RegionPartition(labels, band_px)


@dataclass
class RegionStats:
    """Pooled sums per region; MPI and MAE are ratios over pooled pixels."""

    pixels: dict = field(default_factory=lambda: {r: 0 for r in Region})
    delta_sum: dict = field(default_factory=lambda: {r: 0.0 for r in Region})
    err_sum: dict = field(default_factory=lambda: {r: 0.0 for r in Region})

    def add(self, other: "RegionStats") -> None:
        for r in Region:
            self.pixels[r] += other.pixels[r]
            self.delta_sum[r] += other.delta_sum[r]
            self.err_sum[r] += other.err_sum[r]

    def summary(self) -> dict[Region, tuple[float, float] | None]:
        """(MPI, MAE) per region; None for regions with no pixels."""
        out = {}
        for r in Region:
            n = self.pixels[r]
            out[r] = None if n == 0 else (self.delta_sum[r] / n, self.err_sum[r] / n)
        return out

    CSV_HEADER = "region,pixels,mpi,mae"

    def to_csv_lines(self) -> list[str]:
        lines = [
            "# mpi/mae pool all valid pixels of each region across the evaluation set",
            self.CSV_HEADER,
        ]
        for r, val in self.summary().items():
            if val is None:
                lines.append(f"{r.name.lower()},0,,")
            else:
                lines.append(f"{r.name.lower()},{self.pixels[r]},{val[0]:.10g},{val[1]:.10g}")
        return lines


def region_noise_report(pseudo, gt, h1, h2, valid, band_px: int) -> RegionStats:
    p, g = _pair(pseudo, gt, "region_noise_report")
    part = partition(g, band_px)
    v = np.asarray(valid, dtype=bool)
    delta = pixel_inconsistency(h1, h2, v)
    err = np.abs(p - g)
    stats = RegionStats()
    for r in Region:
        sel = (part.labels == r) & v
        stats.pixels[r] = int(sel.sum())
        stats.delta_sum[r] = float(delta[sel].sum())
        stats.err_sum[r] = float(err[sel].sum())
    return stats


# --------------------------------------------------------------------------
# instance-wise consistency vs pseudo-label quality
# --------------------------------------------------------------------------


def pearson(x, y) -> float | None:
    """Pearson correlation, or None when either variable has zero variance."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("pearson needs two equal-length samples of size >= 2")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if sa == 0.0 or sb == 0.0:
        return None
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


@dataclass
class InstanceReport:
    rows: list[tuple[str, float, float]]
    r: float | None

    def to_csv_lines(self) -> list[str]:
        lines = [
            "# consistency = SSIM(h1, h2) on the joint valid region; quality = SSIM(pseudo, gt) on the same region",
            "id,consistency,quality",
        ]
        lines += [f"{sid},{c:.10g},{q:.10g}" for sid, c, q in self.rows]
        lines.append(f"# pearson_r,{'undefined' if self.r is None else format(self.r, '.10g')}")
        return lines


def instance_consistency_report(items, ssim_cfg: SSIMConfig = SSIMConfig()) -> InstanceReport:
    """``items`` yields (id, h1, h2, pseudo, gt, valid)."""
    rows = []
    for sid, h1, h2, pseudo, gt, valid in items:
        c = ssim(h1, h2, valid, ssim_cfg)
        q = ssim(pseudo, gt, valid, ssim_cfg)
        rows.append((sid, c, q))
    if len(rows) < 3:
        raise ValueError("instance consistency analysis needs at least 3 samples")
    r = pearson([row[1] for row in rows], [row[2] for row in rows])
    return InstanceReport(rows, r)
