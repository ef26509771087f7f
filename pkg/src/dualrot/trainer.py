"""Mean-teacher training with dual-rotation consistency weighting.

Schedule: ``burn_in_epochs`` of supervised-only training, then the teacher is
initialised as a copy of the student and every iteration adds pseudo-label
losses on unlabeled images, weighted per pixel and per image by how well two
rotated teacher views agree. The student takes SGD steps; the teacher
follows it by exponential moving average.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import augment, consistency, geometry, losses, metrics, segmodel
from . import gradcore as gc
from .consistency import InsufficientValidArea, PixelWeightConfig, PixelWeightVariant
from .segmodel import ModelParams

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite loss {value} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class TrainConfig:
    epochs: int = 40
    burn_in_epochs: int = 10
    batch_labeled: int = 4
    batch_unlabeled: int = 4
    lr0: float = 0.01
    sgd_momentum: float = 0.9
    poly_power: float = 0.9
    eta: float = 0.996
    rotation_range_deg: tuple[float, float] = (-90.0, 90.0)
    alpha: float = 0.25
    beta: float = 4.0
    mu: float = 0.5
    lambda_pc: float = 8.0
    lambda_ic: float = 0.3
    pc_variant: str = "full"
    instance_weighting: bool = True
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 1e-4
    ssim_c2: float = 9e-4
    flip_prob: float = 0.5
    scale_range: tuple[float, float] = (0.8, 1.2)
    max_strong_ops: int = 3
    image_size: int = 64
    seed: int = 0

    def __post_init__(self):
        self.rotation_range_deg = tuple(float(v) for v in self.rotation_range_deg)
        self.scale_range = tuple(float(v) for v in self.scale_range)
        if self.epochs < 1 or not 0 <= self.burn_in_epochs <= self.epochs:
            raise ValueError(f"need 0 <= burn_in_epochs ({self.burn_in_epochs}) <= epochs ({self.epochs})")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must be in (0,1), got {self.eta}")
        if self.batch_labeled < 1 or self.batch_unlabeled < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.image_size % 4:
            raise ValueError(f"image_size must be divisible by 4, got {self.image_size}")
        lo, hi = self.rotation_range_deg
        if lo > hi:
            raise ValueError(f"rotation_range_deg must be [lo, hi], got {self.rotation_range_deg}")
        # validate the derived configs eagerly
        self.pixel_cfg(), self.instance_cfg(), self.loss_weights(), self.augment_spec()

    def pixel_cfg(self) -> PixelWeightConfig:
        return PixelWeightConfig(alpha=self.alpha, mu=self.mu, variant=PixelWeightVariant(self.pc_variant))

    def ssim_cfg(self) -> consistency.SSIMConfig:
        return consistency.SSIMConfig(self.ssim_window, self.ssim_sigma, self.ssim_c1, self.ssim_c2)

    def instance_cfg(self) -> consistency.InstanceWeightConfig:
        return consistency.InstanceWeightConfig(beta=self.beta, ssim=self.ssim_cfg(), enabled=self.instance_weighting)

    def loss_weights(self) -> losses.LossWeights:
        return losses.LossWeights(self.lambda_pc, self.lambda_ic)

    def augment_spec(self) -> augment.AugmentSpec:
        return augment.AugmentSpec(flip_prob=self.flip_prob, scale_range=self.scale_range, max_ops=self.max_strong_ops)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rotation_range_deg"] = list(self.rotation_range_deg)
        d["scale_range"] = list(self.scale_range)
        return d


@dataclass
class TrainState:
    student: ModelParams
    teacher: ModelParams | None = None
    momentum: list[np.ndarray] = field(default_factory=list)
    iter: int = 0
    epoch: int = 0

    def __post_init__(self):
        if not self.momentum:
            self.momentum = [np.zeros_like(t.data) for t in self.student.tensors]

    def eval_params(self, use: str = "teacher") -> ModelParams:
        if use == "teacher" and self.teacher is not None:
            return self.teacher
        return self.student


# --------------------------------------------------------------------------
# optimizer pieces
# --------------------------------------------------------------------------


def poly_lr(it: int, max_iter: int, lr0: float, power: float) -> float:
    if not 0 <= it <= max_iter:
        raise ValueError(f"iteration {it} outside [0, {max_iter}]")
    return lr0 * (1.0 - it / max_iter) ** power


def sgd_step(params, grads, buffers, lr: float, momentum: float) -> None:
    """In place: ``buf = m*buf + g; theta -= lr*buf`` for every parameter."""
    if not (len(params) == len(grads) == len(buffers)):
        raise ValueError(f"misaligned SGD inputs: {len(params)} params, {len(grads)} grads, {len(buffers)} buffers")
    for p, g, buf in zip(params, grads, buffers):
        data = p.data if isinstance(p, gc.Tensor) else p
        if g is None:
            g = np.zeros_like(data)
        if np.shape(g) != data.shape or buf.shape != data.shape:
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {data.shape}")
        buf *= momentum
        buf += g
        data -= lr * buf


def ema_update(teacher: ModelParams, student: ModelParams, eta: float) -> None:
    """In place: ``teacher = eta*teacher + (1-eta)*student``."""
    if not teacher.aligned_with(student):
        raise ValueError("teacher and student parameter lists are not aligned")
    for t, s in zip(teacher.tensors, student.tensors):
        t.data = eta * t.data + (1.0 - eta) * s.data


# --------------------------------------------------------------------------
# unsupervised branch
# --------------------------------------------------------------------------


@dataclass
class PseudoLabel:
    """Teacher-side products for one unlabeled image (view-1 frame unless noted)."""

    view_image: np.ndarray  # x^{r1}
    target: np.ndarray  # teacher prediction on x^{r1}
    weight: np.ndarray  # pixel weights rotated into the r1 frame
    valid: np.ndarray  # joint validity in the r1 frame
    instance_weight: float
    # horizontal-frame quantities, kept for analysis
    h1: np.ndarray
    h2: np.ndarray
    joint: np.ndarray
    delta: np.ndarray
    pixel_weight_h: np.ndarray
    ssim: float


def dual_rotation_views(params: ModelParams, image: np.ndarray, theta1: float, theta2: float):
    """Teacher predictions for two rotated copies of ``image``.

    Returns (view1, pred_r1, horizontal1, horizontal2) where the horizontal
    views carry their validity masks.
    """
    v1 = geometry.rotate(image, theta1)
    v2 = geometry.rotate(image, theta2)
    preds = segmodel.predict(params, np.stack([v1.data, v2.data]))
    r1 = geometry.RotatedView(preds[0], theta1, v1.valid)
    r2 = geometry.RotatedView(preds[1], theta2, v2.valid)
    return v1, preds[0], geometry.unrotate(r1), geometry.unrotate(r2)


def make_pseudo_label(teacher: ModelParams, image, theta1, theta2, cfg: TrainConfig) -> PseudoLabel:
    v1, pred_r1, h1, h2 = dual_rotation_views(teacher, image, theta1, theta2)
    joint = geometry.joint_valid(h1, h2)
    delta = consistency.pixel_inconsistency(h1.data, h2.data, joint)
    y_h = consistency.mean_horizontal(h1.data, h2.data)
    # weights only exist on the joint valid region
    w_h = np.where(joint, consistency.pixel_weight(delta, y_h, cfg.pixel_cfg()), 0.0)
    icfg = cfg.instance_cfg()
    s = consistency.ssim(h1.data, h2.data, joint, icfg.ssim)
    w_ic = float(np.clip(s, 0.0, 1.0) ** icfg.beta) if icfg.enabled else 1.0
    back = geometry.rotate(w_h, theta1, valid=joint)
    valid_r1 = back.valid & v1.valid
    if not valid_r1.any():
        raise InsufficientValidArea("no valid pixels in the view-1 frame")
    return PseudoLabel(v1.data, pred_r1, back.data, valid_r1, w_ic, h1.data, h2.data, joint, delta, w_h, s)


def unsupervised_step(images, state: TrainState, cfg: TrainConfig, rng, angles=None):
    """Pseudo-label losses for a batch of raw unlabeled ``[3,H,W]`` images.

    Returns (L_pc, L_ic, diagnostics). Images whose joint valid area cannot
    hold one SSIM window are skipped with a warning.
    """
    if state.teacher is None:
        raise RuntimeError("unsupervised_step needs a teacher (call after burn-in)")
    spec = cfg.augment_spec()
    lo, hi = cfg.rotation_range_deg
    labels: list[PseudoLabel] = []
    student_inputs = []
    for k, img in enumerate(images):
        weak, _ = augment.weak_augment(img, None, rng, spec)
        if angles is None:
            t1, t2 = float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))
        else:
            t1, t2 = angles[k]
        try:
            pl = make_pseudo_label(state.teacher, weak, t1, t2, cfg)
        except InsufficientValidArea:
            log.warning("skipping unlabeled sample %d: insufficient valid area (angles %.1f, %.1f)", k, t1, t2)
            continue
        labels.append(pl)
        student_inputs.append(augment.strong_augment(pl.view_image, rng, spec))

    diag = {"skipped": len(images) - len(labels), "pseudo_labels": labels}
    if not labels:
        zero = gc.Tensor(0.0)
        diag.update(mean_w_pc=float("nan"), mean_w_ic=float("nan"), valid_fraction=0.0)
        return zero, zero, diag

    p = segmodel.forward(state.student, np.stack(student_inputs))
    target = np.stack([pl.target for pl in labels])
    valid = np.stack([pl.valid for pl in labels])
    l_pc = losses.bce(p, target, np.stack([pl.weight for pl in labels]), valid)
    l_ic = losses.soft_iou(p, target, np.array([pl.instance_weight for pl in labels]), valid)
    diag.update(
        mean_w_pc=float(np.mean([pl.pixel_weight_h[pl.joint].mean() for pl in labels])),
        mean_w_ic=float(np.mean([pl.instance_weight for pl in labels])),
        valid_fraction=float(valid.mean()),
    )
    return l_pc, l_ic, diag


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------


def _stack_weak(samples, rng, spec):
    xs, ys = [], []
    for s in samples:
        x, y = augment.weak_augment(s.image, s.mask, rng, spec)
        xs.append(x)
        ys.append(y)
    return np.stack(xs), np.stack(ys)


def _cycled(rng, n, count):
    """``count`` indices drawn by concatenating fresh permutations of range(n)."""
    reps = math.ceil(count / n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:count]


def iterations_per_epoch(n_labeled: int, n_unlabeled: int, cfg: TrainConfig) -> int:
    per = math.ceil(n_labeled / cfg.batch_labeled)
    if n_unlabeled:
        per = max(per, math.ceil(n_unlabeled / cfg.batch_unlabeled))
    return per


def evaluate_model(params: ModelParams, samples, batch: int = 16, with_ssim: bool = False) -> metrics.MetricsReport:
    preds = []
    for i in range(0, len(samples), batch):
        preds.extend(segmodel.predict(params, np.stack([s.image for s in samples[i : i + batch]])))
    gts = [s.gt for s in samples]
    ids = [s.id for s in samples]
    if with_ssim:
        return metrics.evaluate(preds, gts, ids)
    maes = [metrics.mae(p, g) for p, g in zip(preds, gts)]
    curves = [metrics.f_curve(p, g) for p, g in zip(preds, gts) if (g > 0.5).any()]
    return metrics.MetricsReport(
        mae=float(np.mean(maes)),
        f_mean=float(np.mean([c.mean() for c in curves])) if curves else float("nan"),
        f_max=float(np.mean([c.max() for c in curves])) if curves else float("nan"),
        iou=float(np.mean([metrics.iou(p, g) for p, g in zip(preds, gts)])),
    )


METRIC_COLUMNS = ("epoch", "L_s", "L_pc", "L_ic", "mean_w_pc", "mean_w_ic", "eval_mae", "eval_f_mean")


def init_state(cfg: TrainConfig) -> TrainState:
    return TrainState(student=segmodel.init(cfg.seed))


def train(labeled, unlabeled, cfg: TrainConfig, eval_samples=None, state: TrainState | None = None,
          callback=None, on_epoch=None):
    """Run (or resume) training; returns (state, per-epoch metric rows).

    ``callback(state, info)`` fires after every iteration, ``on_epoch(state,
    row)`` after every epoch.
    """
    if not labeled:
        raise ValueError("training needs at least one labeled sample")
    state = state or init_state(cfg)
    spec = cfg.augment_spec()
    weights = cfg.loss_weights()
    per_epoch = iterations_per_epoch(len(labeled), len(unlabeled), cfg)
    max_iter = per_epoch * cfg.epochs
    history = []

    for epoch in range(state.epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        semi = epoch >= cfg.burn_in_epochs and len(unlabeled) > 0
        if semi and state.teacher is None:
            state.teacher = state.student.copy(requires_grad=False)
        lab_idx = _cycled(rng, len(labeled), per_epoch * cfg.batch_labeled)
        unl_idx = _cycled(rng, len(unlabeled), per_epoch * cfg.batch_unlabeled) if semi else None
        sums = {"L_s": 0.0, "L_pc": 0.0, "L_ic": 0.0, "mean_w_pc": [], "mean_w_ic": []}

        for k in range(per_epoch):
            lr = poly_lr(state.iter, max_iter, cfg.lr0, cfg.poly_power)
            batch = [labeled[i] for i in lab_idx[k * cfg.batch_labeled : (k + 1) * cfg.batch_labeled]]
            x, y = _stack_weak(batch, rng, spec)
            l_s = losses.bce(segmodel.forward(state.student, x), y)
            l_pc = l_ic = gc.Tensor(0.0)
            diag = {}
            if semi:
                ub = [unlabeled[i].image for i in unl_idx[k * cfg.batch_unlabeled : (k + 1) * cfg.batch_unlabeled]]
                l_pc, l_ic, diag = unsupervised_step(ub, state, cfg, rng)
            loss = losses.total_loss(l_s, l_pc, l_ic, weights)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(state.iter, value)
            gc.zero_grads(state.student.tensors)
            gc.backward(loss)
            sgd_step(state.student.tensors, [t.grad for t in state.student.tensors], state.momentum, lr, cfg.sgd_momentum)
            if semi:
                ema_update(state.teacher, state.student, cfg.eta)
            state.iter += 1

            sums["L_s"] += float(l_s.data)
            sums["L_pc"] += float(l_pc.data)
            sums["L_ic"] += float(l_ic.data)
            if diag and math.isfinite(diag.get("mean_w_pc", float("nan"))):
                sums["mean_w_pc"].append(diag["mean_w_pc"])
                sums["mean_w_ic"].append(diag["mean_w_ic"])
            if callback is not None:
                callback(state, {"epoch": epoch, "iteration": state.iter, "semi": semi, "lr": lr,
                                 "loss": value, "diag": diag})

        state.epoch = epoch + 1
        row = {
            "epoch": epoch + 1,
            "L_s": sums["L_s"] / per_epoch,
            "L_pc": sums["L_pc"] / per_epoch,
            "L_ic": sums["L_ic"] / per_epoch,
            "mean_w_pc": float(np.mean(sums["mean_w_pc"])) if sums["mean_w_pc"] else float("nan"),
            "mean_w_ic": float(np.mean(sums["mean_w_ic"])) if sums["mean_w_ic"] else float("nan"),
            "eval_mae": float("nan"),
            "eval_f_mean": float("nan"),
        }
        if eval_samples:
            rep = evaluate_model(state.eval_params(), eval_samples)
            row["eval_mae"], row["eval_f_mean"] = rep.mae, rep.f_mean
        log.info("epoch %d/%d %s", epoch + 1, cfg.epochs,
                 " ".join(f"{k}={v:.4f}" for k, v in row.items() if k != "epoch"))
        history.append(row)
        if on_epoch is not None:
            on_epoch(state, row)
    return state, history


def format_metrics_row(row: dict) -> str:
    def fmt(v):
        if isinstance(v, int):
            return str(v)
        return "" if not math.isfinite(v) else f"{v:.10g}"

    return ",".join(fmt(row[c]) for c in METRIC_COLUMNS)
