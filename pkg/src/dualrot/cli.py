"""``dualrot`` command line: gen-data, train, eval, analyze."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, consistency, dataset, geometry, metrics, trainer
from .netpbm import NetpbmError

log = logging.getLogger("dualrot")

EXIT_USAGE = 2
EXIT_NONFINITE = 3
EXIT_CHECKPOINT = 4

SEED_ENV = "CAMOT_SEED"

_GEN_KEYS = ("texture_scale", "contrast_delta", "blob_complexity", "contrast_spread", "texture_amplitude")
_TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(trainer.TrainConfig))
_OTHER_DEFAULTS = {"labeled_fraction": 0.1, "data_root": None, "out_dir": None, "eval_data": None}
_PATH_KEYS = ("data_root", "out_dir", "eval_data")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def default_config() -> dict:
    cfg = trainer.TrainConfig().to_dict()
    gen = dataset.CamoGenConfig()
    cfg.update({k: getattr(gen, k) for k in _GEN_KEYS})
    cfg.update(_OTHER_DEFAULTS)
    return cfg


def resolve_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then explicit overrides, then CAMOT_SEED."""
    cfg = default_config()
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno}") from None
        if not isinstance(doc, dict):
            raise CliError(f"config {path} must be a JSON object")
    for key, value in {**doc, **(overrides or {})}.items():
        if key not in cfg:
            raise CliError(f"unknown config key {key!r}")
        cfg[key] = value
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            cfg["seed"] = int(env)
        except ValueError:
            raise CliError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    train_config(cfg)
    gen_config(cfg)
    if not 0.0 < float(cfg["labeled_fraction"]) <= 1.0:
        raise CliError(f"labeled_fraction must be in (0, 1], got {cfg['labeled_fraction']}")
    return cfg


def train_config(cfg: dict) -> trainer.TrainConfig:
    try:
        return trainer.TrainConfig(**{k: cfg[k] for k in _TRAIN_KEYS})
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}") from None


def gen_config(cfg: dict) -> dataset.CamoGenConfig:
    try:
        return dataset.CamoGenConfig(size=cfg["image_size"], seed=cfg["seed"], **{k: cfg[k] for k in _GEN_KEYS})
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}") from None


def _hashable(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in _PATH_KEYS}


def _write_lines(path: Path, lines) -> None:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"cannot write to {out}: {exc.strerror or exc}") from None
    return out


def _load_data(root, size: int):
    try:
        return dataset.read_dataset(root, size)
    except FileNotFoundError as exc:
        raise CliError(f"dataset {root}: missing file {exc.filename}") from None
    except (NetpbmError, ValueError, KeyError) as exc:
        raise CliError(f"dataset {root}: {exc}") from None


def _load_checkpoint(path):
    try:
        return checkpoint.load(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint {path} not found") from None
    except checkpoint.CheckpointError as exc:
        raise CliError(str(exc), EXIT_CHECKPOINT) from None


def _checkpoint_image_size(manifest: dict) -> int:
    cfg = manifest.get("config") or {}
    return int(cfg.get("image_size", trainer.TrainConfig.image_size))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_gen_data(args) -> None:
    if args.count < 1:
        raise CliError(f"--count must be >= 1, got {args.count}")
    cfg = resolve_config(args.config)
    out = _out_dir(args.out)
    samples = dataset.generate(gen_config(cfg), args.count)
    try:
        labeled, _ = dataset.split(samples, float(cfg["labeled_fraction"]), int(cfg["seed"]))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    try:
        dataset.write_dataset(out, samples, [s.id for s in labeled])
    except OSError as exc:
        raise CliError(f"cannot write dataset to {out}: {exc.strerror or exc}") from None
    print(f"wrote {len(samples)} samples ({len(labeled)} labeled) to {out}")


def cmd_train(args) -> None:
    overrides = {}
    if args.data:
        overrides["data_root"] = str(args.data)
    if args.out:
        overrides["out_dir"] = str(args.out)
    cfg = resolve_config(args.config, overrides)
    if not cfg["data_root"] or not cfg["out_dir"]:
        raise CliError("train needs --data and --out (or data_root/out_dir in the config)")
    tcfg = train_config(cfg)
    out = _out_dir(cfg["out_dir"])
    labeled, unlabeled = _load_data(cfg["data_root"], tcfg.image_size)
    if not labeled:
        raise CliError(f"dataset {cfg['data_root']} has no labeled samples")
    if cfg["eval_data"]:
        ev_lab, ev_unl = _load_data(cfg["eval_data"], tcfg.image_size)
        eval_samples = ev_lab + ev_unl
        if any(s.gt is None for s in eval_samples):
            raise CliError("evaluation requires masks")
    else:
        eval_samples = labeled

    state, rows = None, []
    metrics_path = out / "metrics.csv"
    last = out / "last.ckpt"
    if args.resume:
        resume_path = Path(args.resume) if args.resume != "auto" else last
        state, manifest = _load_checkpoint(resume_path)
        want = checkpoint.config_hash(_hashable(cfg))
        if manifest.get("config_hash") != want and not args.force:
            raise CliError(f"config hash mismatch with {resume_path}; pass --force to resume anyway")
        if metrics_path.exists():
            rows = metrics_path.read_text(encoding="utf-8").splitlines()[1 : state.epoch + 1]
        log.info("resuming from epoch %d (iteration %d)", state.epoch, state.iter)

    _write_lines(out / "config.resolved.json", [json.dumps(cfg, indent=2, sort_keys=True)])
    _write_lines(metrics_path, [",".join(trainer.METRIC_COLUMNS), *rows])
    hashed = _hashable(cfg)

    def on_epoch(st, row):
        with open(metrics_path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(trainer.format_metrics_row(row) + "\n")
        checkpoint.save(last, st, hashed)

    try:
        state, _ = trainer.train(labeled, unlabeled, tcfg, eval_samples=eval_samples, state=state, on_epoch=on_epoch)
    except trainer.NonFiniteLoss as exc:
        raise CliError(f"non-finite loss at iteration {exc.iteration}", EXIT_NONFINITE) from None
    checkpoint.save(out / "final.ckpt", state, hashed)
    print(f"trained {tcfg.epochs} epochs ({state.iter} iterations); checkpoint {out / 'final.ckpt'}")


def cmd_eval(args) -> None:
    state, manifest = _load_checkpoint(args.checkpoint)
    labeled, unlabeled = _load_data(args.data, _checkpoint_image_size(manifest))
    samples = labeled + unlabeled
    if not samples or any(s.gt is None for s in samples):
        raise CliError("evaluation requires masks")
    params = state.eval_params(args.use)
    report = trainer.evaluate_model(params, samples, with_ssim=True)
    lines = report.to_csv_lines()
    if args.out:
        out = Path(args.out)
        _out_dir(out.parent)
        _write_lines(out, lines)
    else:
        print("\n".join(lines))
    print(f"mae={report.mae:.6f} f_mean={report.f_mean:.6f}")


def analysis_items(params, samples, tcfg: trainer.TrainConfig, seed: int):
    """Dual-rotation teacher outputs per sample: (id, h1, h2, pseudo, gt, valid).

    Angles come from one stream seeded by ``seed``; samples whose joint valid
    area cannot fit an SSIM window are skipped.
    """
    rng = np.random.default_rng(seed)
    lo, hi = tcfg.rotation_range_deg
    ssim_cfg = tcfg.ssim_cfg()
    for s in samples:
        t1, t2 = float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))
        _, _, h1, h2 = trainer.dual_rotation_views(params, s.image, t1, t2)
        joint = geometry.joint_valid(h1, h2)
        win = consistency.effective_window(ssim_cfg, joint.shape)
        if not consistency.window_validity(joint, win).any():
            log.warning("skipping %s: insufficient valid area", s.id)
            continue
        pseudo = consistency.mean_horizontal(h1.data, h2.data)
        yield s.id, h1.data, h2.data, pseudo, s.gt, joint


def run_analysis(params, samples, tcfg: trainer.TrainConfig, seed: int, band_px: int | None = None):
    items = list(analysis_items(params, samples, tcfg, seed))
    band = band_px if band_px is not None else metrics.default_band(tcfg.image_size)
    stats = metrics.RegionStats()
    for _, h1, h2, pseudo, gt, valid in items:
        stats.add(metrics.region_noise_report(pseudo, gt, h1, h2, valid, band))
    inst = metrics.instance_consistency_report(items, tcfg.ssim_cfg())
    return stats, inst


def cmd_analyze(args) -> None:
    state, manifest = _load_checkpoint(args.checkpoint)
    cfg = dict(default_config())
    cfg.update({k: v for k, v in (manifest.get("config") or {}).items() if k in cfg})
    env = os.environ.get(SEED_ENV)
    seed = args.seed if args.seed is not None else int(env) if env and env.strip() else int(cfg["seed"])
    tcfg = train_config(cfg)
    labeled, unlabeled = _load_data(args.data, tcfg.image_size)
    samples = labeled + unlabeled
    if not samples or any(s.gt is None for s in samples):
        raise CliError("analysis requires masks")
    out = _out_dir(args.out)
    try:
        stats, inst = run_analysis(state.eval_params(args.use), samples, tcfg, seed)
    except ValueError as exc:
        raise CliError(f"analysis failed: {exc}") from None
    _write_lines(out / "region_noise.csv", stats.to_csv_lines())
    _write_lines(out / "instance_consistency.csv", inst.to_csv_lines())
    summary = stats.summary()
    for region, val in summary.items():
        if val is not None:
            print(f"{region.name.lower()}: mpi={val[0]:.6f} mae={val[1]:.6f}")
    print("pearson_r=" + ("undefined" if inst.r is None else f"{inst.r:.6f}"))


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dualrot", description="Semi-supervised camouflaged object segmentation with dual-rotation consistency.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train student/teacher and write final.ckpt")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--resume", nargs="?", const="auto", help="checkpoint to resume from (default: <out>/last.ckpt)")
    t.add_argument("--force", action="store_true", help="resume even if the config hash differs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a masked dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--use", choices=("teacher", "student"), default="teacher")
    e.add_argument("--out", help="report CSV path (default: stdout)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="region noise and instance consistency reports")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--use", choices=("teacher", "student"), default="teacher")
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
