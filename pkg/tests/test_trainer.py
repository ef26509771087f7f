import numpy as np
import pytest

from dualrot import dataset, gradcore as gc, segmodel, trainer
from dualrot.gradcore import Tensor
from dualrot.trainer import TrainConfig, TrainState


def small_data(n=12, labeled=4, size=32, seed=0):
    samples = dataset.generate(dataset.CamoGenConfig(size=size, seed=seed), n)
    return samples[:labeled], [s.__class__(s.image, None, s.id, s.mask) for s in samples[labeled:]]


def fast_cfg(**kw):
    base = dict(epochs=2, burn_in_epochs=1, batch_labeled=2, batch_unlabeled=2, image_size=32, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_sgd_step_examples():
    p = [np.array([1.0])]
    buf = [np.zeros(1)]
    trainer.sgd_step(p, [np.array([1.0])], buf, lr=0.1, momentum=0.0)
    assert p[0][0] == pytest.approx(0.9)
    p, buf = [np.array([1.0])], [np.zeros(1)]
    trainer.sgd_step(p, [np.zeros(1)], buf, 0.1, 0.9)
    assert p[0][0] == 1.0
    p, buf = [np.array([0.0])], [np.zeros(1)]
    trainer.sgd_step(p, [np.ones(1)], buf, 1.0, 0.9)
    assert p[0][0] == -1.0
    trainer.sgd_step(p, [np.ones(1)], buf, 1.0, 0.9)
    assert buf[0][0] == pytest.approx(1.9) and p[0][0] == pytest.approx(-2.9)
    with pytest.raises(ValueError, match="misaligned"):
        trainer.sgd_step(p, [], buf, 1.0, 0.9)


def test_poly_lr():
    assert trainer.poly_lr(0, 100, 0.01, 0.9) == 0.01
    assert trainer.poly_lr(100, 100, 0.01, 0.9) == 0.0
    assert trainer.poly_lr(50, 100, 0.01, 1.0) == pytest.approx(0.005)
    with pytest.raises(ValueError):
        trainer.poly_lr(101, 100, 0.01, 0.9)


def _params(v):
    return segmodel.ModelParams(["w"], [Tensor(np.array([v]))])


def test_ema_update():
    t = _params(1.0)
    trainer.ema_update(t, _params(0.0), 0.996)
    assert t.tensors[0].data[0] == 0.996
    t = _params(0.3)
    trainer.ema_update(t, _params(0.7), 1.0 - 1e-16)
    t = _params(0.3)
    trainer.ema_update(t, _params(0.3), 0.123)
    assert t.tensors[0].data[0] == pytest.approx(0.3, abs=1e-16)
    with pytest.raises(ValueError):
        trainer.ema_update(t, segmodel.ModelParams(["v"], [Tensor(np.zeros(1))]), 0.5)


def test_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(epochs=5, burn_in_epochs=6)
    with pytest.raises(ValueError):
        TrainConfig(eta=1.0)
    with pytest.raises(ValueError):
        TrainConfig(lr0=0)
    with pytest.raises(ValueError):
        TrainConfig(image_size=30)
    with pytest.raises(ValueError):
        TrainConfig(pc_variant="nope")


def _semi_state(zero_head=False):
    student = segmodel.init(0)
    return TrainState(student=student, teacher=segmodel.init(1, zero_head=zero_head).copy(requires_grad=False))


def test_equal_angles_give_exact_degenerate_weights():
    img = dataset.generate_one(dataset.CamoGenConfig(size=32), 0).image
    state = _semi_state()
    pl = trainer.make_pseudo_label(state.teacher, img, 23.0, 23.0, fast_cfg())
    assert (pl.delta == 0).all()
    y_h = (pl.h1 + pl.h2) / 2
    np.testing.assert_array_equal(pl.pixel_weight_h[pl.joint], ((y_h - 0.5) ** 2)[pl.joint])
    assert (pl.pixel_weight_h[~pl.joint] == 0).all()
    assert pl.ssim == 1.0 and pl.instance_weight == 1.0


def test_zero_lambdas_give_zero_student_gradient():
    _, unl = small_data()
    state = _semi_state()
    cfg = fast_cfg(lambda_pc=0.0, lambda_ic=0.0)
    l_pc, l_ic, _ = trainer.unsupervised_step([s.image for s in unl[:2]], state, cfg, np.random.default_rng(0))
    gc.backward(trainer.losses.total_loss(Tensor(0.0), l_pc, l_ic, cfg.loss_weights()))
    assert all(t.grad is None or not t.grad.any() for t in state.student.tensors)


def test_half_teacher_annihilates_pixel_loss():
    _, unl = small_data()
    state = _semi_state(zero_head=True)
    l_pc, _, diag = trainer.unsupervised_step([s.image for s in unl[:2]], state, fast_cfg(), np.random.default_rng(0))
    assert float(l_pc.data) == 0.0
    assert diag["mean_w_pc"] == 0.0
    gc.backward(l_pc)
    assert all(t.grad is None or not t.grad.any() for t in state.student.tensors)


def test_insufficient_valid_area_skips_sample(caplog):
    img = np.random.default_rng(0).random((3, 12, 12))
    state = _semi_state()
    cfg = fast_cfg()
    with caplog.at_level("WARNING"):
        l_pc, l_ic, diag = trainer.unsupervised_step([img], state, cfg, np.random.default_rng(0), angles=[(45.0, -45.0)])
    assert diag["skipped"] == 1 and float(l_pc.data) == 0.0
    assert "insufficient valid area" in caplog.text


def test_training_contract():
    lab, unl = small_data()
    seen = []

    def cb(state, info):
        seen.append((info["semi"], info["diag"].get("mean_w_pc"), np.isfinite(info["loss"])))

    state, hist = trainer.train(lab, unl, fast_cfg(epochs=3), eval_samples=lab, callback=cb)
    assert len(hist) == 3 and state.epoch == 3
    assert hist[0]["L_pc"] == 0.0 and hist[0]["L_ic"] == 0.0 and np.isnan(hist[0]["mean_w_pc"])
    assert hist[1]["L_ic"] > 0 and 0 <= hist[1]["mean_w_ic"] <= 1
    assert all(ok for _, _, ok in seen)
    assert all(t.grad is None for t in state.teacher.tensors)
    assert state.iter == 3 * trainer.iterations_per_epoch(len(lab), len(unl), fast_cfg())


def test_burn_in_equal_to_epochs_is_supervised_only():
    lab, unl = small_data()
    cfg = fast_cfg(epochs=2, burn_in_epochs=2)
    a, ha = trainer.train(lab, unl, cfg)
    scrambled = [s.__class__(np.zeros_like(s.image), None, s.id, None) for s in unl]
    b, hb = trainer.train(lab, scrambled, cfg)
    assert a.teacher is None
    assert all(np.array_equal(x, y) for x, y in zip(a.student.arrays(), b.student.arrays()))
    assert all(r["L_pc"] == 0 for r in ha)


def test_determinism_and_resume():
    lab, unl = small_data()
    cfg = fast_cfg(epochs=3)
    full, hist = trainer.train(lab, unl, cfg)
    again, hist2 = trainer.train(lab, unl, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(full.student.arrays(), again.student.arrays()))
    assert [trainer.format_metrics_row(r) for r in hist] == [trainer.format_metrics_row(r) for r in hist2]

    # resume from a snapshot taken after the second epoch
    snaps = []
    trainer.train(lab, unl, cfg, on_epoch=lambda s, r: snaps.append(
        TrainState(s.student.copy(), s.teacher.copy() if s.teacher else None, [m.copy() for m in s.momentum],
                   s.iter, s.epoch)))
    resumed, _ = trainer.train(lab, unl, cfg, state=snaps[1])
    assert all(np.array_equal(x, y) for x, y in zip(full.student.arrays(), resumed.student.arrays()))
    assert all(np.array_equal(x, y) for x, y in zip(full.teacher.arrays(), resumed.teacher.arrays()))


def test_five_epoch_smoke_has_finite_losses():
    lab, unl = small_data(n=10, labeled=3)
    losses = []
    trainer.train(lab, unl, fast_cfg(epochs=5, burn_in_epochs=1), callback=lambda s, i: losses.append(i["loss"]))
    assert losses and np.all(np.isfinite(losses))


def test_non_finite_loss_raises(monkeypatch):
    lab, unl = small_data()
    monkeypatch.setattr(trainer.losses, "total_loss", lambda *a, **k: Tensor(np.nan))
    with pytest.raises(trainer.NonFiniteLoss) as exc:
        trainer.train(lab, unl, fast_cfg())
    assert exc.value.iteration == 0


def test_empty_labeled_split_is_an_error():
    with pytest.raises(ValueError):
        trainer.train([], small_data()[1], fast_cfg())


def test_one_minus_delta_mode_trains():
    lab, unl = small_data()
    _, hist = trainer.train(lab, unl, fast_cfg(pc_variant="one_minus_delta", lambda_ic=0.0))
    assert hist[1]["L_pc"] > 0


def test_published_defaults():
    c = TrainConfig()
    assert (c.epochs, c.burn_in_epochs, c.lr0, c.sgd_momentum, c.eta) == (40, 10, 0.01, 0.9, 0.996)
    assert (c.alpha, c.beta, c.mu, c.lambda_pc, c.lambda_ic) == (0.25, 4.0, 0.5, 8.0, 0.3)
    assert c.batch_labeled == c.batch_unlabeled
    assert c.rotation_range_deg == (-90.0, 90.0)
