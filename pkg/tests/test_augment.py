import numpy as np
import pytest

from dualrot import augment
from dualrot.augment import AugmentSpec


def _img(seed=0, n=16):
    return np.random.default_rng(seed).random((3, n, n))


def test_identity_weak_augmentation():
    img = _img()
    mask = (img[0] > 0.5).astype(float)
    spec = AugmentSpec(flip_prob=0.0, scale_range=(1.0, 1.0))
    out, m = augment.weak_augment(img, mask, np.random.default_rng(0), spec)
    np.testing.assert_array_equal(out, img)
    np.testing.assert_array_equal(m, mask)


def test_flip_is_an_involution():
    img = _img()
    spec = AugmentSpec(scale_range=(1.0, 1.0))
    once, _ = augment.weak_augment(img, None, np.random.default_rng(0), spec, force_flip=True)
    twice, _ = augment.weak_augment(once, None, np.random.default_rng(0), spec, force_flip=True)
    np.testing.assert_array_equal(twice, img)
    np.testing.assert_array_equal(once, img[..., ::-1])


def test_scaling_grows_a_centred_disk():
    n, r = 64, 10.0
    yy, xx = np.mgrid[:n, :n]
    c = (n - 1) / 2
    disk = ((yy - c) ** 2 + (xx - c) ** 2 <= r * r).astype(float)
    _, m = augment.scale_about_center(np.zeros((3, n, n)), 1.25, disk)
    radius = np.sqrt(m.sum() / np.pi)
    assert abs(radius - 1.25 * r) <= 1.0


def test_mask_follows_image_under_weak_augmentation():
    rng = np.random.default_rng(3)
    img = np.zeros((3, 32, 32))
    img[:, 8:20, 4:14] = 1.0
    mask = img[0].copy()
    for _ in range(10):
        out, m = augment.weak_augment(img, mask, rng)
        assert np.mean((out[0] > 0.5) == (m > 0.5)) > 0.97


def test_strong_identity_and_definitional_values():
    img = _img()
    np.testing.assert_array_equal(augment.strong_augment(img, np.random.default_rng(0), AugmentSpec(max_ops=0)), img)
    assert augment.solarize(np.array([0.8]), 0.5)[0] == pytest.approx(0.2)
    assert augment.solarize(np.array([0.3]), 0.5)[0] == 0.3
    assert augment.posterize(np.array([0.7]), 2)[0] == pytest.approx(0.6667, abs=1e-4)


@pytest.mark.parametrize("name", augment.STRONG_OPS)
def test_each_strong_op_preserves_shape_and_range(name):
    out = augment.strong_augment(_img(2), np.random.default_rng(1), ops=[name])
    assert out.shape == (3, 16, 16)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_equalize_is_identity_on_uniform_levels():
    levels = np.repeat(np.arange(256) / 255.0, 16)
    img = np.random.default_rng(0).permutation(levels).reshape(1, 64, 64)
    np.testing.assert_allclose(augment.equalize(img), img, atol=1e-12)


def test_equalize_depends_only_on_rank():
    img = np.repeat(np.arange(64) / 255.0, 64).reshape(1, 64, 64)
    np.testing.assert_array_equal(augment.equalize(img), augment.equalize(img * 3.0))


def test_same_seed_same_sequence():
    img = _img(5)
    a = augment.strong_augment(img, np.random.default_rng(9))
    b = augment.strong_augment(img, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_spec_validation():
    with pytest.raises(ValueError):
        AugmentSpec(scale_range=(1.2, 0.8))
    with pytest.raises(ValueError):
        AugmentSpec(ops=("identity", "warp"))
