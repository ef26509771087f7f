import numpy as np
import pytest
from hypothesis import given, strategies as st
from skimage.metrics import structural_similarity

from dualrot import consistency as C
from dualrot.consistency import PixelWeightConfig, PixelWeightVariant as V


def test_inconsistency_and_mean():
    d = C.pixel_inconsistency(np.array([0.8, 0.2]), np.array([0.3, 0.2]))
    np.testing.assert_allclose(d, [0.5, 0.0])
    assert C.mean_horizontal(np.array([1.0]), np.array([0.0]))[0] == 0.5
    assert C.mean_horizontal(np.array([0.7]), np.array([0.7]))[0] == 0.7
    d = C.pixel_inconsistency(np.array([0.8, 0.9]), np.array([0.3, 0.2]), np.array([True, False]))
    np.testing.assert_allclose(d, [0.5, 0.0])
    with pytest.raises(ValueError):
        C.pixel_inconsistency(np.zeros(2), np.zeros(3))


@pytest.mark.parametrize(
    "variant,expected",
    [(V.PSEUDO, 0.75), (V.DIST, 0.0625), (V.ONE_MINUS_DELTA, 0.5), (V.DELTA_TIMES_PSEUDO, 0.375), (V.FULL, 0.03125),
     (V.UNIFORM, 1.0)],
)
def test_pixel_weight_variants_closed_form(variant, expected):
    w = C.pixel_weight(np.array([0.0625]), np.array([0.75]), PixelWeightConfig(alpha=0.25, variant=variant))
    assert w[0] == expected


@given(st.floats(0, 1), st.floats(0, 1))
def test_full_weight_annihilators(delta, y):
    cfg = PixelWeightConfig()
    assert C.pixel_weight(np.array([1.0]), np.array([y]), cfg)[0] == 0.0
    assert C.pixel_weight(np.array([delta]), np.array([0.5]), cfg)[0] == 0.0


def test_full_weight_at_zero_delta():
    assert C.pixel_weight(np.array([0.0]), np.array([1.0]))[0] == 0.25


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_skimage(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((40, 33))
    b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0)
    assert C.ssim(a, b) == pytest.approx(ref, abs=1e-12)


def test_ssim_examples():
    a = np.random.default_rng(0).random((16, 16))
    assert C.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    c1 = 1e-4
    assert C.ssim(np.zeros((16, 16)), np.ones((16, 16))) == pytest.approx(c1 / (1 + c1), rel=1e-12)


def test_ssim_validity_and_small_maps():
    a = np.random.default_rng(1).random((20, 20))
    valid = np.zeros((20, 20), bool)
    valid[:10, :] = True
    with pytest.raises(C.InsufficientValidArea, match="insufficient valid area"):
        C.ssim(a, a * 0.5, valid)
    valid[:12, :] = True
    smap, win = C.ssim_map(a, a * 0.5)
    ok = C.window_validity(valid, win)
    assert C.ssim(a, a * 0.5, valid) == pytest.approx(smap[ok].mean())
    assert ok.sum() == 2 * 10  # rows 0..1, cols 0..9
    # maps smaller than the window shrink it
    assert C.effective_window(C.SSIMConfig(), (6, 9)) == 5
    assert C.ssim(np.ones((6, 9)), np.ones((6, 9))) == pytest.approx(1.0)


def test_instance_weight():
    a = np.random.default_rng(2).random((16, 16))
    assert C.instance_weight(a, a) == pytest.approx(1.0)
    b = np.clip(a + 0.3, 0, 1)
    s = C.ssim(a, b)
    cfg1 = C.InstanceWeightConfig(beta=1.0)
    assert C.instance_weight(a, b, cfg=cfg1) == pytest.approx(np.clip(s, 0, 1))
    assert C.instance_weight(a, b) == pytest.approx(np.clip(s, 0, 1) ** 4)
    assert C.instance_weight(a, b, cfg=C.InstanceWeightConfig(enabled=False)) == 1.0
    assert 0.5**4 == 0.0625


def test_config_validation():
    with pytest.raises(ValueError):
        PixelWeightConfig(alpha=0)
    with pytest.raises(ValueError):
        C.SSIMConfig(window=10)
    with pytest.raises(ValueError):
        C.InstanceWeightConfig(beta=-1)
    assert PixelWeightConfig(variant="one_minus_delta").variant is V.ONE_MINUS_DELTA
