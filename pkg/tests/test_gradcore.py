import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import signal

from dualrot import gradcore as gc
from dualrot.gradcore import Tensor

from conftest import numeric_grad

floats = st.floats(-3, 3, allow_nan=False, width=64)


def check_grad(build, *arrays, tol=1e-6, h=1e-6):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    gc.backward(build(*leaves))
    for leaf, arr in zip(leaves, arrays):
        num = numeric_grad(lambda: float(build(*[Tensor(a) for a in arrays]).data), arr, h)
        np.testing.assert_allclose(leaf.grad, num, rtol=tol, atol=tol)


@given(hnp.arrays(np.float64, (3, 4), elements=floats), hnp.arrays(np.float64, (3, 4), elements=floats))
def test_binary_ops_match_finite_differences(a, b):
    b = np.where(np.abs(b) < 0.3, 0.3, b)
    check_grad(lambda x, y: gc.sum(x * y + x / y - (x - y)), a.copy(), b.copy(), tol=1e-5)


@given(hnp.arrays(np.float64, (5,), elements=st.floats(0.1, 3, width=64)))
def test_unary_ops_match_finite_differences(a):
    check_grad(lambda x: gc.sum(gc.log(x) + gc.sigmoid(x) + gc.pow_scalar(x, 1.5)), a.copy(), tol=1e-5)


def test_scalar_broadcast_receives_summed_gradient():
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    s = Tensor(2.0, requires_grad=True)
    gc.backward(gc.sum(a * s))
    assert s.grad == pytest.approx(15.0)
    np.testing.assert_array_equal(a.grad, np.full((2, 3), 2.0))


def test_shape_mismatch_raises():
    with pytest.raises(gc.ShapeError, match="shape mismatch"):
        gc.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_domain_errors():
    with pytest.raises(gc.DomainError):
        gc.log(Tensor(np.array([1.0, 0.0])))
    with pytest.raises(gc.DomainError):
        gc.div(Tensor(1.0), Tensor(0.0))


def test_sigmoid_is_stable_at_extremes():
    out = gc.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])


def test_relu_slope_and_clamp_gradients():
    x = Tensor(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
    gc.backward(gc.sum(gc.relu(x, 0.1)))
    np.testing.assert_array_equal(x.grad, [0.1, 1.0, 1.0])
    y = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
    gc.backward(gc.sum(gc.clamp(y, 0.0, 1.0)))
    np.testing.assert_array_equal(y.grad, [0.0, 1.0, 0.0])


def test_mean_and_masked_mean():
    a = Tensor(np.arange(4.0), requires_grad=True)
    m = np.array([True, False, True, False])
    out = gc.masked_mean(a, m)
    assert float(out.data) == 1.0
    gc.backward(out)
    np.testing.assert_array_equal(a.grad, [0.5, 0, 0.5, 0])
    with pytest.raises(gc.ShapeError, match="zero-length"):
        Tensor(np.zeros((0,)))
    with pytest.raises(gc.ShapeError, match="empty reduction"):
        gc.masked_mean(a, np.zeros(4, bool))


def test_dispatchers():
    a, b = Tensor(np.array([1.0, 2.0])), Tensor(np.array([3.0, 4.0]))
    np.testing.assert_array_equal(gc.elementwise("mul", a, b).data, [3.0, 8.0])
    np.testing.assert_array_equal(gc.elementwise("clamp", a, (1.5, 2.0)).data, [1.5, 2.0])
    np.testing.assert_array_equal(gc.reduce("sum", b).data, 7.0)
    with pytest.raises(ValueError):
        gc.elementwise("nope", a)


def test_conv2d_matches_scipy_correlation(rng):
    x = rng.standard_normal((2, 3, 7, 6))
    k = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = gc.conv2d(Tensor(x), Tensor(k), Tensor(b), padding=1).data
    ref = np.zeros_like(out)
    for n in range(2):
        for f in range(4):
            ref[n, f] = b[f] + sum(
                signal.correlate2d(np.pad(x[n, c], 1), k[f, c], mode="valid") for c in range(3)
            )
    np.testing.assert_allclose(out, ref, atol=1e-12)


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0), (2, 2)])
def test_conv2d_gradients(rng, stride, padding):
    x = rng.standard_normal((2, 2, 6, 6))
    k = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    w = rng.standard_normal(gc.conv2d(Tensor(x), Tensor(k), stride=stride, padding=padding).shape)
    check_grad(lambda xx, kk, bb: gc.sum(gc.conv2d(xx, kk, bb, stride, padding) * w), x, k, b, tol=1e-6)


def test_conv2d_errors():
    with pytest.raises(gc.ShapeError, match="channels"):
        gc.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(gc.ShapeError, match="odd"):
        gc.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 2, 2))))


def test_upsample_gradient(rng):
    x = rng.standard_normal((1, 2, 3, 3))
    w = rng.standard_normal((1, 2, 6, 6))
    check_grad(lambda t: gc.sum(gc.upsample_nearest(t, 2) * w), x)


def test_backward_requires_scalar_and_runs_once():
    a = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(gc.ShapeError):
        gc.backward(a * 2.0)
    loss = gc.sum(a * a)
    graph = gc.backward(loss)
    assert len(graph.nodes) >= 3
    with pytest.raises(gc.GradError):
        gc.backward(loss)


def test_shared_subexpression_accumulates():
    a = Tensor(np.array(3.0), requires_grad=True)
    b = a * a
    gc.backward(b + b)
    assert float(a.grad) == 12.0
    assert float(b.grad) == 2.0  # intermediates get their gradient too


def test_no_grad_records_nothing():
    a = Tensor(np.ones(2), requires_grad=True)
    with gc.no_grad():
        out = gc.sum(a * 3.0)
    assert not out.requires_grad and out._parents == ()
    assert gc.grad_enabled()


def test_numpy_operands_do_not_swallow_tensors():
    t = Tensor(np.ones(2), requires_grad=True)
    out = np.array([2.0, 3.0]) * t
    assert isinstance(out, Tensor)
