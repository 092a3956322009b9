import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from softcut import diffcore as dc
from softcut import _fallback


def test_forward_trivial_roots():
    assert dc.forward(dc.total(dc.constant([[1, 2], [3, 4]]))) == 10.0
    assert dc.forward(dc.trace(dc.constant(np.eye(3)))) == 3.0
    assert dc.forward(dc.total(dc.sigmoid(dc.constant([[0.0]])))) == 0.5


def test_forward_rejects_non_scalar():
    with pytest.raises(dc.ShapeError):
        dc.forward(dc.constant(np.ones((2, 2))))


def test_shape_error_names_kernel():
    with pytest.raises(dc.ShapeError) as err:
        dc.matmul(dc.constant(np.ones((2, 3))), dc.constant(np.ones((2, 3))))
    assert err.value.kernel == "matmul"
    assert (2, 3) in err.value.shapes


def test_no_silent_broadcasting():
    with pytest.raises(dc.ShapeError):
        dc.add(dc.constant(np.ones((3, 2))), dc.constant(np.ones((1, 2))))
    with pytest.raises(dc.ShapeError):
        dc.row_mul(dc.constant(np.ones((3, 2))), dc.constant(np.ones((1, 3))))


def test_backward_before_forward():
    x = dc.leaf(np.ones((2, 2)))
    with pytest.raises(dc.DiffError):
        dc.backward(dc.total(x))


def test_grad_of_sum_is_ones():
    x = dc.leaf(np.arange(6.0).reshape(2, 3))
    root = dc.total(x)
    dc.forward(root)
    grads = dc.backward(root)
    np.testing.assert_array_equal(grads[x], np.ones((2, 3)))


def test_grad_of_square():
    x = dc.leaf([[3.0]])
    root = dc.total(dc.mul(x, x))
    dc.forward(root)
    dc.backward(root)
    assert x.grad[0, 0] == 6.0


def test_lgamma_grad_is_digamma():
    x = dc.leaf([[2.0]])
    root = dc.total(dc.lgamma(x))
    dc.forward(root)
    dc.backward(root)
    assert x.grad[0, 0] == pytest.approx(float(mpmath.digamma(2)), abs=1e-14)
    assert x.grad[0, 0] == pytest.approx(0.4227843, abs=1e-7)
    # central difference on lgamma itself, independent of the digamma code
    h = 1e-5
    fd = (_fallback.lgamma(np.array([2.0 + h])) - _fallback.lgamma(np.array([2.0 - h]))) / (2 * h)
    assert x.grad[0, 0] == pytest.approx(fd[0], abs=1e-9)


@pytest.mark.parametrize("x", [1e-6, 1e-3, 0.3, 1.0, 2.5, 9.5, 10.0, 37.2, 1e4 + 0.25])
def test_special_functions_against_mpmath(x):
    lg = float(mpmath.loggamma(x))
    psi = float(mpmath.digamma(x))
    arr = np.array([[x]])
    assert dc.lgamma(arr).value[0, 0] == pytest.approx(lg, rel=1e-13, abs=1e-13)
    assert dc.digamma(arr)[0, 0] == pytest.approx(psi, rel=1e-12, abs=1e-12)


def test_fd_check_examples():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(3, 3))
    assert dc.finite_difference_check(lambda n: dc.total(dc.exp(n)), x, 1e-6) <= 1e-6
    err = dc.finite_difference_check(lambda n: dc.trace(dc.matmul(dc.transpose(n), n)), np.eye(2), 1e-6)
    assert err <= 1e-8


def test_fd_check_unused_leaf_is_zero():
    other = dc.constant(np.ones((2, 2)))
    assert dc.finite_difference_check(lambda n: dc.total(other), np.ones((2, 2)), 1e-6) == 0.0


def test_fd_check_epsilon_range():
    with pytest.raises(ValueError):
        dc.finite_difference_check(lambda n: dc.total(n), np.ones((1, 1)), 1e-2)


def test_fd_check_reports_nonfinite_entry():
    with pytest.raises(dc.DiffError, match=r"\(0, 1\)"):
        dc.finite_difference_check(lambda n: dc.total(dc.log(n)), np.array([[1.0, 5e-7]]), 1e-6)


def test_shared_subexpression_matches_unrolled():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 2))

    x = dc.leaf(a)
    y = dc.matmul(x, dc.constant(b))
    shared = dc.total(dc.mul(y, y))
    dc.forward(shared)
    dc.backward(shared)

    x2 = dc.leaf(a)
    y1 = dc.matmul(x2, dc.constant(b))
    y2 = dc.matmul(x2, dc.constant(b))
    unrolled = dc.total(dc.mul(y1, y2))
    dc.forward(unrolled)
    dc.backward(unrolled)
    np.testing.assert_allclose(x.grad, x2.grad, rtol=1e-15, atol=1e-15)


def test_deterministic_forward_is_bit_identical():
    dc.set_deterministic(True)
    rng = np.random.default_rng(5)
    a = rng.normal(size=(50, 20))
    vals = [dc.forward(dc.total(dc.exp(dc.scale(dc.constant(a), 0.1)))) for _ in range(3)]
    assert vals[0] == vals[1] == vals[2]


def test_parallel_reductions_agree():
    a = np.random.default_rng(1).normal(size=(5000, 3))
    dc.set_deterministic(False)
    try:
        par_rows = dc.row_sum(a).value
        par_cols = dc.col_sum(a).value
        par_tot = dc.total(a).value
    finally:
        dc.set_deterministic(True)
    np.testing.assert_allclose(par_rows, a.sum(axis=1, keepdims=True), rtol=1e-12)
    np.testing.assert_allclose(par_cols, a.sum(axis=0, keepdims=True), rtol=1e-12)
    np.testing.assert_allclose(par_tot, [[a.sum()]], rtol=1e-12)


def test_clip_blocks_gradient_outside():
    x = dc.leaf([[-2.0, 0.5, 3.0]])
    root = dc.total(dc.clip(x, 0.0, 1.0))
    dc.forward(root)
    dc.backward(root)
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_row_mul_gradients():
    a = dc.leaf([[1.0, 2.0], [3.0, 4.0]])
    v = dc.leaf([[2.0], [-1.0]])
    root = dc.total(dc.row_mul(a, v))
    dc.forward(root)
    dc.backward(root)
    np.testing.assert_array_equal(a.grad, [[2.0, 2.0], [-1.0, -1.0]])
    np.testing.assert_array_equal(v.grad, [[3.0], [7.0]])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
def test_sigmoid_stable_and_bounded(a):
    out = dc.sigmoid(dc.constant(a * 100)).value
    assert np.all(np.isfinite(out))
    assert np.all((out >= 0) & (out <= 1))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(0.1, 3.0)))
def test_grad_of_sum_of_power_property(a):
    x = dc.leaf(a)
    root = dc.total(dc.power(x, 3.0))
    dc.forward(root)
    dc.backward(root)
    np.testing.assert_allclose(x.grad, 3 * a ** 2, rtol=1e-14)
