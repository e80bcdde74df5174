import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from polyglot_ctc.numerics import NEG_INF, ShapeError, grad_check, log_sum_exp, matmul, softmax_row

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_log_sum_exp_examples():
    assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert log_sum_exp([-3.25]) == -3.25
    assert log_sum_exp([NEG_INF, -1.5]) == -1.5
    assert log_sum_exp([NEG_INF, NEG_INF]) == NEG_INF


def test_log_sum_exp_empty():
    with pytest.raises(ValueError, match="empty reduction"):
        log_sum_exp([])


@given(st.lists(finite, min_size=1, max_size=20))
def test_log_sum_exp_bounds(vals):
    r = log_sum_exp(vals)
    assert r >= max(vals) - 1e-12
    assert r <= max(vals) + math.log(len(vals)) + 1e-12


def test_softmax_examples():
    np.testing.assert_allclose(softmax_row([0, 0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax_row([1000, 1000]), [0.5, 0.5])
    np.testing.assert_allclose(softmax_row([math.log(1), math.log(3)]), [0.25, 0.75], atol=1e-15)
    with pytest.raises(ValueError, match="non-finite logits"):
        softmax_row([0.0, math.nan])


@given(arrays(np.float64, st.integers(1, 12), elements=finite), finite)
def test_softmax_properties(v, shift):
    p = softmax_row(v)
    assert abs(p.sum() - 1) <= 1e-12
    assert np.all(p >= 0)
    assert np.argmax(p) == np.argmax(v) or p[np.argmax(p)] == p[np.argmax(v)]
    np.testing.assert_allclose(softmax_row(v + shift), p, atol=1e-12)


def test_matmul_examples():
    a = np.array([[1.0, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(a, [[5, 6], [7, 8]]), [[19, 22], [43, 50]])
    np.testing.assert_array_equal(matmul(a, np.eye(2)), a)
    np.testing.assert_array_equal(matmul(a, np.zeros((2, 3))), np.zeros((2, 3)))
    with pytest.raises(ShapeError, match=r"\(2, 2\).*\(3, 1\)"):
        matmul(a, np.ones((3, 1)))


def test_matmul_distributes(rng):
    for _ in range(20):
        a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        np.testing.assert_allclose(matmul(a, b + c), matmul(a, b) + matmul(a, c), atol=1e-12)


def test_grad_check_examples():
    assert grad_check(lambda x: x[0] ** 2, [3.0], [6.0], step=1e-5) <= 1e-8
    assert grad_check(lambda x: 4.0, [1.0, 2.0], [0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=30)
@given(st.integers(1, 5), st.integers(0, 10**6))
def test_grad_check_quadratic(n, seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(n, n))
    A = A + A.T
    x = r.normal(size=n)
    assert grad_check(lambda v: 0.5 * v @ A @ v, x, A @ x, step=1e-4) <= 1e-7


def test_grad_check_non_finite_names_coordinate():
    def f(v):
        return math.inf if v[1] > 0.5 else 0.0

    with pytest.raises(ValueError, match="coordinate 1"):
        grad_check(f, [0.0, 0.5], [0.0, 0.0], step=0.1)
