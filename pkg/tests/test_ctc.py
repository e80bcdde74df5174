import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_labels, random_log_posteriors
from polyglot_ctc._kernels import _fallback
from polyglot_ctc.ctc import (
    InfeasibleAlignment,
    ctc_brute_force,
    ctc_forward_backward,
    ctc_loss_and_grad,
    ctc_reduce,
    extend_labels,
    is_feasible,
)
from polyglot_ctc.numerics import NEG_INF, grad_check, log_softmax, log_sum_exp

BL = "∅"


def test_reduce_examples():
    assert "".join(ctc_reduce("AA∅AABBC", blank=BL)) == "AABC"
    assert ctc_reduce([BL, BL, BL], blank=BL) == []
    assert ctc_reduce(["A", BL, "A"], blank=BL) == ["A", "A"]


@given(st.lists(st.integers(0, 3), max_size=12))
def test_reduce_idempotent(path):
    once = ctc_reduce(path)
    assert ctc_reduce(ctc_reduce(once)) == ctc_reduce(once)
    assert 0 not in once


def test_extend_examples():
    assert extend_labels([1, 2]) == [0, 1, 0, 2, 0]
    assert extend_labels([]) == [0]
    assert extend_labels([1]) == [0, 1, 0]


def test_two_frame_example():
    lp = np.log(np.full((2, 2), 0.5))
    # paths AA, A∅, ∅A
    assert ctc_forward_backward(lp, [1]).log_likelihood == pytest.approx(math.log(0.75), abs=1e-12)
    assert ctc_brute_force(lp, [1]) == pytest.approx(math.log(0.75), abs=1e-12)
    loss, _ = ctc_loss_and_grad(np.zeros((2, 2)), [1])
    assert loss == pytest.approx(-math.log(0.75), abs=1e-12)


def test_single_frame_cases(rng):
    lp = random_log_posteriors(rng, 1, 3)
    assert ctc_forward_backward(lp, []).log_likelihood == pytest.approx(lp[0, 0], abs=1e-15)
    assert ctc_forward_backward(lp, [1, 2]).log_likelihood == NEG_INF
    with pytest.raises(InfeasibleAlignment):
        ctc_loss_and_grad(np.zeros((1, 3)), [1, 2])


def test_label_out_of_inventory():
    with pytest.raises(ValueError, match="label out of inventory"):
        ctc_forward_backward(np.log(np.full((3, 2), 0.5)), [2])


def test_oracle_equivalence(rng):
    for _ in range(200):
        T = int(rng.integers(1, 7))
        K = int(rng.integers(2, 5))
        lp = random_log_posteriors(rng, T, K)
        z = random_labels(rng, K, 3)
        fb = ctc_forward_backward(lp, z).log_likelihood
        bf = ctc_brute_force(lp, z)
        if bf == NEG_INF:
            assert fb == NEG_INF
        else:
            assert abs(fb - bf) <= 1e-9


def test_brute_force_guards():
    with pytest.raises(ValueError, match="oracle bound exceeded"):
        ctc_brute_force(np.log(np.full((12, 5), 0.2)), [1])
    assert ctc_brute_force(np.log(np.full((2, 3), 1 / 3)), [1, 2, 1]) == NEG_INF


def test_lattice_consistency(rng):
    for _ in range(50):
        T = int(rng.integers(1, 10))
        K = int(rng.integers(2, 6))
        lp = random_log_posteriors(rng, T, K)
        z = random_labels(rng, K, 4)
        tb = ctc_forward_backward(lp, z)
        if tb.log_likelihood == NEG_INF:
            continue
        for t in range(T):
            assert abs(log_sum_exp(tb.alpha[t] + tb.beta[t]) - tb.log_likelihood) <= 1e-9


def test_compiled_and_fallback_lattices_agree(rng):
    for _ in range(30):
        T, K = int(rng.integers(1, 12)), int(rng.integers(2, 6))
        lp = random_log_posteriors(rng, T, K)
        ext = np.array(extend_labels(random_labels(rng, K, 5)), dtype=np.int64)
        a, b = _fallback.ctc_lattice(lp, ext)
        ref = ctc_forward_backward(lp, ext[1::2].tolist())
        np.testing.assert_allclose(a, ref.alpha, atol=1e-12)
        np.testing.assert_allclose(b, ref.beta, atol=1e-12)


def test_gradient_rows_sum_to_zero(rng):
    for _ in range(50):
        T, K = int(rng.integers(3, 9)), int(rng.integers(2, 6))
        z = random_labels(rng, K, 3)
        if not is_feasible(T, z):
            continue
        _, g = ctc_loss_and_grad(rng.normal(size=(T, K)), z)
        assert np.max(np.abs(g.sum(axis=1))) <= 1e-10


def test_gradient_matches_finite_differences(rng):
    for _ in range(10):
        x = rng.normal(size=(5, 4))
        z = [int(v) for v in rng.integers(1, 4, size=2)]
        _, g = ctc_loss_and_grad(x, z)
        err = grad_check(lambda v: ctc_loss_and_grad(v.reshape(5, 4), z)[0], x, g, step=1e-5)
        assert err <= 1e-6


def test_appending_frames_keeps_feasibility(rng):
    for _ in range(30):
        K = 3
        z = random_labels(rng, K, 3)
        T = max(1, len(z) + sum(a == b for a, b in zip(z, z[1:])))
        lp = random_log_posteriors(rng, T, K)
        assert ctc_forward_backward(lp, z).log_likelihood > NEG_INF
        longer = np.vstack([lp, random_log_posteriors(rng, 1, K)])
        assert ctc_forward_backward(longer, z).log_likelihood > NEG_INF


def test_feasibility_matches_enumeration():
    for T in range(1, 5):
        for u in range(0, 4):
            for z in itertools.product([1, 2], repeat=u):
                lp = np.log(np.full((T, 3), 1 / 3))
                reachable = ctc_brute_force(lp, list(z)) > NEG_INF
                assert reachable == is_feasible(T, list(z))
