import math

import pytest

from mlpmine.errors import DataError, ParameterError
from mlpmine.linalg import DenseMatrix, RngState
from mlpmine.losses import (
    PenaltyConfig,
    LossReport,
    cross_entropy_softmax,
    penalty_grad,
    penalty_value,
    softmax,
)

from conftest import assert_grad_close, central_diff, rand_matrix


def test_softmax_uniform_row():
    logits = DenseMatrix(1, 47)
    probs = softmax(logits)
    for v in probs.data:
        assert abs(v - 1.0 / 47.0) < 1e-14


def test_softmax_closed_form():
    logits = DenseMatrix.from_rows([[0.0, math.log(3.0)]])
    probs = softmax(logits)
    assert abs(probs.get(0, 0) - 0.25) < 1e-12
    assert abs(probs.get(0, 1) - 0.75) < 1e-12


def test_softmax_shift_invariance_and_row_sums():
    rng = RngState(17)
    logits = rand_matrix(rng, 20, 47, -50.0, 50.0)
    probs = softmax(logits)
    shifted = logits.copy()
    for i in range(shifted.rows):
        for j in range(shifted.cols):
            shifted.set(i, j, shifted.get(i, j) + 13.25)
    probs2 = softmax(shifted)
    for a, b in zip(probs.data, probs2.data):
        assert abs(a - b) <= 1e-12
    for i in range(probs.rows):
        assert abs(math.fsum(probs.row(i)) - 1.0) <= 1e-12


def test_cross_entropy_perfect_prediction():
    logits = DenseMatrix.from_rows([[50.0, -50.0], [-50.0, 50.0]])
    loss, _ = cross_entropy_softmax(logits, [0, 1])
    assert loss < 1e-12


def test_cross_entropy_uniform_logits_is_log_47():
    logits = DenseMatrix(5, 47)
    loss, grad = cross_entropy_softmax(logits, [0, 1, 2, 3, 46])
    assert abs(loss - math.log(47.0)) < 1e-12
    assert abs(loss - 3.8501) < 1e-4


def test_cross_entropy_accepts_one_hot():
    logits = rand_matrix(RngState(3), 4, 5)
    onehot = DenseMatrix(4, 5)
    labels = [1, 0, 4, 2]
    for i, lab in enumerate(labels):
        onehot.set(i, lab, 1.0)
    l1, g1 = cross_entropy_softmax(logits, labels)
    l2, g2 = cross_entropy_softmax(logits, onehot)
    assert l1 == l2 and g1 == g2


def test_cross_entropy_label_out_of_range():
    logits = DenseMatrix(2, 3)
    with pytest.raises(DataError):
        cross_entropy_softmax(logits, [0, 3])
    with pytest.raises(DataError):
        cross_entropy_softmax(logits, [-1, 0])


def test_cross_entropy_gradient_matches_finite_differences():
    rng = RngState(2020)
    logits = rand_matrix(rng, 3, 6, -2.0, 2.0)
    labels = [rng.randbelow(6) for _ in range(3)]
    _, grad = cross_entropy_softmax(logits, labels)
    for idx in range(len(logits.data)):
        numeric = central_diff(
            lambda: cross_entropy_softmax(logits, labels)[0], logits.data, idx
        )
        assert_grad_close(grad.data[idx], numeric)


def test_penalty_values():
    weights = [DenseMatrix.from_rows([[1.0, -2.0, 3.0]])]
    assert abs(penalty_value(weights, PenaltyConfig("L1", 0.1)) - 0.6) < 1e-15
    assert abs(penalty_value(weights, PenaltyConfig("L2", 0.1)) - 1.4) < 1e-15
    assert penalty_value(weights, PenaltyConfig("L1", 0.0)) == 0.0
    assert penalty_value(weights, PenaltyConfig("none", 0.0)) == 0.0
    assert penalty_value(weights, PenaltyConfig("none", 5.0)) == 0.0


def test_penalty_value_monotone_in_lambda_and_nonnegative():
    rng = RngState(4)
    weights = [rand_matrix(rng, 3, 4), rand_matrix(rng, 4, 2)]
    prev = -1.0
    for lam in (0.0, 1e-5, 1e-3, 0.1, 2.0):
        for kind in ("L1", "L2"):
            v = penalty_value(weights, PenaltyConfig(kind, lam))
            assert v >= 0.0
        v1 = penalty_value(weights, PenaltyConfig("L1", lam))
        assert v1 >= prev
        prev = v1


def test_penalty_grads():
    w = [DenseMatrix.from_rows([[3.0, 0.0, -1.5]])]
    g_l2 = penalty_grad(w, PenaltyConfig("L2", 0.1))[0]
    assert abs(g_l2.get(0, 0) - 0.6) < 1e-15  # 2 * lambda * theta
    g_l1 = penalty_grad(w, PenaltyConfig("L1", 0.5))[0]
    assert g_l1.get(0, 0) == 0.5
    assert g_l1.get(0, 1) == 0.0  # sign(0) = 0
    assert g_l1.get(0, 2) == -0.5
    g_none = penalty_grad(w, PenaltyConfig("none", 0.0))[0]
    assert all(v == 0.0 for v in g_none.data)


def test_penalty_grad_matches_finite_differences():
    rng = RngState(55)
    w = rand_matrix(rng, 3, 3, 0.2, 2.0)  # away from 0 for the L1 kink
    for i in range(len(w.data)):
        if rng.uniform() < 0.5:
            w.data[i] = -w.data[i]
    for cfg in (PenaltyConfig("L1", 0.3), PenaltyConfig("L2", 0.7)):
        grad = penalty_grad([w], cfg)[0]
        for idx in range(len(w.data)):
            numeric = central_diff(lambda: penalty_value([w], cfg), w.data, idx)
            assert_grad_close(grad.data[idx], numeric)


def test_penalty_config_validation():
    with pytest.raises(ParameterError):
        PenaltyConfig("L3", 0.1)
    with pytest.raises(ParameterError):
        PenaltyConfig("L1", -0.1)


def test_loss_report_total():
    rep = LossReport(1.25, 0.5)
    assert rep.total == 1.75
