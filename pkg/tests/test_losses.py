"""Loss arithmetic against hand computations, plus the ramp schedule."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import multiplane.tensor as T
from multiplane.losses import LossConfig, ce_loss, lambda_effective, slc_loss, total_loss
from multiplane.tensor import ShapeError, Tensor


def test_ce_hand_computed_batch():
    probs = np.array([0.9, 0.2, 0.5])
    labels = [1, 0, 1]
    want = -(np.log(0.9) + np.log(0.8) + np.log(0.5)) / 3.0
    got = float(ce_loss(Tensor(probs), labels).data)
    assert abs(got - want) < 1e-12


def test_ce_perfect_prediction_is_tiny():
    got = float(ce_loss(Tensor(np.array([1.0, 0.0])), [1, 0]).data)
    assert 0.0 <= got < 1e-11


def test_ce_clamps_instead_of_diverging():
    got = float(ce_loss(Tensor(np.array([0.0])), [1]).data)
    assert np.isfinite(got)


def test_ce_validation():
    with pytest.raises(ValueError):
        ce_loss(Tensor(np.array([0.5])), [2])
    with pytest.raises(ShapeError):
        ce_loss(Tensor(np.array([0.5, 0.5])), [1])


def test_ce_gradient_sign():
    p = Tensor(np.array([0.7]), requires_grad=True)
    T.backward(ce_loss(p, [1]))
    assert p.grad[0] < 0  # raising p toward the true class lowers the loss


def test_slc_zero_iff_weights_match_true_softmax():
    logits = np.array([[2.0, -1.0], [0.5, 0.5], [-3.0, 1.0]])
    sm = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    w = Tensor(sm[:, 1].copy())
    got = float(slc_loss(w, Tensor(logits), 1).data)
    assert got < 1e-12
    # perturb one weight -> strictly positive
    w2 = sm[:, 1].copy()
    w2[0] += 0.1
    assert float(slc_loss(Tensor(w2), Tensor(logits), 1).data) > 0.05


def test_slc_scalar_oracle():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4, 2))
    weights = rng.uniform(size=4)
    label = 0
    sm = np.exp(logits - logits.max(axis=1, keepdims=True))
    sm /= sm.sum(axis=1, keepdims=True)
    want = np.sqrt(np.sum((weights - sm[:, label]) ** 2))
    got = float(slc_loss(Tensor(weights), Tensor(logits), label).data)
    assert abs(got - want) < 1e-12


def test_slc_single_position():
    logits = np.array([[0.0, 0.0]])
    got = float(slc_loss(Tensor(np.array([0.5])), Tensor(logits), 1).data)
    assert got < 1e-12


def test_slc_shift_invariance_of_logits():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(5, 2))
    w = rng.uniform(size=5)
    a = float(slc_loss(Tensor(w), Tensor(logits), 1).data)
    b = float(slc_loss(Tensor(w), Tensor(logits + 123.0), 1).data)
    assert abs(a - b) < 1e-9


def test_slc_validation():
    with pytest.raises(ValueError):
        slc_loss(Tensor(np.zeros(2)), Tensor(np.zeros((2, 2))), 3)
    with pytest.raises(ShapeError):
        slc_loss(Tensor(np.zeros(2)), Tensor(np.zeros((3, 2))), 1)


# ---------------------------------------------------------------------------
# schedule

def test_schedule_smoothed_reference_points():
    cfg = LossConfig(lam=0.2, ramp_start_epoch=20, ramp_steps=20)
    assert lambda_effective(1, cfg) == 0.0
    assert lambda_effective(20, cfg) == 0.0
    assert abs(lambda_effective(30, cfg) - 0.1) < 1e-15
    assert lambda_effective(40, cfg) == 0.2
    assert lambda_effective(100, cfg) == 0.2


def test_schedule_step_jumps_at_21():
    cfg = LossConfig(lam=0.2, ramp_start_epoch=20, mode="step")
    assert lambda_effective(20, cfg) == 0.0
    assert lambda_effective(21, cfg) == 0.2


def test_schedule_monotone_nondecreasing():
    cfg = LossConfig()
    vals = [lambda_effective(e, cfg) for e in range(1, 80)]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))


def test_schedule_validation():
    with pytest.raises(ValueError):
        lambda_effective(0, LossConfig())
    with pytest.raises(ValueError):
        LossConfig(lam=-0.1)
    with pytest.raises(ValueError):
        LossConfig(ramp_steps=0)
    with pytest.raises(ValueError):
        LossConfig(mode="linear")


def test_total_loss_arithmetic():
    cfg = LossConfig(lam=0.2, ramp_start_epoch=20, ramp_steps=20)
    ce = Tensor(np.asarray(0.7))
    slc = Tensor(np.asarray(1.3))
    assert float(total_loss(ce, slc, 10, cfg).data) == 0.7
    got = float(total_loss(ce, slc, 30, cfg).data)
    assert abs(got - (0.7 + 0.1 * 1.3)) < 1e-12
    got = float(total_loss(ce, slc, 99, cfg).data)
    assert abs(got - (0.7 + 0.2 * 1.3)) < 1e-12


def test_total_loss_keeps_gradient_path():
    ce = T.sum_over(T.mul(Tensor([0.5], requires_grad=True), 1.0))
    w = Tensor(np.array([0.3]), requires_grad=True)
    lg = Tensor(np.array([[1.0, -1.0]]))
    slc = slc_loss(w, lg, 1)
    out = total_loss(ce, slc, 50, LossConfig())
    T.backward(out)
    assert w.grad is not None and np.isfinite(w.grad).all()


@given(st.integers(min_value=1, max_value=200))
def test_schedule_bounded_by_lambda(epoch):
    cfg = LossConfig(lam=0.2)
    v = lambda_effective(epoch, cfg)
    assert 0.0 <= v <= 0.2
