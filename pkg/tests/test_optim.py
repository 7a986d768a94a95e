import numpy as np
import pytest

from glind.autodiff import Tensor
from glind.errors import ShapeError
from glind.optim import Adam, AdamState, adam_step


def test_zero_gradient_without_decay_is_fixed_point():
    p = np.array([1.0, -2.0, 3.0])
    state = AdamState(lr=0.01, weight_decay=0.0)
    out = adam_step(p, np.zeros(3), state)
    assert np.array_equal(out, p)


def test_zero_gradient_with_decay_scales_parameter():
    p = np.array([1.0, -2.0])
    state = AdamState(lr=0.01, weight_decay=0.1)
    out = adam_step(p, np.zeros(2), state)
    assert np.allclose(out, 0.999 * p, rtol=0, atol=1e-15)


def test_first_step_moves_by_lr_times_sign():
    # at t=1 the bias-corrected moments cancel |g|, leaving lr * sign(g)
    g = np.array([0.3, -0.7, 2.0])
    p = np.zeros(3)
    state = AdamState(lr=0.05, weight_decay=0.0)
    out = adam_step(p, g, state)
    hand = -0.05 * g / (np.abs(g) + 1e-8)
    assert np.allclose(out, hand, atol=1e-15)
    assert np.all(np.abs(np.abs(out) - 0.05) < 1e-6)


def test_recurrence_matches_hand_rollout():
    rng = np.random.default_rng(0)
    p = rng.standard_normal(4)
    grads = [rng.standard_normal(4) for _ in range(5)]
    state = AdamState(lr=0.01, weight_decay=0.01)

    m = np.zeros(4)
    v = np.zeros(4)
    expect = p.copy()
    got = p.copy()
    for t, g in enumerate(grads, start=1):
        expect = expect * (1 - 0.01 * 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expect = expect - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        got = adam_step(got, g, state)
    assert np.allclose(got, expect, atol=1e-14)


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        adam_step(np.zeros(3), np.zeros(2), AdamState())


def test_adam_class_treats_missing_grad_as_zero():
    p = Tensor([1.0, 2.0], requires_grad=True)
    opt = Adam({"p": p}, lr=0.1, weight_decay=0.0)
    opt.step()
    assert np.array_equal(p.data, [1.0, 2.0])
