import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ustrun.grid import one_hot
from ustrun.losses import (EPS, _ce, _dice, ce_dice, lambda_schedule, total_loss, weighted_ce,
                           weighted_dice)

from conftest import random_prob_field


def test_ce_perfect_prediction():
    y = np.array([[0, 1], [1, 0]])
    assert weighted_ce(y, one_hot(y, 2), np.ones((2, 2))) == pytest.approx(-math.log(1 - EPS), abs=1e-15)


def test_ce_fully_masked(rng):
    p = random_prob_field(rng, 2, 4, 4)
    assert weighted_ce(rng.integers(0, 2, (4, 4)), p, np.zeros((4, 4))) == 0.0


def test_ce_hand_value():
    y = np.array([[1, 1]])
    p1 = np.array([[0.5, 0.25]])
    p = np.stack([1 - p1, p1])
    expected = (-math.log(0.5) - math.log(0.25)) / 2
    assert abs(weighted_ce(y, p, np.ones((1, 2))) - expected) < 1e-9
    assert abs(expected - 1.0397207708399179) < 1e-12


def test_ce_masked_pixels_count_in_denominator():
    y = np.array([[1, 1]])
    p1 = np.array([[0.5, 0.25]])
    p = np.stack([1 - p1, p1])
    assert abs(weighted_ce(y, p, np.array([[1, 0]])) - (-math.log(0.5) / 2)) < 1e-12


def test_dice_examples():
    y = np.zeros((4, 4), int)
    y[:2, :2] = 1
    ones = np.ones((4, 4))
    assert weighted_dice(y, one_hot(y, 2), ones) == 0.0
    p_bad = one_hot(np.zeros_like(y), 2)
    assert weighted_dice(y, p_bad, ones) == 1.0
    p1 = np.where(y == 1, 0.5, 0.0)
    p = np.stack([1 - p1, p1])
    assert abs(weighted_dice(y, p, ones) - (1 - (2 * 2) / (1 + 4))) < 1e-9


def test_dice_empty_class_contributes_zero():
    y = np.zeros((3, 3), int)
    p = one_hot(y, 3)
    assert weighted_dice(y, p, np.ones((3, 3))) == 0.0
    assert weighted_dice(y, p, np.zeros((3, 3))) == 0.0


def test_lambda_values():
    assert lambda_schedule(10, 10) == 1.0
    assert abs(lambda_schedule(0, 10) - math.exp(-5)) < 1e-12
    assert abs(lambda_schedule(0, 10) - 0.006737947) < 1e-9
    assert abs(lambda_schedule(5, 10) - 0.082085) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 1000), st.data())
def test_lambda_monotone_and_square_smaller(total, data):
    t1 = data.draw(st.integers(0, total - 1))
    t2 = data.draw(st.integers(t1 + 1, total))
    assert lambda_schedule(t1, total) < lambda_schedule(t2, total)
    lam = lambda_schedule(t1, total)
    assert lam * lam <= lam


def test_total_loss_examples():
    assert total_loss(0, 0, 0, 0, 0.3).l_total == 0
    assert total_loss(1, 0, 0, 0, 0.3).l_total == 1
    assert total_loss(0, 1, 1, 1, lambda_schedule(7, 7)).l_total == 3


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=4, max_size=4), st.floats(0.001, 1))
def test_total_loss_formula(parts, lam):
    b = total_loss(*parts, lam)
    assert abs(b.l_total - (b.l_s + lam * (b.l_in + b.l_out + lam * b.l_sym))) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3, 4]))
def test_losses_bounded(seed, c):
    rng = np.random.default_rng(seed)
    p = random_prob_field(rng, c, 6, 6)
    y = rng.integers(0, c, (6, 6))
    w = rng.integers(0, 2, (6, 6))
    assert weighted_ce(y, p, w) >= 0
    assert 0 <= weighted_dice(y, p, w) <= 1
    # shrinking the support never increases the CE numerator
    w2 = w * rng.integers(0, 2, (6, 6))
    assert weighted_ce(y, p, w2) <= weighted_ce(y, p, w) + 1e-15


@pytest.mark.parametrize("fn", [_ce, _dice])
@pytest.mark.parametrize("seed", range(5))
def test_loss_gradients_match_finite_differences(fn, seed):
    rng = np.random.default_rng(seed)
    c = 3
    p = random_prob_field(rng, c, 8, 8) * 0.9 + 0.05 / c
    y = rng.integers(0, c, (8, 8))
    w = rng.integers(0, 2, (8, 8))
    _, g = fn(y, p, w)
    fd = np.zeros_like(p)
    h = 1e-4
    for idx in np.ndindex(p.shape):
        p[idx] += h
        up = fn(y, p, w)[0]
        p[idx] -= 2 * h
        down = fn(y, p, w)[0]
        p[idx] += h
        fd[idx] = (up - down) / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-3


def test_ce_dice_is_sum(rng):
    p = random_prob_field(rng, 2, 5, 5)
    y = rng.integers(0, 2, (5, 5))
    w = np.ones((5, 5))
    v, g = ce_dice(y, p, w)
    assert abs(v - weighted_ce(y, p, w) - weighted_dice(y, p, w)) < 1e-12
    assert np.allclose(g, _ce(y, p, w)[1] + _dice(y, p, w)[1], atol=1e-12)


def test_batched_loss_pools_pixels(rng):
    p = random_prob_field(rng, 2, 4, 4, (3,))
    y = rng.integers(0, 2, (3, 4, 4))
    w = np.ones((3, 4, 4))
    assert abs(weighted_ce(y, p, w) - np.mean([weighted_ce(y[i], p[i], w[i]) for i in range(3)])) < 1e-12
