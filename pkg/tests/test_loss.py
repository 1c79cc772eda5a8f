import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

import oracles
from quanvnn.loss import (EPS, TargetLabel, batch_loss, bce, combined_loss, decode, hungarian_assignment,
                          hungarian_loss)

unit = st.floats(0, 1, allow_nan=False)
vec5 = st.lists(unit, min_size=5, max_size=5).map(np.array)


def random_target(rng):
    n = int(rng.integers(0, 6))
    mask = np.zeros(5)
    mask[:n] = 1
    pos = np.zeros(5)
    pos[:n] = np.sort(rng.random(n))
    return TargetLabel(mask, pos)


# ------------------------------------------------------------------ target label


def test_target_validation():
    with pytest.raises(ValueError):
        TargetLabel([1, 0, 0, 0, 2], np.zeros(5))
    with pytest.raises(ValueError):
        TargetLabel([1, 0, 0, 0, 0], [0.1, 0.2, 0, 0, 0])
    t = TargetLabel([1, 1, 0, 0, 0], [0.2, 0.7, 0, 0, 0])
    assert t.count == 2
    assert_allclose(t.as_vector(), [1, 1, 0, 0, 0, 0.2, 0.7, 0, 0, 0])


# ------------------------------------------------------------------ bce


def test_bce_perfect():
    y = np.array([1, 0, 1, 0, 0.0])
    assert bce(y, y) < 1e-6


def test_bce_half():
    assert abs(bce(np.full(5, 0.5), [1, 0, 1, 1, 0]) - math.log(2)) < 1e-12


def test_bce_formula(rng):
    for _ in range(50):
        p = rng.random(5)
        y = rng.integers(0, 2, 5)
        expected = sum(-(yi * math.log(pi) + (1 - yi) * math.log(1 - pi)) for pi, yi in zip(p, y)) / 5
        assert abs(bce(p, y) - expected) < 1e-12


def test_bce_clamped_at_extremes():
    value = bce(np.array([0.0, 1.0, 0, 0, 0]), [1, 0, 0, 0, 0])
    assert np.isfinite(value)
    assert abs(value - 2 * -math.log(EPS) / 5) < 1e-6


# ------------------------------------------------------------------ assignment


def test_assignment_identity():
    cost = 1 - np.eye(5)
    assert list(hungarian_assignment(cost)) == [0, 1, 2, 3, 4]


def test_assignment_reversal():
    cost = 1 - np.fliplr(np.eye(5))
    assert list(hungarian_assignment(cost)) == [4, 3, 2, 1, 0]


def test_assignment_matches_brute_force(rng):
    for _ in range(1000):
        cost = rng.normal(size=(5, 5))
        sigma = hungarian_assignment(cost)
        assert sorted(sigma) == list(range(5))
        assert abs(cost[np.arange(5), sigma].sum() - oracles.brute_assignment_cost(cost)) < 1e-12


def test_assignment_with_ties_and_other_sizes(rng):
    for n in (1, 2, 3, 4, 6):
        for _ in range(50):
            cost = rng.integers(0, 3, size=(n, n)).astype(float)
            sigma = hungarian_assignment(cost)
            assert abs(cost[np.arange(n), sigma].sum() - oracles.brute_assignment_cost(cost)) < 1e-12


def test_assignment_rejects_bad_input():
    with pytest.raises(ValueError):
        hungarian_assignment(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        hungarian_assignment(np.array([[0, np.inf], [1, 0]]))


# ------------------------------------------------------------------ hungarian loss


def test_hungarian_identical_is_zero():
    v = np.array([0.1, 0.5, 0.2, 0, 0.9])
    assert hungarian_loss(v, v) == 0


@given(vec5, st.permutations(range(5)))
def test_hungarian_permutation_is_zero(v, perm):
    assert hungarian_loss(v, v[list(perm)]) < 1e-12


@given(vec5, vec5, st.permutations(range(5)))
def test_hungarian_permutation_invariant(a, b, perm):
    base = hungarian_loss(a, b)
    assert abs(hungarian_loss(a[list(perm)], b) - base) < 1e-12
    assert abs(hungarian_loss(a, b[list(perm)]) - base) < 1e-12


def test_hungarian_matches_brute_force(rng):
    for _ in range(300):
        a, b = rng.random(5), rng.random(5)
        assert abs(hungarian_loss(a, b) - oracles.brute_matched_mse(a, b)) < 1e-12


# ------------------------------------------------------------------ combined loss


def test_combined_perfect_is_near_zero():
    t = TargetLabel([1, 1, 1, 0, 0], [0.1, 0.4, 0.8, 0, 0])
    value, _ = combined_loss(t.as_vector(), t)
    assert value < 1e-6


def test_combined_is_sum_of_terms(rng):
    for _ in range(20):
        t = random_target(rng)
        pred = rng.random(10)
        m, p = pred[:5], pred[5:]
        expected = bce(m, t.mask) + hungarian_loss(m * p, m * t.positions)
        assert abs(combined_loss(pred, t)[0] - expected) < 1e-12


def _assignment(pred, t):
    m, p = pred[:5], pred[5:]
    return hungarian_assignment(((m * p)[:, None] - (m * t.positions)[None, :]) ** 2)


def test_combined_gradient_finite_differences(rng):
    h = 1e-6
    checked = 0
    for _ in range(100):
        t = random_target(rng)
        pred = rng.uniform(0.05, 0.95, 10)
        _, grad = combined_loss(pred, t)
        fd = np.array([(combined_loss(pred + h * e, t)[0] - combined_loss(pred - h * e, t)[0]) / (2 * h)
                       for e in np.eye(10)])
        # skip the measure-zero cases where a step crosses an assignment switch
        sigma = _assignment(pred, t)
        if any(not np.array_equal(sigma, _assignment(pred + s * h * e, t)) for e in np.eye(10) for s in (-1, 1)):
            continue
        assert np.abs(grad - fd).max() <= 1e-6 * max(1.0, np.abs(fd).max())
        checked += 1
    assert checked >= 90


def test_combined_nonnegative(rng):
    for _ in range(10**4):
        t = random_target(rng)
        assert combined_loss(rng.random(10), t)[0] >= 0


def test_batch_loss_is_mean(rng):
    preds = rng.random((4, 10))
    targets = [random_target(rng) for _ in range(4)]
    value, grads = batch_loss(preds, targets)
    singles = [combined_loss(p, t) for p, t in zip(preds, targets)]
    assert abs(value - np.mean([s[0] for s in singles])) < 1e-14
    assert_allclose(grads, np.stack([s[1] for s in singles]) / 4)


# ------------------------------------------------------------------ decode


def test_decode_single():
    count, pos = decode([0.9, 0.1, 0.1, 0.1, 0.1, 0.3, 0.5, 0.5, 0.5, 0.5])
    assert count == 1
    assert_allclose(pos, [0.3])


def test_decode_below_threshold():
    count, pos = decode([0.49] * 5 + [0.2] * 5)
    assert count == 0 and pos.size == 0


def test_decode_threshold_inclusive():
    count, pos = decode([0.5, 0.2, 0.2, 0.2, 0.2, 0.7, 0, 0, 0, 0])
    assert count == 1
    assert_allclose(pos, [0.7])
