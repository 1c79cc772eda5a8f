"""Mask BCE plus permutation-invariant position loss, and prediction decoding.

A prediction is a length-10 vector: five mask probabilities followed by
five positions. Targets use the same layout (``TargetLabel.as_vector``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

N_SLOTS = 5
EPS = 1e-7


@dataclass(frozen=True)
class TargetLabel:
    mask: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=float).reshape(N_SLOTS)
        pos = np.asarray(self.positions, dtype=float).reshape(N_SLOTS)
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        if np.any(pos[mask == 0] != 0):
            raise ValueError("positions must be zero where the mask is zero")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.mask, self.positions])


def bce(pred_mask, true_mask) -> float:
    """Mean binary cross-entropy over the mask slots, predictions clamped to [eps, 1-eps]."""
    p = np.clip(np.asarray(pred_mask, dtype=float), EPS, 1 - EPS)
    y = np.asarray(true_mask, dtype=float)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def _bce_grad(pred_mask: np.ndarray, true_mask: np.ndarray) -> np.ndarray:
    inside = (pred_mask > EPS) & (pred_mask < 1 - EPS)
    p = np.clip(pred_mask, EPS, 1 - EPS)
    return np.where(inside, (p - true_mask) / (p * (1 - p)), 0.0) / pred_mask.size


def hungarian_assignment(cost) -> np.ndarray:
    """Row-to-column assignment minimising total cost of a square matrix.

    Shortest augmenting path with row/column potentials, O(n^3).
    ``result[i]`` is the column assigned to row ``i``.
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if cost.ndim != 2 or cost.shape[1] != n:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    # 1-based bookkeeping; column 0 is a virtual source
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of = np.zeros(n + 1, dtype=int)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[row_of[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1
    assignment = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        assignment[row_of[j] - 1] = j - 1
    return assignment


def _matched_sq(pred, true):
    cost = (pred[:, None] - true[None, :]) ** 2
    sigma = hungarian_assignment(cost)
    return sigma, pred - true[sigma]


def hungarian_loss(pred_pos, true_pos) -> float:
    """Mean squared error under the optimal slot assignment."""
    pred = np.asarray(pred_pos, dtype=float)
    true = np.asarray(true_pos, dtype=float)
    _, diff = _matched_sq(pred, true)
    return float(np.mean(diff**2))


def combined_loss(prediction, target: TargetLabel) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to all ten prediction entries.

    Both position arguments are gated by the *predicted* mask probabilities.
    The optimal assignment is held fixed when differentiating.
    """
    pred = np.asarray(prediction, dtype=float)
    if not np.all(np.isfinite(pred)):
        raise NumericError("non-finite prediction")
    m, p = pred[:N_SLOTS], pred[N_SLOTS:]
    a = m * target.positions  # gated ground truth
    b = m * p  # gated prediction
    sigma, diff = _matched_sq(b, a)
    value = bce(m, target.mask) + float(np.mean(diff**2))

    d_b = 2 * diff / N_SLOTS
    d_a = np.zeros(N_SLOTS)
    np.add.at(d_a, sigma, -d_b)
    grad = np.empty(2 * N_SLOTS)
    grad[:N_SLOTS] = _bce_grad(m, target.mask) + d_b * p + d_a * target.positions
    grad[N_SLOTS:] = d_b * m
    return value, grad


def batch_loss(predictions: np.ndarray, targets: list[TargetLabel]) -> tuple[float, np.ndarray]:
    """Mean of :func:`combined_loss` over a batch, with per-row gradients."""
    grads = np.empty_like(predictions, dtype=float)
    total = 0.0
    for k, (pred, tgt) in enumerate(zip(predictions, targets)):
        value, grads[k] = combined_loss(pred, tgt)
        total += value
    n = len(targets)
    return total / n, grads / n


def decode(prediction) -> tuple[int, np.ndarray]:
    """Threshold the mask at 0.5 (inclusive) and keep the gated positions."""
    pred = np.asarray(prediction, dtype=float)
    keep = pred[:N_SLOTS] >= 0.5
    return int(keep.sum()), pred[N_SLOTS:][keep]
