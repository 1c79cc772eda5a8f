"""Peak-counting and position metrics, report aggregation, and the paired Wilcoxon test."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .loss import N_SLOTS, decode, hungarian_assignment
from .model import load_checkpoint
from .quantum import NoiseConfig
from .specgen import DIFFICULTIES, Spectrum

N_CLASSES = N_SLOTS + 1
EXACT_MAX_N = 12
METRIC_NAMES = ("f1", "recall", "precision", "mae", "mse")


def count_metrics(pred_counts, true_counts, n_classes: int = N_CLASSES) -> tuple[float, float, float]:
    """Support-weighted F1, recall and precision over classes ``0..n_classes-1``.

    Empty denominators give 0 for that class; classes absent from
    ``true_counts`` carry no weight.
    """
    pred = np.asarray(pred_counts, dtype=int)
    true = np.asarray(true_counts, dtype=int)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if true.size == 0:
        raise ValueError("need at least one sample")
    conf = np.zeros((n_classes, n_classes))
    np.add.at(conf, (true, pred), 1)
    tp = np.diag(conf)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    w = support / support.sum()
    return float(f1 @ w), float(recall @ w), float(precision @ w)


def _padded_pair(pred_pos, true_pos) -> tuple[np.ndarray, np.ndarray]:
    pred_pos = np.asarray(pred_pos, dtype=float).reshape(-1)
    true_pos = np.asarray(true_pos, dtype=float).reshape(-1)
    n = max(pred_pos.size, true_pos.size)
    a, b = np.zeros(n), np.zeros(n)
    a[: pred_pos.size] = pred_pos
    b[: true_pos.size] = true_pos
    return a, b


def matched_errors(pred_pos, true_pos) -> tuple[float, float, int]:
    """Summed absolute and squared error for one spectrum, and the slot count.

    Both position lists are zero-padded to the longer one; the absolute and
    squared errors are each minimised over assignments independently.
    """
    a, b = _padded_pair(pred_pos, true_pos)
    if a.size == 0:
        return 0.0, 0.0, 0
    diff = np.abs(a[:, None] - b[None, :])
    abs_sum = float(diff[np.arange(a.size), hungarian_assignment(diff)].sum())
    sq = diff**2
    sq_sum = float(sq[np.arange(a.size), hungarian_assignment(sq)].sum())
    return abs_sum, sq_sum, a.size


def position_errors(decoded: Sequence[tuple[int, np.ndarray]], targets) -> tuple[float, float]:
    """Dataset MAE and MSE of peak positions, averaged over matched slots.

    ``decoded`` holds ``(count, positions)`` pairs from :func:`loss.decode`;
    ``targets`` are :class:`TargetLabel` objects.
    """
    abs_total = sq_total = 0.0
    slots = 0
    for (_, pred_pos), tgt in zip(decoded, targets):
        a, s, n = matched_errors(pred_pos, tgt.positions[tgt.mask == 1])
        abs_total += a
        sq_total += s
        slots += n
    if slots == 0:
        return 0.0, 0.0
    return abs_total / slots, sq_total / slots


# ------------------------------------------------------------------ Wilcoxon


def _signed_ranks(a, b) -> tuple[np.ndarray, float]:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    ranks = stats.rankdata(np.abs(d))
    return ranks, float(ranks[d > 0].sum())


def _exact_upper_tail(ranks: np.ndarray, w_plus: float) -> float:
    # distribution of the positive-rank sum under random signs, on doubled
    # ranks so mid-ranks stay integral
    doubled = np.rint(2 * ranks).astype(int)
    counts = np.zeros(doubled.sum() + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r]
        counts = counts + shifted
    threshold = int(np.rint(2 * w_plus))
    return float(counts[threshold:].sum() / 2.0 ** len(ranks))


def wilcoxon_one_sided(paired_a, paired_b) -> float:
    """p-value for the alternative that ``a`` tends to exceed ``b``.

    Zero differences are dropped. Exact null distribution up to 12 pairs,
    normal approximation with tie correction beyond. All-zero differences
    give 1.
    """
    a = np.asarray(paired_a, dtype=float)
    b = np.asarray(paired_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    ranks, w_plus = _signed_ranks(a, b)
    n = ranks.size
    if n == 0:
        return 1.0
    if n < 5:
        warnings.warn(f"only {n} non-tied pairs; the test has little power", stacklevel=2)
    if n <= EXACT_MAX_N:
        return _exact_upper_tail(ranks, w_plus)
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - (tie_counts**3 - tie_counts).sum() / 48
    return float(stats.norm.sf((w_plus - mean) / math.sqrt(var)))


# ------------------------------------------------------------------ reports


@dataclass
class MetricsReport:
    f1: float
    recall: float
    precision: float
    mae: float
    mse: float
    n_spectra: int = 0
    support: int = 1
    std: dict = field(default_factory=dict)
    by_difficulty: dict = field(default_factory=dict)

    def values(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["by_difficulty"] = {k: cls.from_dict(v) if isinstance(v, dict) and "f1" in v else v
                              for k, v in d.get("by_difficulty", {}).items()}
        return cls(**d)


def score(predictions: np.ndarray, targets) -> MetricsReport:
    """Metrics for raw 10-vector predictions against :class:`TargetLabel` targets."""
    decoded = [decode(p) for p in predictions]
    f1, rec, prec = count_metrics([c for c, _ in decoded], [t.count for t in targets])
    mae, mse = position_errors(decoded, targets)
    return MetricsReport(f1, rec, prec, mae, mse, n_spectra=len(targets),
                         std={k: 0.0 for k in METRIC_NAMES})


def score_by_difficulty(predictions: np.ndarray, targets, difficulties: Sequence[str],
                        difficulty: str = "all") -> MetricsReport:
    """Score a split, optionally restricted to one difficulty, with a per-difficulty breakdown."""
    difficulties = np.asarray(difficulties)
    keep = np.ones(len(targets), dtype=bool) if difficulty == "all" else difficulties == difficulty
    if not keep.any():
        raise ValueError(f"no spectra with difficulty {difficulty!r}")
    idx = np.flatnonzero(keep)
    report = score(predictions[idx], [targets[i] for i in idx])
    for name in sorted(set(difficulties[idx])):
        sub = idx[difficulties[idx] == name]
        report.by_difficulty[name] = score(predictions[sub], [targets[i] for i in sub])
    return report


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Mean over runs with sample standard deviation; ``support`` counts the runs."""
    if not reports:
        raise ValueError("nothing to aggregate")
    k = len(reports)
    table = np.array([[r.values()[m] for m in METRIC_NAMES] for r in reports])
    # identical columns are reported exactly, without summation round-off
    same = np.ptp(table, axis=0) == 0
    mean = np.where(same, table[0], table.mean(axis=0))
    std = np.where(same, 0.0, table.std(axis=0, ddof=1)) if k > 1 else np.zeros(len(METRIC_NAMES))
    out = MetricsReport(*mean.tolist(), n_spectra=reports[0].n_spectra, support=k,
                        std=dict(zip(METRIC_NAMES, std.tolist())))
    names = set.intersection(*(set(r.by_difficulty) for r in reports))
    for name in sorted(names):
        out.by_difficulty[name] = aggregate([r.by_difficulty[name] for r in reports])
    return out


def table_rows(named: dict[str, MetricsReport]) -> list[dict]:
    """Rows in the column order F1, Recall, Precision, MAE, MSE, Support."""
    rows = []
    for name, r in named.items():
        rows.append({"model": name, "F1": r.f1, "F1_std": r.std.get("f1", 0.0), "Recall": r.recall,
                     "Recall_std": r.std.get("recall", 0.0), "Precision": r.precision,
                     "Precision_std": r.std.get("precision", 0.0), "MAE": r.mae, "MAE_std": r.std.get("mae", 0.0),
                     "MSE": r.mse, "MSE_std": r.std.get("mse", 0.0), "Support": r.support})
    return rows



def evaluate_params(model, params, spectra: Sequence[Spectrum], difficulty: str = "all",
                    noisy: bool = False, gamma: float | None = None) -> MetricsReport:
    """Score one parameter set on a list of spectra (eval mode, no dropout).

    With ``noisy`` the quantum front end is read out through the damping
    channel, using the model's own strength unless ``gamma`` is given.
    """
    if noisy and model.frontend_kind == "quantum":
        g = model.noise.gamma if gamma is None else gamma
        model = replace(model, noise=NoiseConfig(g, enabled=True))
    if difficulty != "all" and difficulty not in DIFFICULTIES:
        raise ValueError(f"unknown difficulty {difficulty!r}")
    if not spectra:
        raise ValueError("nothing to evaluate")
    diffs = [s.difficulty for s in spectra]
    if difficulty != "all":
        keep = [i for i, d in enumerate(diffs) if d == difficulty]
        if not keep:
            raise ValueError(f"no spectra with difficulty {difficulty!r}")
        spectra = [spectra[i] for i in keep]
        diffs = [diffs[i] for i in keep]
    preds = model.predict(params, np.stack([s.points for s in spectra]), noisy=noisy)
    return score_by_difficulty(preds, [s.label for s in spectra], diffs)


def evaluate(checkpoints, spectra: Sequence[Spectrum], difficulty: str = "all",
             noisy: bool = False, gamma: float | None = None) -> MetricsReport:
    """Evaluate one or more checkpoints and aggregate them (mean, sample std, support)."""
    if isinstance(checkpoints, (str, Path)):
        checkpoints = [checkpoints]
    if not checkpoints:
        raise FileNotFoundError("no checkpoints given")
    reports = []
    for path in checkpoints:
        model, params, _ = load_checkpoint(path)
        reports.append(evaluate_params(model, params, spectra, difficulty, noisy, gamma))
    return aggregate(reports)
