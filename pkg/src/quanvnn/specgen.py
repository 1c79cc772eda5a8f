"""Synthetic Lorentzian spectra with controllable difficulty.

A spectrum is 200 intensities on a uniform grid over [0, 1]. Peaks are
placed one per equal-width section; the offset inside a section follows a
symmetric double log-normal density that can favour section centres or
section edges.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

from .loss import N_SLOTS, TargetLabel
from .rng import SPLIT, derive_seed, stream

log = logging.getLogger(__name__)

N_POINTS = 200
GRID = np.linspace(0.0, 1.0, N_POINTS)
PLACEMENT_SCALE = 5.0
CDF_TABLE_SIZE = 4096
FORMAT_VERSION = 1


@dataclass(frozen=True)
class DifficultyPreset:
    name: str
    peak_count_range: tuple[int, int]  # inclusive
    linewidth_range: tuple[float, float]  # [lo, hi)
    intensity_range: tuple[float, float]  # [lo, hi)
    noise_magnitude: float
    placement_mu: float
    placement_sigma: float

    def __post_init__(self):
        lo, hi = self.peak_count_range
        if not 0 <= lo <= hi <= N_SLOTS:
            raise ValueError(f"bad peak_count_range {self.peak_count_range}")
        for r in (self.linewidth_range, self.intensity_range):
            if not r[0] < r[1]:
                raise ValueError(f"empty range {r}")
        if self.noise_magnitude < 0:
            raise ValueError("noise_magnitude must be >= 0")


EASY = DifficultyPreset("easy", (0, 2), (0.02, 0.1), (500.0, 1000.0), 1.0, 1.0, 0.96)
MEDIUM = DifficultyPreset("medium", (3, 5), (0.025, 0.12), (500.0, 1000.0), 2.0, 1.0, 0.96)
HARD = DifficultyPreset("hard", (3, 5), (0.1, 0.22), (100.0, 500.0), 14.0, 0.85, 1.5)
PRESETS = {p.name: p for p in (EASY, MEDIUM, HARD)}
DIFFICULTIES = tuple(PRESETS)


@dataclass
class Spectrum:
    points: np.ndarray
    label: TargetLabel
    difficulty: str
    seed: int = 0
    # generator parameters, kept for inspection only (not serialised)
    peaks: list[tuple[float, float, float]] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.shape != (N_POINTS,):
            raise ValueError(f"spectrum must have {N_POINTS} points, got {self.points.shape}")

    @property
    def count(self) -> int:
        return self.label.count

    def to_record(self) -> dict:
        return {
            "points": self.points.tolist(),
            "mask": [int(v) for v in self.label.mask],
            "positions": self.label.positions.tolist(),
            "difficulty": self.difficulty,
            "seed": int(self.seed),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Spectrum":
        return cls(np.array(rec["points"], dtype=float), TargetLabel(rec["mask"], rec["positions"]),
                   rec["difficulty"], int(rec.get("seed", 0)))


# ------------------------------------------------------------ placement density


def lognormal_pdf(x, mu: float, sigma: float):
    """Log-normal density; zero for ``x <= 0``."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    val = np.exp(-((np.log(safe) - mu) ** 2) / (2 * sigma**2)) / (safe * sigma * math.sqrt(2 * math.pi))
    out = np.where(x > 0, val, 0.0)
    return out[()] if out.ndim == 0 else out


def _placement_raw(x, mu, sigma):
    x = np.asarray(x, dtype=float)
    return lognormal_pdf(PLACEMENT_SCALE * x, mu, sigma) + lognormal_pdf(PLACEMENT_SCALE - PLACEMENT_SCALE * x, mu, sigma)


@lru_cache(maxsize=None)
def _placement_norm(mu: float, sigma: float) -> float:
    # symmetric, so integrate one half and double; the breakpoint keeps quad
    # honest for narrow modes near the edge
    val, _ = integrate.quad(lambda t: float(_placement_raw(t, mu, sigma)), 0.0, 0.5,
                            points=[min(0.49, math.exp(mu - sigma**2) / PLACEMENT_SCALE)], limit=200,
                            epsabs=1e-13, epsrel=1e-12)
    return 2 * val


def placement_pdf(x, mu: float, sigma: float):
    """Normalised symmetric double log-normal density on [0, 1]."""
    return _placement_raw(x, mu, sigma) / _placement_norm(mu, sigma)


@lru_cache(maxsize=None)
def _placement_table(mu: float, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    # cell integrals by 8-point Gauss-Legendre; the density is smooth on a cell
    edges = np.linspace(0.0, 1.0, CDF_TABLE_SIZE)
    nodes, weights = np.polynomial.legendre.leggauss(8)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    cells = (_placement_raw(mid[:, None] + half[:, None] * nodes, mu, sigma) @ weights) * half
    cdf = np.concatenate([[0.0], np.cumsum(cells)])
    cdf /= cdf[-1]
    return edges, cdf


def sample_placement(rng: np.random.Generator, mu: float, sigma: float, size=None):
    """Draw offsets in [0, 1] by inverse-CDF lookup with linear interpolation."""
    edges, cdf = _placement_table(mu, sigma)
    u = rng.random(size)
    return np.interp(u, cdf, edges)


# ------------------------------------------------------------ spectra


def lorentzian_sum(nu, peaks: Sequence[tuple[float, float, float]]):
    """Sum of ``A / (1 + (2 (nu - center) / width)^2)`` over ``(center, width, A)``."""
    nu = np.asarray(nu, dtype=float)
    total = np.zeros_like(nu)
    for center, width, amp in peaks:
        total += amp / (1.0 + (2.0 * (nu - center) / width) ** 2)
    return total


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def generate_spectrum(preset: DifficultyPreset, rng: np.random.Generator, n_peaks: int | None = None,
                      noise: bool = True, normalize: bool = True) -> Spectrum:
    """Draw one spectrum from ``preset``.

    ``n_peaks`` overrides the drawn count. ``noise`` and ``normalize`` exist
    so the raw Lorentzian sum can be inspected.
    """
    lo, hi = preset.peak_count_range
    n = int(rng.integers(lo, hi + 1))
    if n_peaks is not None:
        n = int(n_peaks)
    peaks = []
    width = 1.0 / n if n else 0.0
    for k in range(n):
        center = k * width + width * float(sample_placement(rng, preset.placement_mu, preset.placement_sigma))
        gamma = rng.uniform(*preset.linewidth_range)
        amp = rng.uniform(*preset.intensity_range)
        peaks.append((center, gamma, amp))
    intensity = lorentzian_sum(GRID, peaks)
    if noise:
        intensity = intensity + rng.normal(0.0, preset.noise_magnitude, N_POINTS)
    if normalize:
        intensity = _minmax(intensity)
    positions = np.zeros(N_SLOTS)
    positions[:n] = np.sort([c for c, _, _ in peaks])
    mask = np.zeros(N_SLOTS)
    mask[:n] = 1
    return Spectrum(intensity, TargetLabel(mask, positions), preset.name, peaks=peaks)


def _spectrum_from_seed(preset: DifficultyPreset, seed: int, n_peaks: int | None = None) -> Spectrum:
    s = generate_spectrum(preset, np.random.Generator(np.random.PCG64(seed)), n_peaks=n_peaks)
    s.seed = seed
    return s


def build_mixed_dataset(seed: int, n_hard: int = 550, n_medium: int = 350, n_easy: int = 250,
                        n_easy_empty: int = 50) -> list[Spectrum]:
    """Hard, medium, then easy spectra with exactly ``n_easy_empty`` empty easy spectra.

    Empty easy draws beyond the cap are redrawn. If the natural draws would
    fall short of the cap, the trailing easy slots are forced empty.
    """
    data = []
    idx = 0
    for preset, count in ((HARD, n_hard), (MEDIUM, n_medium)):
        for _ in range(count):
            data.append(_spectrum_from_seed(preset, derive_seed(seed, idx)))
            idx += 1
    empty = 0
    for k in range(n_easy):
        remaining = n_easy - k
        if n_easy_empty - empty >= remaining:
            spec = _spectrum_from_seed(EASY, derive_seed(seed, idx, 0), n_peaks=0)
        else:
            attempt = 0
            while True:
                spec = _spectrum_from_seed(EASY, derive_seed(seed, idx, attempt))
                if spec.count > 0 or empty < n_easy_empty:
                    break
                attempt += 1
        empty += spec.count == 0
        data.append(spec)
        idx += 1
    return data


def build_hard_dataset(seed: int, n: int = 1000) -> list[Spectrum]:
    return [_spectrum_from_seed(HARD, derive_seed(seed, k)) for k in range(n)]


def build_dataset(kind: str, seed: int) -> list[Spectrum]:
    if kind == "mixed":
        return build_mixed_dataset(seed)
    if kind == "hard":
        return build_hard_dataset(seed)
    raise ValueError(f"unknown dataset kind {kind!r}")


# ------------------------------------------------------------ splits


def _part_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    # test first, then validation relative to the remainder, both rounded up
    f_train, f_val, f_test = fractions
    n_test = math.ceil(f_test * n)
    rest = n - n_test
    n_val = math.ceil(f_val / (f_train + f_val) * rest) if f_val > 0 else 0
    return rest - n_val, n_val, n_test


def _strata(dataset: Sequence[Spectrum], indices: np.ndarray, min_size: int) -> dict:
    groups: dict[tuple[str, int], list[int]] = {}
    for i in indices:
        s = dataset[i]
        groups.setdefault((s.difficulty, s.count), []).append(int(i))
    # fold undersized strata into the nearest peak count of the same difficulty
    for key in sorted(groups, key=lambda k: (len(groups[k]), k)):
        if key not in groups or len(groups[key]) >= min_size or len(groups) == 1:
            continue
        same = [k for k in groups if k != key and k[0] == key[0]] or [k for k in groups if k != key]
        target = min(same, key=lambda k: (abs(k[1] - key[1]), k[1], k[0]))
        log.warning("stratum %s has %d members; merged into %s", key, len(groups[key]), target)
        groups[target] += groups.pop(key)
    return groups


def _allocate(total: int, sizes: dict, rng: np.random.Generator) -> dict:
    # largest remainder; ties broken by rng
    keys = sorted(sizes)
    n = sum(sizes[k] for k in keys)
    exact = np.array([total * sizes[k] / n for k in keys])
    base = np.floor(exact).astype(int)
    rem = exact - base
    order = np.lexsort((rng.random(len(keys)), -rem))
    base[order[: total - base.sum()]] += 1
    return dict(zip(keys, base.tolist()))


def _bounded_allocate(total: int, target: dict, lo: dict, hi: dict, rng: np.random.Generator) -> dict | None:
    # start from the nearest feasible value, then move one unit at a time
    # where the gap to the target is largest; None when the bounds cannot
    # meet the total
    keys = sorted(target)
    if sum(lo[k] for k in keys) > total or sum(hi[k] for k in keys) < total:
        return None
    quota = {k: min(max(int(round(target[k])), lo[k]), hi[k]) for k in keys}
    tie = dict(zip(keys, rng.random(len(keys))))
    while sum(quota.values()) != total:
        up = sum(quota.values()) < total
        movable = [k for k in keys if (quota[k] < hi[k] if up else quota[k] > lo[k])]
        gap = {k: (target[k] - quota[k]) if up else (quota[k] - target[k]) for k in movable}
        pick = max(movable, key=lambda k: (gap[k], tie[k]))
        quota[pick] += 1 if up else -1
    return quota


def _take(groups: dict, quota: dict, rng: np.random.Generator):
    taken, left = [], []
    for key in sorted(groups):
        members = rng.permutation(groups[key])
        taken += members[: quota[key]].tolist()
        left += members[quota[key]:].tolist()
    return np.sort(np.array(taken, dtype=int)), np.sort(np.array(left, dtype=int))


def _stratified_take(dataset, indices: np.ndarray, n_take: int, rng: np.random.Generator, min_size: int):
    groups = _strata(dataset, indices, min_size)
    quota = _allocate(n_take, {k: len(v) for k, v in groups.items()}, rng)
    return _take(groups, quota, rng)


def stratified_split(dataset: Sequence[Spectrum], fractions=(0.8, 0.1, 0.1), seed: int = 0,
                     test_seed: int | None = None, test_indices=None):
    """Split indices into train/validation/test, stratified on (difficulty, peak count).

    The test part depends only on ``test_seed`` (default ``seed``) or is
    given explicitly; train/validation are drawn from the rest with ``seed``.
    Without explicit test indices every stratum lands within one spectrum
    of its proportional share in all three parts. Returns three sorted
    index arrays.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    n = len(dataset)
    n_train, n_val, n_test = _part_sizes(n, fractions)
    everything = np.arange(n)
    val_rng = stream(seed, SPLIT, 1)
    if test_indices is not None:
        test = np.sort(np.asarray(test_indices, dtype=int))
        rest = np.setdiff1d(everything, test)
        f_train, f_val, _ = fractions
        n_val = math.ceil(f_val / (f_train + f_val) * len(rest)) if f_val > 0 else 0
        val, train = _stratified_take(dataset, rest, n_val, val_rng, min_size=2)
        return train, val, test

    test_rng = stream(seed if test_seed is None else test_seed, SPLIT, 0)
    groups = _strata(dataset, everything, min_size=3)
    sizes = {k: len(v) for k, v in groups.items()}
    test, _ = _take(groups, _allocate(n_test, sizes, test_rng), test_rng)
    in_test = set(test.tolist())
    rest_groups = {k: [i for i in v if i not in in_test] for k, v in groups.items()}
    eps = 1e-9
    target, lo, hi = {}, {}, {}
    for k, size in sizes.items():
        rest_k = len(rest_groups[k])
        v_k, t_k = n_val * size / n, n_train * size / n
        target[k] = v_k
        lo[k] = max(math.ceil(v_k - 1 - eps), math.ceil(rest_k - t_k - 1 - eps), 0)
        hi[k] = min(math.floor(v_k + 1 + eps), math.floor(rest_k - t_k + 1 + eps), rest_k)
    quota = _bounded_allocate(n_val, target, lo, hi, val_rng)
    if quota is None:
        log.warning("no per-stratum validation quota keeps every part within one spectrum; "
                    "falling back to proportional allocation of the remainder")
        quota = _allocate(n_val, {k: len(v) for k, v in rest_groups.items()}, val_rng)
    val, train = _take(rest_groups, quota, val_rng)
    return train, val, test


# ------------------------------------------------------------ files


def save_jsonl(dataset: Sequence[Spectrum], path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for s in dataset:
            fh.write(json.dumps(s.to_record()) + "\n")


def load_jsonl(path) -> list[Spectrum]:
    with Path(path).open() as fh:
        return [Spectrum.from_record(json.loads(line)) for line in fh if line.strip()]


def splits_path(dataset_path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.name + ".splits.json")


def save_splits(path, train, val, test, seed: int, fractions=(0.8, 0.1, 0.1)) -> None:
    doc = {"format_version": FORMAT_VERSION, "seed": int(seed), "fractions": list(fractions),
           "train": [int(i) for i in train], "val": [int(i) for i in val], "test": [int(i) for i in test]}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_splits(path) -> dict:
    return json.loads(Path(path).read_text())
