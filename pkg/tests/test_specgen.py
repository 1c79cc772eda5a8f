import logging
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

import oracles
from quanvnn import specgen as g
from quanvnn.loss import TargetLabel

FIG_PARAMS = [(1.0, 0.96), (0.85, 1.5)]


@pytest.fixture(scope="module")
def mixed():
    return g.build_mixed_dataset(7)


@pytest.fixture(scope="module")
def hard():
    return g.build_hard_dataset(7)


# ------------------------------------------------------------------ presets


def test_presets():
    assert (g.EASY.peak_count_range, g.EASY.linewidth_range, g.EASY.intensity_range, g.EASY.noise_magnitude) == (
        (0, 2), (0.02, 0.1), (500, 1000), 1)
    assert (g.MEDIUM.peak_count_range, g.MEDIUM.linewidth_range, g.MEDIUM.intensity_range,
            g.MEDIUM.noise_magnitude) == ((3, 5), (0.025, 0.12), (500, 1000), 2)
    assert (g.HARD.peak_count_range, g.HARD.linewidth_range, g.HARD.intensity_range, g.HARD.noise_magnitude) == (
        (3, 5), (0.1, 0.22), (100, 500), 14)
    assert (g.EASY.placement_mu, g.EASY.placement_sigma) == (1.0, 0.96)
    assert (g.HARD.placement_mu, g.HARD.placement_sigma) == (0.85, 1.5)


def test_preset_validation():
    with pytest.raises(ValueError):
        g.DifficultyPreset("bad", (3, 2), (0.1, 0.2), (1, 2), 1, 0, 1)
    with pytest.raises(ValueError):
        g.DifficultyPreset("bad", (0, 2), (0.1, 0.2), (1, 2), -1, 0, 1)


# ------------------------------------------------------------------ densities


@pytest.mark.parametrize("mu,sigma", FIG_PARAMS + [(0.0, 0.5)])
def test_lognormal_mode_value(mu, sigma):
    x = math.exp(mu)
    assert abs(g.lognormal_pdf(x, mu, sigma) - 1 / (x * sigma * math.sqrt(2 * math.pi))) < 1e-14


@pytest.mark.parametrize("mu,sigma", FIG_PARAMS)
def test_lognormal_integrates_to_one(mu, sigma):
    val, _ = integrate.quad(lambda x: g.lognormal_pdf(x, mu, sigma), 0, np.inf, limit=200)
    assert abs(val - 1) < 1e-6


@pytest.mark.parametrize("mu,sigma", FIG_PARAMS)
def test_lognormal_tail_decays(mu, sigma):
    mode = math.exp(mu - sigma**2)
    xs = np.linspace(3 * mode + 1, 200, 500)
    assert np.all(np.diff(g.lognormal_pdf(xs, mu, sigma)) < 0)


def test_lognormal_non_positive_support():
    assert g.lognormal_pdf(0.0, 1, 1) == 0
    assert np.all(g.lognormal_pdf(np.array([-1.0, -0.1]), 1, 1) == 0)


def test_lognormal_matches_scipy():
    xs = np.linspace(0.01, 20, 300)
    assert_allclose(g.lognormal_pdf(xs, 0.85, 1.5), stats.lognorm.pdf(xs, 1.5, scale=math.exp(0.85)), rtol=1e-12)


@pytest.mark.parametrize("mu,sigma", FIG_PARAMS)
def test_placement_integrates_to_one(mu, sigma):
    val, _ = integrate.quad(lambda x: g.placement_pdf(x, mu, sigma), 0, 1, limit=200, epsabs=1e-12)
    assert abs(val - 1) < 1e-6


@pytest.mark.parametrize("mu,sigma", FIG_PARAMS)
@given(x=st.floats(0, 1))
def test_placement_symmetric(mu, sigma, x):
    assert abs(g.placement_pdf(x, mu, sigma) - g.placement_pdf(1 - x, mu, sigma)) < 1e-12


def test_placement_edge_concentrated_for_hard():
    assert g.placement_pdf(0.05, 0.85, 1.5) > g.placement_pdf(0.5, 0.85, 1.5)


def quad_cdf(mu, sigma, n=1000):
    """CDF table from independent per-interval adaptive quadrature."""
    edges = np.linspace(0, 1, n + 1)
    cells = [integrate.quad(lambda x: g.placement_pdf(x, mu, sigma), a, b)[0] for a, b in zip(edges[:-1], edges[1:])]
    return edges, np.concatenate([[0.0], np.cumsum(cells)])


@pytest.mark.parametrize("mu,sigma", FIG_PARAMS)
def test_sampler_ks(mu, sigma):
    edges, cdf = quad_cdf(mu, sigma)
    samples = g.sample_placement(np.random.default_rng(11), mu, sigma, size=10**5)
    assert samples.min() >= 0 and samples.max() <= 1
    ks = stats.kstest(samples, lambda x: np.interp(x, edges, cdf)).statistic
    assert ks < 0.01


@pytest.mark.parametrize("mu,sigma", FIG_PARAMS)
def test_cdf_table_matches_quadrature(mu, sigma):
    edges, cdf = quad_cdf(mu, sigma, n=200)
    t_edges, t_cdf = g._placement_table(mu, sigma)
    assert len(t_edges) == g.CDF_TABLE_SIZE
    assert np.abs(np.interp(edges, t_edges, t_cdf) - cdf).max() < 1e-6


def test_sampler_reproducible():
    a = g.sample_placement(np.random.default_rng(5), 1.0, 0.96, size=100)
    b = g.sample_placement(np.random.default_rng(5), 1.0, 0.96, size=100)
    assert np.array_equal(a, b)


# ------------------------------------------------------------------ spectra


def test_lorentzian_matches_oracle(rng):
    peaks = [(rng.random(), rng.uniform(0.02, 0.2), rng.uniform(100, 1000)) for _ in range(4)]
    expected = sum(oracles.lorentzian(g.GRID, *p) for p in peaks)
    assert_allclose(g.lorentzian_sum(g.GRID, peaks), expected, rtol=1e-14)


def test_single_peak_maximum_and_half_width():
    rng = np.random.default_rng(3)
    preset = g.DifficultyPreset("one", (1, 1), (0.05, 0.1), (500, 1000), 1, 1.0, 0.96)
    for _ in range(20):
        s = g.generate_spectrum(preset, rng, noise=False, normalize=False)
        center, width, amp = s.peaks[0]
        nearest = int(np.argmin(np.abs(g.GRID - center)))
        assert int(np.argmax(s.points)) == nearest
        assert abs(s.points[nearest] - amp) <= 0.01 * amp
        for side in (-1, 1):
            assert abs(g.lorentzian_sum([center + side * width / 2], s.peaks)[0] - amp / 2) < 1e-9 * amp


def test_grid():
    assert g.GRID.shape == (200,) and g.GRID[0] == 0 and g.GRID[-1] == 1


def test_hard_counts_only_three_to_five():
    rng = np.random.default_rng(0)
    counts = {g.generate_spectrum(g.HARD, rng).count for _ in range(300)}
    assert counts == {3, 4, 5}


def test_easy_counts_cover_zero_to_two():
    rng = np.random.default_rng(0)
    assert {g.generate_spectrum(g.EASY, rng).count for _ in range(300)} == {0, 1, 2}


@pytest.mark.parametrize("preset", [g.EASY, g.MEDIUM, g.HARD])
def test_spectrum_invariants(preset):
    rng = np.random.default_rng(1)
    for _ in range(50):
        s = g.generate_spectrum(preset, rng)
        assert s.points.shape == (200,)
        assert s.points.min() == 0 and s.points.max() == 1
        n = s.count
        assert len(s.peaks) == n
        pos = s.label.positions
        assert np.all(np.diff(pos[:n]) >= 0)
        assert np.all(pos[n:] == 0) and np.all(s.label.mask[n:] == 0)
        # one peak per equal-width section
        for k, c in enumerate(pos[:n]):
            assert k / n <= c <= (k + 1) / n
        for _, width, amp in s.peaks:
            assert preset.linewidth_range[0] <= width < preset.linewidth_range[1]
            assert preset.intensity_range[0] <= amp < preset.intensity_range[1]


def test_zero_peaks_is_pure_noise():
    s = g.generate_spectrum(g.EASY, np.random.default_rng(0), n_peaks=0)
    assert s.count == 0 and np.all(s.label.positions == 0)
    assert np.isfinite(s.points).all()


def test_noise_added_in_raw_units():
    resid = []
    for seed in range(40):
        noisy = g.generate_spectrum(g.HARD, np.random.default_rng(seed), normalize=False)
        clean = g.generate_spectrum(g.HARD, np.random.default_rng(seed), noise=False, normalize=False)
        resid.append(noisy.points - clean.points)
    assert abs(np.std(resid) - 14) < 0.5


def test_spectrum_record_roundtrip(rng):
    s = g.generate_spectrum(g.MEDIUM, rng)
    back = g.Spectrum.from_record(s.to_record())
    assert np.array_equal(back.points, s.points)
    assert np.array_equal(back.label.positions, s.label.positions)
    assert back.difficulty == s.difficulty


def test_spectrum_length_checked():
    with pytest.raises(ValueError):
        g.Spectrum(np.zeros(199), TargetLabel(np.zeros(5), np.zeros(5)), "easy")


# ------------------------------------------------------------------ datasets


def test_mixed_counts(mixed):
    assert len(mixed) == 1150
    assert Counter(s.difficulty for s in mixed) == {"hard": 550, "medium": 350, "easy": 250}
    assert sum(s.count == 0 for s in mixed) == 50
    assert {s.difficulty for s in mixed if s.count == 0} == {"easy"}


def test_mixed_deterministic(mixed):
    again = g.build_mixed_dataset(7)
    assert all(np.array_equal(a.points, b.points) for a, b in zip(mixed, again))
    hist = Counter((s.difficulty, s.count) for s in mixed)
    assert hist == Counter((s.difficulty, s.count) for s in again)


def test_mixed_cap_forced_when_short():
    data = g.build_mixed_dataset(3, n_hard=0, n_medium=0, n_easy=20, n_easy_empty=15)
    assert sum(s.count == 0 for s in data) == 15


def test_hard_dataset(hard):
    assert len(hard) == 1000
    assert all(s.difficulty == "hard" for s in hard)
    assert {s.count for s in hard} == {3, 4, 5}


def test_build_dataset_kinds():
    with pytest.raises(ValueError):
        g.build_dataset("medium", 0)


def test_mixed_split_sizes(mixed):
    train, val, test = g.stratified_split(mixed, (0.8, 0.1, 0.1), seed=1)
    assert (len(train), len(val), len(test)) == (919, 116, 115)
    assert_partition(train, val, test, len(mixed))


def test_hard_split_sizes(hard):
    train, val, test = g.stratified_split(hard, (0.8, 0.1, 0.1), seed=1)
    assert (len(train), len(val), len(test)) == (800, 100, 100)
    assert_partition(train, val, test, len(hard))


def assert_partition(train, val, test, n):
    both = np.concatenate([train, val, test])
    assert len(np.unique(both)) == n == len(both)


def test_split_stratum_proportions(mixed):
    train, val, test = g.stratified_split(mixed, seed=4)
    strata = Counter((s.difficulty, s.count) for s in mixed)
    parts = {"train": (train, 919 / 1150), "val": (val, 116 / 1150), "test": (test, 115 / 1150)}
    for _, (idx, frac) in parts.items():
        got = Counter((mixed[i].difficulty, mixed[i].count) for i in idx)
        for key, size in strata.items():
            assert abs(got[key] - frac * size) <= 1 + 1e-9


def test_split_test_fixed_by_test_seed(mixed):
    _, _, t1 = g.stratified_split(mixed, seed=1, test_seed=99)
    tr2, va2, t2 = g.stratified_split(mixed, seed=2, test_seed=99)
    tr1, va1, _ = g.stratified_split(mixed, seed=1, test_seed=99)
    assert np.array_equal(t1, t2)
    assert not np.array_equal(va1, va2)


def test_split_deterministic(hard):
    a = g.stratified_split(hard, seed=5)
    b = g.stratified_split(hard, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_split_merges_small_strata(caplog):
    rng = np.random.default_rng(0)
    data = [g.generate_spectrum(g.HARD, rng, n_peaks=3) for _ in range(30)]
    data.append(g.generate_spectrum(g.HARD, rng, n_peaks=5))
    with caplog.at_level(logging.WARNING, logger="quanvnn.specgen"):
        train, val, test = g.stratified_split(data, seed=0)
    assert "merged" in caplog.text
    assert_partition(train, val, test, len(data))


def test_split_fraction_validation(hard):
    with pytest.raises(ValueError):
        g.stratified_split(hard, (0.5, 0.2, 0.2))


def test_jsonl_roundtrip_and_bytes(tmp_path, mixed):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    g.save_jsonl(mixed[:40], a)
    g.save_jsonl(g.build_mixed_dataset(7)[:40], b)
    assert a.read_bytes() == b.read_bytes()
    back = g.load_jsonl(a)
    assert all(np.array_equal(x.points, y.points) and x.seed == y.seed for x, y in zip(back, mixed[:40]))


def test_splits_sidecar(tmp_path):
    path = tmp_path / "d.jsonl"
    assert g.splits_path(path).name == "d.jsonl.splits.json"
    g.save_splits(g.splits_path(path), [2, 0], [1], [3], seed=4)
    doc = g.load_splits(g.splits_path(path))
    assert doc["format_version"] == 1
    assert doc["train"] == [2, 0] and doc["test"] == [3]


def _toy_dataset(sizes):
    data = []
    for (diff, count), size in sizes.items():
        mask = np.zeros(5)
        mask[:count] = 1
        pos = np.zeros(5)
        pos[:count] = np.linspace(0.1, 0.9, count)
        data += [g.Spectrum(np.zeros(200), TargetLabel(mask, pos), diff) for _ in range(size)]
    return data


@given(st.dictionaries(st.tuples(st.sampled_from(g.DIFFICULTIES), st.integers(0, 5)), st.integers(3, 80),
                       min_size=1, max_size=10),
       st.integers(0, 2**16))
def test_split_within_one_of_share(sizes, seed):
    data = _toy_dataset(sizes)
    n = len(data)
    parts = g.stratified_split(data, seed=seed)
    assert_partition(*parts, n)
    assert tuple(len(p) for p in parts) == g._part_sizes(n, (0.8, 0.1, 0.1))
    for idx in parts:
        got = Counter((data[i].difficulty, data[i].count) for i in idx)
        for key, size in sizes.items():
            assert abs(got[key] - len(idx) * size / n) <= 1 + 1e-9
