import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecprune.bias import (
    bias_stats,
    distribution_diagnostics,
    layer_ratios,
    partition_regions,
    peripheral_ratio,
    profile_correlation,
    stats_to_csv,
    stats_to_json,
)
from ecprune.errors import ConfigError, InputDataError
from ecprune.rng import SplitMix64

# Layer-3 row of the published layer table: ratio mean, effect size, t, sample count
LAYER3_MU, LAYER3_D, LAYER3_T, LAYER3_N = 3.75, 2.30, 341, 21_920


class TestPartition:
    def test_reference_grid(self):
        p = partition_regions(12, 18, 0.15)
        assert (len(p.corner), len(p.edge), len(p.center), len(p.peripheral)) == (8, 68, 140, 76)

    def test_three_by_three(self):
        p = partition_regions(3, 3, 0.34)
        assert p.center.tolist() == [4]
        assert p.corner.tolist() == [0, 2, 6, 8]
        assert p.edge.tolist() == [1, 3, 5, 7]

    @given(st.integers(3, 30), st.integers(3, 30), st.floats(0.05, 0.45))
    def test_disjoint_cover(self, rows, cols, frac):
        try:
            p = partition_regions(rows, cols, frac)
        except ConfigError:
            return
        allc = np.concatenate([p.corner, p.edge, p.center])
        assert sorted(allc.tolist()) == list(range(rows * cols))
        mr, mc = math.floor(frac * rows + 1e-9), math.floor(frac * cols + 1e-9)
        assert len(p.corner) == 4 * mr * mc
        assert len(p.center) == (rows - 2 * mr) * (cols - 2 * mc)
        lab = p.labels()
        assert (lab == 2).sum() == len(p.corner) and (lab == 0).sum() == len(p.center)

    def test_errors(self):
        with pytest.raises(ConfigError):
            partition_regions(2, 5)
        with pytest.raises(ConfigError):
            partition_regions(12, 18, 0.02)
        with pytest.raises(ConfigError):
            partition_regions(12, 18, 0.6)


class TestRatio:
    def test_uniform(self):
        p = partition_regions(12, 18)
        for n in range(1, 500):
            assert peripheral_ratio(np.full(216, 1 / n), p) == 1.0

    def test_double_periphery(self):
        p = partition_regions(12, 18)
        m = np.ones(216)
        m[p.peripheral] = 2.0
        assert peripheral_ratio(m, p) == 2.0
        assert peripheral_ratio(m, p, "corner") == 2.0

    def test_region_means(self):
        p = partition_regions(3, 3, 0.34)
        m = np.array([4, 1, 4, 1, 2, 1, 4, 1, 4], dtype=float)
        assert peripheral_ratio(m, p, "corner") == 2.0
        assert peripheral_ratio(m, p, "edge") == 0.5
        assert peripheral_ratio(m, p) == 1.25

    def test_zero_center_is_error(self):
        p = partition_regions(12, 18)
        m = np.zeros(216)
        m[p.corner[0]] = 1.0
        with pytest.raises(InputDataError, match="zero"):
            peripheral_ratio(m, p)

    def test_size_mismatch(self):
        with pytest.raises(InputDataError):
            peripheral_ratio(np.ones(10), partition_regions(12, 18))

    def test_layer_ratios(self):
        p = partition_regions(3, 3, 0.34)
        m = np.array([4, 1, 4, 1, 2, 1, 4, 1, 4], dtype=float)
        assert layer_ratios({9: [m, np.ones(9)], 3: [m]}, p) == {3: [1.25], 9: [1.25, 1.0]}


class TestStats:
    def test_two_point_fixture(self):
        s = bias_stats([1.0, 3.0])
        assert s.mu == 2.0 and s.sigma == math.sqrt(2)
        assert abs(s.d - 1 / math.sqrt(2)) <= 1e-9 and abs(s.t - 1.0) <= 1e-9
        assert not s.degenerate

    def test_degenerate(self):
        s = bias_stats([1.0, 1.0, 1.0])
        assert s.degenerate and s.mu == 1.0 and s.sigma == 0.0
        assert math.isnan(s.d) and math.isnan(s.t)

    def test_too_few(self):
        with pytest.raises(InputDataError):
            bias_stats([2.0])

    def test_published_t_consistent_with_d(self):
        # with mu0 = 1 the one-sample t equals d * sqrt(n); d is printed to two decimals
        lo, hi = (LAYER3_D - 0.005) * math.sqrt(LAYER3_N), (LAYER3_D + 0.005) * math.sqrt(LAYER3_N)
        assert lo <= LAYER3_T <= hi

    @pytest.mark.parametrize("n", [400, 2_000])
    def test_recovers_layer3_effect_size(self, n):
        sigma = (LAYER3_MU - 1.0) / LAYER3_D
        x = LAYER3_MU + sigma * SplitMix64(3).normal(n)
        s = bias_stats(x, layer=3)
        assert abs(s.d - LAYER3_D) <= 3 / math.sqrt(n)
        assert s.t == pytest.approx(s.d * math.sqrt(n), rel=1e-12)

    @given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=40))
    def test_matches_textbook_formulas(self, xs):
        s = bias_stats(xs, mu0=1.5)
        mu = sum(xs) / len(xs)
        var = sum((x - mu) ** 2 for x in xs) / (len(xs) - 1)
        assert s.mu == pytest.approx(mu, rel=1e-12, abs=1e-12)
        if not s.degenerate and var > 1e-20:
            assert s.sigma == pytest.approx(math.sqrt(var), rel=1e-9)
            assert s.t == pytest.approx((mu - 1.5) / (math.sqrt(var) / math.sqrt(len(xs))), rel=1e-6, abs=1e-9)

    def test_serialisation(self):
        stats = [bias_stats([1.0, 3.0], layer=3), bias_stats([1.0, 1.0], layer=4)]
        lines = stats_to_csv(stats).splitlines()
        assert lines[0] == "layer,mu,sigma,d,t,n"
        assert lines[1].startswith("3,2.0,1.4142135623730951,0.7071067811865")
        doc = json.loads(stats_to_json(stats, correlation=0.5))
        assert doc["layers"][1]["d"] is None and doc["profile_correlation"] == 0.5


class TestCorrelation:
    def test_identical_is_exactly_one(self, rng):
        for _ in range(50):
            a = rng.uniform(1, 10, 28)
            assert profile_correlation(a, a) == 1.0

    def test_negation(self):
        a = np.array([1.0, 4.0, 2.0, 8.0])
        assert profile_correlation(a, -a) == -1.0

    def test_matches_textbook(self, rng):
        for _ in range(20):
            a, b = rng.normal(size=28), rng.normal(size=28)
            ma, mb = sum(a) / 28, sum(b) / 28
            cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
            r = cov / math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))
            assert abs(profile_correlation(a, b) - r) <= 1e-12

    def test_errors(self):
        with pytest.raises(InputDataError):
            profile_correlation([1, 2], [1, 2, 3])
        with pytest.raises(InputDataError):
            profile_correlation([1, 1, 1], [1, 2, 3])


class TestDiagnostics:
    def test_symmetric(self):
        assert distribution_diagnostics([1, 2, 3])["skewness"] == 0.0

    def test_one_hot(self):
        v = np.zeros(10)
        v[4] = 1.0
        assert distribution_diagnostics(v)["top_decile_share"] == 1.0

    def test_exponential_tail_skewness(self):
        x = -np.log(1.0 - SplitMix64(11).uniform(500))
        n = len(x)
        mean = sum(x) / n
        m2 = sum((v - mean) ** 2 for v in x) / n
        m3 = sum((v - mean) ** 3 for v in x) / n
        diag = distribution_diagnostics(x)
        assert diag["skewness"] == pytest.approx(m3 / m2 ** 1.5, rel=1e-10)
        assert diag["skewness"] > 1.0  # right tail
        top = sorted(x, reverse=True)[:50]
        assert diag["top_decile_share"] == pytest.approx(sum(top) / sum(x), rel=1e-12)

    def test_top_decile_rounds_up(self):
        # 11 values: top decile is the top 2
        v = [10.0, 10.0] + [1.0] * 9
        assert distribution_diagnostics(v)["top_decile_share"] == pytest.approx(20 / 29, rel=1e-15)

    def test_errors(self):
        with pytest.raises(InputDataError):
            distribution_diagnostics([1.0, 2.0])
        with pytest.raises(InputDataError):
            distribution_diagnostics([2.0, 2.0, 2.0])


@given(st.floats(1e-6, 1e6))
def test_ratio_invariant_under_positive_scaling(scale):
    p = partition_regions(12, 18)
    m = SplitMix64(4).uniform(216, 0.1, 2.0)
    assert peripheral_ratio(m * scale, p) == pytest.approx(peripheral_ratio(m, p), rel=1e-12)


@given(st.integers(0, 10_000))
def test_correlation_bounded_and_symmetric(seed):
    gen = SplitMix64(seed)
    a, b = gen.normal(12), gen.normal(12)
    r = profile_correlation(a, b)
    assert -1.0 <= r <= 1.0 and r == profile_correlation(b, a)
