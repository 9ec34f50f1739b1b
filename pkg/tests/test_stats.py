import numpy as np
import pytest
from scipy import stats

from reeb_diffusion.stats import (
    StatisticsError,
    bootstrap_ci,
    ks_bootstrap_ci,
    ks_statistic,
    ks_two_sample,
    multinomial_intervals,
    scaling_fit,
    wilson_interval,
)


@pytest.fixture
def sample():
    return np.random.default_rng(5).standard_normal(400)


class TestKolmogorovSmirnov:
    def test_identical_samples(self, sample):
        result = ks_two_sample(sample, sample)
        assert result.statistic == 0.0
        assert result.p_value == pytest.approx(1.0)

    def test_shifted_samples_are_separated(self, sample):
        result = ks_two_sample(sample, sample + 0.5)
        assert 0.1 < result.statistic < 0.3
        assert result.p_value < 1e-3

    def test_agrees_with_scipy_asymptotic_test(self, sample):
        shifted = sample + 0.3
        result = ks_two_sample(sample, shifted)
        reference = stats.ks_2samp(sample, shifted, method="asymp")
        assert result.statistic == pytest.approx(reference.statistic)
        assert result.p_value == pytest.approx(reference.pvalue)
        assert (result.n, result.m) == (400, 400)

    def test_disjoint_samples(self):
        assert ks_statistic([0.0, 1.0, 2.0], [5.0, 6.0]) == 1.0

    def test_small_samples_are_refused(self, sample):
        with pytest.raises(StatisticsError, match="below the minimum"):
            ks_two_sample(sample[:50], sample)

    def test_non_finite_samples_are_refused(self, sample):
        broken = sample.copy()
        broken[3] = np.nan
        with pytest.raises(StatisticsError, match="non-finite"):
            ks_two_sample(broken, sample)

    def test_bootstrap_interval_brackets_the_statistic(self, sample):
        shifted = sample + 0.5
        lo, hi = ks_bootstrap_ci(sample, shifted, n_boot=100, seed=2)
        assert lo <= ks_statistic(sample, shifted) <= hi


class TestScalingFit:
    def test_exact_power_law(self):
        eps = [0.4, 0.2, 0.1, 0.05]
        fit = scaling_fit(eps, [3.0 * e ** 2 for e in eps], n_boot=200)
        assert fit.slope == pytest.approx(2.0)
        assert fit.intercept == pytest.approx(np.log(3.0))
        assert fit.contains(2.0, band=1e-9)
        assert fit.n_points == 4

    def test_constant_values_give_zero_slope(self):
        fit = scaling_fit([0.4, 0.2, 0.1], [1.5, 1.5, 1.5], se=[0.1, 0.1, 0.1], n_boot=200)
        assert fit.slope == pytest.approx(0.0, abs=1e-12)
        assert fit.ci_low < 0.0 < fit.ci_high

    def test_needs_three_positive_points(self):
        with pytest.raises(StatisticsError, match="at least 3"):
            scaling_fit([0.1, 0.2], [1.0, 2.0])
        with pytest.raises(StatisticsError, match="positive"):
            scaling_fit([0.1, 0.2, 0.3], [1.0, 0.0, 2.0])


class TestIntervals:
    def test_wilson_interval_contains_the_proportion(self):
        lo, hi = wilson_interval(30, 100)
        assert lo < 0.3 < hi
        assert hi - lo == pytest.approx(0.18, abs=0.01)

    def test_wilson_interval_at_the_boundary(self):
        lo, hi = wilson_interval(0, 50)
        assert lo == pytest.approx(0.0, abs=1e-12)
        assert 0.0 < hi < 0.1

    def test_wilson_interval_rejects_impossible_counts(self):
        with pytest.raises(StatisticsError, match="successes"):
            wilson_interval(11, 10)

    def test_multinomial_intervals_are_wider_than_single_ones(self):
        intervals = multinomial_intervals([25, 25, 50], confidence=0.95)
        single = wilson_interval(50, 100, 0.95)
        assert len(intervals) == 3
        assert intervals[2][0] < single[0] and intervals[2][1] > single[1]
        assert all(lo < c / 100 < hi for (lo, hi), c in zip(intervals, [25, 25, 50]))

    def test_bootstrap_of_the_mean(self, sample):
        lo, hi = bootstrap_ci(sample, n_boot=300)
        assert lo < sample.mean() < hi
        with pytest.raises(StatisticsError, match="two observations"):
            bootstrap_ci(sample[:1])
