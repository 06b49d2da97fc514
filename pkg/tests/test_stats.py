# tests/test_stats.py
import math

import numpy as np
import pytest

from recps.services.stats import (
    SIGMA_FLOOR,
    OutDistribution,
    confidence_gap,
    fit_out_distribution,
    lambda_statistic,
    logit,
    phi_from_probability,
)
from recps.utils.exceptions import InsufficientSamplesError


def normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


class TestTransforms:
    """Confidence gap and clamped logit."""

    @pytest.mark.parametrize("p, expected", [(0.5, 0.0), (1.0, 1.0), (0.0, 1.0), (0.9, 0.8), (0.1, 0.8)])
    def test_confidence_gap(self, p, expected):
        assert confidence_gap(p) == pytest.approx(expected)

    def test_logit_midpoint(self):
        assert logit(0.5) == pytest.approx(0.0, abs=1e-15)

    def test_logit_clamps_zero(self):
        """q=0 hits the clamp floor log(1e-6 / (1 - 1e-6))."""
        assert logit(0.0) == pytest.approx(-13.8155, abs=1e-4)
        assert logit(1.0) == pytest.approx(13.8155, abs=1e-4)

    def test_logit_value(self):
        assert logit(0.8) == pytest.approx(math.log(4.0), abs=1e-12)

    def test_logit_is_finite_and_monotone(self):
        q = np.linspace(0.0, 1.0, 1001)
        values = logit(q)

        assert np.isfinite(values).all()
        assert (np.diff(values) >= 0).all()

    def test_confidence_gap_matches_reference_grid(self):
        p = np.linspace(0.0, 1.0, 10_001)
        expected = np.array([abs(2.0 * x - 1.0) for x in p])

        np.testing.assert_array_equal(confidence_gap(p), expected)

    def test_logit_matches_reference_grid(self):
        """Clamped logit against math.log on 10,001 points of [0, 1]."""
        q = np.linspace(0.0, 1.0, 10_001)
        clamped = [min(max(x, 1e-6), 1.0 - 1e-6) for x in q]
        expected = np.array([math.log(x / (1.0 - x)) for x in clamped])

        np.testing.assert_allclose(logit(q), expected, rtol=1e-12, atol=1e-12)

    def test_phi_of_half_probability_is_floor(self):
        """A model predicting exactly 0.5 has no confidence gap."""
        assert phi_from_probability(0.5) == pytest.approx(logit(0.0))


class TestOutDistribution:
    """Gaussian fit to OUT φ values."""

    def test_constant_values_hit_sigma_floor(self):
        dist = fit_out_distribution([2.0] * 30)

        assert dist.mu == 2.0
        assert dist.sigma == SIGMA_FLOOR
        assert dist.n == 30

    def test_unbiased_standard_deviation(self):
        dist = fit_out_distribution([-1.0, 1.0] * 15)

        assert dist.mu == pytest.approx(0.0)
        assert dist.sigma == pytest.approx(1.0171, abs=1e-4)

    def test_too_few_values(self):
        with pytest.raises(InsufficientSamplesError) as exc_info:
            fit_out_distribution(np.zeros(29))
        assert exc_info.value.got == 29

    def test_as_dict(self):
        assert OutDistribution(0.5, 2.0, 40).as_dict() == {"mu": 0.5, "sigma": 2.0, "n": 40}


class TestLambdaStatistic:
    """One-sided tail probability under the OUT Gaussian."""

    def test_at_mean(self):
        assert lambda_statistic(3.0, OutDistribution(3.0, 2.0, 30)) == pytest.approx(0.5)

    def test_far_tail(self):
        assert lambda_statistic(10.0, OutDistribution(0.0, 1.0, 30)) > 0.999999

    def test_one_sigma(self):
        assert lambda_statistic(1.5, OutDistribution(1.0, 0.5, 30)) == pytest.approx(0.841345, abs=1e-6)

    def test_matches_erf_reference(self):
        """Agrees with an erf-based CDF on a 10,001-point grid over [-8, 8] standard deviations."""
        dist = OutDistribution(-2.0, 3.0, 30)
        z = np.linspace(-8.0, 8.0, 10_001)
        values = lambda_statistic(dist.mu + z * dist.sigma, dist)

        expected = np.array([normal_cdf(x) for x in z])
        np.testing.assert_allclose(values, expected, rtol=0, atol=1e-9)

    def test_monotone_in_phi(self):
        dist = OutDistribution(0.0, 1.0, 30)
        values = lambda_statistic(np.linspace(-5, 5, 101), dist)

        assert (np.diff(values) >= 0).all()

    def test_probability_to_lambda_is_v_shaped(self):
        """Λ(φ(p)) falls towards p = 0.5 and rises away from it."""
        dist = OutDistribution(-1.0, 1.5, 30)
        lower = lambda_statistic(phi_from_probability(np.linspace(0.0, 0.5, 5_001)), dist)
        upper = lambda_statistic(phi_from_probability(np.linspace(0.5, 1.0, 5_001)), dist)

        assert (np.diff(lower) <= 1e-15).all()
        assert (np.diff(upper) >= -1e-15).all()
        assert lower[0] > lower[-1]
        assert upper[-1] > upper[0]

    def test_fit_round_trip_centres_lambda(self):
        """Λ of the fitted sample averages about one half."""
        phis = np.random.default_rng(0).normal(1.5, 0.7, size=2000)
        dist = fit_out_distribution(phis)

        assert np.mean(lambda_statistic(phis, dist)) == pytest.approx(0.5, abs=0.05)
