"""Aggregate-consumption statistics tests."""

import math

import numpy as np
import pytest

from flexdispatch.stats import (aggregate_moments, apparent_power, ks_distance_normal,
                                replicate_study, sample_aggregate)


class TestMoments:
    def test_degenerate_distribution(self):
        m = aggregate_moments(np.array([0.0, 1.0, 0.0]), np.array([2.0, 5.0, 9.0]), 37)
        assert m.mean == 5.0
        assert m.variance == 0.0

    def test_bernoulli(self):
        m = aggregate_moments(np.array([0.5, 0.5]), np.array([0.0, 1.0]), 1)
        assert m.mean == 0.5
        assert m.variance == 0.25

    def test_one_over_n_scaling(self):
        m = aggregate_moments(np.array([0.5, 0.5]), np.array([0.0, 1.0]), 100)
        assert m.variance == pytest.approx(0.0025)

    def test_errors(self):
        with pytest.raises(ValueError):
            aggregate_moments(np.array([1.0]), np.array([1.0, 2.0]), 5)
        with pytest.raises(ValueError):
            aggregate_moments(np.array([1.0]), np.array([1.0]), 0)


class TestSampling:
    def test_degenerate_is_exact(self):
        rho = np.array([0.0, 1.0])
        s = np.array([3.0, 7.0])
        for seed in (0, 1, 99):
            assert sample_aggregate(rho, s, 50, seed) == 7.0

    def test_deterministic_per_seed(self):
        rho = np.array([0.3, 0.7])
        s = np.array([0.0, 1.0])
        a = sample_aggregate(rho, s, 1000, 42)
        b = sample_aggregate(rho, s, 1000, 42)
        assert a == b
        assert a != sample_aggregate(rho, s, 1000, 43)

    def test_clt_band_across_seeds(self):
        # Bernoulli mean 0.5: sample means within 4 sigma for >= 99% of seeds
        rho = np.array([0.5, 0.5])
        s = np.array([0.0, 1.0])
        n = 10_000
        band = 4.0 * math.sqrt(0.25 / n)
        hits = sum(abs(sample_aggregate(rho, s, n, seed) - 0.5) <= band
                   for seed in range(1000))
        assert hits >= 990


class TestReplicates:
    def test_variance_agreement(self):
        rho = np.array([0.2, 0.5, 0.3])
        s = np.array([0.0, 1.0, 4.0])
        out = replicate_study(rho, s, 10_000, 400, seed=5)
        assert out["empirical_var"] == pytest.approx(out["analytic_var"], rel=0.1)
        assert out["empirical_mean"] == pytest.approx(out["analytic_mean"], abs=5e-3)

    def test_ks_normal(self):
        out = replicate_study(np.array([0.5, 0.5]), np.array([0.0, 1.0]),
                              10_000, 500, seed=11)
        assert out["ks_distance"] < 0.06

    def test_degenerate_ks_nan(self):
        out = replicate_study(np.array([1.0, 0.0]), np.array([2.0, 3.0]), 100, 10, seed=0)
        assert math.isnan(out["ks_distance"])
        assert out["empirical_var"] == 0.0

    def test_counter_split_reproducible(self):
        a = replicate_study(np.array([0.4, 0.6]), np.array([0.0, 2.0]), 500, 50, seed=9)
        b = replicate_study(np.array([0.4, 0.6]), np.array([0.0, 2.0]), 500, 50, seed=9)
        assert a == b

    def test_replicates_required(self):
        with pytest.raises(ValueError):
            replicate_study(np.array([1.0]), np.array([1.0]), 10, 0, seed=0)


class TestKsDistance:
    def test_normal_quantiles_close(self):
        # deterministic normal-ish sample via inverse-CDF grid
        from statistics import NormalDist

        q = np.array([NormalDist().inv_cdf((k + 0.5) / 400) for k in range(400)])
        assert ks_distance_normal(q) < 0.01

    def test_uniform_far(self):
        assert ks_distance_normal(np.linspace(0, 1, 200)) > 0.3


class TestApparentPower:
    def test_hypot(self):
        s = apparent_power(np.array([3.0, 0.0]), np.array([4.0, 2.0]))
        assert np.array_equal(s, [5.0, 2.0])
