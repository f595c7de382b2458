from __future__ import annotations

import math

import numpy as np
import pytest

from brar_pps.errors import IntegrationError
from brar_pps.special import (
    LogBetaCache,
    log_beta,
    log_beta_cache,
    mvn_cdf_at_origin,
    mvn_cdf_estimate,
    reg_inc_beta,
    std_normal_cdf,
)


# ---- log Beta ----


class TestLogBeta:
    def test_small_values(self):
        assert log_beta(1, 1) == pytest.approx(0.0, abs=1e-15)
        assert log_beta(2, 3) == pytest.approx(math.log(1 / 12), rel=1e-14)

    def test_symmetric(self):
        assert log_beta(7, 19) == log_beta(19, 7)

    def test_cached_matches_uncached(self):
        cache = LogBetaCache(50)
        for a, b in [(1, 50), (13, 27), (50, 50)]:
            assert log_beta(a, b, cache) == pytest.approx(log_beta(a, b), rel=1e-14)

    def test_falls_back_outside_cache(self):
        cache = LogBetaCache(10)
        assert log_beta(11, 3, cache) == pytest.approx(math.lgamma(11) + math.lgamma(3) - math.lgamma(14))

    @pytest.mark.parametrize(("a", "b"), [(0, 1), (1, 0), (-2, 5)])
    def test_rejects_non_positive(self, a, b):
        with pytest.raises(ValueError, match="positive integers"):
            log_beta(a, b)


class TestLogBetaCache:
    def test_table_is_symmetric_and_read_only(self):
        cache = LogBetaCache(30)
        assert np.array_equal(cache.table[1:, 1:], cache.table[1:, 1:].T)
        assert np.isnan(cache.table[0]).all()
        assert np.isnan(cache.table[:, 0]).all()
        with pytest.raises(ValueError, match="read-only"):
            cache.table[1, 1] = 0.0

    def test_vectorised_call(self):
        cache = LogBetaCache(20)
        values = cache([1, 2, 30], [1, 3, 4])
        assert values[0] == pytest.approx(0.0, abs=1e-15)
        assert values[1] == pytest.approx(math.log(1 / 12))
        assert values[2] == pytest.approx(log_beta(30, 4))

    def test_covers(self):
        cache = LogBetaCache(5)
        assert cache.covers(np.array([1, 5]), np.array([2]))
        assert not cache.covers(np.array([6]))

    def test_memoised_constructor(self):
        assert log_beta_cache(17) is log_beta_cache(17)

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="positive"):
            LogBetaCache(0)


# ---- incomplete Beta and normal CDF ----


class TestRegIncBeta:
    def test_uniform_is_identity(self):
        assert reg_inc_beta(0.3, 1, 1) == pytest.approx(0.3)

    def test_symmetric_midpoint(self):
        assert reg_inc_beta(0.5, 4, 4) == pytest.approx(0.5)

    def test_endpoints(self):
        assert reg_inc_beta(0.0, 3, 2) == 0.0
        assert reg_inc_beta(1.0, 3, 2) == 1.0

    def test_closed_form(self):
        # I_x(2, 1) = x^2
        assert reg_inc_beta(0.7, 2, 1) == pytest.approx(0.49)

    @pytest.mark.parametrize(("x", "a", "b"), [(-0.1, 1, 1), (1.1, 1, 1), (0.5, 0, 1), (0.5, 1, -1)])
    def test_domain(self, x, a, b):
        with pytest.raises(ValueError, match="reg_inc_beta"):
            reg_inc_beta(x, a, b)


def test_std_normal_cdf():
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(1.959963984540054) == pytest.approx(0.975)
    assert np.allclose(std_normal_cdf(np.array([-1.0, 1.0])).sum(), 1.0)


# ---- multivariate normal orthant probabilities ----


class TestMvnCdf:
    def test_univariate(self):
        assert mvn_cdf_at_origin([0.0], [[1.0]]) == 0.5
        assert mvn_cdf_at_origin([-1.0], [[4.0]]) == pytest.approx(std_normal_cdf(0.5))

    @pytest.mark.parametrize("rho", [-0.8, -0.3, 0.0, 0.5, 0.95])
    def test_bivariate_zero_mean(self, rho):
        expected = 0.25 + math.asin(rho) / (2 * math.pi)
        assert mvn_cdf_at_origin([0.0, 0.0], [[1.0, rho], [rho, 1.0]]) == pytest.approx(expected, abs=1e-6)

    def test_bivariate_independent(self):
        value = mvn_cdf_at_origin([0.5, -1.0], [[1.0, 0.0], [0.0, 2.0]])
        expected = std_normal_cdf(-0.5) * std_normal_cdf(1.0 / math.sqrt(2.0))
        assert value == pytest.approx(expected, abs=1e-6)

    def test_bivariate_perfectly_correlated(self):
        value = mvn_cdf_at_origin([0.0, 1.0], [[1.0, 1.0], [1.0, 1.0]])
        assert value == pytest.approx(std_normal_cdf(-1.0))

    def test_trivariate_equicorrelated(self):
        # Orthant probability 1/8 + 3 asin(1/2) / (4 pi) = 1/4
        cov = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
        result = mvn_cdf_estimate(np.zeros(3), cov, accuracy=1e-4, seed=3)
        assert result.value == pytest.approx(0.25, abs=1e-3)
        assert result.error <= 1e-4

    def test_trivariate_is_reproducible(self):
        cov = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.5]])
        mean = [0.2, -0.4, 0.1]
        first = mvn_cdf_at_origin(mean, cov, accuracy=1e-4, seed=11)
        assert mvn_cdf_at_origin(mean, cov, accuracy=1e-4, seed=11) == first

    def test_trivariate_independent(self):
        mean = np.array([0.3, -0.2, 0.5])
        value = mvn_cdf_at_origin(mean, np.eye(3), accuracy=1e-5)
        assert value == pytest.approx(float(np.prod(std_normal_cdf(-mean))), abs=1e-4)

    def test_degenerate_component(self):
        cov = np.diag([0.0, 1.0])
        assert mvn_cdf_at_origin([1.0, 0.0], cov) == 0.0
        assert mvn_cdf_at_origin([-1.0, 0.0], cov) == 0.5
        assert mvn_cdf_at_origin([-1.0, -1.0], np.zeros((2, 2))) == 1.0

    def test_not_psd(self):
        with pytest.raises(ValueError, match="positive semidefinite"):
            mvn_cdf_at_origin([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_not_symmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            mvn_cdf_at_origin([0.0, 0.0], [[1.0, 0.5], [0.1, 1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="Shape mismatch"):
            mvn_cdf_at_origin([0.0, 0.0], np.eye(3))

    def test_unreachable_accuracy(self):
        cov = np.full((4, 4), 0.3) + 0.7 * np.eye(4)
        with pytest.raises(IntegrationError) as info:
            mvn_cdf_at_origin(np.array([0.1, -0.3, 0.2, 0.0]), cov, accuracy=1e-15)
        assert info.value.achieved > 1e-15
