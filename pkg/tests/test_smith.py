import numpy as np
import pytest
from scipy.special import ndtr

from maxstable.gev import GevParams, from_frechet, gev_return_level, to_frechet
from maxstable.smith import (
    A_INDEP,
    CovMatrix,
    bivariate_cdf,
    bivariate_log_density,
    cdf_partial_zi,
    conditional_cdf,
    conditional_return_level,
    dependence_terms,
    extremal_coefficient,
    inverse_extremal_coefficient,
    mahalanobis_a,
)


class TestCovMatrix:
    def test_rejects_non_positive_definite(self):
        with pytest.raises(ValueError, match="positive definite"):
            CovMatrix(1.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            CovMatrix(-1.0, 0.0, 1.0)

    def test_inverse(self):
        cov = CovMatrix(200.0, 150.0, 300.0)
        np.testing.assert_allclose(cov.inverse() @ cov.as_matrix(), np.eye(2),
                                   atol=1e-12)

    def test_mahalanobis_matches_direct(self):
        cov = CovMatrix(200.0, 150.0, 300.0)
        h = np.array([5.0, -3.0])
        direct = np.sqrt(h @ np.linalg.inv(cov.as_matrix()) @ h)
        assert mahalanobis_a(h, cov) == pytest.approx(direct, rel=1e-12)

    def test_mahalanobis_vectorised(self):
        cov = CovMatrix(20.0, 15.0, 30.0)
        h = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, -1.0]])
        a = mahalanobis_a(h, cov)
        assert a.shape == (3,)
        for k in range(3):
            assert a[k] == pytest.approx(mahalanobis_a(h[k], cov))


class TestBivariateCdf:
    def test_complete_dependence_limit(self):
        # a -> 0: comonotone margins, F = exp(-1/min(z_i, z_j))
        assert bivariate_cdf(2.0, 3.0, 0.0) == pytest.approx(np.exp(-1.0 / 2.0))
        assert bivariate_cdf(2.0, 3.0, 1e-12) == pytest.approx(np.exp(-1.0 / 2.0))

    def test_independence_limit(self):
        assert bivariate_cdf(2.0, 3.0, 50.0) == pytest.approx(
            np.exp(-1.0 / 2.0 - 1.0 / 3.0))

    def test_between_frechet_bounds(self):
        for a in (0.3, 1.0, 3.0):
            f = bivariate_cdf(2.0, 3.0, a)
            assert np.exp(-1.0 / 2.0 - 1.0 / 3.0) <= f <= np.exp(-1.0 / 2.0)

    def test_monotone_in_dependence(self):
        # stronger dependence (smaller a) raises the joint CDF
        vals = [bivariate_cdf(2.0, 3.0, a) for a in (0.1, 0.5, 1.0, 2.0, 10.0)]
        assert np.all(np.diff(vals) < 0)

    def test_closed_form(self):
        z_i, z_j, a = 1.5, 4.0, 0.8
        w, v = dependence_terms(z_i, z_j, a)
        expected = np.exp(-ndtr(w) / z_i - ndtr(v) / z_j)
        assert bivariate_cdf(z_i, z_j, a) == pytest.approx(expected, rel=1e-14)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            bivariate_cdf(-1.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            bivariate_cdf(1.0, 2.0, -0.5)


class TestLogDensity:
    def test_independence_factorises(self):
        z_i, z_j = 1.7, 0.9
        got = bivariate_log_density(z_i, z_j, A_INDEP + 1.0)
        marginal = lambda z: -2.0 * np.log(z) - 1.0 / z
        assert got == pytest.approx(marginal(z_i) + marginal(z_j), rel=1e-12)

    def test_consistent_with_cdf_curvature(self):
        # spot check of the full oracle exercised in the acceptance suite
        z_i, z_j, a = 2.0, 1.2, 1.1
        eps = 1e-4
        mixed = (
            bivariate_cdf(z_i + eps, z_j + eps, a)
            - bivariate_cdf(z_i + eps, z_j - eps, a)
            - bivariate_cdf(z_i - eps, z_j + eps, a)
            + bivariate_cdf(z_i - eps, z_j - eps, a)
        ) / (4.0 * eps * eps)
        assert np.exp(bivariate_log_density(z_i, z_j, a)) == pytest.approx(
            mixed, rel=1e-6)

    def test_rejects_degenerate_a(self):
        with pytest.raises(ValueError, match="a > 0"):
            bivariate_log_density(1.0, 1.0, 0.0)

    def test_cdf_partial_matches_fd(self):
        z_i, z_j, a = 1.4, 2.6, 0.7
        eps = 1e-6
        fd = (bivariate_cdf(z_i + eps, z_j, a) - bivariate_cdf(z_i - eps, z_j, a)) / (2 * eps)
        assert cdf_partial_zi(z_i, z_j, a) == pytest.approx(fd, rel=1e-8)


class TestExtremalCoefficient:
    def test_limits(self):
        assert extremal_coefficient(0.0) == pytest.approx(1.0)
        assert extremal_coefficient(100.0) == pytest.approx(2.0)

    def test_closed_form(self):
        a = 1.3
        assert extremal_coefficient(a) == pytest.approx(2.0 * ndtr(a / 2.0))

    def test_inverse_round_trip(self):
        for theta in (1.05, 1.5, 1.95):
            assert extremal_coefficient(inverse_extremal_coefficient(theta)) == \
                pytest.approx(theta, rel=1e-12)

    def test_inverse_rejects_boundary(self):
        for theta in (1.0, 2.0, 0.5):
            with pytest.raises(ValueError):
                inverse_extremal_coefficient(theta)

    def test_rejects_negative_a(self):
        with pytest.raises(ValueError):
            extremal_coefficient(-0.1)


class TestConditional:
    def test_cdf_in_unit_interval_and_monotone(self):
        zs = np.linspace(0.1, 50.0, 40)
        vals = conditional_cdf(zs, 2.0, 1.0)
        assert np.all((vals >= 0) & (vals <= 1))
        assert np.all(np.diff(vals) >= -1e-12)

    def test_near_independence_reduces_to_marginal(self):
        z, z_i = 3.0, 2.0
        got = conditional_cdf(z, z_i, 30.0)
        assert got == pytest.approx(np.exp(-1.0 / z), rel=1e-4)

    def test_comonotone_limit(self):
        # a -> 0: Z_j = Z_i almost surely, so the conditional CDF is a step
        assert conditional_cdf(3.0, 2.0, 1e-3) > 0.999
        assert conditional_cdf(1.0, 2.0, 1e-3) < 0.001
        # agreement between two small a values (numerical limit study)
        for z in (1.0, 3.0):
            assert conditional_cdf(z, 2.0, 1e-3) == pytest.approx(
                conditional_cdf(z, 2.0, 1e-4), abs=1e-3)

    def test_return_level_self_consistency(self):
        p_j = GevParams(10.0, 3.0, 0.15)
        z_i, T, a = 2.5, 50.0, 1.2
        level = conditional_return_level(z_i, T, a, p_j)
        z_star = to_frechet(level, p_j)
        assert conditional_cdf(z_star, z_i, a) == pytest.approx(1.0 - 1.0 / T,
                                                               abs=1e-9)

    def test_return_level_independence_limit(self):
        p_j = GevParams(10.0, 3.0, 0.15)
        far = conditional_return_level(2.5, 50.0, A_INDEP + 5.0, p_j)
        assert far == pytest.approx(gev_return_level(p_j, 50.0), rel=1e-12)

    def test_return_level_increases_with_conditioning_value(self):
        p_j = GevParams(10.0, 3.0, 0.1)
        low = conditional_return_level(1.0, 50.0, 1.0, p_j)
        high = conditional_return_level(20.0, 50.0, 1.0, p_j)
        assert high > low

    def test_rejects_short_period(self):
        with pytest.raises(ValueError):
            conditional_return_level(1.0, 0.5, 1.0, GevParams(0.0, 1.0, 0.1))
