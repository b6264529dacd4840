import numpy as np
import pytest
from scipy.stats import genextreme

from maxstable.gev import (
    GevParams,
    SupportViolation,
    fit_gev_univariate,
    frechet_transform,
    from_frechet,
    gev_cdf,
    gev_nll,
    gev_quantile,
    gev_return_level,
    inverse_frechet_transform,
    pair_log_jacobian,
    to_frechet,
)


class TestGevParams:
    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError, match="scale"):
            GevParams(0.0, -1.0, 0.1)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            GevParams(np.nan, 1.0, 0.1)


class TestCdfQuantile:
    @pytest.mark.parametrize("shape", [-0.3, -1e-9, 0.0, 0.2, 0.7])
    def test_quantile_inverts_cdf(self, shape):
        p = GevParams(3.0, 2.0, shape)
        for prob in (0.01, 0.25, 0.5, 0.9, 0.999):
            y = gev_quantile(prob, p)
            assert gev_cdf(y, p) == pytest.approx(prob, abs=1e-12)

    @pytest.mark.parametrize("shape", [-0.3, 0.2])
    def test_matches_scipy(self, shape):
        p = GevParams(1.0, 2.0, shape)
        # scipy's genextreme shape has the opposite sign convention
        dist = genextreme(-shape, loc=p.mu, scale=p.scale)
        for y in (-1.0, 0.5, 3.0, 10.0):
            assert gev_cdf(y, p) == pytest.approx(dist.cdf(y), abs=1e-12)

    def test_outside_support(self):
        p = GevParams(0.0, 1.0, 0.5)   # lower endpoint at -2
        assert gev_cdf(-3.0, p) == 0.0
        q = GevParams(0.0, 1.0, -0.5)  # upper endpoint at 2
        assert gev_cdf(3.0, q) == 1.0

    def test_quantile_rejects_bad_prob(self):
        with pytest.raises(ValueError):
            gev_quantile(1.0, GevParams(0.0, 1.0, 0.1))


class TestFrechetTransform:
    @pytest.mark.parametrize("shape", [-0.2, 0.0, 0.3])
    def test_round_trip(self, shape):
        p = GevParams(10.0, 5.0, shape)
        for y in (5.0, 10.0, 30.0):
            if 1.0 + shape * (y - p.mu) / p.scale <= 0:
                continue
            z = to_frechet(y, p)
            assert from_frechet(z, p) == pytest.approx(y, rel=1e-12)

    def test_preserves_probability(self):
        # the defining property: F_gev(y) = exp(-1/z)
        p = GevParams(10.0, 5.0, 0.2)
        y = 17.3
        z = to_frechet(y, p)
        assert np.exp(-1.0 / z) == pytest.approx(gev_cdf(y, p), rel=1e-12)

    def test_gumbel_limit_continuity(self):
        p_small = GevParams(0.0, 1.0, 1e-9)
        p_zero = GevParams(0.0, 1.0, 0.0)
        assert to_frechet(1.5, p_small) == pytest.approx(to_frechet(1.5, p_zero), rel=1e-6)

    def test_support_violation_raises(self):
        p = GevParams(0.0, 1.0, 0.5)
        with pytest.raises(SupportViolation):
            to_frechet(-3.0, p)

    def test_vectorised_nan_propagation(self):
        z, u = frechet_transform(np.array([1.0, np.nan, -50.0]), 0.0, 1.0, 0.2)
        assert np.isfinite(z[0])
        assert np.isnan(z[1])
        assert np.isnan(z[2]) and u[2] <= 0

    def test_vectorised_inverse(self):
        z = np.array([0.5, 1.0, 7.0])
        y = inverse_frechet_transform(z, 2.0, 3.0, 0.15)
        back, _ = frechet_transform(y, 2.0, 3.0, 0.15)
        np.testing.assert_allclose(back, z, rtol=1e-12)


class TestLogJacobian:
    def test_matches_derivative_of_transform(self):
        # dz/dy by finite differences should equal z-dot = exp(log jacobian)
        # through the identity f_gev(y) = f_frechet(z) * dz/dy
        p = GevParams(4.0, 2.0, 0.25)
        y = 6.0
        eps = 1e-6
        dz_dy = (to_frechet(y + eps, p) - to_frechet(y - eps, p)) / (2 * eps)
        single = pair_log_jacobian(y, y, p, p) / 2.0
        assert np.exp(single) == pytest.approx(dz_dy, rel=1e-8)

    def test_violation_raises(self):
        p = GevParams(0.0, 1.0, 0.5)
        with pytest.raises(SupportViolation):
            pair_log_jacobian(-5.0, 1.0, p, p)


class TestNll:
    def test_matches_scipy_logpdf(self):
        rng = np.random.default_rng(0)
        sample = genextreme.rvs(-0.2, loc=3.0, scale=2.0, size=50, random_state=rng)
        ours = gev_nll(sample, 3.0, 2.0, 0.2)
        theirs = -genextreme.logpdf(sample, -0.2, loc=3.0, scale=2.0).sum()
        assert ours == pytest.approx(theirs, rel=1e-10)

    def test_infeasible_is_inf(self):
        assert gev_nll(np.array([-10.0]), 0.0, 1.0, 0.5) == np.inf
        assert gev_nll(np.array([1.0]), 0.0, -1.0, 0.1) == np.inf


class TestReturnLevel:
    def test_monotone_in_period(self):
        p = GevParams(10.0, 2.0, 0.1)
        levels = [gev_return_level(p, t) for t in (2, 10, 50, 200)]
        assert np.all(np.diff(levels) > 0)

    def test_exceedance_probability(self):
        p = GevParams(10.0, 2.0, 0.1)
        level = gev_return_level(p, 50)
        assert 1.0 - gev_cdf(level, p) == pytest.approx(1.0 / 50.0, rel=1e-10)

    def test_rejects_short_period(self):
        with pytest.raises(ValueError):
            gev_return_level(GevParams(0.0, 1.0, 0.0), 1.0)


class TestUnivariateFit:
    @pytest.mark.parametrize("shape", [0.0, 0.2])
    def test_recovers_parameters(self, shape):
        rng = np.random.default_rng(7)
        sample = genextreme.rvs(-shape, loc=10.0, scale=3.0, size=4000, random_state=rng)
        p = fit_gev_univariate(sample)
        assert p.mu == pytest.approx(10.0, abs=0.3)
        assert p.scale == pytest.approx(3.0, abs=0.3)
        assert p.shape == pytest.approx(shape, abs=0.08)

    def test_ignores_missing(self):
        rng = np.random.default_rng(1)
        sample = genextreme.rvs(-0.1, loc=0.0, scale=1.0, size=200, random_state=rng)
        with_nan = np.concatenate([sample, [np.nan, np.nan]])
        assert fit_gev_univariate(with_nan) == fit_gev_univariate(sample)

    def test_too_few_observations(self):
        with pytest.raises(ValueError, match="at least 10"):
            fit_gev_univariate(np.arange(5.0))

    def test_degenerate_sample(self):
        with pytest.raises(ValueError, match="variance"):
            fit_gev_univariate(np.full(20, 3.0))
