import numpy as np
import pytest

from maxstable.estimator import SmithMaxStable
from maxstable.gev import GevParams, gev_return_level, inverse_frechet_transform
from maxstable.likelihood import DataSet
from maxstable.simulate import SimConfig, simulate_panel
from maxstable.smith import CovMatrix


@pytest.fixture(scope="module")
def data():
    panel = simulate_panel(SimConfig(sigma=CovMatrix(200.0, 150.0, 300.0),
                                     n_sites=7, n_blocks=60, seed=41))
    mu = 20.0 + 0.25 * panel.coords[:, 1]
    y = inverse_frechet_transform(panel.maxima, mu, 5.0, 0.1)
    return DataSet(panel.ids, panel.coords, panel.alt, panel.years, y)


@pytest.fixture(scope="module")
def fitted(data):
    return SmithMaxStable(loc="1 + lat").fit(data)


class TestParamsProtocol:
    def test_get_params_round_trip(self):
        est = SmithMaxStable(loc="1 + lat", se="hessian")
        clone = SmithMaxStable(**est.get_params())
        assert clone.get_params() == est.get_params()

    def test_set_params_chains(self):
        est = SmithMaxStable().set_params(loc="1 + lon", grad="fd")
        assert est.loc == "1 + lon" and est.grad == "fd"

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ValueError, match="invalid parameter"):
            SmithMaxStable().set_params(bogus=1)


class TestFit:
    def test_attaches_fitted_attributes(self, fitted):
        assert fitted.result_.converged
        assert fitted.params_.shape == fitted.se_.shape
        assert fitted.param_names_[0] == "sigma11"
        assert isinstance(fitted.sigma_, CovMatrix)
        assert np.isfinite(fitted.clic_)

    def test_returns_self(self, data):
        est = SmithMaxStable(frechet_margins=True)
        assert est.fit(data) is est

    def test_rejects_non_dataset(self):
        with pytest.raises(TypeError, match="DataSet"):
            SmithMaxStable().fit(np.ones((5, 3)))

    def test_unfitted_accessors_raise(self):
        est = SmithMaxStable()
        with pytest.raises(RuntimeError, match="not fitted"):
            est.predict([[0.0, 0.0]])


class TestPredict:
    def test_matches_return_level_of_margins(self, fitted, data):
        coords = data.coords[:2]
        mu, scale, xi = fitted.margins(coords, data.alt[:2])
        expected = [gev_return_level(GevParams(float(m), float(s), float(x)), 50.0)
                    for m, s, x in zip(mu, scale, xi)]
        np.testing.assert_allclose(fitted.predict(coords, data.alt[:2], T=50.0),
                                   expected, rtol=1e-12)

    def test_dependence_only_fit_has_no_margins(self, data):
        est = SmithMaxStable(frechet_margins=True).fit(data)
        with pytest.raises(RuntimeError, match="no marginal model"):
            est.predict([[0.0, 0.0]])

    def test_score_is_log_composite_likelihood(self, fitted, data):
        assert fitted.score(data) == pytest.approx(-fitted.result_.nll, rel=1e-12)
