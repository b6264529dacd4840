import numpy as np
import pytest

from maxstable.gev import GevParams
from maxstable.likelihood import DataSet, ModelSpec
from maxstable.simulate import (
    SimConfig,
    StudyResult,
    naive_theta,
    replication_study,
    simulate_fields,
    simulate_panel,
    simulate_smith_field,
)
from maxstable.smith import CovMatrix, extremal_coefficient, mahalanobis_a

SIGMA = CovMatrix(200.0, 150.0, 300.0)


class TestSimConfig:
    def test_requires_sites_or_count(self):
        with pytest.raises(ValueError, match="n_sites"):
            SimConfig(sigma=SIGMA)
        with pytest.raises(ValueError, match="n_sites"):
            SimConfig(sigma=SIGMA, n_sites=1)

    def test_sites_must_lie_in_region(self):
        with pytest.raises(ValueError, match="inside the region"):
            SimConfig(sigma=SIGMA, sites=np.array([[0.0, 0.0], [50.0, 0.0]]),
                      region=(0.0, 40.0, 0.0, 40.0))

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            SimConfig(sigma=SIGMA, n_sites=5, n_blocks=0)


class TestDeterminism:
    def test_same_seed_same_panel(self):
        cfg = SimConfig(sigma=SIGMA, n_sites=5, n_blocks=10, seed=3)
        a = simulate_panel(cfg)
        b = simulate_panel(cfg)
        np.testing.assert_array_equal(a.maxima, b.maxima)
        np.testing.assert_array_equal(a.coords, b.coords)

    def test_replicates_are_independent_substreams(self):
        cfg = SimConfig(sigma=SIGMA, n_sites=5, n_blocks=10, seed=3)
        a = simulate_panel(cfg, replicate=0)
        b = simulate_panel(cfg, replicate=1)
        assert not np.array_equal(a.maxima, b.maxima)
        assert not np.array_equal(a.coords, b.coords)

    def test_fixed_sites_are_kept(self):
        sites = np.array([[5.0, 5.0], [20.0, 25.0], [35.0, 10.0]])
        cfg = SimConfig(sigma=SIGMA, sites=sites, n_blocks=5, seed=0)
        panel = simulate_panel(cfg, replicate=2)
        np.testing.assert_array_equal(panel.coords, sites)


class TestFieldProperties:
    def test_positive_values(self):
        z = simulate_smith_field(SIGMA, np.array([[0.0, 0.0], [10.0, 5.0]]), seed=5)
        assert z.shape == (2,)
        assert np.all(z > 0)

    def test_comonotone_at_zero_separation_nearby(self):
        # two nearly coincident sites should be almost perfectly dependent
        sites = np.array([[10.0, 10.0], [10.01, 10.0]])
        rng = np.random.default_rng(0)
        z = simulate_fields(SIGMA, sites, 500, rng, region=(0, 20, 0, 20))
        assert naive_theta(z[:, 0], z[:, 1]) < 1.05

    def test_distant_sites_nearly_independent(self):
        cov = CovMatrix(2.0, 0.0, 2.0)
        sites = np.array([[0.0, 0.0], [500.0, 0.0]])
        rng = np.random.default_rng(1)
        z = simulate_fields(cov, sites, 2000, rng, region=(0, 500, 0, 1))
        assert naive_theta(z[:, 0], z[:, 1]) > 1.9

    def test_gev_margins_applied(self):
        p = GevParams(20.0, 5.0, 0.1)
        cfg = SimConfig(sigma=SIGMA, n_sites=4, n_blocks=200, seed=9, margins=p)
        panel = simulate_panel(cfg)
        # lower endpoint of the GEV with positive shape
        assert panel.maxima.min() > p.mu - p.scale / p.shape


class TestNaiveTheta:
    def test_clamped_to_valid_range(self):
        z = np.full(50, 5.0)
        assert 1.0 <= naive_theta(z, z) <= 2.0

    def test_exact_for_known_exponential(self):
        # 1/max(z_i, z_j) ~ Exp(theta) exactly; plug in deterministic values
        z = np.array([1.0, 2.0, 4.0])
        expected = 3.0 / np.sum(1.0 / z)
        assert naive_theta(z, z) == pytest.approx(np.clip(expected, 1.0, 2.0))

    def test_drops_missing_pairs(self):
        z_i = np.array([1.0, np.nan, 3.0])
        z_j = np.array([2.0, 2.0, np.nan])
        assert naive_theta(z_i, z_j) == naive_theta(np.array([1.0]), np.array([2.0]))

    def test_rejects_degenerate_input(self):
        with pytest.raises(ValueError, match="no complete pairs"):
            naive_theta([np.nan], [1.0])
        with pytest.raises(ValueError, match="positive"):
            naive_theta([-1.0], [1.0])


@pytest.fixture(scope="module")
def small_study():
    cfg = SimConfig(sigma=SIGMA, n_sites=8, n_blocks=60, n_replicates=4, seed=17)
    return replication_study(cfg, ModelSpec(frechet_margins=True))


class TestStudy:
    def test_summary_table_columns(self, small_study):
        table = small_study.summary_table()
        assert list(table.columns) == ["parameter", "mean", "godambe_se_mean",
                                       "replication_sd"]
        assert list(table["parameter"]) == ["sigma11", "sigma12", "sigma22"]

    def test_nmse_computed(self, small_study):
        assert small_study.nmse_composite is not None
        assert small_study.nmse_naive is not None
        assert small_study.nmse_composite > 0

    def test_single_replicate_degenerate_sd(self):
        cfg = SimConfig(sigma=SIGMA, n_sites=6, n_blocks=40, n_replicates=1, seed=23)
        res = replication_study(cfg, ModelSpec(frechet_margins=True))
        table = res.summary_table()
        assert np.all(np.isnan(table["replication_sd"]))
        np.testing.assert_allclose(table["mean"], res.estimates[0])

    def test_parallel_matches_sequential(self):
        cfg = SimConfig(sigma=SIGMA, n_sites=6, n_blocks=40, n_replicates=2, seed=29)
        model = ModelSpec(frechet_margins=True)
        seq = replication_study(cfg, model, jobs=1)
        par = replication_study(cfg, model, jobs=2)
        np.testing.assert_allclose(seq.estimates, par.estimates, rtol=1e-12)
        assert seq.nmse_composite == pytest.approx(par.nmse_composite, rel=1e-12)

    def test_theta_truth_uses_replicate_layout(self):
        # with resampled layouts the NMSE must be finite and small for a
        # well-specified model; a layout mix-up would blow it up
        cfg = SimConfig(sigma=SIGMA, n_sites=6, n_blocks=80, n_replicates=2, seed=31)
        res = replication_study(cfg, ModelSpec(frechet_margins=True))
        assert res.nmse_composite < 0.05
