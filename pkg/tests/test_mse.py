"""Tests for the linearization and bootstrap MSE estimators."""

import dataclasses

import numpy as np
import pytest

from src.curves import CurvePopulation, TimeGrid
from src.estimators import EstimatorSpec, parse_estimator, run_estimator
from src.exceptions import CovarianceError, DegenerateStratum, SpecError, TooFewReplicates
from src.ht_estimator import ht_total, ht_variance_true
from src.mse import (combine, covariance_root, draw_multipliers, estimate_mse, generalized_bootstrap,
                     gross_bootstrap, ht_variance_estimate, linearized_values, multiplier_covariance,
                     pseudo_population, replicate_weights)
from src.robust_spca import median_linearization
from src.sampling import Design, draw, enumerate_samples, inclusion_probs


def _values(N, D, seed=0):
    return np.random.default_rng(seed).gamma(2.0, 3.0, size=(N, D))


class TestHtVarianceEstimate:
    """The HT variance estimator."""

    @pytest.mark.parametrize("design", [
        Design.srs(6, 3),
        Design.stratified(np.array([1, 1, 1, 2, 2, 2, 2]), {1: 2, 2: 2}),
    ])
    def test_unbiased_by_enumeration(self, design):
        pop = CurvePopulation(_values(design.N, 4, seed=1), TimeGrid.uniform(4), stratum=design.stratum)
        probs = inclusion_probs(design)
        estimates = [ht_variance_estimate(s, probs, pop.values[s.units]) for s in enumerate_samples(design)]
        np.testing.assert_allclose(np.mean(estimates, axis=0), ht_variance_true(pop, design), atol=1e-9)

    def test_literal_matches_closed_form(self):
        design = Design.stratified(np.repeat([1, 2, 3], 8), {1: 2, 2: 3, 3: 4})
        sample = draw(design, 2)
        probs = inclusion_probs(design)
        y = _values(24, 5, seed=2)[sample.units]
        np.testing.assert_allclose(ht_variance_estimate(sample, probs, y, method="literal"),
                                   ht_variance_estimate(sample, probs, y), rtol=1e-10)

    def test_census_has_zero_variance(self):
        design = Design.srs(5, 5)
        sample = draw(design, 0)
        np.testing.assert_allclose(ht_variance_estimate(sample, inclusion_probs(design), _values(5, 3)), 0.0)

    def test_single_unit_sample(self):
        design = Design.srs(5, 1)
        sample = draw(design, 0)
        with pytest.raises(DegenerateStratum):
            ht_variance_estimate(sample, inclusion_probs(design), _values(1, 3))
        assert ht_variance_estimate(sample, inclusion_probs(design), _values(1, 3), method="literal").shape == (3,)


class TestCombine:
    """Assembling the MSE from its pieces."""

    def test_bias_below_variance_is_dropped(self):
        report = combine("linearization", np.array([4.0, 4.0]), np.array([9.0, 1.0]), np.array([2.0, 2.0]))
        np.testing.assert_allclose(report.mse, [4.0, 7.0])
        np.testing.assert_allclose(report.bias_term, [4.0, 4.0])
        assert report.metadata()["mse_method"] == "linearization"


class TestLinearization:
    """Linearized variables and the linearization MSE."""

    def setup_method(self):
        self.grid = TimeGrid.uniform(12)
        self.values = _values(80, 12, seed=3)
        self.values[7] *= 15.0
        self.design = Design.srs(80, 16)
        self.probs = inclusion_probs(self.design)
        self.sample = draw(self.design, 4)
        self.y = self.values[self.sample.units]

    def _run(self, name, **kwargs):
        spec = parse_estimator(name, EstimatorSpec(name="defaults", kind="r1", K=3))
        estimate = run_estimator(spec, self.sample, self.probs, self.y, self.grid, 80)
        report = estimate_mse("linearization", spec, estimate, self.sample, self.probs, self.y, self.grid,
                              **kwargs)
        return spec, estimate, report

    def test_ht_reduces_to_variance_estimator(self):
        _, _, report = self._run("ht")
        expected = ht_variance_estimate(self.sample, self.probs, self.y)
        np.testing.assert_allclose(report.v_estimate, expected)
        np.testing.assert_allclose(report.v_difference, 0.0, atol=1e-12)
        np.testing.assert_allclose(report.mse, expected)

    @pytest.mark.parametrize("name", ["r1_minimax", "r1_q4", "r2", "r3", "r4"])
    def test_robust_estimators(self, name):
        spec, estimate, report = self._run(name)
        linear = linearized_values(spec, estimate, self.sample, self.y, 80)
        assert linear.shape == self.y.shape
        assert np.all(np.isfinite(report.mse))
        assert np.all(report.mse >= report.v_estimate - 1e-9)
        np.testing.assert_allclose(report.bias_term, (estimate.curve - ht_total(self.sample, self.y)) ** 2)

    def test_r1_linearized_variables(self):
        spec, estimate, _ = self._run("r1_minimax")
        linear = linearized_values(spec, estimate, self.sample, self.y, 80)
        np.testing.assert_allclose(linear, self.y + 0.2 * estimate.unit_corrections)

    def test_r2_default_uses_spectral_pseudo_inverse(self):
        spec, estimate, _ = self._run("r2")
        assert spec.median_linearization == "spherical"
        pca = estimate.extras["pca"]
        weights = self.sample.weights
        spectral = median_linearization(pca, self.y, weights, 80, mode="spherical")
        hessian = median_linearization(pca, self.y, weights, 80, mode="hessian")
        by_default = linearized_values(spec, estimate, self.sample, self.y, 80)
        by_hessian = linearized_values(dataclasses.replace(spec, median_linearization="hessian"), estimate,
                                       self.sample, self.y, 80)
        np.testing.assert_allclose(by_default - spectral, by_hessian - hessian, atol=1e-8)
        assert np.linalg.matrix_rank(spectral) <= pca.K

    def test_true_total_diagnostic(self):
        total = self.values.sum(axis=0)
        _, estimate, report = self._run("r1_minimax", true_total=total)
        np.testing.assert_allclose(report.bias_term, (estimate.curve - total) ** 2)
        assert report.extras["diagnostic"] is True

    def test_unknown_method(self):
        spec = parse_estimator("ht")
        estimate = run_estimator(spec, self.sample, self.probs, self.y, self.grid, 80)
        with pytest.raises(SpecError):
            estimate_mse("jackknife", spec, estimate, self.sample, self.probs, self.y, self.grid)


class TestReplicateWeights:
    """Generalized bootstrap multipliers."""

    def test_srs_covariance(self):
        design = Design.srs(10, 4)
        sample = draw(design, 0)
        cov = multiplier_covariance(sample, inclusion_probs(design))
        np.testing.assert_allclose(np.diag(cov), 0.6)
        assert cov[0, 1] == pytest.approx(1.0 - 0.16 / (4 * 3 / (10 * 9)))

    @pytest.mark.parametrize("method", ["closed", "spectral"])
    def test_moments(self, method):
        design = Design.stratified(np.repeat([1, 2], 10), {1: 3, 2: 5})
        sample = draw(design, 1)
        probs = inclusion_probs(design)
        rng = np.random.default_rng(2)
        draws = np.array([draw_multipliers(sample, probs, rng, method) for _ in range(20000)])
        np.testing.assert_allclose(draws.mean(axis=0), 1.0, atol=0.03)
        np.testing.assert_allclose(np.cov(draws, rowvar=False), multiplier_covariance(sample, probs), atol=0.04)

    def test_replicate_weights_scale(self):
        design = Design.srs(50, 10)
        sample = draw(design, 3)
        weights = np.array([replicate_weights(sample, inclusion_probs(design), seed) for seed in range(4000)])
        np.testing.assert_allclose(weights.mean(axis=0), 1 / 50, atol=2e-3)

    def test_covariance_root(self):
        a = np.random.default_rng(4).normal(size=(5, 5))
        cov = a @ a.T
        root = covariance_root(cov)
        np.testing.assert_allclose(root @ root, cov, atol=1e-10)
        with pytest.raises(CovarianceError):
            covariance_root(np.diag([1.0, -1.0]))


class TestBootstrap:
    """Gross/Booth and generalized bootstrap MSE."""

    def setup_method(self):
        self.grid = TimeGrid.uniform(12)
        self.values = _values(100, 12, seed=5)
        self.design = Design.srs(100, 20)
        self.probs = inclusion_probs(self.design)
        self.sample = draw(self.design, 6)
        self.y = self.values[self.sample.units]
        self.ht = parse_estimator("ht")
        self.estimate = run_estimator(self.ht, self.sample, self.probs, self.y, self.grid, 100)
        self.reference = ht_variance_estimate(self.sample, self.probs, self.y).mean()

    def test_pseudo_population_sizes(self):
        design = Design.stratified(np.repeat([1, 2], [10, 7]), {1: 3, 2: 2})
        sample = draw(design, 0)
        source, pseudo = pseudo_population(sample, np.ones((5, 2)), seed=1)
        assert pseudo.N == 17
        assert pseudo.allocation == {1: 3, 2: 2}
        counts = np.bincount(source, minlength=5)
        positions_1 = np.flatnonzero(sample.strata == 1)
        assert counts[positions_1].sum() == 10
        assert set(counts[positions_1].tolist()) <= {3, 4}

    def test_gross_calibration(self):
        report = gross_bootstrap(self.ht, self.estimate, self.sample, self.y, self.grid, B=1000, seed=7)
        assert abs(report.v_estimate.mean() / self.reference - 1.0) < 0.15
        np.testing.assert_allclose(report.bias_term, 0.0, atol=1e-12)

    def test_generalized_calibration(self):
        report = generalized_bootstrap(self.ht, self.estimate, self.sample, self.probs, self.y, self.grid,
                                       B=1000, seed=8)
        assert abs(report.v_estimate.mean() / self.reference - 1.0) < 0.20

    def test_seeded_and_thread_invariant(self):
        spec = parse_estimator("r1_minimax")
        estimate = run_estimator(spec, self.sample, self.probs, self.y, self.grid, 100)
        one = gross_bootstrap(spec, estimate, self.sample, self.y, self.grid, B=20, seed=9, workers=1)
        many = gross_bootstrap(spec, estimate, self.sample, self.y, self.grid, B=20, seed=9, workers=4)
        np.testing.assert_array_equal(one.mse, many.mse)
        again = generalized_bootstrap(spec, estimate, self.sample, self.probs, self.y, self.grid, B=20, seed=9)
        other = generalized_bootstrap(spec, estimate, self.sample, self.probs, self.y, self.grid, B=20, seed=9,
                                      workers=3)
        np.testing.assert_array_equal(again.mse, other.mse)

    def test_too_few_replicates(self):
        with pytest.raises(TooFewReplicates):
            gross_bootstrap(self.ht, self.estimate, self.sample, self.y, self.grid, B=1, seed=0)
        with pytest.raises(TooFewReplicates):
            generalized_bootstrap(self.ht, self.estimate, self.sample, self.probs, self.y, self.grid, B=1, seed=0)

    def test_r2_generalized_bootstrap(self):
        spec = parse_estimator("r2", EstimatorSpec(name="defaults", kind="r1", K=2))
        estimate = run_estimator(spec, self.sample, self.probs, self.y, self.grid, 100)
        report = estimate_mse("genboot", spec, estimate, self.sample, self.probs, self.y, self.grid, B=10, seed=1)
        assert report.B == 10
        assert np.all(np.isfinite(report.mse))
