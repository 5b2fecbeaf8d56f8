"""
Tests for least squares fitting and the population-level bias predictions.
"""

import unittest

import numpy as np

from underreporting.errors import UnderReportingError
from underreporting.models import LinearModel
from underreporting.services.estimate import (
    MomentSet,
    observed_moments,
    ols_fit,
    omitted_variable_params,
    onedim_attenuation_factor,
    orthogonalize_tail,
    population_biased_params,
    population_biased_params_general,
    r2_score,
    restore_tail,
)
from underreporting.tests.test_utils import example_moments, example_population, random_population


class TestOlsFit(unittest.TestCase):
    """Test case for ols_fit and r2_score."""

    def test_exact_fit(self):
        """A noiseless linear outcome is recovered to machine precision."""
        rng = np.random.default_rng(0)
        X = rng.normal(size=(200, 3))
        model = ols_fit(X, 1.5 + X @ [2.0, -1.0, 0.5])
        self.assertAlmostEqual(model.alpha, 1.5, places=10)
        np.testing.assert_allclose(model.beta, [2.0, -1.0, 0.5], atol=1e-10)
        self.assertAlmostEqual(r2_score(1.5 + X @ [2.0, -1.0, 0.5], model.predict(X)), 1.0, places=10)

    def test_large_sample_matches_population_estimates(self):
        """OLS on a large under-reported sample approaches the closed form."""
        data = example_population(m0=0.5, m1=0.5).sample(1000000, seed=1)
        model = ols_fit(data.X, data.Y)
        np.testing.assert_allclose(model.beta, [6.0 / 7.0, 9.0 / 7.0], atol=0.01)

    def test_collinear_columns(self):
        """Duplicated columns raise a rank error naming them."""
        rng = np.random.default_rng(1)
        x = rng.normal(size=50)
        X = np.column_stack([x, rng.normal(size=50), 3.0 * x])
        with self.assertRaises(UnderReportingError) as ctx:
            ols_fit(X, x, ["a", "b", "c"])
        self.assertEqual(ctx.exception.error_type, "rank_error")
        self.assertIn("a", ctx.exception.message)
        self.assertIn("c", ctx.exception.message)

    def test_too_few_rows(self):
        """n <= d is a validation error."""
        with self.assertRaises(UnderReportingError) as ctx:
            ols_fit(np.eye(2), [1.0, 2.0])
        self.assertEqual(ctx.exception.error_type, "validation_error")


class TestPopulationBiasedParams(unittest.TestCase):
    """Test case for the closed-form and general population estimates."""

    def test_worked_example(self):
        """Unit variances, covariance 0.5 and m = 0.5 give (6/7, 9/7)."""
        moments, model = example_moments((1.0, 1.0), 0.5)
        biased = population_biased_params(moments, model)
        np.testing.assert_allclose(biased.beta, [6.0 / 7.0, 9.0 / 7.0], atol=1e-12)
        self.assertAlmostEqual(biased.alpha, 0.0, places=12)
        general = population_biased_params_general(moments, model)
        np.testing.assert_allclose(general.beta, biased.beta, atol=1e-12)

    def test_full_reporting_is_unbiased(self):
        """m = 1 returns the true coefficients."""
        moments, model = example_moments((1.0, -2.0), 1.0)
        np.testing.assert_allclose(population_biased_params(moments, model).beta, [1.0, -2.0], atol=1e-12)

    def test_zero_rate(self):
        """E[xi] = 0 is a numerical error."""
        moments, model = example_moments((1.0, 1.0), 0.0)
        with self.assertRaises(UnderReportingError) as ctx:
            population_biased_params(moments, model)
        self.assertEqual(ctx.exception.error_type, "numerical_error")

    def test_correlated_tail_rejected(self):
        """The closed form needs uncorrelated tail features."""
        cov = [[1.0, 0.2, 0.1], [0.2, 1.0, 0.4], [0.1, 0.4, 1.0]]
        with self.assertRaises(UnderReportingError) as ctx:
            population_biased_params(MomentSet([0, 0, 0], cov, 0.5), LinearModel(0.0, [1.0, 1.0, 1.0]))
        self.assertEqual(ctx.exception.error_type, "validation_error")

    def test_single_feature_attenuation(self):
        """With one feature the slope shrinks by Var(Z) / (E[Z^2] - m E[Z]^2)."""
        self.assertAlmostEqual(onedim_attenuation_factor(1.0, 1.0, 0.5), 2.0 / 3.0)
        self.assertEqual(onedim_attenuation_factor(0.0, 1.0, 0.3), 1.0)
        biased = population_biased_params(MomentSet([1.0], [[1.0]], 0.5), LinearModel(0.0, [2.0]))
        self.assertAlmostEqual(biased.beta[0], 4.0 / 3.0, places=12)

    def test_random_populations(self):
        """Sign, shrinkage, monotonicity and tail shifts hold across random populations."""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            pop = random_population(rng, int(rng.integers(2, 6)))
            moments, model, _ = MomentSet.from_population(pop)
            beta1 = model.beta[0]
            biased = population_biased_params(moments, model)
            general = population_biased_params_general(moments, model)
            np.testing.assert_allclose(biased.beta, general.beta, rtol=1e-8, atol=1e-10)
            self.assertAlmostEqual(biased.alpha, general.alpha, delta=1e-8 * max(1.0, abs(general.alpha)))

            self.assertEqual(np.sign(biased.beta[0]), np.sign(beta1))
            self.assertLessEqual(abs(biased.beta[0]), abs(beta1) * (1.0 + 1e-12))

            higher = population_biased_params(moments.with_rate(min(1.0, moments.reporting_rate + 0.05)), model)
            self.assertGreaterEqual(abs(higher.beta[0]), abs(biased.beta[0]) * (1.0 - 1e-12))

            shift = (biased.beta[1:] - model.beta[1:]) * beta1 * moments.cov[0, 1:]
            self.assertTrue(np.all(shift >= -1e-12))

            var_x1, cov_x1_z, _ = observed_moments(moments)
            r2 = float(np.sum(cov_x1_z[1:] ** 2 / (var_x1 * np.diag(moments.cov)[1:])))
            self.assertGreaterEqual(r2, 0.0)
            self.assertLess(r2, 1.0)


class TestOrthogonalizeTail(unittest.TestCase):
    """Test case for orthogonalize_tail and restore_tail."""

    def test_rotation_matches_general_solution(self):
        """Rotating, solving in closed form and restoring equals the general solution."""
        rng = np.random.default_rng(7)
        for _ in range(200):
            pop = random_population(rng, int(rng.integers(3, 7)), orthogonal_tail=False)
            moments, model, _ = MomentSet.from_population(pop)
            rotated, rotated_model, w = orthogonalize_tail(moments, model)
            np.testing.assert_allclose(rotated.cov[1:, 1:], np.eye(moments.d - 1), atol=1e-9)
            restored = restore_tail(population_biased_params(rotated, rotated_model), w)
            general = population_biased_params_general(moments, model)
            np.testing.assert_allclose(restored.beta, general.beta, rtol=1e-7, atol=1e-9)

    def test_rotation_preserves_predictions(self):
        """The rotated model gives the same mean prediction."""
        rng = np.random.default_rng(3)
        pop = random_population(rng, 4, orthogonal_tail=False)
        moments, model, _ = MomentSet.from_population(pop)
        rotated, rotated_model, _ = orthogonalize_tail(moments, model)
        self.assertAlmostEqual(
            float(rotated.mean @ rotated_model.beta), float(moments.mean @ model.beta), places=9
        )

    def test_two_features_unchanged(self):
        """With a single tail feature no rotation is applied."""
        moments, model = example_moments()
        rotated, rotated_model, w = orthogonalize_tail(moments, model)
        self.assertIs(rotated, moments)
        np.testing.assert_array_equal(w, np.eye(1))


class TestOmittedVariableParams(unittest.TestCase):
    """Test case for omitted_variable_params."""

    def test_decomposition_equals_biased_tail(self):
        """The omitted variable decomposition reproduces the biased tail coefficients."""
        moments, model = example_moments((1.0, 1.0), 0.5)
        result = omitted_variable_params(moments, model)
        self.assertAlmostEqual(result.beta1_hat, 6.0 / 7.0, places=12)
        np.testing.assert_allclose(result.decomposition, [9.0 / 7.0], atol=1e-12)
        np.testing.assert_allclose(result.omitted_model.beta, [1.5], atol=1e-12)

    def test_vanishing_rate_approaches_omission(self):
        """As m goes to 0 the tail estimates approach those of dropping the feature."""
        rng = np.random.default_rng(11)
        pop = random_population(rng, 4)
        moments, model, _ = MomentSet.from_population(pop)
        omitted = omitted_variable_params(moments, model).omitted_model
        nearly_lost = population_biased_params(moments.with_rate(1e-9), model)
        np.testing.assert_allclose(nearly_lost.beta[1:], omitted.beta, atol=1e-6)
        self.assertAlmostEqual(nearly_lost.alpha, omitted.alpha, delta=1e-6 * max(1.0, abs(omitted.alpha)))


if __name__ == "__main__":
    unittest.main()
