"""
Tests for the Gaussian-mixture case analysis.
"""

import unittest

import numpy as np

from underreporting.errors import UnderReportingError
from underreporting.models import GaussianPopulation, LinearModel
from underreporting.services.theory import (
    CASE_OVERSELECTED,
    CASE_UNDERSELECTED,
    classify_case,
    corollary_constant,
    mixture_cdf,
    mixture_quantile,
    population_cdf,
    population_excess_selection,
    turning_point,
)
from underreporting.tests.test_utils import example_population, random_population


class TestClassifyCase(unittest.TestCase):
    """Test case for classify_case."""

    def test_corollary_constant(self):
        """Unit variance, zero mean, m = 0.5 and S^2 = 0.25 give c = 4/7."""
        self.assertAlmostEqual(corollary_constant(1.0, 0.0, 0.5, 0.25), 4.0 / 7.0, places=12)

    def test_underselected_example(self):
        """beta = (1, 1): the reduced component is narrower."""
        report = classify_case(example_population((1.0, 1.0), m0=0.8, m1=0.2))
        self.assertEqual(report.case_label, CASE_UNDERSELECTED)
        self.assertAlmostEqual(report.c, 4.0 / 7.0, places=12)
        self.assertAlmostEqual(report.q, 0.5, places=12)
        self.assertAlmostEqual(report.s2, 0.25, places=12)
        self.assertAlmostEqual(report.variance_full, 171.0 / 49.0, places=10)
        self.assertAlmostEqual(report.variance_reduced, 81.0 / 49.0, places=10)
        np.testing.assert_allclose(report.biased_model.beta, [6.0 / 7.0, 9.0 / 7.0], atol=1e-12)
        self.assertEqual(report.more_underreported_group, 1)
        self.assertAlmostEqual(report.turning_point, 0.0, places=10)

    def test_overselected_example(self):
        """beta = (1, -2): the reduced component is wider."""
        report = classify_case(example_population((1.0, -2.0), m0=0.5, m1=0.5))
        self.assertEqual(report.case_label, CASE_OVERSELECTED)
        self.assertAlmostEqual(report.variance_full, 108.0 / 49.0, places=10)
        self.assertAlmostEqual(report.variance_reduced, 144.0 / 49.0, places=10)
        self.assertIsNone(report.more_underreported_group)

    def test_label_invariant_to_coefficient_scale(self):
        """Rescaling beta leaves the case label unchanged."""
        base = classify_case(example_population((1.0, -2.0))).case_label
        for factor in (3.0, 0.1, -2.0):
            pop = example_population((factor * 1.0, factor * -2.0))
            self.assertEqual(classify_case(pop).case_label, base)

    def test_zero_coefficient(self):
        """A zero coefficient on the under-reported feature is rejected."""
        with self.assertRaises(UnderReportingError) as ctx:
            classify_case(example_population((0.0, 1.0)))
        self.assertEqual(ctx.exception.error_type, "validation_error")

    def test_random_populations_are_consistent(self):
        """Every label agrees with the ordering of the component variances."""
        rng = np.random.default_rng(99)
        for i in range(1000):
            pop = random_population(rng, int(rng.integers(2, 6)), orthogonal_tail=bool(i % 2))
            report = classify_case(pop)
            self.assertIn(report.case_label, (CASE_OVERSELECTED, CASE_UNDERSELECTED))
            self.assertEqual(report.variance_reduced > report.variance_full, report.case_label == CASE_OVERSELECTED)
            self.assertGreaterEqual(report.r2, 0.0)
            self.assertLess(report.r2, 1.0)

    def test_example_with_negative_tail_coefficient(self):
        """beta = (1, -1): q = -0.5 stays above -4/7, so the example is still underselected."""
        report = classify_case(example_population((1.0, -1.0), m0=0.8, m1=0.2))
        self.assertAlmostEqual(report.q, -0.5, places=12)
        self.assertAlmostEqual(report.c, 4.0 / 7.0, places=12)
        self.assertEqual(report.case_label, CASE_UNDERSELECTED)
        self.assertAlmostEqual(report.variance_full, 31.0 / 49.0, places=10)
        self.assertAlmostEqual(report.variance_reduced, 25.0 / 49.0, places=10)

    def test_two_features_with_non_unit_tail_variance(self):
        """S^2 and R^2 use the tail variance when two features are not rotated."""
        pop = GaussianPopulation(
            mu=[0.0, 0.0], sigma=[[1.0, 0.5], [0.5, 4.0]], alpha=0.0, beta=[1.0, 1.0],
            r=0.5, m0=[0.5, 1.0], m1=[0.5, 1.0],
        )
        report = classify_case(pop)
        self.assertAlmostEqual(report.s2, 0.0625, places=12)
        self.assertGreaterEqual(report.r2, 0.0)
        self.assertLess(report.r2, report.s2)

        strong = GaussianPopulation(
            mu=[0.0, 0.0], sigma=[[1.0, 1.8], [1.8, 4.0]], alpha=0.0, beta=[1.0, 1.0],
            r=0.5, m0=[0.5, 1.0], m1=[0.5, 1.0],
        )
        report = classify_case(strong)
        self.assertAlmostEqual(report.s2, 0.81, places=12)
        self.assertEqual(report.case_label, CASE_UNDERSELECTED)
        self.assertEqual(report.variance_reduced > report.variance_full, report.case_label == CASE_OVERSELECTED)

    def test_rescaled_tail_feature_gives_same_report(self):
        """Doubling Z2 (and halving its coefficient) leaves the analysis unchanged."""
        base = classify_case(example_population((1.0, 1.0)))
        pop = GaussianPopulation(
            mu=[0.0, 0.0], sigma=[[1.0, 1.0], [1.0, 4.0]], alpha=0.0, beta=[1.0, 0.5],
            r=0.5, m0=[0.5, 1.0], m1=[0.5, 1.0],
        )
        report = classify_case(pop)
        self.assertAlmostEqual(report.s2, base.s2, places=12)
        self.assertAlmostEqual(report.r2, base.r2, places=12)
        self.assertAlmostEqual(report.q, base.q, places=12)
        self.assertAlmostEqual(report.c, base.c, places=12)
        self.assertEqual(report.case_label, base.case_label)
        self.assertAlmostEqual(report.variance_full, base.variance_full, places=10)
        self.assertAlmostEqual(report.variance_reduced, base.variance_reduced, places=10)

    def test_other_target_feature(self):
        """The analysis follows the chosen target feature."""
        pop = GaussianPopulation(
            mu=[0.0, 0.0], sigma=[[1.0, 0.5], [0.5, 1.0]], alpha=0.0, beta=[-2.0, 1.0],
            r=0.5, m0=[1.0, 0.5], m1=[1.0, 0.5],
        )
        report = classify_case(pop, target_feature=1)
        self.assertEqual(report.case_label, CASE_OVERSELECTED)
        np.testing.assert_allclose(report.biased_model.beta, [-12.0 / 7.0, 6.0 / 7.0], atol=1e-12)


class TestMixtureDistribution(unittest.TestCase):
    """Test case for the mixture CDF, its quantiles and the turning point."""

    def setUp(self):
        """Set up the overselected example with group 1 under-reported."""
        self.pop = example_population((1.0, -2.0), m0=0.8, m1=0.2)
        self.model = classify_case(self.pop).biased_model

    def test_cdf_is_monotone(self):
        """The mixture CDF is non-decreasing from 0 to 1."""
        x = np.linspace(-15.0, 15.0, 301)
        for g in (0, 1):
            cdf = mixture_cdf(self.model, self.pop, g, x)
            self.assertTrue(np.all(np.diff(cdf) >= 0.0))
            self.assertLess(cdf[0], 1e-6)
            self.assertGreater(cdf[-1], 1.0 - 1e-6)

    def test_quantile_inverts_cdf(self):
        """mixture_quantile returns the point where the CDF reaches p."""
        for p in (0.05, 0.5, 0.95):
            self.assertAlmostEqual(mixture_cdf(self.model, self.pop, 1, mixture_quantile(self.model, self.pop, p, 1)), p, places=9)
            self.assertAlmostEqual(population_cdf(self.model, self.pop, mixture_quantile(self.model, self.pop, p)), p, places=9)
        with self.assertRaises(UnderReportingError):
            mixture_quantile(self.model, self.pop, 1.0)

    def test_selection_ordering_around_turning_point(self):
        """Above the turning point the more under-reported group is selected more often."""
        t = turning_point(self.model, self.pop)
        for x in (t + 0.5, t + 2.0):
            self.assertGreater(1.0 - mixture_cdf(self.model, self.pop, 1, x), 1.0 - mixture_cdf(self.model, self.pop, 0, x))
        self.assertLess(1.0 - mixture_cdf(self.model, self.pop, 1, t - 1.0), 1.0 - mixture_cdf(self.model, self.pop, 0, t - 1.0))

    def test_equal_spread_has_no_turning_point(self):
        """Equal component variances leave the turning point undefined."""
        with self.assertRaises(UnderReportingError) as ctx:
            turning_point(LinearModel(0.0, [1.0, -1.0]), self.pop)
        self.assertEqual(ctx.exception.error_type, "undefined_turning_point")


class TestPopulationExcessSelection(unittest.TestCase):
    """Test case for population_excess_selection."""

    def test_mass_balance(self):
        """Group excess rates cancel when weighted by group share."""
        pop = example_population((1.0, -2.0), m0=0.8, m1=0.2, r=0.3)
        for C in (0.05, 0.2, 0.5):
            result = population_excess_selection(pop, C)
            self.assertAlmostEqual(pop.r * result.delta[1] + (1.0 - pop.r) * result.delta[0], 0.0, places=9)

    def test_overselection_at_small_share(self):
        """In the overselected case the more under-reported group gains at high thresholds."""
        result = population_excess_selection(example_population((1.0, -2.0), m0=0.8, m1=0.2), 0.05)
        self.assertGreater(result.delta[1], 0.0)
        self.assertLess(result.delta[0], 0.0)

    def test_underselection_at_small_share(self):
        """In the underselected case the more under-reported group loses at high thresholds."""
        result = population_excess_selection(example_population((1.0, 1.0), m0=0.8, m1=0.2), 0.05)
        self.assertLess(result.delta[1], 0.0)

    def test_invalid_share(self):
        """C must lie strictly between 0 and 1."""
        with self.assertRaises(UnderReportingError):
            population_excess_selection(example_population(), 0.0)


class TestSimulatedSelection(unittest.TestCase):
    """Test case comparing the mixture analysis with simulated populations."""

    N_SAMPLES = 1_000_000

    def _simulate(self, pop: GaussianPopulation, seed: int):
        model = classify_case(pop).biased_model
        data = pop.sample(self.N_SAMPLES, seed=seed)
        return model, model.predict(data.X), data.G

    @staticmethod
    def _group_rates(predictions: np.ndarray, groups: np.ndarray, t: float):
        return {g: float(np.mean(predictions[groups == g] > t)) for g in (0, 1)}

    def test_mixture_cdf_within_dkw_band(self):
        """Group CDFs stay inside the Dvoretzky-Kiefer-Wolfowitz band of the empirical CDFs."""
        pop = example_population((1.0, 1.0), m0=0.8, m1=0.2)
        model, predictions, groups = self._simulate(pop, seed=21)
        grid = np.quantile(predictions, np.linspace(0.01, 0.99, 99))
        for g in (0, 1):
            scores = np.sort(predictions[groups == g])
            empirical = np.searchsorted(scores, grid, side="right") / scores.size
            band = np.sqrt(np.log(2.0 / 1e-6) / (2.0 * scores.size))
            self.assertLess(np.max(np.abs(mixture_cdf(model, pop, g, grid) - empirical)), band)

    def test_population_median(self):
        """Half of the simulated scores lie below the mixture median."""
        pop = example_population((1.0, 1.0))
        model, predictions, _ = self._simulate(pop, seed=22)
        median = mixture_quantile(model, pop, 0.5)
        self.assertAlmostEqual(float(np.mean(predictions <= median)), 0.5, delta=2e-3)

    def test_worked_examples_at_high_threshold(self):
        """At the 95th percentile the simulated selection ordering matches the case label."""
        for beta, label in (((1.0, 1.0), CASE_UNDERSELECTED), ((1.0, -1.0), CASE_UNDERSELECTED),
                            ((1.0, -2.0), CASE_OVERSELECTED)):
            with self.subTest(beta=beta):
                pop = example_population(beta, m0=0.9, m1=0.1)
                report = classify_case(pop)
                self.assertEqual(report.case_label, label)
                model, predictions, groups = self._simulate(pop, seed=23)
                level = 0.95
                t = float(np.quantile(predictions, level))
                while t <= report.turning_point:
                    level = (1.0 + level) / 2.0
                    t = float(np.quantile(predictions, level))
                rates = self._group_rates(predictions, groups, t)
                if label == CASE_OVERSELECTED:
                    self.assertGreater(rates[1], rates[0])
                else:
                    self.assertLess(rates[1], rates[0])
                for g in (0, 1):
                    self.assertAlmostEqual(rates[g], 1.0 - mixture_cdf(model, pop, g, t), delta=3e-3)

    def test_ordering_flips_at_turning_point(self):
        """With a shifted mean the group ordering reverses across the turning point."""
        pop = example_population((1.0, 1.0), m0=0.9, m1=0.1, mu=(1.0, 0.0))
        report = classify_case(pop)
        self.assertEqual(report.case_label, CASE_UNDERSELECTED)
        t = report.turning_point
        self.assertNotAlmostEqual(t, report.biased_model.alpha, places=3)
        model, predictions, groups = self._simulate(pop, seed=24)
        step = 0.25 * np.sqrt(report.variance_full)
        above = self._group_rates(predictions, groups, t + step)
        below = self._group_rates(predictions, groups, t - step)
        self.assertLess(above[1], above[0])
        self.assertGreater(below[1], below[0])
        for x, rates in ((t + step, above), (t - step, below)):
            for g in (0, 1):
                self.assertAlmostEqual(rates[g], 1.0 - mixture_cdf(model, pop, g, x), delta=3e-3)


if __name__ == "__main__":
    unittest.main()
