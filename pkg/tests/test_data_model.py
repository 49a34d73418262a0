import math

import numpy as np
import pytest

from milr.core_math import RngState, ValidationError
from milr.data_model import (
    Dataset,
    JointGaussianSpec,
    ScalarRegressionSpec,
    bayes_predict,
    bayes_risk,
    population_risk_mc,
    sample_joint_gaussian,
    sample_scalar_regression,
)


class TestSpecs:
    @pytest.mark.parametrize("rho", [0.0, 1.0, -0.2, 1.3])
    def test_rho_endpoints_rejected(self, rho):
        with pytest.raises(ValidationError):
            JointGaussianSpec(2, rho)

    def test_near_degenerate_rho_accepted(self):
        ds = sample_joint_gaussian(JointGaussianSpec(2, 0.9999), 100, RngState(3))
        assert len(ds) == 100
        np.testing.assert_allclose(ds.inputs, ds.labels, atol=0.1)

    def test_linear_requires_matching_beta(self):
        with pytest.raises(ValidationError):
            ScalarRegressionSpec(2, "linear", 1.0, beta=(1.0,))
        with pytest.raises(ValidationError):
            ScalarRegressionSpec(2, "linear", 1.0)

    def test_unknown_truth_rejected(self):
        with pytest.raises(ValidationError):
            ScalarRegressionSpec(2, "cubic", 1.0)

    def test_dataset_row_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            Dataset(1, 1, np.zeros((3, 1)), np.zeros((2, 1)))

    def test_dataset_nonfinite_rejected(self):
        bad = np.array([[np.nan]])
        with pytest.raises(ValidationError):
            Dataset(1, 1, bad, np.zeros((1, 1)))


class TestJointGaussianSampling:
    def test_count_zero_rejected(self):
        with pytest.raises(ValidationError):
            sample_joint_gaussian(JointGaussianSpec(1, 0.5), 0, RngState(0))

    def test_correlation_matches_rho(self):
        ds = sample_joint_gaussian(JointGaussianSpec(1, 0.5), 100_000, RngState(21))
        r = np.corrcoef(ds.inputs[:, 0], ds.labels[:, 0])[0, 1]
        assert abs(r - 0.5) <= 3.0 / math.sqrt(100_000)

    def test_input_variance_is_one_per_coordinate(self):
        ds = sample_joint_gaussian(JointGaussianSpec(3, 0.7), 100_000, RngState(22))
        var = ds.inputs.var(axis=0, ddof=1)
        np.testing.assert_allclose(var, 1.0, atol=3.0 * math.sqrt(2.0 / 100_000))

    def test_cross_covariance_is_rho_identity(self):
        n, rho, count = 3, 0.6, 100_000
        ds = sample_joint_gaussian(JointGaussianSpec(n, rho), count, RngState(23))
        cov = ds.labels.T @ ds.inputs / count
        # entrywise MC bound: sd of y_i x_j products is at most ~sqrt(2)
        tol = 3.0 * math.sqrt(2.0 / count)
        np.testing.assert_allclose(cov, rho * np.eye(n), atol=tol)

    def test_reproducible_per_seed(self):
        spec = JointGaussianSpec(2, 0.3)
        a = sample_joint_gaussian(spec, 500, RngState(77))
        b = sample_joint_gaussian(spec, 500, RngState(77))
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.labels, b.labels)


class TestScalarRegressionSampling:
    def test_vanishing_noise_recovers_truth(self):
        spec = ScalarRegressionSpec(2, "linear", 1e-9, beta=(2.0, -1.0))
        ds = sample_scalar_regression(spec, 100, RngState(5))
        truth = 2.0 * ds.inputs[:, 0] - ds.inputs[:, 1]
        np.testing.assert_allclose(ds.labels[:, 0], truth, atol=1e-7)

    def test_residual_variance_is_noise_variance(self):
        spec = ScalarRegressionSpec(3, "linear", 1.0, beta=(1.0, 0.5, -2.0))
        ds = sample_scalar_regression(spec, 100_000, RngState(6))
        resid = ds.labels[:, 0] - ds.inputs @ np.array([1.0, 0.5, -2.0])
        assert abs(resid.var(ddof=1) - 1.0) <= 3.0 * math.sqrt(2.0 / 100_000)

    def test_sine_rows_finite(self):
        ds = sample_scalar_regression(
            ScalarRegressionSpec(1, "sine", 0.5), 10, RngState(7)
        )
        assert len(ds) == 10
        assert np.all(np.isfinite(ds.labels))

    def test_quadratic_truth(self):
        spec = ScalarRegressionSpec(4, "quadratic", 1e-9)
        ds = sample_scalar_regression(spec, 50, RngState(8))
        truth = np.sum(ds.inputs**2, axis=1) / 4.0
        np.testing.assert_allclose(ds.labels[:, 0], truth, atol=1e-7)


class TestBayesOracle:
    def test_predict_scales_input(self):
        spec = JointGaussianSpec(2, 0.5)
        np.testing.assert_array_equal(
            bayes_predict(spec, [2.0, -4.0]), np.array([1.0, -2.0])
        )

    def test_predict_zero(self):
        spec = JointGaussianSpec(3, 0.77)
        np.testing.assert_array_equal(bayes_predict(spec, np.zeros(3)), np.zeros(3))

    def test_predict_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            bayes_predict(JointGaussianSpec(2, 0.5), [1.0])

    def test_risk_closed_form(self):
        assert bayes_risk(JointGaussianSpec(3, 0.8)) == pytest.approx(1.08, abs=1e-12)

    def test_risk_vanishes_at_high_rho(self):
        assert bayes_risk(JointGaussianSpec(1, 1.0 - 1e-9)) == pytest.approx(0.0, abs=1e-8)

    def test_risk_at_threshold_rho(self):
        rho_star = math.sqrt(1.0 - 1.0 / (2.0 * math.pi * math.e))
        expected = 5.0 / (2.0 * math.pi * math.e)
        assert bayes_risk(JointGaussianSpec(5, rho_star)) == pytest.approx(
            expected, rel=1e-12
        )

    def test_mc_risk_of_bayes_matches_closed_form(self):
        spec = JointGaussianSpec(2, 0.6)
        est, se = population_risk_mc(
            lambda x: bayes_predict(spec, x), spec, 100_000, RngState(41)
        )
        assert abs(est - bayes_risk(spec)) <= 3.0 * se


class TestPopulationRiskMc:
    def test_count_below_two_rejected(self):
        with pytest.raises(ValidationError):
            population_risk_mc(lambda x: x, JointGaussianSpec(1, 0.5), 1, RngState(0))

    def test_zero_predictor_risk_is_n(self):
        spec = JointGaussianSpec(1, 0.4)
        est, se = population_risk_mc(
            lambda x: np.zeros(1), spec, 100_000, RngState(42)
        )
        assert abs(est - 1.0) <= 3.0 * se

    def test_identity_predictor_risk(self):
        # E (Y - X)^2 = 2 - 2 rho = 1 at rho = 1/2
        spec = JointGaussianSpec(1, 0.5)
        est, se = population_risk_mc(lambda x: x, spec, 100_000, RngState(43))
        assert abs(est - 1.0) <= 3.0 * se

    def test_vectorized_path_matches_rowwise(self):
        spec = JointGaussianSpec(2, 0.6)
        row = population_risk_mc(
            lambda x: bayes_predict(spec, x), spec, 2_000, RngState(44)
        )
        vec = population_risk_mc(
            lambda xs: spec.rho * xs, spec, 2_000, RngState(44), vectorized=True
        )
        assert row == vec
