import json
import math

import numpy as np
import pytest

from milr.core_math import RngState, ValidationError
from milr.density_models import (
    ConditionalGaussianHead,
    MarginalGaussian,
    cond_log_density,
    cond_log_density_batch,
    head_backward,
    head_forward,
    marginal_log_density_and_grad,
    mixture_marginal_log_density,
    predict,
)

LOG_PHI_0 = -0.9189385332046727  # log standard normal density at its mode


def numeric_grad(f, theta, step=1e-5):
    """Independent central-difference gradient used as the oracle here."""
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        g[i] = (f(theta + e) - f(theta - e)) / (2.0 * step)
    return g


def max_rel_err(analytic, numeric):
    err = 0.0
    for a, n in zip(analytic, numeric):
        d = abs(a - n)
        if abs(a) > 1e-8:
            d /= abs(a)
        err = max(err, d)
    return err


def random_head(state, dx=None, dy=None, hidden=None):
    dx = dx or (1 + state.randint_below(3))
    dy = dy or (1 + state.randint_below(2))
    hidden = hidden if hidden is not None else [2 + state.randint_below(4)]
    head = ConditionalGaussianHead.create(dx, dy, hidden, state=state)
    theta = head.get_params()
    head.set_params(theta + 0.4 * state.normal_array(theta.size))
    return head


def linear_mu_head(slope):
    """Single affine layer, 1-D: mu(x) = slope * x, sigma = 1."""
    w = np.array([[slope], [0.0]])
    b = np.zeros(2)
    return ConditionalGaussianHead(1, 1, [w], [b])


class TestForward:
    def test_zero_init_is_standard_normal(self):
        head = ConditionalGaussianHead.zero_init(3, 2, [4])
        mu, sigma = head_forward(head, [0.5, -1.0, 2.0])
        np.testing.assert_array_equal(mu, np.zeros(2))
        np.testing.assert_array_equal(sigma, np.ones(2))

    def test_clamp_activates(self):
        head = ConditionalGaussianHead.zero_init(1, 1, sigma_max=1e3)
        head.biases[-1][1] = 50.0  # raw output 50 -> exp overflows the clamp
        _, sigma = head_forward(head, [0.0])
        assert sigma[0] == 1e3
        head.biases[-1][1] = -50.0
        _, sigma = head_forward(head, [0.0])
        assert sigma[0] == head.sigma_min

    def test_linear_mu(self):
        head = linear_mu_head(2.0)
        mu, sigma = head_forward(head, [3.0])
        assert mu[0] == 6.0 and sigma[0] == 1.0

    def test_dimension_mismatch(self):
        head = ConditionalGaussianHead.zero_init(2, 1)
        with pytest.raises(ValidationError):
            head_forward(head, [1.0])

    def test_sigma_within_clamps_on_random_inputs(self):
        state = RngState(100)
        for _ in range(25):
            head = random_head(state)
            x = state.normal_array(head.input_dim)
            _, sigma = head_forward(head, x)
            assert np.all(sigma >= head.sigma_min)
            assert np.all(sigma <= head.sigma_max)


class TestCondLogDensity:
    def test_zero_init_at_origin(self):
        head = ConditionalGaussianHead.zero_init(2, 1)
        assert cond_log_density(head, [0.3, 0.7], [0.0]) == pytest.approx(
            LOG_PHI_0, abs=1e-12
        )

    def test_additivity_over_label_dims(self):
        head = ConditionalGaussianHead.zero_init(1, 2)
        assert cond_log_density(head, [0.1], [0.0, 0.0]) == pytest.approx(
            2 * LOG_PHI_0, abs=1e-12
        )

    def test_zero_residual(self):
        head = linear_mu_head(1.0)
        assert cond_log_density(head, [1.0], [1.0]) == pytest.approx(
            LOG_PHI_0, abs=1e-12
        )

    def test_batch_matches_single(self):
        state = RngState(3)
        head = random_head(state)
        xb = state.normal_array(5 * head.input_dim).reshape(5, head.input_dim)
        yb = state.normal_array(5 * head.label_dim).reshape(5, head.label_dim)
        batch = cond_log_density_batch(head, xb, yb)
        singles = [cond_log_density(head, xb[i], yb[i]) for i in range(5)]
        np.testing.assert_allclose(batch, singles, rtol=0, atol=0)


class TestHeadBackward:
    def test_against_finite_differences(self):
        state = RngState(2025)
        worst = 0.0
        for _ in range(100):
            head = random_head(state)
            x = state.normal_array(head.input_dim)
            y = state.normal_array(head.label_dim)
            analytic = head_backward(head, x, y)

            def loss(theta):
                probe = head.clone()
                probe.set_params(theta)
                return -cond_log_density(probe, x, y)

            numeric = numeric_grad(loss, head.get_params())
            worst = max(worst, max_rel_err(analytic, numeric))
        assert worst <= 1e-5

    def test_hand_derived_linear_head(self):
        # mu(x) = w x with sigma pinned: grad wrt w of the negative log
        # density is (mu - y) x
        head = ConditionalGaussianHead(
            1, 1, [np.array([[0.7], [0.0]])], [np.zeros(2)],
            sigma_min=1.0, sigma_max=1.0,
        )
        x, y = 1.3, 0.2
        g = head_backward(head, [x], [y])
        mu = 0.7 * x
        expected_w_mu = (mu - y) * x
        assert g[0] == pytest.approx(expected_w_mu, rel=1e-12)
        # raw-scale path fully clamped: zero everywhere
        assert g[1] == 0.0 and g[3] == 0.0

    def test_zero_gradient_at_mode(self):
        head = linear_mu_head(1.0)
        g = head_backward(head, [2.0], [2.0])  # residual zero, sigma = 1 interior
        # mu-path entries vanish; raw path has (1 - z^2) = 1 times inputs
        assert g[0] == 0.0 and g[2] == 0.0


class TestMarginal:
    def test_mode_values(self):
        m = MarginalGaussian.standard(1)
        logq, grad = marginal_log_density_and_grad(m, [0.0])
        assert logq == pytest.approx(LOG_PHI_0, abs=1e-12)
        assert grad[0] == 0.0

    def test_mean_gradient_value(self):
        m = MarginalGaussian.standard(1)
        _, grad = marginal_log_density_and_grad(m, [2.0])
        assert grad[0] == pytest.approx(-2.0, abs=1e-12)

    def test_against_finite_differences(self):
        state = RngState(99)
        worst = 0.0
        for _ in range(100):
            dy = 1 + state.randint_below(3)
            m = MarginalGaussian.standard(dy)
            m.set_params(0.5 * state.normal_array(2 * dy))
            y = state.normal_array(dy)
            _, analytic = marginal_log_density_and_grad(m, y)

            def loss(theta):
                probe = m.clone()
                probe.set_params(theta)
                return -marginal_log_density_and_grad(probe, y)[0]

            numeric = numeric_grad(loss, m.get_params())
            worst = max(worst, max_rel_err(analytic, numeric))
        assert worst <= 1e-5

    def test_pinned_sigma_has_zero_scale_gradient(self):
        m = MarginalGaussian(np.zeros(1), np.zeros(1), sigma_min=1.0, sigma_max=1.0)
        _, grad = marginal_log_density_and_grad(m, [3.0])
        assert grad[1] == 0.0


class TestMixtureMarginal:
    def test_single_component(self):
        state = RngState(4)
        head = random_head(state)
        x = state.normal_array(head.input_dim)
        y = state.normal_array(head.label_dim)
        assert mixture_marginal_log_density(head, x.reshape(1, -1), y) == \
            pytest.approx(cond_log_density(head, x, y), abs=1e-12)

    def test_input_independent_head(self):
        head = ConditionalGaussianHead.zero_init(2, 1)
        batch = RngState(5).normal_array(12).reshape(6, 2)
        y = [0.4]
        assert mixture_marginal_log_density(head, batch, y) == pytest.approx(
            cond_log_density(head, batch[0], y), abs=1e-12
        )

    def test_symmetric_two_component_value(self):
        # components N(0,1) and N(2,1) evaluated at y = 1: both densities
        # equal phi(1), so the mixture log density is log phi(1)
        head = linear_mu_head(1.0)
        batch = np.array([[0.0], [2.0]])
        assert mixture_marginal_log_density(head, batch, [1.0]) == pytest.approx(
            LOG_PHI_0 - 0.5, abs=1e-12
        )

    def test_empty_batch_rejected(self):
        head = ConditionalGaussianHead.zero_init(1, 1)
        with pytest.raises(ValidationError):
            mixture_marginal_log_density(head, np.zeros((0, 1)), [0.0])

    def test_normalizes_to_one(self):
        state = RngState(6)
        head = random_head(state, dx=1, dy=1, hidden=[3])
        batch = state.normal_array(4).reshape(4, 1)
        mus, sigmas = [], []
        for x in batch:
            mu, sigma = head_forward(head, x)
            mus.append(mu[0])
            sigmas.append(sigma[0])
        lo = min(mus) - 12.0 * max(sigmas)
        hi = max(mus) + 12.0 * max(sigmas)
        xs = np.linspace(lo, hi, 100_001)
        dens = np.exp([mixture_marginal_log_density(head, batch, [v]) for v in xs])
        h = (hi - lo) / 100_000
        total = h / 3.0 * (dens[0] + dens[-1] + 4 * dens[1:-1:2].sum() + 2 * dens[2:-1:2].sum())
        assert total == pytest.approx(1.0, abs=1e-6)


class TestPredict:
    def test_zero_init(self):
        head = ConditionalGaussianHead.zero_init(2, 2)
        np.testing.assert_array_equal(predict(head, [1.0, -1.0]), np.zeros(2))

    def test_linear_head(self):
        assert predict(linear_mu_head(2.0), [3.0])[0] == 6.0

    def test_equals_forward_mu(self):
        state = RngState(12)
        head = random_head(state)
        x = state.normal_array(head.input_dim)
        np.testing.assert_array_equal(predict(head, x), head_forward(head, x)[0])


class TestParamsAndSerialization:
    def test_flatten_roundtrip_identity(self):
        state = RngState(13)
        for _ in range(10):
            head = random_head(state)
            theta = head.get_params()
            clone = head.clone()
            clone.set_params(theta)
            np.testing.assert_array_equal(clone.get_params(), theta)

    def test_param_count_matches_layers(self):
        head = ConditionalGaussianHead.zero_init(3, 2, [5, 4])
        assert head.param_count == (5 * 3 + 5) + (4 * 5 + 4) + (4 * 4 + 4)
        assert head.get_params().size == head.param_count

    def test_dict_roundtrip(self):
        state = RngState(14)
        head = random_head(state)
        doc = json.loads(json.dumps(head.to_dict()))
        back = ConditionalGaussianHead.from_dict(doc)
        np.testing.assert_array_equal(back.get_params(), head.get_params())
        assert back.layer_sizes == head.layer_sizes

    def test_unknown_field_rejected(self):
        doc = ConditionalGaussianHead.zero_init(1, 1).to_dict()
        doc["extra"] = 1
        with pytest.raises(ValidationError):
            ConditionalGaussianHead.from_dict(doc)

    def test_missing_field_rejected(self):
        doc = ConditionalGaussianHead.zero_init(1, 1).to_dict()
        del doc["layers"]
        with pytest.raises(ValidationError):
            ConditionalGaussianHead.from_dict(doc)

    def test_marginal_roundtrip(self):
        m = MarginalGaussian([0.5, -1.0], [0.1, 0.2])
        back = MarginalGaussian.from_dict(json.loads(json.dumps(m.to_dict())))
        np.testing.assert_array_equal(back.get_params(), m.get_params())

    def test_sigma_bounds_validated(self):
        with pytest.raises(ValidationError):
            ConditionalGaussianHead.zero_init(1, 1, sigma_min=0.0)
        with pytest.raises(ValidationError):
            ConditionalGaussianHead.zero_init(1, 1, sigma_min=2.0, sigma_max=1.0)
