"""Tests for Gaussian posteriors and likelihoods."""

import math

import numpy as np
import pytest
from scipy.stats import norm

from disent_toolkit.autodiff import Tensor, backward, check_gradients
from disent_toolkit.errors import ConfigError, ShapeError
from disent_toolkit.nn import (
    kl_to_standard_normal,
    log_density_diag_gaussian,
    log_standard_normal,
    recon_loss,
    reparameterize,
)


class TestKL:
    """Closed-form KL to the standard normal."""

    @pytest.mark.parametrize(
        "mu,logvar,expected",
        [
            (0.0, 0.0, 0.0),
            (1.0, 0.0, 0.5),
            (0.0, math.log(4.0), 0.5 * (4.0 - math.log(4.0) - 1.0)),
        ],
    )
    def test_values(self, mu, logvar, expected):
        kl = kl_to_standard_normal(Tensor([[mu]]), Tensor([[logvar]]))
        assert kl.shape == (1,)
        assert kl.item() == pytest.approx(expected, abs=1e-12)

    def test_sums_over_dimensions(self):
        kl = kl_to_standard_normal(Tensor([[1.0, 1.0], [0.0, 0.0]]), Tensor(np.zeros((2, 2))))
        np.testing.assert_allclose(kl.data, [1.0, 0.0])

    def test_gradient(self, param, rng):
        mu = param(4, 3)
        logvar = param(4, 3)
        weights = rng.uniform(0.5, 1.5, size=4)
        assert check_gradients(lambda: (kl_to_standard_normal(mu, logvar) * weights).sum(), [mu, logvar]) < 1e-5


class TestDensities:
    """Gaussian log densities."""

    def test_standard_normal_at_zero(self):
        assert log_standard_normal(Tensor([0.0])).item() == pytest.approx(-0.5 * math.log(2 * math.pi))

    def test_pairwise_matches_scipy(self, rng):
        z = rng.normal(size=(4, 2))
        mu = rng.normal(size=(3, 2))
        logvar = rng.normal(scale=0.5, size=(3, 2))
        out = log_density_diag_gaussian(Tensor(z), Tensor(mu), Tensor(logvar)).data
        assert out.shape == (4, 3, 2)
        for i in range(4):
            for j in range(3):
                expected = norm.logpdf(z[i], loc=mu[j], scale=np.exp(0.5 * logvar[j]))
                np.testing.assert_allclose(out[i, j], expected, rtol=1e-10, atol=1e-12)

    def test_density_integrates_to_one(self):
        grid = np.linspace(-10.0, 10.0, 20001)[:, None]
        mu = np.array([[0.3]])
        logvar = np.array([[math.log(0.5)]])
        log_p = log_density_diag_gaussian(Tensor(grid), Tensor(mu), Tensor(logvar)).data[:, 0, 0]
        assert np.exp(log_p).sum() * (grid[1, 0] - grid[0, 0]) == pytest.approx(1.0, abs=1e-6)

    def test_pairwise_gradient(self, param, rng):
        z = param(3, 2)
        mu = param(4, 2)
        logvar = param(4, 2)
        for tensor in (mu, logvar):
            tensor.data *= 0.5
        weights = rng.normal(size=(3, 4, 2))
        error = check_gradients(lambda: (log_density_diag_gaussian(z, mu, logvar) * weights).sum(), [z, mu, logvar])
        assert error < 1e-5

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            log_density_diag_gaussian(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))))


class TestReparameterize:
    """z = mu + exp(logvar / 2) * eps."""

    def test_value_and_gradients(self, rng):
        mu = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        logvar = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        eps = rng.normal(size=(2, 3))
        z = reparameterize(mu, logvar, eps=eps)
        np.testing.assert_allclose(z.data, mu.data + np.exp(0.5 * logvar.data) * eps)
        backward(z.sum())
        np.testing.assert_allclose(mu.grad, np.ones((2, 3)))
        np.testing.assert_allclose(logvar.grad, 0.5 * np.exp(0.5 * logvar.data) * eps)

    def test_noise_shape_mismatch(self):
        with pytest.raises(ShapeError, match="noise shape"):
            reparameterize(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))), eps=np.zeros((3, 2)))

    def test_mu_logvar_mismatch(self, rng):
        with pytest.raises(ShapeError):
            reparameterize(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))), rng=rng)


class TestReconLoss:
    """Pixel likelihoods summed over pixels and averaged over the batch."""

    def test_bernoulli_at_half(self):
        x = np.full((1, 1, 1, 1), 0.5)
        assert recon_loss(x, Tensor(x)).item() == pytest.approx(math.log(2.0))

    def test_bernoulli_minimized_at_target(self):
        x = np.full((1, 1), 0.3)
        candidates = np.linspace(0.05, 0.95, 91)
        losses = [recon_loss(x, Tensor(np.full((1, 1), p))).item() for p in candidates]
        assert candidates[int(np.argmin(losses))] == pytest.approx(0.3)

    def test_bernoulli_clamps_saturated_outputs(self):
        x = np.ones((1, 2))
        loss = recon_loss(x, Tensor(np.zeros((1, 2))))
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(-2 * math.log(1e-7))

    def test_mse_sums_pixels_and_averages_batch(self):
        x = np.zeros((2, 1, 2, 2))
        x_hat = np.ones((2, 1, 2, 2))
        x_hat[1] = 2.0
        assert recon_loss(x, Tensor(x_hat), kind="mse").item() == pytest.approx((4.0 + 16.0) / 2)

    def test_bernoulli_gradient(self, rng):
        x = rng.uniform(size=(3, 1, 2, 2))
        x_hat = Tensor(rng.uniform(0.1, 0.9, size=(3, 1, 2, 2)), requires_grad=True)
        assert check_gradients(lambda: recon_loss(x, x_hat), [x_hat]) < 1e-5

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="unknown reconstruction kind"):
            recon_loss(np.zeros((1, 1)), Tensor(np.zeros((1, 1))), kind="laplace")

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            recon_loss(np.zeros((1, 4)), Tensor(np.zeros((1, 2))))
