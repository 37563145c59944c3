"""Diagonal-Gaussian posteriors, densities and reconstruction likelihoods."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from disent_toolkit.autodiff import Tensor, as_tensor, clip
from disent_toolkit.errors import ConfigError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)
LOGVAR_LIMIT = 30.0
BERNOULLI_CLAMP = 1e-7
RECON_KINDS = ("bernoulli", "mse")


def clamp_logvar(logvar: Tensor) -> Tensor:
    return clip(logvar, -LOGVAR_LIMIT, LOGVAR_LIMIT)


def _require_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def reparameterize(
    mu: Tensor,
    logvar: Tensor,
    rng: np.random.Generator | None = None,
    eps: np.ndarray | None = None,
) -> Tensor:
    """Draw z = mu + exp(logvar / 2) * eps; gradients reach mu and logvar only.

    Args:
        mu: Posterior means, (B, d).
        logvar: Posterior log-variances, (B, d).
        rng: Source of eps when ``eps`` is not given.
        eps: Explicit standard-normal noise, (B, d).

    Raises:
        ShapeError: If the shapes of mu, logvar and eps disagree.
    """
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    _require_same_shape(mu, logvar, "reparameterize")
    if eps is None:
        if rng is None:
            raise ValueError("reparameterize needs either rng or eps")
        eps = rng.standard_normal(mu.shape)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.shape:
        raise ShapeError(f"reparameterize: noise shape {eps.shape} does not match {mu.shape}")
    return mu + (logvar * 0.5).exp() * eps


@dataclass
class LatentPosterior:
    """Per-sample diagonal Gaussian q(z|x) and, once sampled, its draw."""

    mu: Tensor
    logvar: Tensor
    z: Tensor | None = None
    eps: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        return self.mu.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.mu.shape[1]

    def sample(self, rng: np.random.Generator) -> Tensor:
        self.eps = rng.standard_normal(self.mu.shape)
        self.z = reparameterize(self.mu, self.logvar, eps=self.eps)
        return self.z


def kl_to_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """Per-sample KL(N(mu, exp(logvar)) || N(0, I)), shape (B,)."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    _require_same_shape(mu, logvar, "kl_to_standard_normal")
    return ((mu * mu + logvar.exp() - logvar - 1.0) * 0.5).sum(axis=1)


def log_density_diag_gaussian(z: Tensor, mu: Tensor, logvar: Tensor) -> Tensor:
    """Pairwise log N(z_i,k; mu_j,k, exp(logvar_j,k)) as a (B, B', d) tensor."""
    z, mu, logvar = as_tensor(z), as_tensor(mu), as_tensor(logvar)
    _require_same_shape(mu, logvar, "log_density_diag_gaussian")
    if z.ndim != 2 or mu.ndim != 2 or z.shape[1] != mu.shape[1]:
        raise ShapeError(f"log_density_diag_gaussian: z {z.shape} and mu {mu.shape} disagree on d")
    batch, dim = z.shape
    other = mu.shape[0]
    diff = z.reshape(batch, 1, dim) - mu.reshape(1, other, dim)
    lv = logvar.reshape(1, other, dim)
    return (diff * diff * (-lv).exp() + lv + LOG_2PI) * -0.5


def log_standard_normal(z: Tensor) -> Tensor:
    """Elementwise log N(z; 0, 1)."""
    z = as_tensor(z)
    return (z * z + LOG_2PI) * -0.5


def recon_loss(x: Tensor | np.ndarray, x_hat: Tensor, kind: str = "bernoulli") -> Tensor:
    """Reconstruction negative log-likelihood summed over pixels, averaged over batch.

    Raises:
        ConfigError: If ``kind`` is not a known likelihood.
        ShapeError: If ``x`` and ``x_hat`` differ in shape.
    """
    if kind not in RECON_KINDS:
        raise ConfigError(f"unknown reconstruction kind {kind!r}; expected one of {', '.join(RECON_KINDS)}")
    x, x_hat = as_tensor(x), as_tensor(x_hat)
    _require_same_shape(x, x_hat, "recon_loss")
    pixel_axes = tuple(range(1, x.ndim))
    if kind == "bernoulli":
        p = clip(x_hat, BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP)
        per_pixel = -(x * p.log() + (1.0 - x) * (1.0 - p).log())
    else:
        diff = x - x_hat
        per_pixel = diff * diff
    return per_pixel.sum(axis=pixel_axes).mean()
