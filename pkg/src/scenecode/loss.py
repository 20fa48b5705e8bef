"""Variational objective: reconstruction negative log-likelihood plus the KL
divergence of the diagonal-Gaussian posterior from a standard-normal prior.

Losses are summed over pixels and latent dimensions (batch aggregation is the
caller's mean over examples), which fixes the reconstruction/KL balance
independent of batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

RECONSTRUCTION_KINDS = ("bernoulli", "mse")


@dataclass(frozen=True)
class LossBreakdown:
    reconstruction: float
    kl: float
    total: float

    def __post_init__(self):
        if not (np.isfinite(self.reconstruction) and np.isfinite(self.kl)):
            raise DomainError("loss terms must be finite")
        if self.kl < 0:
            raise DomainError(f"kl must be nonnegative, got {self.kl}")


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """KL(N(mu, diag exp(logvar)) || N(0, I)) summed over all entries.

    Per dimension: 0.5 * (exp(logvar) + mu^2 - 1 - logvar). Returns the value
    and elementwise gradients w.r.t. mu and logvar.
    """
    mu = np.asarray(mu)
    logvar = np.asarray(logvar)
    if mu.shape != logvar.shape:
        raise DimensionError(f"mu shape {mu.shape} != logvar shape {logvar.shape}")
    var = np.exp(logvar)
    value = 0.5 * np.sum(var + mu * mu - 1.0 - logvar)
    grad_mu = mu.copy()
    grad_logvar = 0.5 * (var - 1.0)
    return float(value), grad_mu, grad_logvar


def bernoulli_nll(x: np.ndarray, x_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy -sum(x*ln(x_hat) + (1-x)*ln(1-x_hat)) with its gradient."""
    x = np.asarray(x)
    x_hat = np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise DimensionError(f"shapes differ: {x.shape} vs {x_hat.shape}")
    lo = x_hat.min()
    hi = x_hat.max()
    if lo <= 0.0 or hi >= 1.0:
        raise DomainError(f"predictions must lie strictly in (0,1), got range [{lo}, {hi}]")
    value = -np.sum(x * np.log(x_hat) + (1.0 - x) * np.log1p(-x_hat))
    grad = -(x / x_hat - (1.0 - x) / (1.0 - x_hat))
    return float(value), grad


def mse_sum(x: np.ndarray, x_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed squared error with its gradient; the alternative likelihood."""
    x = np.asarray(x)
    x_hat = np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise DimensionError(f"shapes differ: {x.shape} vs {x_hat.shape}")
    diff = x_hat - x
    return float(np.sum(diff * diff)), 2.0 * diff


def reconstruction_loss(
    x: np.ndarray, x_hat: np.ndarray, kind: str = "bernoulli"
) -> tuple[float, np.ndarray]:
    if kind == "bernoulli":
        return bernoulli_nll(x, x_hat)
    if kind == "mse":
        return mse_sum(x, x_hat)
    raise DomainError(f"unknown reconstruction kind {kind!r}")


def total_loss(
    x: np.ndarray,
    x_hat: np.ndarray,
    mu: np.ndarray,
    logvar: np.ndarray,
    kind: str = "bernoulli",
) -> tuple[LossBreakdown, np.ndarray, np.ndarray, np.ndarray]:
    """Both objective terms with all gradients.

    Returns (breakdown, grad_x_hat, grad_mu, grad_logvar).
    """
    recon, grad_x_hat = reconstruction_loss(x, x_hat, kind)
    kl, grad_mu, grad_logvar = kl_divergence(mu, logvar)
    breakdown = LossBreakdown(reconstruction=recon, kl=kl, total=recon + kl)
    return breakdown, grad_x_hat, grad_mu, grad_logvar
