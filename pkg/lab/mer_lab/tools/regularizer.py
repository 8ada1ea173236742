"""
Feature-entropy regularizer on a batch of encoder outputs Z (N x D).

The log-determinant entropy of Z splits into a marginal term (per-dimension
spread) and a spectral term (log det of the correlation matrix). Each term
gets its own loss:

    L_marg = (1/D) * sum_d max(0, gamma - sigma_d),  sigma_d = sqrt(Var(Z_d) + eps)
    L_spec = -(1/D) * log det(C + eps*I),            C = Zhat^T Zhat / (N - 1)
    L_MER  = alpha_marg * L_marg + alpha_spec * L_spec

Gradients are derived by hand; finite differences are only used as a test
oracle (see gradient_check.py).
"""
import logging
from typing import Tuple

import numpy as np

from ..models.schema import EntropyDecomposition, MerBreakdown, MerConfig
from ..utils.linalg import cholesky_logdet, column_mean_std, inverse_from_cholesky
from ..utils.validators import NotPositiveDefiniteError, NumericError, as_matrix, ensure_finite

logger = logging.getLogger(__name__)


def standardize(z, eps: float) -> np.ndarray:
    z = as_matrix(z, "z")
    means, stds = column_mean_std(z, eps)
    return ensure_finite((z - means) / stds, "standardized batch")


def correlation(z_hat) -> np.ndarray:
    z_hat = as_matrix(z_hat, "z_hat")
    n = z_hat.shape[0]
    c = z_hat.T @ z_hat / (n - 1)
    return 0.5 * (c + c.T)


def marginal_loss(z, gamma: float, eps: float) -> Tuple[float, np.ndarray]:
    _, sigmas = column_mean_std(z, eps)
    loss = float(np.mean(np.maximum(0.0, gamma - sigmas))) if sigmas.size else 0.0
    return loss, sigmas


def marginal_grad(z, gamma: float, eps: float) -> np.ndarray:
    z = as_matrix(z, "z")
    means, sigmas = column_mean_std(z, eps)
    n, d = z.shape
    # subgradient 0 at sigma_d == gamma
    active = (sigmas < gamma).astype(np.float64)
    scale = -active / (d * (n - 1) * sigmas)
    return ensure_finite((z - means) * scale, "marginal gradient")


def _shifted_correlation_factor(z, eps: float):
    z = as_matrix(z, "z")
    z_hat = standardize(z, eps)
    c = correlation(z_hat)
    shifted = c + eps * np.eye(c.shape[0])
    try:
        factor, logdet = cholesky_logdet(shifted)
    except NotPositiveDefiniteError as e:
        # C + eps*I is PD for eps > 0; reaching here means the numerics broke
        raise NumericError(f"internal numeric error: C + eps*I lost definiteness ({e.message})")
    return z, z_hat, factor, logdet


def spectral_loss(z, eps: float) -> Tuple[float, float]:
    z, _, _, logdet = _shifted_correlation_factor(z, eps)
    d = z.shape[1]
    return -logdet / d, logdet


def _spectral_loss_and_grad(z, eps: float) -> Tuple[float, float, np.ndarray]:
    z, z_hat, factor, logdet = _shifted_correlation_factor(z, eps)
    n, d = z.shape
    means, stds = column_mean_std(z, eps)
    centered = z - means

    # dL/dC = -(1/D) (C + eps I)^-1, symmetric
    grad_c = -inverse_from_cholesky(factor) / d
    grad_zhat = (2.0 / (n - 1)) * (z_hat @ grad_c)

    # back through zhat = (z - mean) / sqrt(var + eps), per column
    coupling = np.sum(grad_zhat * centered, axis=0) / ((n - 1) * stds**3)
    grad = (grad_zhat - grad_zhat.mean(axis=0)) / stds - centered * coupling
    return -logdet / d, logdet, ensure_finite(grad, "spectral gradient")


def spectral_grad(z, eps: float) -> np.ndarray:
    return _spectral_loss_and_grad(z, eps)[2]


def mer_loss_grad(z, cfg: MerConfig) -> Tuple[MerBreakdown, np.ndarray]:
    """Combined regularizer value, its components and the gradient w.r.t. z."""
    z = as_matrix(z, "z")
    marg, sigmas = marginal_loss(z, cfg.gamma, cfg.eps)
    grad = np.zeros_like(z)
    if cfg.alpha_spec > 0:
        spec, logdet, spec_grad = _spectral_loss_and_grad(z, cfg.eps)
        grad += cfg.alpha_spec * spec_grad
    else:
        spec, logdet = spectral_loss(z, cfg.eps)
    if cfg.alpha_marg > 0:
        grad += cfg.alpha_marg * marginal_grad(z, cfg.gamma, cfg.eps)

    breakdown = MerBreakdown(
        marginal_loss=marg,
        spectral_loss=spec,
        combined=cfg.alpha_marg * marg + cfg.alpha_spec * spec,
        per_dim_sigma=sigmas,
        correlation_logdet=logdet,
    )
    return breakdown, grad


def mer_loss(z, cfg: MerConfig) -> MerBreakdown:
    """Loss-only variant of mer_loss_grad (no inverse, no backward pass)."""
    z = as_matrix(z, "z")
    marg, sigmas = marginal_loss(z, cfg.gamma, cfg.eps)
    spec, logdet = spectral_loss(z, cfg.eps)
    return MerBreakdown(
        marginal_loss=marg,
        spectral_loss=spec,
        combined=cfg.alpha_marg * marg + cfg.alpha_spec * spec,
        per_dim_sigma=sigmas,
        correlation_logdet=logdet,
    )


def entropy_decomposition(z, eps: float) -> EntropyDecomposition:
    """
    Split log det of the covariance into its marginal and spectral parts:
    log det(Sigma) = 2 * sum_d log sigma_d + log det C, with sigma_d and C
    built from the same eps as the losses (Sigma = Lambda C Lambda exactly).

    Needs more rows than columns so the covariance is positive definite.
    """
    z = as_matrix(z, "z")
    means, sigmas = column_mean_std(z, eps)
    n, d = z.shape
    if n <= d:
        # centered covariance has rank <= n - 1
        raise NotPositiveDefiniteError(pivot=n - 1)
    centered = z - means
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    _, ld_entropy = cholesky_logdet(cov)
    _, spectral_term = cholesky_logdet(correlation(standardize(z, eps)))
    marginal_term = 2.0 * float(np.sum(np.log(sigmas)))
    logger.debug(
        "entropy decomposition: ld=%.6f marg=%.6f spec=%.6f", ld_entropy, marginal_term, spectral_term
    )
    return EntropyDecomposition(
        ld_entropy=ld_entropy, marginal_term=marginal_term, spectral_term=spectral_term
    )
