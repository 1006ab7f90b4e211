"""Knockoff copies of a design matrix.

Gaussian draws use the second-order construction with the equicorrelated
diagonal s_j = min(1, 2 lambda_min(Sigma)): conditional on a row x, the copy
is x (I - Sigma^-1 S) + z C with C^T C = 2S - S Sigma^-1 S, which targets a
joint covariance [[Sigma, Sigma - S], [Sigma - S, Sigma]]. The covariance is
estimated on the correlation scale with linear shrinkage toward a scaled
identity (Ledoit-Wolf intensity), since p may exceed n.

The sequential sampler for non-Gaussian data regresses each column on the
others with a cross-validated Lasso and reassigns the residuals through one
uniformly random permutation; the identity permutation reconstructs X.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, NumericalConditioningError
from .lasso import LassoCVConfig, cross_validate_lambda, fit_lasso
from .rng import split

# eigenvalues of 2S - S Sigma^-1 S above -PSD_TOL are clipped to zero;
# anything lower is treated as a conditioning failure
PSD_TOL = 1e-8


@dataclass
class GaussianKnockoffModel:
    """Precomputed conditional maps for Gaussian knockoff sampling."""

    sigma_hat: np.ndarray  # shrunk correlation-scale covariance
    s_vec: np.ndarray
    cond_mean_map: np.ndarray  # I - Sigma^-1 S, applied on the right
    cond_cov_factor: np.ndarray  # C with C^T C = 2S - S Sigma^-1 S

    @property
    def p(self) -> int:
        return self.sigma_hat.shape[0]


@dataclass
class KnockoffDraw:
    xtilde: np.ndarray
    draw_seed: int | None
    method: str


def shrunk_correlation(X: np.ndarray) -> np.ndarray:
    """Ledoit-Wolf shrinkage toward a scaled identity, rescaled to unit diagonal."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 2:
        raise InvalidParameterError(f"need n >= 2 to estimate a covariance, got {n}")
    X = X - X.mean(axis=0)
    emp = (X.T @ X) / n
    mu = float(np.trace(emp)) / p
    delta2 = float(np.sum((emp - mu * np.eye(p)) ** 2)) / p
    if delta2 <= 0:
        shrunk = emp  # already a multiple of the identity
    else:
        sq_norms = np.sum(X * X, axis=1)
        beta_bar2 = (float(np.sum(sq_norms**2)) - n * float(np.sum(emp * emp))) / (
            n * n * p
        )
        intensity = min(1.0, max(0.0, beta_bar2 / delta2))
        shrunk = intensity * mu * np.eye(p) + (1.0 - intensity) * emp
    d = np.sqrt(np.diag(shrunk))
    if np.any(d <= 0):
        raise NumericalConditioningError("constant column: covariance not invertible")
    corr = shrunk / np.outer(d, d)
    return (corr + corr.T) / 2.0


def model_from_covariance(sigma_hat: np.ndarray) -> GaussianKnockoffModel:
    """Build the conditional maps from a unit-diagonal covariance."""
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    p = sigma_hat.shape[0]
    if sigma_hat.shape != (p, p) or not np.allclose(sigma_hat, sigma_hat.T):
        raise InvalidParameterError("covariance must be square and symmetric")
    lam_min = float(np.linalg.eigvalsh(sigma_hat)[0])
    if lam_min <= PSD_TOL:
        raise NumericalConditioningError(
            f"covariance nearly singular (lambda_min={lam_min:.3e})"
        )
    s = np.full(p, min(1.0, 2.0 * lam_min))  # equicorrelated rule
    sigma_inv_s = np.linalg.solve(sigma_hat, np.diag(s))
    cond_mean_map = np.eye(p) - sigma_inv_s
    cond_cov = 2.0 * np.diag(s) - np.diag(s) @ sigma_inv_s
    cond_cov = (cond_cov + cond_cov.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(cond_cov)
    if eigvals[0] < -PSD_TOL:
        raise NumericalConditioningError(
            f"conditional covariance not PSD (min eigenvalue {eigvals[0]:.3e})"
        )
    factor = np.sqrt(np.clip(eigvals, 0.0, None))[:, None] * eigvecs.T
    return GaussianKnockoffModel(
        sigma_hat=sigma_hat,
        s_vec=s,
        cond_mean_map=cond_mean_map,
        cond_cov_factor=factor,
    )


def fit_gaussian_model(X: np.ndarray) -> GaussianKnockoffModel:
    """Estimate the shrunk correlation of X and precompute the sampling maps."""
    return model_from_covariance(shrunk_correlation(X))


def toeplitz_correlation(p: int, rho: float) -> np.ndarray:
    """The AR(1) correlation matrix rho ** |i - j|."""
    if not 0.0 <= rho < 1.0:
        raise InvalidParameterError(f"rho must be in [0, 1), got {rho}")
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _column_scale(X: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.mean(X * X, axis=0))
    if np.any(scale <= 0):
        raise NumericalConditioningError("constant column in design")
    return scale


def sample_gaussian_knockoffs(
    X: np.ndarray,
    model: GaussianKnockoffModel,
    rng: np.random.Generator,
    draw_seed: int | None = None,
) -> KnockoffDraw:
    """One Gaussian knockoff copy of X; deterministic given the stream.

    X is mapped to the model's correlation scale and back, so the draw keeps
    the original column scales.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[1] != model.p:
        raise InvalidParameterError(
            f"design has {X.shape[1]} columns, model expects {model.p}"
        )
    scale = _column_scale(X)
    xs = X / scale
    z = rng.standard_normal(X.shape)
    xtilde = (xs @ model.cond_mean_map + z @ model.cond_cov_factor) * scale
    return KnockoffDraw(xtilde=xtilde, draw_seed=draw_seed, method="gaussian")


def joint_target_covariance(model: GaussianKnockoffModel) -> np.ndarray:
    """Target covariance of [x, x~]: [[Sigma, Sigma - S], [Sigma - S, Sigma]]."""
    sigma = model.sigma_hat
    off = sigma - np.diag(model.s_vec)
    return np.block([[sigma, off], [off, sigma]])


def sample_sequential_knockoffs(
    X: np.ndarray,
    lasso_cfg: LassoCVConfig,
    rng: np.random.Generator,
    permutation: np.ndarray | None = None,
    draw_seed: int | None = None,
) -> KnockoffDraw:
    """Residual-permutation knockoffs for non-Gaussian designs.

    Each column is regressed on the others with a cross-validated Lasso and
    the residuals are reassigned through one random ordering. Forcing the
    identity ``permutation`` (a test hook) reconstructs X exactly.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 3:
        raise InvalidParameterError(f"sequential sampler needs n >= 3, got {n}")
    if permutation is None:
        perm = rng.permutation(p)
    else:
        perm = np.asarray(permutation, dtype=np.intp)
        if sorted(perm.tolist()) != list(range(p)):
            raise InvalidParameterError("permutation must reorder 0..p-1")
    fit_streams = split(rng, p)
    fitted = np.empty_like(X)
    residuals = np.empty_like(X)
    for j in range(p):
        others = np.delete(X, j, axis=1)
        target = X[:, j]
        lam = cross_validate_lambda(
            others,
            target,
            folds=lasso_cfg.folds,
            grid_size=lasso_cfg.grid_size,
            rng=fit_streams[j],
            tol=lasso_cfg.tol,
            max_iter=lasso_cfg.max_iter,
        )
        fit = fit_lasso(
            others, target, lam, tol=lasso_cfg.tol, max_iter=lasso_cfg.max_iter
        )
        fitted[:, j] = others @ fit.coefficients
        residuals[:, j] = target - fitted[:, j]
    xtilde = fitted + residuals[:, perm]
    return KnockoffDraw(xtilde=xtilde, draw_seed=draw_seed, method="sequential")
