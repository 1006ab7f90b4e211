"""Cyclic coordinate-descent Lasso and the coefficient-difference statistic.

The solver minimizes (1/2n) ||y - A beta||^2 + lam * ||beta||_1 and declares
convergence when the KKT subgradient residual drops to ``tol``:
|g_j| <= lam for every zero coefficient and g_j = lam * sign(beta_j) for
every active one, with g = A^T (y - A beta) / n. Updates run in covariance
form (Gram matrix plus a maintained gradient), with active-set polishing
between full sweeps; the update order is a fixed ascending cycle so results
are deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, NonConvergenceError


@dataclass
class LassoFit:
    coefficients: np.ndarray
    lam: float
    iterations: int  # total sweeps performed (full and active-set)
    max_kkt_violation: float


@dataclass(frozen=True)
class LassoCVConfig:
    """Knobs for cross-validated penalty selection."""

    folds: int = 5
    grid_size: int = 20
    tol: float = 1e-4  # convergence tolerance of the internal CV fits
    max_iter: int = 100_000


@dataclass
class WStatistics:
    """Signed feature importances; positive favors the original variable."""

    values: np.ndarray

    @property
    def p(self) -> int:
        return self.values.shape[0]


def soft_threshold(x: float, t: float) -> float:
    return math.copysign(max(abs(x) - t, 0.0), x)


def objective(A: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    """(1/2n) ||y - A beta||^2 + lam ||beta||_1."""
    resid = y - A @ beta
    return float(resid @ resid) / (2 * len(y)) + lam * float(np.abs(beta).sum())


def lambda_max(A: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty with all-zero solution: ||A^T y||_inf / n."""
    return float(np.max(np.abs(A.T @ y))) / len(y)


def _kkt_violation(g: np.ndarray, beta: np.ndarray, lam: float) -> float:
    zero = beta == 0
    viol = 0.0
    if zero.any():
        viol = max(viol, float(np.abs(g[zero]).max()) - lam)
    active = ~zero
    if active.any():
        viol = max(
            viol, float(np.abs(g[active] - lam * np.sign(beta[active])).max())
        )
    return max(viol, 0.0)


def _cd_solve(gram, cov_y, lam, tol, max_iter, beta0=None, sweep_callback=None):
    """Coordinate descent in covariance form. Returns (beta, sweeps, violation)."""
    m = gram.shape[0]
    beta = np.zeros(m) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    diag = gram.diagonal()
    g = cov_y - gram @ beta
    sweeps = 0

    def run_sweep(indices):
        nonlocal sweeps, g
        for j in indices:
            dj = diag[j]
            if dj <= 0.0:
                continue  # zero-norm column stays at zero
            bj = beta[j]
            nb = soft_threshold(g[j] + dj * bj, lam) / dj
            if nb != bj:
                beta[j] = nb
                g -= gram[j] * (nb - bj)
        sweeps += 1
        if sweep_callback is not None:
            sweep_callback(beta.copy())

    all_idx = range(m)
    while True:
        run_sweep(all_idx)
        g = cov_y - gram @ beta  # refresh: keeps round-off out of the KKT check
        viol = _kkt_violation(g, beta, lam)
        if viol <= tol:
            return beta, sweeps, viol
        if sweeps >= max_iter:
            raise NonConvergenceError(
                f"coordinate descent did not converge in {max_iter} sweeps "
                f"(KKT violation {viol:.3e} > tol {tol:.3e})",
                violation=viol,
            )
        # polish the current active set before paying for another full sweep
        while True:
            active = np.flatnonzero(beta)
            if active.size == 0:
                break
            run_sweep(active)
            g = cov_y - gram @ beta
            viol = _kkt_violation(g, beta, lam)
            if viol <= tol:
                return beta, sweeps, viol
            if sweeps >= max_iter:
                raise NonConvergenceError(
                    f"coordinate descent did not converge in {max_iter} sweeps "
                    f"(KKT violation {viol:.3e} > tol {tol:.3e})",
                    violation=viol,
                )
            sub = beta[active]
            sub_viol = float(
                np.abs(g[active] - lam * np.sign(sub))[sub != 0].max(initial=0.0)
            )
            if sub_viol <= tol:
                break


def fit_lasso(
    A: np.ndarray,
    y: np.ndarray,
    lam: float,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    beta0: np.ndarray | None = None,
    sweep_callback=None,
) -> LassoFit:
    """Solve the Lasso for one penalty value.

    Raises :class:`NonConvergenceError` (carrying the residual violation)
    when ``max_iter`` sweeps do not reach the tolerance.
    """
    if lam <= 0:
        raise InvalidParameterError(f"lambda must be > 0, got {lam}")
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.ndim != 2 or y.ndim != 1 or A.shape[0] != y.shape[0]:
        raise InvalidInputError("A must be n x m and y length n")
    n = A.shape[0]
    gram = (A.T @ A) / n
    cov_y = (A.T @ y) / n
    beta, sweeps, viol = _cd_solve(
        gram, cov_y, lam, tol, max_iter, beta0=beta0, sweep_callback=sweep_callback
    )
    return LassoFit(
        coefficients=beta, lam=lam, iterations=sweeps, max_kkt_violation=viol
    )


def lambda_grid(A: np.ndarray, y: np.ndarray, grid_size: int) -> np.ndarray:
    """Log-spaced grid of ``grid_size`` penalties in [1e-3 * lam_max, lam_max]."""
    lam_hi = lambda_max(A, y)
    if lam_hi <= 0:
        raise InvalidParameterError("lambda_max is zero: response has no correlation")
    return np.geomspace(lam_hi * 1e-3, lam_hi, grid_size)


def _batched_lipschitz(gram_stack: np.ndarray) -> np.ndarray:
    """Upper bound on the top eigenvalue of each stacked Gram matrix."""
    f, m, _ = gram_stack.shape
    v = np.full((f, m, 1), 1.0 / math.sqrt(m))
    norm = np.ones(f)
    for _ in range(60):
        v = gram_stack @ v
        norm = np.sqrt(np.sum(v * v, axis=(1, 2)))
        v /= np.maximum(norm, 1e-300)[:, None, None]
    return norm * 1.05


def _batched_kkt_violation(g, beta, lam):
    zero = beta == 0
    v_zero = np.max(np.where(zero, np.abs(g) - lam, -np.inf), axis=1)
    v_active = np.max(
        np.where(zero, -np.inf, np.abs(g - lam * np.sign(beta))), axis=1
    )
    return np.maximum(np.maximum(v_zero, v_active), 0.0)


def _fista_path(gram_stack, cov_stack, grid_desc, tol, max_iter):
    """Warm-started proximal-gradient solves over a descending penalty grid.

    All stacked problems (one per CV fold) advance together; yields the
    coefficient stack after each grid point. Internal to cross-validation,
    which only needs held-out errors, not a certified KKT solution.
    """
    n_stack, m = cov_stack.shape
    step = (1.0 / _batched_lipschitz(gram_stack))[:, None]
    beta = np.zeros((n_stack, m))
    for lam in grid_desc:
        z = beta.copy()
        t_prev = 1.0
        thresh = step * lam
        for it in range(max_iter):
            g_z = cov_stack - (gram_stack @ z[..., None])[..., 0]
            moved = z + step * g_z
            beta_new = np.sign(moved) * np.maximum(np.abs(moved) - thresh, 0.0)
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_prev * t_prev))
            z = beta_new + ((t_prev - 1.0) / t_new) * (beta_new - beta)
            beta = beta_new
            t_prev = t_new
            if it % 8 == 7:  # amortize the convergence check
                g_b = cov_stack - (gram_stack @ beta[..., None])[..., 0]
                if _batched_kkt_violation(g_b, beta, lam).max() <= tol:
                    break
        yield lam, beta


def cross_validate_lambda(
    A: np.ndarray,
    y: np.ndarray,
    folds: int = 5,
    grid_size: int = 20,
    rng: np.random.Generator | None = None,
    tol: float = 1e-4,
    max_iter: int = 3_000,
) -> float:
    """Penalty minimizing mean held-out squared error over the log grid.

    Fold assignment is a seeded permutation, so the selected value is a
    deterministic function of (A, y, rng state). Ties resolve to the larger
    penalty. ``tol``/``max_iter`` govern the internal path fits, which only
    feed the held-out error comparison.
    """
    if folds < 2:
        raise InvalidParameterError(f"folds must be >= 2, got {folds}")
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = A.shape
    if n < folds:
        raise InvalidParameterError(f"need n >= folds, got n={n}, folds={folds}")
    if rng is None:
        rng = np.random.default_rng(0)
    grid_desc = lambda_grid(A, y, grid_size)[::-1]  # largest first: warm starts
    fold_of = np.empty(n, dtype=np.intp)
    fold_of[rng.permutation(n)] = np.arange(n) % folds

    gram_all = A.T @ A
    cov_all = A.T @ y
    gram_stack = np.empty((folds, m, m))
    cov_stack = np.empty((folds, m))
    val_parts = []
    for f in range(folds):
        val = fold_of == f
        A_val, y_val = A[val], y[val]
        n_tr = n - int(val.sum())
        gram_stack[f] = (gram_all - A_val.T @ A_val) / n_tr
        cov_stack[f] = (cov_all - A_val.T @ y_val) / n_tr
        val_parts.append((A_val, y_val))

    mse = np.zeros((folds, grid_size))
    for i, (_, beta) in enumerate(
        _fista_path(gram_stack, cov_stack, grid_desc, tol, max_iter)
    ):
        for f, (A_val, y_val) in enumerate(val_parts):
            resid = y_val - A_val @ beta[f]
            mse[f, i] = float(resid @ resid) / len(y_val)
    best = int(np.argmin(mse.mean(axis=0)))  # first minimum = largest penalty
    return float(grid_desc[best])


def lcd_statistic(
    X: np.ndarray,
    xtilde: np.ndarray,
    y: np.ndarray,
    lam: float,
    tol: float = 1e-8,
    max_iter: int = 100_000,
) -> WStatistics:
    """W_j = |beta_j| - |beta_{j+p}| from a Lasso fit on [X, X~].

    Swapping a column with its counterpart flips the sign of that coordinate
    and leaves the others unchanged. Pairs whose two columns are bitwise
    identical have a non-unique optimal split; their coefficients are
    averaged (an equally optimal allocation), which keeps the statistic
    position-symmetric and makes W exactly zero for such pairs.
    """
    X = np.asarray(X, dtype=float)
    xtilde = np.asarray(xtilde, dtype=float)
    if X.shape != xtilde.shape:
        raise InvalidInputError(
            f"design {X.shape} and knockoffs {xtilde.shape} differ in shape"
        )
    p = X.shape[1]
    fit = fit_lasso(np.hstack([X, xtilde]), y, lam, tol=tol, max_iter=max_iter)
    beta = fit.coefficients.copy()
    duplicate = np.flatnonzero(np.all(X == xtilde, axis=0))
    if duplicate.size:
        mean = 0.5 * (beta[duplicate] + beta[duplicate + p])
        beta[duplicate] = mean
        beta[duplicate + p] = mean
    return WStatistics(np.abs(beta[:p]) - np.abs(beta[p:]))
