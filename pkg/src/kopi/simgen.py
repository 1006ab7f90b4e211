"""Synthetic regression problems: AR(1) Gaussian designs with sparse linear signals.

Rows of the design are i.i.d. draws from N(0, Sigma) with
Sigma[i, j] = rho ** |i - j|, generated by the exact recursive construction
x_1 ~ N(0,1), x_{j+1} = rho * x_j + sqrt(1 - rho^2) * zeta. The response is
y = X @ beta + sigma * eps with sigma = ||X beta|| / (snr * ||eps||), so the
realized signal-to-noise ratio equals ``snr`` exactly on every draw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DegenerateSignalError,
    DegenerateSupportError,
    InvalidParameterError,
)
from .rng import split, stream


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one synthetic problem; validated on construction."""

    n: int
    p: int
    rho: float
    sparsity: float
    snr: float
    seed: int
    standardize: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise InvalidParameterError(f"n must be >= 2, got {self.n}")
        if self.p < 2:
            raise InvalidParameterError(f"p must be >= 2, got {self.p}")
        if not 0.0 <= self.rho < 1.0:
            raise InvalidParameterError(f"rho must be in [0, 1), got {self.rho}")
        if not 0.0 < self.sparsity <= 1.0:
            raise InvalidParameterError(
                f"sparsity must be in (0, 1], got {self.sparsity}"
            )
        if not self.snr > 0:
            raise InvalidParameterError(f"snr must be > 0, got {self.snr}")

    def with_param(self, name: str, value) -> "SimConfig":
        """Copy with one field replaced (used by parameter sweeps)."""
        if name not in ("n", "p", "rho", "sparsity", "snr", "seed"):
            raise InvalidParameterError(f"unknown sweep parameter {name!r}")
        if name in ("n", "p", "seed"):
            value = int(value)
        return replace(self, **{name: value})


@dataclass
class SimulatedDataset:
    """One realized problem: design, response, true support and noise scale."""

    design: np.ndarray
    response: np.ndarray
    support: np.ndarray  # sorted indices of the non-null coefficients
    noise_scale: float

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    @property
    def beta_star(self) -> np.ndarray:
        beta = np.zeros(self.p)
        beta[self.support] = 1.0
        return beta


def gen_toeplitz_design(
    n: int,
    p: int,
    rho: float,
    rng: np.random.Generator,
    standardize: bool = False,
) -> np.ndarray:
    """n x p design with AR(1) covariance rho**|i-j|, columns centered.

    With ``standardize`` the columns are also rescaled to unit root mean
    square after centering.
    """
    if not 0.0 <= rho < 1.0:
        raise InvalidParameterError(f"rho must be in [0, 1), got {rho}")
    if n < 2 or p < 1:
        raise InvalidParameterError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    z = rng.standard_normal((n, p))
    x = np.empty_like(z)
    x[:, 0] = z[:, 0]
    innovation = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        x[:, j] = rho * x[:, j - 1] + innovation * z[:, j]
    x -= x.mean(axis=0)
    if standardize:
        scale = np.sqrt(np.mean(x * x, axis=0))
        if np.any(scale == 0):
            raise InvalidParameterError("cannot standardize a constant column")
        x /= scale
    return x


def draw_support(p: int, sparsity: float, rng: np.random.Generator) -> np.ndarray:
    """Binary coefficient vector with exactly floor(sparsity * p) ones.

    Positions are drawn uniformly without replacement.
    """
    if not 0.0 < sparsity <= 1.0:
        raise InvalidParameterError(f"sparsity must be in (0, 1], got {sparsity}")
    k = int(math.floor(sparsity * p))
    if k == 0:
        raise DegenerateSupportError(
            f"floor(sparsity * p) = 0 for sparsity={sparsity}, p={p}"
        )
    beta = np.zeros(p)
    beta[rng.choice(p, size=k, replace=False)] = 1.0
    return beta


def gen_response(
    X: np.ndarray, beta_star: np.ndarray, snr: float, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Response y = X beta + sigma * eps with sigma = ||X beta|| / (snr ||eps||)."""
    if not snr > 0:
        raise InvalidParameterError(f"snr must be > 0, got {snr}")
    beta_star = np.asarray(beta_star, dtype=float)
    if beta_star.shape[0] != X.shape[1]:
        raise InvalidParameterError(
            f"beta length {beta_star.shape[0]} != column count {X.shape[1]}"
        )
    signal = X @ beta_star
    signal_norm = float(np.linalg.norm(signal))
    if signal_norm == 0.0:
        raise DegenerateSignalError("X @ beta is identically zero")
    eps = rng.standard_normal(X.shape[0])
    sigma = signal_norm / (snr * float(np.linalg.norm(eps)))
    return signal + sigma * eps, sigma


def gen_global_null_response(
    X: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Pure-noise response (empty support) for null-regime benchmarks."""
    return rng.standard_normal(X.shape[0]), 1.0


def simulate_with_streams(
    config: SimConfig, rng: np.random.Generator
) -> SimulatedDataset:
    """Realize a dataset from an explicit stream (ignores ``config.seed``)."""
    design_rng, support_rng, noise_rng = split(rng, 3)
    X = gen_toeplitz_design(
        config.n, config.p, config.rho, design_rng, standardize=config.standardize
    )
    beta = draw_support(config.p, config.sparsity, support_rng)
    y, sigma = gen_response(X, beta, config.snr, noise_rng)
    return SimulatedDataset(
        design=X,
        response=y,
        support=np.sort(np.flatnonzero(beta)),
        noise_scale=sigma,
    )


def simulate(config: SimConfig) -> SimulatedDataset:
    """Realize a dataset; identical (config, seed) gives a bit-identical result."""
    return simulate_with_streams(config, stream(config.seed))


def simulate_global_null(
    n: int, p: int, rho: float, seed: int, standardize: bool = False
) -> SimulatedDataset:
    """Dataset with no signal at all: y is standard Gaussian noise."""
    design_rng, _, noise_rng = split(stream(seed), 3)
    X = gen_toeplitz_design(n, p, rho, design_rng, standardize=standardize)
    y, sigma = gen_global_null_response(X, noise_rng)
    return SimulatedDataset(
        design=X,
        response=y,
        support=np.empty(0, dtype=np.intp),
        noise_scale=sigma,
    )


def save_dataset_csv(dataset: SimulatedDataset, path) -> tuple[str, str]:
    """Write the dataset as CSV (columns x1..xp, y) plus a support sidecar.

    Returns the pair (csv path, sidecar path). Floats use repr-precision so
    a reload reproduces the dataset exactly.
    """
    path = str(path)
    header = ",".join(f"x{j + 1}" for j in range(dataset.p)) + ",y"
    table = np.column_stack([dataset.design, dataset.response])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    sidecar = path + ".support"
    with open(sidecar, "w") as fh:
        for idx in dataset.support:
            fh.write(f"{int(idx)}\n")
    return path, sidecar
