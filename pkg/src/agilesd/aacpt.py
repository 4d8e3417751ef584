"""Grid search over (beta, lambda_max) with the Markov model as evaluator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .markov_model import (
    DEFAULT_ITERATIONS,
    CcaParams,
    ModelError,
    NetworkConfig,
    average_throughput,
)

DEFAULT_BETAS = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
DEFAULT_LAMBDAS = tuple(float(x) for x in range(1, 11))
DEFAULT_RTOL = 1e-3


@dataclass
class TuningGrid:
    betas: tuple = DEFAULT_BETAS
    lambdas: tuple = DEFAULT_LAMBDAS
    base_config: NetworkConfig = field(default_factory=NetworkConfig)
    iterations: int = DEFAULT_ITERATIONS

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if not self.betas or not self.lambdas:
            raise ModelError("tuning grid needs at least one beta and one lambda")
        if any(not 0 < b < 1 for b in self.betas):
            raise ModelError(f"betas must lie in (0, 1): {self.betas}")
        if any(x < 1 for x in self.lambdas):
            raise ModelError(f"lambdas must be >= 1: {self.lambdas}")
        if np.any(np.diff(self.betas) <= 0) or np.any(np.diff(self.lambdas) <= 0):
            raise ModelError("betas and lambdas must be strictly increasing")


@dataclass
class TuningResult:
    betas: np.ndarray
    lambdas: np.ndarray
    at_matrix: np.ndarray
    lambda_opt: np.ndarray
    formula_lambda: np.ndarray
    base_config: NetworkConfig | None = None


def optimal_lambda_formula(beta: float) -> int:
    if not 0 < beta < 1:
        raise ModelError(f"beta must lie in (0, 1), got {beta}")
    # round first so e.g. 8.91 - 7 * 0.7 = 4.0100000000000002 stays put
    return math.ceil(round(8.91 - 7 * beta, 9))


def fit_optimal_line(betas, lambda_opts) -> tuple[float, float]:
    """Least-squares line ``lambda = slope * beta + intercept``."""
    x = np.asarray(betas, dtype=float)
    y = np.asarray(lambda_opts, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ModelError("betas and lambda_opts must be equal-length vectors")
    if x.size < 2:
        raise ModelError("need at least 2 points to fit a line")
    if np.ptp(x) == 0:
        raise ModelError("betas are all identical")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(slope), float(intercept)


def select_optimal(row, lambdas, rtol: float = DEFAULT_RTOL) -> float:
    """Smallest lambda whose throughput is within ``rtol`` of the row maximum."""
    row = np.asarray(row, dtype=float)
    best = row.max()
    ok = np.flatnonzero(row >= best * (1 - rtol))
    return float(lambdas[ok[0]])


def _evaluate(config, beta, lam, iterations):
    params = CcaParams(beta=beta, lambda_min=1.0, lambda_max=lam)
    return average_throughput(config, params, iterations).normalized_ath


def run_aacpt(
    grid: TuningGrid, rtol: float = DEFAULT_RTOL, n_jobs: int | None = None
) -> TuningResult:
    cells = [(i, j) for i in range(len(grid.betas)) for j in range(len(grid.lambdas))]
    values = Parallel(n_jobs=n_jobs)(
        delayed(_evaluate)(grid.base_config, grid.betas[i], grid.lambdas[j], grid.iterations)
        for i, j in cells
    )
    at = np.empty((len(grid.betas), len(grid.lambdas)))
    for (i, j), value in zip(cells, values):
        at[i, j] = value
    # the maximum is taken per beta row, never carried across rows
    lambda_opt = np.array([select_optimal(at[i], grid.lambdas, rtol) for i in range(at.shape[0])])
    return TuningResult(
        betas=np.array(grid.betas),
        lambdas=np.array(grid.lambdas),
        at_matrix=at,
        lambda_opt=lambda_opt,
        formula_lambda=np.array([optimal_lambda_formula(b) for b in grid.betas], dtype=float),
        base_config=grid.base_config,
    )
