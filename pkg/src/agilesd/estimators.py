"""scikit-learn style wrappers around the model, the simulator and the tuner.

Feature matrices describe one network per row, with columns
``capacity_kbps, rtt_s, packet_size_kbits, buffer_packets, loss_rate``.
Predictions are normalized throughputs (rate over link capacity).
"""
from __future__ import annotations

import math

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import aacpt as _aacpt
from .flow_simulator import run_flow
from .markov_model import (
    DEFAULT_ITERATIONS,
    CcaParams,
    NetworkConfig,
    ThroughputReport,
    average_throughput,
)

NETWORK_FEATURES = (
    "capacity_kbps",
    "rtt_s",
    "packet_size_kbits",
    "buffer_packets",
    "loss_rate",
)


def check_network_features(X, min_window: int = 2) -> list[NetworkConfig]:
    """Validate a network feature matrix and turn each row into a config."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != len(NETWORK_FEATURES):
        raise ValueError(
            f"X has {X.shape[1]} features, expected {len(NETWORK_FEATURES)}: {NETWORK_FEATURES}"
        )
    buffers = X[:, 3]
    if np.any(buffers != np.round(buffers)):
        raise ValueError("buffer_packets column must hold whole packet counts")
    return [
        NetworkConfig(
            capacity_kbps=row[0],
            rtt_s=row[1],
            packet_size_kbits=row[2],
            buffer_packets=int(row[3]),
            loss_rate=row[4],
            min_window=min_window,
        )
        for row in X
    ]


def configs_to_features(configs) -> np.ndarray:
    return np.array([[getattr(c, name) for name in NETWORK_FEATURES] for c in configs], dtype=float)


def check_betas(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] == 1:
        X = X[:, 0]
    X = check_array(X, ensure_2d=False, dtype=np.float64)
    if X.ndim != 1:
        raise ValueError("betas must be a vector or a single-column matrix")
    if np.any((X <= 0) | (X >= 1)):
        raise ValueError("every beta must lie in (0, 1)")
    return X


class _CcaEstimator(RegressorMixin, BaseEstimator):
    def _validate_params_(self) -> CcaParams:
        return CcaParams(
            beta=self.beta, lambda_min=self.lambda_min, lambda_max=self.lambda_max
        )

    def fit(self, X=None, y=None):
        """Validate hyper-parameters (and ``X`` if given); nothing is learned."""
        self.params_ = self._validate_params_()
        if X is not None:
            check_network_features(X, self.min_window)
        self.n_features_in_ = len(NETWORK_FEATURES)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        configs = check_network_features(X, self.min_window)
        values = Parallel(n_jobs=self.n_jobs)(delayed(self._score_one)(c) for c in configs)
        return np.asarray(values, dtype=float)


class MarkovThroughputModel(_CcaEstimator):
    """Normalized average throughput predicted by the Markov-chain model.

    ``lambda_max=1`` gives NewReno.
    """

    def __init__(
        self,
        beta=0.5,
        lambda_min=1.0,
        lambda_max=5.0,
        min_window=2,
        iterations=DEFAULT_ITERATIONS,
        early_stop=False,
        n_jobs=None,
    ):
        self.beta = beta
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max
        self.min_window = min_window
        self.iterations = iterations
        self.early_stop = early_stop
        self.n_jobs = n_jobs

    def _score_one(self, config: NetworkConfig) -> float:
        return self.report(config).normalized_ath

    def report(self, config: NetworkConfig) -> ThroughputReport:
        check_is_fitted(self, "params_")
        return average_throughput(config, self.params_, self.iterations, self.early_stop)


class FlowSimulator(_CcaEstimator):
    """Seed-averaged normalized throughput from the cycle-level simulator."""

    def __init__(
        self,
        beta=0.5,
        lambda_min=1.0,
        lambda_max=5.0,
        min_window=2,
        duration_s=100.0,
        seeds=tuple(range(1, 11)),
        n_jobs=None,
    ):
        self.beta = beta
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max
        self.min_window = min_window
        self.duration_s = duration_s
        self.seeds = seeds
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        if len(self.seeds) == 0:
            raise ValueError("seeds must not be empty")
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be > 0, got {self.duration_s}")
        return super().fit(X, y)

    def _score_one(self, config: NetworkConfig) -> float:
        return float(np.mean([self.simulate(config, s).normalized for s in self.seeds]))

    def simulate(self, config: NetworkConfig, seed: int = 1):
        check_is_fitted(self, "params_")
        return run_flow(config, self.params_, self.duration_s, seed)


class AACPTTuner(BaseEstimator):
    """Learn the throughput-optimal ``lambda_max`` per multiplicative decrease factor.

    ``fit`` takes a vector of betas, evaluates the model on every
    ``(beta, lambda)`` combination and keeps, per beta, the smallest lambda
    within ``rtol`` of that beta's best throughput.  A least-squares line is
    then fitted through the optimum and ``predict`` returns its ceiling,
    clipped to the candidate range.
    """

    def __init__(
        self,
        lambdas=_aacpt.DEFAULT_LAMBDAS,
        capacity_kbps=1e6,
        rtt_s=0.01,
        packet_size_kbits=8.0,
        buffer_packets=4,
        loss_rate=1e-8,
        min_window=2,
        iterations=DEFAULT_ITERATIONS,
        rtol=_aacpt.DEFAULT_RTOL,
        n_jobs=None,
    ):
        self.lambdas = lambdas
        self.capacity_kbps = capacity_kbps
        self.rtt_s = rtt_s
        self.packet_size_kbits = packet_size_kbits
        self.buffer_packets = buffer_packets
        self.loss_rate = loss_rate
        self.min_window = min_window
        self.iterations = iterations
        self.rtol = rtol
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        betas = _aacpt.DEFAULT_BETAS if X is None else tuple(check_betas(X))
        config = NetworkConfig(
            capacity_kbps=self.capacity_kbps,
            rtt_s=self.rtt_s,
            packet_size_kbits=self.packet_size_kbits,
            buffer_packets=self.buffer_packets,
            loss_rate=self.loss_rate,
            min_window=self.min_window,
        )
        grid = _aacpt.TuningGrid(betas, tuple(self.lambdas), config, self.iterations)
        self.result_ = _aacpt.run_aacpt(grid, rtol=self.rtol, n_jobs=self.n_jobs)
        self.betas_ = self.result_.betas
        self.at_matrix_ = self.result_.at_matrix
        self.lambda_opt_ = self.result_.lambda_opt
        self.formula_lambda_ = self.result_.formula_lambda
        if len(betas) >= 2:
            self.slope_, self.intercept_ = _aacpt.fit_optimal_line(self.betas_, self.lambda_opt_)
        else:
            self.slope_, self.intercept_ = 0.0, float(self.lambda_opt_[0])
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "result_")
        betas = check_betas(X)
        raw = np.array([math.ceil(round(self.intercept_ + self.slope_ * b, 9)) for b in betas])
        return np.clip(raw, min(self.lambdas), max(self.lambdas)).astype(float)
