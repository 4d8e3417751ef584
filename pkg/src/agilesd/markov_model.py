"""Markov-chain throughput model for NewReno and Agile-SD congestion avoidance.

The chain lives on congestion-window states ``w_min, w_min + 1, ..., W``.
From every state below ``W`` the window either grows by one packet or, with
the probability of at least one random loss inside the window, drops to the
state ``floor(beta * i)``.  State ``W`` always drops (congestion loss).

Average throughput is accumulated by iterating the state distribution and
weighting the expected window of every transition by ``1 / lambda``, where
``lambda`` is the agility factor derived from that expected window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_ITERATIONS = 10_000
# no early stop before this step; the chain is still transient up to here
MIN_EARLY_STOP_STEP = 4_000
EARLY_STOP_TOL = 1e-12


class ModelError(ValueError):
    """Invalid model parameter or inconsistent model output."""


@dataclass(frozen=True)
class NetworkConfig:
    """Bottleneck link and loss environment of a single flow.

    Parameters
    ----------
    capacity_kbps : float
        Link capacity ``C`` in Kbps.
    rtt_s : float
        Round-trip time in seconds.
    packet_size_kbits : float
        Packet size ``theta`` in Kbits (1000 bytes is 8 Kbits).
    buffer_packets : int
        Bottleneck buffer ``b`` in packets.
    loss_rate : float
        Per-packet random loss rate ``R``.
    min_window : int
        Minimum allowed congestion window in packets.
    """

    capacity_kbps: float = 1e6
    rtt_s: float = 0.01
    packet_size_kbits: float = 8.0
    buffer_packets: int = 4
    loss_rate: float = 1e-8
    min_window: int = 2

    def __post_init__(self):
        if not self.capacity_kbps > 0:
            raise ModelError(f"capacity_kbps must be > 0, got {self.capacity_kbps}")
        if not self.rtt_s > 0:
            raise ModelError(f"rtt_s must be > 0, got {self.rtt_s}")
        if not self.packet_size_kbits > 0:
            raise ModelError(f"packet_size_kbits must be > 0, got {self.packet_size_kbits}")
        if int(self.buffer_packets) != self.buffer_packets or self.buffer_packets < 0:
            raise ModelError(f"buffer_packets must be a non-negative integer, got {self.buffer_packets}")
        if not self.loss_rate >= 0:
            raise ModelError(f"loss_rate must be >= 0, got {self.loss_rate}")
        if int(self.min_window) != self.min_window or self.min_window < 1:
            raise ModelError(f"min_window must be an integer >= 1, got {self.min_window}")
        object.__setattr__(self, "buffer_packets", int(self.buffer_packets))
        object.__setattr__(self, "min_window", int(self.min_window))
        if self.max_window < self.min_window + 1:
            raise ModelError(
                f"max window {self.max_window} must exceed min_window {self.min_window}"
            )

    @property
    def bdp_packets(self) -> float:
        return self.capacity_kbps * self.rtt_s / self.packet_size_kbits

    @property
    def max_window(self) -> int:
        return max_window(self)

    @property
    def n_states(self) -> int:
        return state_count(self.max_window, self.min_window)

    @property
    def sample_space(self) -> np.ndarray:
        return np.arange(self.min_window, self.max_window + 1, dtype=float)


@dataclass(frozen=True)
class CcaParams:
    """Congestion-control parameters; ``lambda_max == 1`` is NewReno."""

    beta: float = 0.5
    lambda_min: float = 1.0
    lambda_max: float = 5.0

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ModelError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.lambda_min >= 1:
            raise ModelError(f"lambda_min must be >= 1, got {self.lambda_min}")
        if not self.lambda_max >= self.lambda_min:
            raise ModelError(
                f"lambda_max ({self.lambda_max}) must be >= lambda_min ({self.lambda_min})"
            )

    @classmethod
    def newreno(cls, beta: float = 0.5) -> "CcaParams":
        return cls(beta=beta, lambda_min=1.0, lambda_max=1.0)


@dataclass(frozen=True)
class TransitionMatrix:
    """Sparse row-stochastic matrix with at most two entries per row.

    Row ``i`` (0-based here) sends ``loss_prob[i]`` to ``loss_target[i]`` and
    ``grow_prob[i]`` to ``i + 1``.  The last row has ``grow_prob == 0``.
    """

    n_states: int
    loss_target: np.ndarray
    loss_prob: np.ndarray
    grow_prob: np.ndarray

    def entries(self, row: int) -> list[tuple[int, float]]:
        """Nonzero ``(column, probability)`` pairs of a 1-based row."""
        if not 1 <= row <= self.n_states:
            raise IndexError(f"row {row} outside [1, {self.n_states}]")
        i = row - 1
        out = []
        if self.loss_prob[i] > 0:
            out.append((int(self.loss_target[i]) + 1, float(self.loss_prob[i])))
        if self.grow_prob[i] > 0:
            out.append((i + 2, float(self.grow_prob[i])))
        return out

    def row_sums(self) -> np.ndarray:
        return self.loss_prob + self.grow_prob

    def to_dense(self) -> np.ndarray:
        n = self.n_states
        dense = np.zeros((n, n))
        rows = np.arange(n)
        np.add.at(dense, (rows, self.loss_target), self.loss_prob)
        dense[rows[:-1], rows[:-1] + 1] += self.grow_prob[:-1]
        return dense


@dataclass
class StateDistribution:
    probs: np.ndarray
    sample_space: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.sample_space = np.asarray(self.sample_space, dtype=float)
        if self.probs.shape != self.sample_space.shape or self.probs.ndim != 1:
            raise ModelError(
                f"probs {self.probs.shape} and sample_space {self.sample_space.shape} must be equal-length vectors"
            )

    @property
    def n_states(self) -> int:
        return self.probs.size


@dataclass
class ThroughputReport:
    ath_kbps: float
    normalized_ath: float
    iterations: int
    mean_window: float
    mean_lambda: float
    max_window: int
    n_states: int
    max_mass_error: float = 0.0
    lambda_history: np.ndarray | None = field(default=None, repr=False)
    window_history: np.ndarray | None = field(default=None, repr=False)


def loss_probability(w, loss_rate: float):
    """Probability of at least one Poisson loss in a window of ``w`` packets."""
    w_arr = np.asarray(w, dtype=float)
    if np.any(w_arr < 1):
        raise ModelError(f"window must be >= 1, got {w}")
    if loss_rate < 0:
        raise ModelError(f"loss_rate must be >= 0, got {loss_rate}")
    p = -np.expm1(-loss_rate * w_arr)
    return float(p) if p.ndim == 0 else p


def max_window(config: NetworkConfig) -> int:
    """Buffer-extended maximum window, BDP rounded half-up to whole packets."""
    return int(math.floor(config.bdp_packets + 0.5)) + config.buffer_packets


def state_count(W: int, min_window: int) -> int:
    if W <= min_window:
        raise ModelError(f"max window {W} must exceed min_window {min_window}")
    return W - min_window + 1


def _loss_targets(n_states: int, beta: float) -> np.ndarray:
    idx = np.arange(1, n_states + 1)
    # 1-based floor(beta * i), clamped to the first state, stored 0-based
    return np.clip(np.floor(np.round(beta * idx, 9)).astype(np.int64), 1, n_states) - 1


def build_transition_matrix(
    n_states: int, beta: float, loss_rate: float, min_window: int
) -> TransitionMatrix:
    if n_states < 2:
        raise ModelError(f"need at least 2 states, got {n_states}")
    if not 0 < beta < 1:
        raise ModelError(f"beta must lie in (0, 1), got {beta}")
    if loss_rate < 0:
        raise ModelError(f"loss_rate must be >= 0, got {loss_rate}")
    windows = min_window + np.arange(n_states, dtype=float)
    p_loss = loss_probability(windows, loss_rate)
    loss_prob = np.array(p_loss, dtype=float)
    grow_prob = 1.0 - loss_prob
    # top state: random and congestion loss both land on the same target
    loss_prob[-1] = 1.0
    grow_prob[-1] = 0.0
    return TransitionMatrix(
        n_states=n_states,
        loss_target=_loss_targets(n_states, beta),
        loss_prob=loss_prob,
        grow_prob=grow_prob,
    )


def initial_distribution(
    n_states: int, beta: float, min_window: int = 1
) -> StateDistribution:
    """Unit mass at 1-based index ``ceil(beta * N)``."""
    if n_states < 2:
        raise ModelError(f"need at least 2 states, got {n_states}")
    # rounding keeps e.g. 0.7 * 10 = 7.000000000000001 from ceiling to 8
    j = min(max(math.ceil(round(beta * n_states, 9)), 1), n_states)
    probs = np.zeros(n_states)
    probs[j - 1] = 1.0
    return StateDistribution(probs, min_window + np.arange(n_states, dtype=float))


def _step(probs: np.ndarray, T: TransitionMatrix) -> np.ndarray:
    n = T.n_states
    out = np.bincount(T.loss_target, weights=probs * T.loss_prob, minlength=n)
    out[1:] += (probs * T.grow_prob)[:-1]
    out /= out.sum()
    return out


def step_distribution(v: StateDistribution, T: TransitionMatrix) -> StateDistribution:
    """One chain step ``v x T`` as an O(N) scatter, renormalized."""
    if v.n_states != T.n_states:
        raise ModelError(f"distribution has {v.n_states} states, matrix has {T.n_states}")
    return StateDistribution(_step(v.probs, T), v.sample_space)


def expected_window(v: StateDistribution) -> float:
    return float(v.probs @ v.sample_space)


def agility_factor_model(expected_w: float, W: float, params: CcaParams) -> float:
    """Agility factor from the expected window, clamped to ``[lambda_min, lambda_max]``."""
    if W <= 0:
        raise ModelError(f"max window must be > 0, got {W}")
    ratio = (W - expected_w) / (W - params.beta * W)
    return min(max(params.lambda_max * ratio, params.lambda_min), params.lambda_max)


def average_throughput(
    config: NetworkConfig,
    params: CcaParams,
    iterations: int = DEFAULT_ITERATIONS,
    early_stop: bool = False,
    record: bool = False,
) -> ThroughputReport:
    """Average throughput (Kbps) of the chain over ``iterations`` transitions.

    With ``early_stop`` the iteration halts once the distribution stops
    changing (never before step 4000) and the remaining steps, which would
    all repeat the last term, are added in closed form.
    """
    if iterations < 1:
        raise ModelError(f"iterations must be >= 1, got {iterations}")
    W = config.max_window
    n = config.n_states
    T = build_transition_matrix(n, params.beta, config.loss_rate, config.min_window)
    v = initial_distribution(n, params.beta, config.min_window)
    probs, space = v.probs, v.sample_space
    lam_lo, lam_hi = params.lambda_min, params.lambda_max
    denom = W - params.beta * W

    data = 0.0
    time = 0.0
    lam_sum = 0.0
    mass_err = 0.0
    lam_hist = np.empty(iterations) if record else None
    win_hist = np.empty(iterations) if record else None
    e_w = lam = 0.0
    t = 0
    while t < iterations:
        new = _step(probs, T)
        if record:
            mass_err = max(mass_err, abs(new.sum() - 1.0))
        e_w = float(new @ space)
        lam = min(max(lam_hi * (W - e_w) / denom, lam_lo), lam_hi)
        data += e_w / lam
        time += config.rtt_s / lam
        lam_sum += lam
        if record:
            lam_hist[t] = lam
            win_hist[t] = e_w
        t += 1
        if (
            early_stop
            and t >= MIN_EARLY_STOP_STEP
            and np.max(np.abs(new - probs)) < EARLY_STOP_TOL
        ):
            rest = iterations - t
            data += rest * e_w / lam
            time += rest * config.rtt_s / lam
            lam_sum += rest * lam
            if record:
                lam_hist[t:] = lam
                win_hist[t:] = e_w
            probs = new
            break
        probs = new

    ath = config.packet_size_kbits * data / time
    bound = config.packet_size_kbits * W / config.rtt_s
    if ath > bound * (1 + 1e-12):
        raise ModelError(f"throughput {ath} Kbps exceeds window bound {bound} Kbps")
    return ThroughputReport(
        ath_kbps=ath,
        normalized_ath=ath / config.capacity_kbps,
        iterations=iterations,
        mean_window=e_w,
        mean_lambda=lam_sum / iterations,
        max_window=W,
        n_states=n,
        max_mass_error=mass_err,
        lambda_history=lam_hist,
        window_history=win_hist,
    )
