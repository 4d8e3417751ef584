"""Cycle-level single-flow simulator of NewReno / Agile-SD congestion avoidance.

A cycle is one unit of window growth.  It lasts ``RTT / lambda`` seconds and
carries ``floor(cwnd) / lambda`` packets.  Windows are whole packets: a loss
sets ``cwnd = max(floor(beta * cwnd), min_window)``.  Random loss is a per-packet
Bernoulli process driven by a seeded ``numpy.random.Generator`` (PCG64);
congestion loss fires when the window would grow past the maximum window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .markov_model import CcaParams, ModelError, NetworkConfig


class SimulationError(ValueError):
    pass


class EndCause(str, Enum):
    RANDOM_LOSS = "random_loss"
    CONGESTION_LOSS = "congestion_loss"
    SIMULATION_END = "simulation_end"


@dataclass
class FlowState:
    cwnd: float
    prev_peak: float
    epoch_start_w: float
    epoch_index: int = 1
    cycle_index: int = 0
    current_lambda: float = 1.0
    clock_s: float = 0.0


@dataclass
class EpochRecord:
    """Cycles between two consecutive losses, stored column-wise."""

    windows: list[float] = field(default_factory=list)
    lambdas: list[float] = field(default_factory=list)
    durations: list[float] = field(default_factory=list)
    packets: list[float] = field(default_factory=list)
    end_cause: EndCause = EndCause.SIMULATION_END

    def add_cycle(self, w: float, lam: float, rtt_s: float) -> None:
        self.windows.append(w)
        self.lambdas.append(lam)
        self.durations.append(rtt_s / lam)
        self.packets.append(math.floor(w) / lam)

    @property
    def cycles(self) -> list[dict]:
        return [
            {"w": w, "lambda": lam, "duration_s": d, "packets_sent": p}
            for w, lam, d, p in zip(self.windows, self.lambdas, self.durations, self.packets)
        ]

    @property
    def n_cycles(self) -> int:
        return len(self.windows)

    @property
    def duration_s(self) -> float:
        return math.fsum(self.durations)

    @property
    def packets_sent(self) -> float:
        return math.fsum(self.packets)


@dataclass
class SimReport:
    tatr_kbps: float
    normalized: float
    epochs: list[EpochRecord]
    mean_epoch_duration_s: float
    loss_counts: dict
    duration_s: float
    seed: int
    packet_size_kbits: float = 8.0
    rtt_s: float = 0.01
    capacity_kbps: float = 1e6

    @property
    def completed_epochs(self) -> list[EpochRecord]:
        return [e for e in self.epochs if e.end_cause is not EndCause.SIMULATION_END]


def next_window_newreno(w: float) -> float:
    return w + 1.0 / w


def next_window_agile(w: float, lam: float) -> float:
    return w + lam / w


def agility_factor_afm(
    prev_peak: float, epoch_start_w: float, current_w: float, params: CcaParams
) -> float:
    """Agility factor of the current cycle, decaying from ``lambda_max`` at
    the epoch start toward ``lambda_min`` as the window nears the old peak."""
    span = prev_peak - epoch_start_w
    if span <= 0:
        raise SimulationError(
            f"degenerate epoch: prev_peak {prev_peak} <= epoch_start_w {epoch_start_w}"
        )
    lam = params.lambda_max * (prev_peak - current_w) / span
    return min(max(lam, params.lambda_min), params.lambda_max)


def epoch_average_rate(epoch: EpochRecord, theta: float) -> float:
    if epoch.n_cycles == 0:
        raise SimulationError("epoch has no cycles")
    return theta * epoch.packets_sent / epoch.duration_s


def total_average_rate(epochs: list[EpochRecord], theta: float) -> float:
    """Time-weighted rate over all cycles of all epochs."""
    epochs = [e for e in epochs if e.n_cycles]
    if not epochs:
        raise SimulationError("no epochs with cycles")
    sent = math.fsum(p for e in epochs for p in e.packets)
    elapsed = math.fsum(d for e in epochs for d in e.durations)
    return theta * sent / elapsed


def _floor(x: float) -> int:
    return math.floor(round(x, 9))


def _ceil(x: float) -> int:
    return math.ceil(round(x, 9))


def _cycle_lambda(state: FlowState, params: CcaParams) -> float:
    if state.prev_peak <= state.epoch_start_w:
        # a loss at the window floor leaves no room to decay over;
        # keep lambda_max for the first cycle, lambda_min once past the old peak
        return params.lambda_max if state.cwnd <= state.epoch_start_w else params.lambda_min
    return agility_factor_afm(state.prev_peak, state.epoch_start_w, state.cwnd, params)


def run_flow(
    config: NetworkConfig,
    params: CcaParams,
    duration_s: float = 100.0,
    seed: int = 1,
    trace_states: list | None = None,
) -> SimReport:
    """Simulate one flow for ``duration_s`` seconds.

    If ``trace_states`` is a list, a copy of the :class:`FlowState` seen at
    the start of every cycle is appended to it.
    """
    if not duration_s > 0:
        raise SimulationError(f"duration_s must be > 0, got {duration_s}")
    W = config.max_window
    w_min = config.min_window
    rtt = config.rtt_s
    beta = params.beta
    if duration_s < rtt / params.lambda_max:
        raise SimulationError(
            f"duration {duration_s}s is shorter than one cycle ({rtt / params.lambda_max}s)"
        )
    rng = np.random.default_rng(seed)
    R = config.loss_rate

    def draw_gap() -> float:
        # index of the next lost packet, counted from the current position
        return float(rng.geometric(R)) if R > 0 else math.inf

    # same starting window as the Markov chain's initial state
    start = float(w_min + _ceil(beta * config.n_states) - 1)
    state = FlowState(cwnd=start, prev_peak=float(W), epoch_start_w=start)
    next_loss_at = draw_gap()
    sent_total = 0.0

    epochs: list[EpochRecord] = []
    epoch = EpochRecord()
    counts = {"random": 0, "congestion": 0}
    while True:
        lam = _cycle_lambda(state, params)
        state.current_lambda = lam
        cycle_time = rtt / lam
        if state.clock_s + cycle_time > duration_s:
            break
        if trace_states is not None:
            trace_states.append(FlowState(**vars(state)))
        epoch.add_cycle(state.cwnd, lam, rtt)
        pkts = epoch.packets[-1]
        state.clock_s += cycle_time
        state.cycle_index += 1
        sent_total += pkts

        cause = None
        if sent_total >= next_loss_at:
            cause = EndCause.RANDOM_LOSS
            counts["random"] += 1
            next_loss_at = sent_total + draw_gap()
        elif state.cwnd + 1 > W:
            cause = EndCause.CONGESTION_LOSS
            counts["congestion"] += 1

        if cause is None:
            state.cwnd += 1.0
            continue
        epoch.end_cause = cause
        epochs.append(epoch)
        epoch = EpochRecord()
        state.prev_peak = state.cwnd
        # the OS window is an integer, so the reduced window is floored
        state.cwnd = float(max(_floor(beta * state.cwnd), w_min))
        state.epoch_start_w = state.cwnd
        state.epoch_index += 1
        state.cycle_index = 0

    if epoch.n_cycles:
        epochs.append(epoch)
    if not epochs:
        raise SimulationError("simulation produced no complete cycle")

    theta = config.packet_size_kbits
    tatr = total_average_rate(epochs, theta)
    done = [e for e in epochs if e.end_cause is not EndCause.SIMULATION_END]
    mean_epoch = math.fsum(e.duration_s for e in done) / len(done) if done else math.nan
    return SimReport(
        tatr_kbps=tatr,
        normalized=tatr / config.capacity_kbps,
        epochs=epochs,
        mean_epoch_duration_s=mean_epoch,
        loss_counts=counts,
        duration_s=duration_s,
        seed=seed,
        packet_size_kbits=theta,
        rtt_s=rtt,
        capacity_kbps=config.capacity_kbps,
    )


def run_seeds(
    config: NetworkConfig,
    params: CcaParams,
    duration_s: float = 100.0,
    seeds=range(1, 11),
) -> list[SimReport]:
    seeds = list(seeds)
    if not seeds:
        raise SimulationError("at least one seed is required")
    return [run_flow(config, params, duration_s, s) for s in seeds]


__all__ = [
    "EndCause",
    "EpochRecord",
    "FlowState",
    "ModelError",
    "SimReport",
    "SimulationError",
    "agility_factor_afm",
    "epoch_average_rate",
    "next_window_agile",
    "next_window_newreno",
    "run_flow",
    "run_seeds",
    "total_average_rate",
]
