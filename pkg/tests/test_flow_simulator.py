import math

import numpy as np
import pytest

from agilesd.flow_simulator import (
    EndCause,
    EpochRecord,
    SimulationError,
    agility_factor_afm,
    epoch_average_rate,
    next_window_agile,
    next_window_newreno,
    run_flow,
    run_seeds,
    total_average_rate,
)
from agilesd.markov_model import CcaParams, NetworkConfig, average_throughput

AGILE = CcaParams(0.5, 1.0, 5.0)
NEWRENO = CcaParams.newreno(0.5)


def make_epoch(windows, lambdas, rtt=0.01):
    e = EpochRecord()
    for w, lam in zip(windows, lambdas):
        e.add_cycle(w, lam, rtt)
    return e


def test_window_growth_rules():
    assert next_window_newreno(1) == 2
    assert next_window_newreno(10) == pytest.approx(10.1)
    assert next_window_agile(10, 1) == next_window_newreno(10)
    assert next_window_agile(10, 5) == pytest.approx(10.5)
    # a full window of ACKs with the increment frozen adds one packet
    w = 10.0
    assert sum(1 / w for _ in range(10)) + w == pytest.approx(11)


class TestAgilityFactor:
    def test_epoch_start_gives_max(self):
        assert agility_factor_afm(100, 50, 50, AGILE) == 5.0

    def test_at_and_past_peak_gives_min(self):
        assert agility_factor_afm(100, 50, 100, AGILE) == 1.0
        assert agility_factor_afm(100, 50, 130, AGILE) == 1.0

    def test_degenerate(self):
        with pytest.raises(SimulationError):
            agility_factor_afm(50, 50, 50, AGILE)


class TestRates:
    def test_single_cycle(self):
        assert epoch_average_rate(make_epoch([10], [2]), 8) == pytest.approx(8000)

    def test_unit_lambda_is_mean_window(self):
        e = make_epoch([4.2, 5.7, 6.1], [1, 1, 1])
        assert epoch_average_rate(e, 8) == pytest.approx(8 * (4 + 5 + 6) / 3 / 0.01)

    def test_two_cycles_hand_value(self):
        rate = epoch_average_rate(make_epoch([4, 5], [2, 1]), 8)
        assert rate == pytest.approx(8 * 7 / 0.015)
        assert rate == pytest.approx(3733.333333, rel=1e-9)

    def test_empty_epoch(self):
        with pytest.raises(SimulationError):
            epoch_average_rate(EpochRecord(), 8)
        with pytest.raises(SimulationError):
            total_average_rate([], 8)

    def test_total_rate_properties(self):
        a = make_epoch([10, 11, 12], [3, 2, 1])
        b = make_epoch([20] * 9, [1] * 9)
        assert total_average_rate([a], 8) == pytest.approx(epoch_average_rate(a, 8))
        assert total_average_rate([a, a], 8) == pytest.approx(epoch_average_rate(a, 8))
        ra, rb = epoch_average_rate(a, 8), epoch_average_rate(b, 8)
        mixed = total_average_rate([a, b], 8)
        assert min(ra, rb) < mixed < max(ra, rb)
        # b is the longer epoch
        assert abs(mixed - rb) < abs(mixed - ra)


class TestRunFlow:
    @pytest.mark.parametrize("buffer", [4, 5])
    def test_deterministic_sawtooth(self, buffer):
        c = NetworkConfig(buffer_packets=buffer, loss_rate=0.0)
        rep = run_flow(c, NEWRENO, duration_s=40.0, seed=3)
        W = c.max_window
        done = rep.completed_epochs
        assert len(done) >= 3
        assert all(e.end_cause is EndCause.CONGESTION_LOSS for e in done)
        # windows floor(beta*W), ..., W inclusive: k = W(1 - beta) growth steps plus the start
        expected = W - math.floor(W * 0.5) + 1
        # the first epoch starts from the chain's initial window instead
        assert {e.n_cycles for e in done[1:]} == {expected}
        assert expected == math.ceil(W * 0.5) + 1
        assert all(lam == 1.0 for e in rep.epochs for lam in e.lambdas)
        assert all(d == pytest.approx(0.01) for e in rep.epochs for d in e.durations)

    def test_agile_shortens_epochs(self):
        c = NetworkConfig(loss_rate=0.0)
        fast = run_flow(c, AGILE, 30.0, 1)
        slow = run_flow(c, NEWRENO, 30.0, 1)
        assert fast.mean_epoch_duration_s < slow.mean_epoch_duration_s

    def test_deterministic_per_seed(self):
        c = NetworkConfig(loss_rate=1e-5)
        a = run_flow(c, AGILE, 20.0, 7)
        b = run_flow(c, AGILE, 20.0, 7)
        assert a.tatr_kbps == b.tatr_kbps
        assert a.loss_counts == b.loss_counts
        assert [e.windows for e in a.epochs] == [e.windows for e in b.epochs]
        assert [e.lambdas for e in a.epochs] == [e.lambdas for e in b.epochs]
        other = run_flow(c, AGILE, 20.0, 8)
        assert other.loss_counts != a.loss_counts or other.tatr_kbps != a.tatr_kbps

    def test_newreno_equivalence(self):
        c = NetworkConfig(loss_rate=1e-5)
        a = run_flow(c, CcaParams(0.5, 1.0, 1.0), 20.0, 2)
        b = run_flow(c, NEWRENO, 20.0, 2)
        assert [e.windows for e in a.epochs] == [e.windows for e in b.epochs]
        assert a.tatr_kbps == b.tatr_kbps

    def test_window_bounds_and_lambda_range(self):
        c = NetworkConfig(loss_rate=1e-4, buffer_packets=16)
        states = []
        run_flow(c, AGILE, 20.0, 5, trace_states=states)
        cw = np.array([s.cwnd for s in states])
        lam = np.array([s.current_lambda for s in states])
        assert cw.min() >= c.min_window and cw.max() <= c.max_window
        assert lam.min() >= 1.0 and lam.max() <= 5.0

    def test_lambda_non_increasing_within_epoch(self):
        rep = run_flow(NetworkConfig(loss_rate=1e-6), AGILE, 30.0, 4)
        for e in rep.epochs:
            assert np.all(np.diff(e.lambdas) <= 1e-12)

    def test_epoch_accounting(self):
        rep = run_flow(NetworkConfig(loss_rate=1e-5), AGILE, 25.0, 9)
        elapsed = math.fsum(e.duration_s for e in rep.epochs)
        assert elapsed <= 25.0
        assert 25.0 - elapsed < 0.01

    def test_rate_consistency(self):
        rep = run_flow(NetworkConfig(loss_rate=1e-5), AGILE, 25.0, 9)
        sent = sum(p for e in rep.epochs for p in e.packets)
        elapsed = sum(d for e in rep.epochs for d in e.durations)
        assert rep.tatr_kbps == pytest.approx(8.0 * sent / elapsed, rel=1e-9)

    def test_loss_at_window_floor(self):
        # high loss drives cwnd to the minimum, where prev_peak == epoch start
        c = NetworkConfig(capacity_kbps=8000, buffer_packets=0, loss_rate=0.3)
        rep = run_flow(c, AGILE, 5.0, 1)
        assert rep.loss_counts["random"] > 10
        assert min(min(e.windows) for e in rep.epochs) == c.min_window

    def test_too_short(self):
        with pytest.raises(SimulationError):
            run_flow(NetworkConfig(), AGILE, 0.001, 1)
        with pytest.raises(SimulationError):
            run_flow(NetworkConfig(), AGILE, 0.0, 1)

    def test_close_to_model_at_reference_point(self):
        c = NetworkConfig(buffer_packets=4, loss_rate=1e-8)
        sim = np.mean([r.normalized for r in run_seeds(c, AGILE, 100.0, range(1, 11))])
        model = average_throughput(c, AGILE).normalized_ath
        assert abs(sim - model) / model <= 0.15
