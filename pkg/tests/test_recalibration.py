"""Tests for expert panels, regret bookkeeping and the recalibrators."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.special import ndtr

from blackcal.blackwell import play_step
from blackcal.core_types import ContractViolation, GameState, PiecewiseDensity
from blackcal.orca import AdversaryFamily, OrcaConfig, OrcaOracle
from blackcal.payoffs import QuantilePayoff, block_norms
from blackcal.recalibration import (
    BinnedRecalibrator,
    ExpertPanel,
    OrcaRecalibrator,
    RegretLedger,
    recalibrate_step,
    recalibration_payoff,
    regret_report,
)

EDGES = np.linspace(0, 1, 21)


def gauss(m, s):
    return PiecewiseDensity.from_weights(EDGES, np.diff(ndtr((EDGES - m) / s)) + 1e-12)


@pytest.fixture
def stream():
    return np.clip(np.random.default_rng(0).normal(0.55, 0.1, 300), 0.001, 0.999)


# =============================================================================
# Panel and payoff
# =============================================================================


class TestPanel:
    def test_forecasts(self):
        panel = ExpertPanel(["a", "b"], [lambda h: gauss(0.3, 0.1), lambda h: gauss(0.6, 0.1)])
        assert panel.K == 2
        assert len(panel.forecasts([])) == 2

    def test_missing_forecast(self):
        panel = ExpertPanel(["a"], [lambda h: None])
        with pytest.raises(ContractViolation):
            panel.forecasts([])

    def test_name_count(self):
        with pytest.raises(ValueError):
            ExpertPanel(["a", "b"], [lambda h: None])


def test_recalibration_payoff_blocks():
    spec = recalibration_payoff(3, 0.0, 1.0)
    assert [b[0] for b in spec.blocks()] == ["quantile", "regret_crps", "regret_mse", "moment"]
    assert spec.bound_B == 4.0
    assert spec.mode == "normalized"


# =============================================================================
# Single steps
# =============================================================================


class TestRecalibrateStep:
    def test_calibrated_expert_is_kept(self):
        """With a zero average the warm start is already optimal."""
        spec = recalibration_payoff(1, 0.0, 1.0)
        oracle = OrcaOracle(spec, AdversaryFamily.bin_centers(EDGES), EDGES, warm_from_expert=0)
        ex = gauss(0.5, 0.15)
        p, cert = recalibrate_step([ex], GameState(), oracle)
        assert p.wasserstein1(ex) <= 1e-9
        assert cert.bound == 0.0

    def test_missing_expert(self):
        spec = recalibration_payoff(1, 0.0, 1.0)
        oracle = OrcaOracle(spec, AdversaryFamily.bin_centers(EDGES), EDGES, warm_from_expert=0)
        with pytest.raises(ContractViolation):
            recalibrate_step([None], GameState(), oracle)


# =============================================================================
# End-to-end recalibration
# =============================================================================


class TestOrcaRecalibrator:
    def test_biased_expert(self, stream):
        """Quantile miscalibration shrinks; CRPS regret stays within its block budget."""
        ex = gauss(0.4, 0.1)
        rec = OrcaRecalibrator(["low"], EDGES)
        for y in stream:
            rec.step([ex], float(y))
        q = QuantilePayoff()
        v = np.mean([q.values(None, ex, y) for y in stream], axis=0)
        bn = block_norms(rec.spec, rec.state.avg_payoff.values)
        assert bn["quantile"] < 0.2 * float(v @ v)
        # block identity: raw block norm^2 = B_i * normalized block norm^2 <= B_i * |avg|^2
        pos = np.maximum(rec.ledger.regret_payoff(), 0.0)
        assert pos @ pos <= rec.spec.specs[1].bound_B * rec.state.avg_payoff.norm2() + 1e-12

    def test_perfect_and_uniform_experts(self, stream):
        rec = OrcaRecalibrator(["sharp", "flat"], EDGES)
        for y in stream:
            rec.step([gauss(y, 0.02), PiecewiseDensity.uniform(0, 1, 20)], float(y))
        rep = regret_report(rec.ledger, n_blocks=4, bound_B=1.0)
        assert rep["R_T"] <= math.sqrt(4 * 1.0 / len(stream))
        assert rep["positive_l2"] + 1e-10 >= rep["positive_linf"] >= rep["R_T"] - 1e-10

    def test_certificates_cover_grid_outcomes(self, stream):
        rec = OrcaRecalibrator(["low"], EDGES)
        centers = 0.5 * (EDGES[:-1] + EDGES[1:])
        ys = centers[np.searchsorted(centers, stream).clip(0, 19)]
        for y in ys[:100]:
            rec.step([gauss(0.4, 0.1)], float(y))
        assert all(r.inner <= r.certificate.bound + 1e-9 for r in rec.state.history)


# =============================================================================
# Regret ledger
# =============================================================================


class TestRegretLedger:
    def test_equal_to_best_expert(self):
        led = RegretLedger(["a", "b"])
        p, q = gauss(0.5, 0.1), gauss(0.2, 0.1)
        for y in (0.4, 0.5, 0.6):
            led.record(p, [p, q], y)
        assert led.regret() == pytest.approx(0.0, abs=1e-15)

    def test_strictly_better(self):
        led = RegretLedger(["a"])
        for y in (0.4, 0.5, 0.6):
            led.record(gauss(y, 0.02), [PiecewiseDensity.uniform(0, 1, 20)], y)
        rep = regret_report(led)
        assert rep["R_T"] < 0
        assert rep["positive_l2"] == 0.0

    def test_trajectory_ends_at_regret(self):
        led = RegretLedger(["a", "b"], loss="mse")
        rng = np.random.default_rng(1)
        for y in rng.random(20):
            led.record(gauss(0.5, 0.1), [gauss(0.3, 0.1), gauss(0.7, 0.1)], float(y))
        assert led.trajectory()[-1] == pytest.approx(led.regret(), abs=1e-15)

    def test_expert_count_fixed(self):
        led = RegretLedger(["a"])
        with pytest.raises(ContractViolation):
            led.record(gauss(0.5, 0.1), [], 0.5)

    def test_empty(self):
        with pytest.raises(ValueError):
            RegretLedger(["a"]).regret()


# =============================================================================
# Binned recalibrator
# =============================================================================


def _factory(cell):
    spec = recalibration_payoff(1, 0.0, 1.0)
    return spec, OrcaOracle(spec, AdversaryFamily.bin_centers(EDGES), EDGES, OrcaConfig(steps=100), warm_from_expert=0)


class TestBinnedRecalibrator:
    def test_single_cell_matches_plain_game(self, stream):
        binned = BinnedRecalibrator(1, 0.0, 1.0, _factory)
        spec, oracle = _factory(0)
        st = GameState()
        for t, y in enumerate(stream[:60]):
            ex = [gauss(0.3 + 0.4 * (t % 7) / 6, 0.1)]
            a = binned.step(ex, float(y))
            st = play_step(st, {"experts": ex}, oracle, float(y), spec)
            np.testing.assert_array_equal(a.masses, st.history[-1].forecast.masses)

    def test_routing_partitions_steps(self, stream):
        binned = BinnedRecalibrator(4, 0.0, 1.0, _factory)
        T = 80
        for t, y in enumerate(stream[:T]):
            binned.step([gauss(0.1 + 0.8 * (t % 5) / 4, 0.1)], float(y))
        steps = sorted(t for _, t in binned.assignments)
        assert steps == list(range(1, T + 1))
        counts = {j: sum(1 for c, _ in binned.assignments if c == j) for j in binned.states}
        assert all(binned.states[j].t == counts[j] for j in counts)
        # per-cell histories reassemble the global outcome stream
        outcomes = {}
        for j, st in binned.states.items():
            ts = [t for c, t in binned.assignments if c == j]
            outcomes.update({t: r.outcome for t, r in zip(ts, st.history)})
        np.testing.assert_array_equal([outcomes[t] for t in range(1, T + 1)], stream[:T])

    def test_aggregate_bounded_by_cells(self, stream):
        binned = BinnedRecalibrator(3, 0.0, 1.0, _factory)
        for t, y in enumerate(stream[:60]):
            binned.step([gauss(0.2 + 0.3 * (t % 3), 0.1)], float(y))
        rep = binned.cell_report()
        assert rep["aggregate_norm"] <= rep["weighted_cell_norm"] + 1e-12
        assert sum(c["T_j"] for c in rep["cells"].values()) == 60

    def test_cell_of(self):
        binned = BinnedRecalibrator(4, 0.0, 1.0, _factory)
        assert binned.cell_of(gauss(0.1, 0.01)) == 0
        assert binned.cell_of(gauss(0.9, 0.01)) == 3

    def test_missing_expert(self):
        with pytest.raises(ContractViolation):
            BinnedRecalibrator(2, 0.0, 1.0, _factory).step([], 0.5)
