"""No-regret recalibration of expert forecast streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .blackwell import play_step, step_rng
from .core_types import ContractViolation, GameState, PayoffVector, PiecewiseDensity
from .orca import AdversaryFamily, OrcaConfig, OrcaOracle
from .payoffs import (
    DEFAULT_LEVELS,
    CombinedPayoff,
    MomentPayoff,
    PayoffSpec,
    QuantilePayoff,
    RegretPayoff,
    combine,
)


@dataclass
class ExpertPanel:
    """Named forecast streams; ``sources[i](history)`` returns expert i's forecast."""

    names: list
    sources: list

    def __post_init__(self):
        if len(self.names) != len(self.sources):
            raise ValueError("one name per expert")
        if not self.names:
            raise ValueError("panel is empty")

    @property
    def K(self) -> int:
        return len(self.names)

    def forecasts(self, history) -> list:
        out = [src(history) for src in self.sources]
        for name, f in zip(self.names, out):
            if f is None:
                raise ContractViolation(f"expert {name!r} emitted no forecast")
        return out


def recalibration_payoff(num_experts: int, y_min: float, y_max: float, levels=DEFAULT_LEVELS) -> CombinedPayoff:
    """Quantile calibration, CRPS and MSE regret, and first-two-moment matching, normalized."""
    return combine(
        [
            QuantilePayoff(levels),
            RegretPayoff(num_experts, "crps", y_min, y_max),
            RegretPayoff(num_experts, "mse", y_min, y_max),
            MomentPayoff((1, 2), y_min, y_max),
        ],
        mode="normalized",
    )


@dataclass
class RegretLedger:
    """Cumulative losses of the recalibrated stream and of every expert."""

    names: list
    loss: str = "crps"
    y_min: float = 0.0
    y_max: float = 1.0
    own: list = field(default_factory=list)
    experts: list = field(default_factory=list)

    def _loss(self, p: PiecewiseDensity, y: float) -> float:
        w = self.y_max - self.y_min
        if self.loss == "crps":
            return float(p.crps(y)) / w
        return ((p.mean - y) / w) ** 2

    def record(self, forecast: PiecewiseDensity, expert_forecasts: Sequence[PiecewiseDensity], y: float) -> None:
        if len(expert_forecasts) != len(self.names):
            raise ContractViolation("expert count changed mid-stream")
        self.own.append(self._loss(forecast, y))
        self.experts.append([self._loss(e, y) for e in expert_forecasts])

    @property
    def T(self) -> int:
        return len(self.own)

    def regret(self) -> float:
        """``R_T``: own average loss minus the best expert's."""
        if self.T < 1:
            raise ValueError("need at least one step")
        return float(np.mean(self.own) - np.min(np.mean(self.experts, axis=0)))

    def regret_payoff(self) -> np.ndarray:
        """Average per-expert excess loss (the regret block of the average payoff)."""
        return np.mean(np.asarray(self.own)[:, None] - np.asarray(self.experts), axis=0)

    def trajectory(self) -> np.ndarray:
        own = np.cumsum(self.own)
        ex = np.cumsum(np.asarray(self.experts), axis=0)
        t = np.arange(1, self.T + 1)
        return (own - ex.min(axis=1)) / t


def regret_report(ledger: RegretLedger, n_blocks: int = 1, bound_B: float = 1.0) -> dict:
    """``R_T`` with the positive-part norm chain ``||.||_2 >= ||.||_inf >= R_T``.

    ``bound`` is ``sqrt(n * B / T)``, the normalized-combination rate.
    """
    R = ledger.regret()
    pos = np.maximum(ledger.regret_payoff(), 0.0)
    l2 = float(np.linalg.norm(pos))
    linf = float(pos.max())
    if not (l2 + 1e-10 >= linf and linf + 1e-10 >= R):
        raise ContractViolation(f"norm chain broken: l2={l2}, linf={linf}, R={R}")
    return {
        "T": ledger.T,
        "R_T": R,
        "own_loss": float(np.mean(ledger.own)),
        "expert_losses": dict(zip(ledger.names, map(float, np.mean(ledger.experts, axis=0)))),
        "positive_l2": l2,
        "positive_linf": linf,
        "bound": math.sqrt(n_blocks * bound_B / ledger.T),
    }


# ----------------------------------------------------------------------
# ORCA recalibrator
# ----------------------------------------------------------------------
class OrcaRecalibrator:
    """Combined-payoff ORCA game over an expert panel, warm-started from expert 0."""

    def __init__(self, names, edges, config: OrcaConfig | None = None, levels=DEFAULT_LEVELS,
                 adversary: AdversaryFamily | None = None, spec: PayoffSpec | None = None):
        self.edges = np.asarray(edges, dtype=float)
        self.names = list(names)
        y_min, y_max = float(self.edges[0]), float(self.edges[-1])
        self.spec = spec or recalibration_payoff(len(self.names), y_min, y_max, levels)
        self.adversary = adversary or AdversaryFamily.bin_centers(self.edges)
        self.oracle = OrcaOracle(self.spec, self.adversary, self.edges, config, warm_from_expert=0)
        self.state = GameState()
        self.ledger = RegretLedger(self.names, "crps", y_min, y_max)
        self.mse_ledger = RegretLedger(self.names, "mse", y_min, y_max)

    def step(self, expert_forecasts: Sequence[PiecewiseDensity], y: float, run_seed: int = 0) -> PiecewiseDensity:
        x = {"experts": list(expert_forecasts)}
        self.state = play_step(self.state, x, self.oracle, y, self.spec, run_seed)
        p = self.state.history[-1].forecast
        self.ledger.record(p, expert_forecasts, y)
        self.mse_ledger.record(p, expert_forecasts, y)
        return p


def recalibrate_step(expert_forecasts, state: GameState, oracle: OrcaOracle, spec: PayoffSpec | None = None, rng=None):
    """Recalibrated forecast for one step, before the outcome is seen.

    Returns ``(forecast, certificate)``.
    """
    if expert_forecasts is None or any(f is None for f in expert_forecasts):
        raise ContractViolation("missing expert forecast")
    spec = spec or oracle.spec
    avg = state.avg_payoff if state.avg_payoff is not None else PayoffVector.zeros(spec.labels, spec.bound_B)
    return oracle.respond(avg, {"experts": list(expert_forecasts)}, rng if rng is not None else step_rng(0, state.t + 1))


# ----------------------------------------------------------------------
# binned recalibrator
# ----------------------------------------------------------------------
class BinnedRecalibrator:
    """Independent calibration instances routed by the expert's forecast mean.

    The mean of expert 0 is quantized into ``M`` equal cells over the
    outcome range; the step is played by that cell's instance only.
    ``factory(cell)`` builds ``(spec, oracle)`` for a cell.
    """

    def __init__(self, M: int, y_min: float, y_max: float, factory: Callable[[int], tuple]):
        if M < 1:
            raise ValueError("need at least one cell")
        self.M = M
        self.y_min, self.y_max = float(y_min), float(y_max)
        self.factory = factory
        self.cells: dict[int, tuple] = {}
        self.states: dict[int, GameState] = {}
        self.assignments: list[tuple[int, int]] = []

    def cell_of(self, expert: PiecewiseDensity) -> int:
        u = (expert.mean - self.y_min) / (self.y_max - self.y_min)
        return int(min(self.M - 1, max(0, math.floor(u * self.M))))

    def step(self, expert_forecasts: Sequence[PiecewiseDensity], y: float, run_seed: int = 0):
        if not expert_forecasts or any(f is None for f in expert_forecasts):
            raise ContractViolation("missing expert forecast")
        j = self.cell_of(expert_forecasts[0])
        if j not in self.cells:
            self.cells[j] = self.factory(j)
            self.states[j] = GameState()
        spec, oracle = self.cells[j]
        t = len(self.assignments) + 1
        # distinct random streams per cell
        seed = int(np.random.SeedSequence([int(run_seed), j]).generate_state(1, np.uint64)[0])
        st = play_step(self.states[j], {"experts": list(expert_forecasts)}, oracle, y, spec, seed)
        self.states[j] = st
        self.assignments.append((j, t))
        return st.history[-1].forecast

    def cell_report(self) -> dict:
        """Per-cell counts and average-payoff norms with the pooled bound."""
        T = len(self.assignments)
        if T == 0:
            raise ValueError("no steps played")
        per = {}
        total = None
        weighted = 0.0
        for j, st in self.states.items():
            v = st.avg_payoff.values
            per[j] = {"T_j": st.t, "norm": float(np.linalg.norm(v))}
            weighted += st.t / T * per[j]["norm"]
            total = st.t * v if total is None else total + st.t * v
        return {"cells": per, "aggregate_norm": float(np.linalg.norm(total / T)), "weighted_cell_norm": weighted}
