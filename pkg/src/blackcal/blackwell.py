"""The approachability game loop and its miscalibration bookkeeping."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import numpy as np

from .core_types import GameState, PayoffVector, PiecewiseDensity, StepRecord, update_average
from .payoffs import PayoffSpec, block_norms


@dataclass(frozen=True)
class Certificate:
    """Claimed sup over outcomes of ``<avg_{t-1}, pi(x_t, p_t, y)>``.

    ``exact`` means the sup was taken over the whole outcome space; inexact
    certificates only cover the oracle's adversary family.
    """

    bound: float
    exact: bool
    info: dict = field(default_factory=dict, compare=False)


class Oracle(Protocol):
    def respond(self, avg: PayoffVector, x: Any, rng: np.random.Generator) -> tuple[Any, Certificate]:
        ...


class OracleError(RuntimeError):
    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"oracle failed at step {step}: {cause!r}")
        self.step = step


def step_rng(run_seed: int, t: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(run_seed, t)``."""
    key = np.array([int(run_seed) & 0xFFFFFFFFFFFFFFFF, int(t) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def play_step(
    state: GameState,
    x: Any,
    oracle: Oracle,
    outcome: float | Callable[[Any, GameState], float],
    spec: PayoffSpec,
    run_seed: int = 0,
) -> GameState:
    """One round: query the oracle, reveal the outcome, update the average.

    ``outcome`` may be a callable ``nature(forecast, state)`` so that an
    adaptive adversary sees the announced forecast.
    """
    t = state.t + 1
    avg = state.avg_payoff if state.avg_payoff is not None else PayoffVector.zeros(spec.labels, spec.bound_B)
    try:
        forecast, cert = oracle.respond(avg, x, step_rng(run_seed, t))
    except Exception as exc:
        raise OracleError(t, exc) from exc
    y = outcome(forecast, state) if callable(outcome) else outcome
    y = float(y)
    payoff = spec.evaluate(x, forecast, y)
    inner = float(avg.values @ payoff.values)
    new = update_average(state, payoff)
    new.history.append(StepRecord(t, x, forecast, y, payoff, cert, inner, {"seed": [int(run_seed), t]}))
    return new


def run_game(spec: PayoffSpec, oracle: Oracle, nature: Callable, T: int, features: Callable | None = None, run_seed: int = 0) -> GameState:
    """Play ``T`` rounds; ``features(t, state)`` supplies ``x_t``."""
    state = GameState()
    for t in range(1, T + 1):
        x = features(t, state) if features is not None else None
        state = play_step(state, x, oracle, nature, spec, run_seed)
    return state


# ----------------------------------------------------------------------
# reporting
# ----------------------------------------------------------------------
def miscalibration_report(state: GameState, spec: PayoffSpec | None = None) -> dict:
    if state.t < 1:
        raise ValueError("need at least one step")
    avg = state.avg_payoff
    t = state.t
    B = avg.bound_B
    inners = np.array([r.inner for r in state.history[:t]])
    norms2 = np.array([r.payoff.norm2() for r in state.history[:t]])
    pos = float(np.sum(np.maximum(inners, 0.0)))
    weights = np.arange(t, dtype=float)  # (s - 1) for s = 1..t
    cert = [r.certificate.bound for r in state.history[:t] if r.certificate is not None]
    rep = {
        "t": t,
        "norm2": avg.norm2(),
        "bound": B / t,
        "budget": B / t + 2.0 * pos / t,
        "identity_rhs": float((math.fsum(norms2) + 2.0 * math.fsum(weights * inners)) / t**2),
        "sum_positive_inner": pos,
        "certificate_budget": float(sum(max(0.0, c) for c in cert)),
        "per_block": block_norms(spec, avg.values) if spec is not None else {},
    }
    return rep


def budget_trajectory(state: GameState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-step ``(norm2_t, B/t, budget_t)`` recomputed from the history alone."""
    hist = state.history[: state.t]
    vals = np.stack([r.payoff.values for r in hist])
    B = hist[0].payoff.bound_B
    csum = np.cumsum(vals, axis=0)
    t = np.arange(1, len(hist) + 1, dtype=float)
    avg = csum / t[:, None]
    norm2 = np.sum(avg * avg, axis=1)
    inner = np.array([r.inner for r in hist])
    budget = B / t + 2.0 * np.cumsum(np.maximum(inner, 0.0)) / t
    return norm2, B / t, budget


def _digest(x: Any) -> str:
    h = hashlib.sha256()

    def feed(obj):
        if obj is None:
            h.update(b"none")
        elif isinstance(obj, PiecewiseDensity):
            h.update(obj.edges.tobytes())
            h.update(obj.masses.tobytes())
        elif isinstance(obj, np.ndarray):
            h.update(np.ascontiguousarray(obj).tobytes())
        elif isinstance(obj, dict):
            for k in sorted(obj):
                h.update(str(k).encode())
                feed(obj[k])
        elif isinstance(obj, (list, tuple)):
            for o in obj:
                feed(o)
        else:
            h.update(repr(obj).encode())

    feed(x)
    return h.hexdigest()[:16]


def _forecast_record(f: Any):
    if isinstance(f, PiecewiseDensity):
        return [float(m) for m in f.masses]
    if hasattr(f, "to_record"):
        return f.to_record()
    return repr(f)


def history_records(state: GameState):
    for r in state.history[: state.t]:
        yield {
            "t": r.t,
            "x": _digest(r.x),
            "forecast": _forecast_record(r.forecast),
            "outcome": r.outcome,
            "payoff_norm": r.payoff.norm(),
            "inner": r.inner,
            "certificate": None if r.certificate is None else r.certificate.bound,
        }


def write_history(state: GameState, path) -> None:
    """One JSON object per line."""
    with open(path, "w") as fh:
        for rec in history_records(state):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
