"""Evaluation metrics: quantile calibration, point accuracy, decision loss, coverage."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core_types import GameState, PiecewiseDensity, StepRecord
from .payoffs import DEFAULT_LEVELS


def _records(history) -> list[StepRecord]:
    if isinstance(history, GameState):
        return history.history[: history.t]
    return list(history)


def _forecast_density(f):
    """Density behind a forecast object (plain densities pass through)."""
    if isinstance(f, PiecewiseDensity):
        return f
    dens = getattr(f, "density", None)
    if isinstance(dens, PiecewiseDensity):
        return dens
    if hasattr(f, "cdf"):
        return f
    raise TypeError(f"cannot evaluate a CDF for {type(f).__name__}")


def pit_values(history) -> np.ndarray:
    """``F_{p_t}(y_t)`` per step."""
    return np.array([float(_forecast_density(r.forecast).cdf(r.outcome)) for r in _records(history)])


def coverage_frequencies(pit, levels: Sequence[float] = DEFAULT_LEVELS) -> np.ndarray:
    """``f_q``: fraction of steps with PIT at or below each level."""
    pit = np.asarray(pit, dtype=float)
    lv = np.asarray(levels, dtype=float)
    if pit.size == 0:
        raise ValueError("need at least one step")
    return np.mean(pit[:, None] <= lv[None, :], axis=0)


def qce_from_pit(pit, levels: Sequence[float] = DEFAULT_LEVELS) -> float:
    lv = np.asarray(levels, dtype=float)
    d = coverage_frequencies(pit, lv) - lv
    return float(d @ d)


def qce(history, levels: Sequence[float] = DEFAULT_LEVELS) -> float:
    """Quantile calibration error ``sum_q (f_q - q)^2``."""
    return qce_from_pit(pit_values(history), levels)


def qce_trajectory(pit, levels: Sequence[float] = DEFAULT_LEVELS) -> np.ndarray:
    """QCE after each step, by running counts."""
    pit = np.asarray(pit, dtype=float)
    lv = np.asarray(levels, dtype=float)
    counts = np.cumsum(pit[:, None] <= lv[None, :], axis=0)
    t = np.arange(1, pit.size + 1, dtype=float)[:, None]
    d = counts / t - lv[None, :]
    return np.sum(d * d, axis=1)


def smape_values(y, yhat) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    den = 0.5 * (np.abs(y) + np.abs(yhat))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, np.abs(y - yhat) / np.where(den > 0, den, 1.0), 0.0)
    return out


def smape(history=None, *, y=None, yhat=None) -> float:
    """Symmetric mean absolute percentage error of the forecast mean.

    Steps where outcome and prediction are both zero contribute 0.
    """
    if history is not None:
        recs = _records(history)
        y = [r.outcome for r in recs]
        yhat = [_forecast_density(r.forecast).mean for r in recs]
    if y is None or yhat is None:
        raise ValueError("pass a history or both y and yhat")
    v = smape_values(y, yhat)
    if v.size == 0:
        raise ValueError("need at least one step")
    return float(np.mean(v))


def mean_crps(history) -> float:
    recs = _records(history)
    return float(np.mean([_forecast_density(r.forecast).crps(r.outcome) for r in recs]))


# ----------------------------------------------------------------------
# decisions
# ----------------------------------------------------------------------
def decision_loss(a, y, lam: float = 0.5) -> float:
    """Asymmetric commitment loss summed over hours."""
    if not 0 <= lam < 1:
        raise ValueError("lambda must lie in [0, 1)")
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.sum((1 + lam) * np.maximum(y - a, 0.0) + (1 - lam) * np.maximum(a - y, 0.0)))


def expected_decision_loss(p: PiecewiseDensity, a: float, lam: float = 0.5) -> float:
    """``E_{y~p}`` of the one-hour loss, exact for piecewise-uniform ``p``.

    Uses ``(1+lam)(y-a)^+ + (1-lam)(a-y)^+ = (1-lam)(a-y) + 2(y-a)^+``.
    """
    lo, hi = p.edges[:-1], p.edges[1:]
    m = p.masses
    a_c = np.clip(a, lo, hi)
    # E[(y - a)^+ | bin] for y uniform on [lo, hi]
    upper = np.where(a <= lo, 0.5 * (lo + hi) - a, np.where(a >= hi, 0.0, (hi - a_c) ** 2 / (2 * (hi - lo))))
    return float((1 - lam) * (a - p.mean) + 2.0 * (m @ upper))


def optimal_commitment(forecasts, lam: float = 0.5) -> np.ndarray:
    """Per-hour ``(1 + lam)/2`` quantile, the minimizer of the expected loss."""
    if not 0 <= lam < 1:
        raise ValueError("lambda must lie in [0, 1)")
    if isinstance(forecasts, PiecewiseDensity):
        forecasts = [forecasts]
    return np.array([float(p.quantile((1 + lam) / 2)) for p in forecasts])


# ----------------------------------------------------------------------
# value exceedance
# ----------------------------------------------------------------------
def _monotone_direction(v: Callable, lo: float, hi: float, n: int = 257) -> int:
    grid = np.linspace(lo, hi, n)
    vals = np.array([float(v(y)) for y in grid])
    d = np.diff(vals)
    if np.all(d >= 0):
        return 1
    if np.all(d <= 0):
        return -1
    raise ValueError("value function must be monotone in the outcome")


@dataclass
class CoverageResult:
    r: float
    frequency: float
    tail_frequency: float
    slack: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.frequency <= self.bound + 1e-12


def markov_coverage(history, r: float, v: Callable | None = None) -> CoverageResult:
    """Frequency of ``v(y_t) >= r * E_{p_t}[v(y)]``.

    With a calibrated forecaster this is at most ``1/r``. The slack is the
    observed excess of the matching PIT tail (upper tail for increasing
    ``v``, lower tail for decreasing) over its nominal mass ``1/r``.
    ``v`` defaults to the identity; outcomes are assumed nonnegative.
    """
    if not r > 1:
        raise ValueError("r must exceed 1")
    recs = _records(history)
    if not recs:
        raise ValueError("need at least one step")
    v = v or (lambda y: y)
    dens = [_forecast_density(r_.forecast) for r_ in recs]
    lo = min(p.y_min for p in dens)
    hi = max(p.y_max for p in dens)
    direction = _monotone_direction(v, lo, hi)
    ys = np.array([r_.outcome for r_ in recs])
    s = 1.0 / r
    nodes, wts = np.polynomial.legendre.leggauss(8)
    vv = np.vectorize(lambda z: float(v(z)))

    def values(z):
        try:
            out = np.asarray(v(z), dtype=float)
            if out.shape == z.shape:
                return out
        except Exception:
            pass
        return vv(z)

    cache: dict[int, float] = {}
    ev = np.empty(len(dens))
    F = np.empty(len(dens))
    for i, (p, y) in enumerate(zip(dens, ys)):
        key = id(p)
        if key not in cache:
            # per-bin Gauss-Legendre, exact for polynomial v up to degree 15
            pts = 0.5 * (p.edges[:-1] + p.edges[1:])[:, None] + 0.5 * p.widths[:, None] * nodes[None, :]
            cache[key] = float(p.masses @ (values(pts) @ wts) / 2.0)
        ev[i] = cache[key]
        F[i] = float(p.cdf(y))
    hits = values(ys) >= r * ev
    tail = F >= 1 - s if direction > 0 else F <= s
    freq = float(np.mean(hits))
    tf = float(np.mean(tail))
    slack = max(0.0, tf - s)
    return CoverageResult(float(r), freq, tf, slack, s + slack)


# ----------------------------------------------------------------------
# moment grid
# ----------------------------------------------------------------------
def moment_grid_miscalibration(history, y_min: float = 0.0, y_max: float = 1.0) -> float:
    """Vertex-conditional moment error with forecasts at the grid vertices.

    ``|| (1/T) sum_t sum_v w_v(f_t) e_v (psi(y_t) - v) ||`` where ``psi(y) = (u, u^2)``.
    It is at most ``||avg payoff|| + max cell diameter``.
    """
    recs = _records(history)
    acc: dict[int, np.ndarray] = {}
    for r in recs:
        f = r.forecast
        u = (r.outcome - y_min) / (y_max - y_min)
        psi = np.array([u, u * u])
        for vid, w, vert in zip(f.vertex_ids, f.weights, f.vertex_coords):
            acc.setdefault(int(vid), np.zeros(2))
            acc[int(vid)] += w * (psi - vert)
    tot = np.concatenate(list(acc.values())) / len(recs)
    return float(np.linalg.norm(tot))


# ----------------------------------------------------------------------
# report
# ----------------------------------------------------------------------
@dataclass
class RunReport:
    forecaster: str
    T: int
    qce: float
    smape: float
    mean_crps: float
    mean_decision_loss: float | None = None
    miscalibration: list = field(default_factory=list)
    regret: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_history(cls, name: str, history, levels=DEFAULT_LEVELS, decision_losses=None, every: int = 1, regret=None) -> "RunReport":
        recs = _records(history)
        pit = pit_values(recs)
        traj = qce_trajectory(pit, levels)
        return cls(
            forecaster=name,
            T=len(recs),
            qce=qce_from_pit(pit, levels),
            smape=smape(recs),
            mean_crps=mean_crps(recs),
            mean_decision_loss=None if decision_losses is None else float(np.mean(decision_losses)),
            miscalibration=[float(v) for v in traj[every - 1::every]],
            regret=[] if regret is None else [float(v) for v in regret],
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
