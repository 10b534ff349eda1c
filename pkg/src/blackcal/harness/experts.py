"""Built-in expert forecasters over a fixed bin grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ..core_types import PiecewiseDensity

EXPERT_KINDS = ("marginal", "rolling_gaussian", "persistence")


def _normal_bins(edges: np.ndarray, mean: float, sd: float) -> np.ndarray:
    cdf = ndtr((edges - mean) / sd)
    m = np.diff(cdf)
    total = m.sum()
    if total <= 1e-300:
        # all mass beyond the range: collapse onto the nearest end bin
        m = np.zeros(edges.size - 1)
        m[0 if mean < edges[0] else -1] = 1.0
        return m
    return m / total


def marginal(history, edges) -> PiecewiseDensity:
    """Histogram of every past outcome, add-one smoothed."""
    edges = np.asarray(edges, dtype=float)
    h = np.asarray(history, dtype=float)
    counts = np.zeros(edges.size - 1)
    if h.size:
        idx = np.clip(np.searchsorted(edges, h, side="right") - 1, 0, edges.size - 2)
        np.add.at(counts, idx, 1.0)
    return PiecewiseDensity.from_weights(edges, counts + 1.0)


def rolling_gaussian(history, edges, window: int = 24, sd_floor: float | None = None) -> PiecewiseDensity:
    """Normal with the trailing window's mean and standard deviation, binned."""
    edges = np.asarray(edges, dtype=float)
    h = np.asarray(history, dtype=float)[-window:]
    floor = sd_floor if sd_floor is not None else float(np.min(np.diff(edges)))
    if h.size == 0:
        return PiecewiseDensity.from_weights(edges, np.diff(edges))
    sd = max(float(np.std(h, ddof=1)) if h.size > 1 else 0.0, floor)
    return PiecewiseDensity(edges, _normal_bins(edges, float(h.mean()), sd))


def persistence(history, edges, width: float | None = None) -> PiecewiseDensity:
    """Normal bump at the last outcome with a fixed width."""
    edges = np.asarray(edges, dtype=float)
    h = np.asarray(history, dtype=float)
    if h.size == 0:
        return PiecewiseDensity.from_weights(edges, np.diff(edges))
    w = width if width is not None else 0.05 * (edges[-1] - edges[0])
    return PiecewiseDensity(edges, _normal_bins(edges, float(h[-1]), w))


def expert_forecast(kind: str, history, edges, **kw) -> PiecewiseDensity:
    if kind == "marginal":
        return marginal(history, edges)
    if kind == "rolling_gaussian":
        return rolling_gaussian(history, edges, **kw)
    if kind == "persistence":
        return persistence(history, edges, **kw)
    raise ValueError(f"unknown expert {kind!r}; choose from {EXPERT_KINDS}")


@dataclass
class Expert:
    """Callable forecaster bound to a bin grid."""

    kind: str
    edges: np.ndarray
    params: dict | None = None

    def __post_init__(self):
        if self.kind not in EXPERT_KINDS:
            raise ValueError(f"unknown expert {self.kind!r}; choose from {EXPERT_KINDS}")
        self.edges = np.asarray(self.edges, dtype=float)

    def __call__(self, history) -> PiecewiseDensity:
        return expert_forecast(self.kind, history, self.edges, **(self.params or {}))
