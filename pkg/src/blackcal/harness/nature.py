"""Adaptive adversaries that pick outcomes after seeing the forecast."""

from __future__ import annotations

import numpy as np

from ..core_types import GameState
from ..metrics import _forecast_density
from ..payoffs import DEFAULT_LEVELS, PayoffSpec


def adversarial_nature(forecast, counts: np.ndarray, t: int, grid, levels=DEFAULT_LEVELS) -> int:
    """Index of the grid outcome that maximizes the QCE after this step.

    ``counts[q]`` is the number of past steps with PIT at or below level q
    and ``t`` the number of past steps. Ties go to the smallest outcome.
    """
    grid = np.asarray(grid, dtype=float)
    lv = np.asarray(levels, dtype=float)
    pit = np.asarray(_forecast_density(forecast).cdf(grid), dtype=float)
    hit = pit[:, None] <= lv[None, :]
    d = (counts[None, :] + hit) / (t + 1) - lv[None, :]
    return int(np.argmax(np.sum(d * d, axis=1)))


class QceNature:
    """Greedy cumulative-QCE maximizer over a fixed outcome grid.

    Usable as the ``outcome`` callable of :func:`blackcal.blackwell.play_step`.
    """

    def __init__(self, grid, levels=DEFAULT_LEVELS):
        self.grid = np.asarray(grid, dtype=float)
        self.levels = np.asarray(levels, dtype=float)
        self.counts = np.zeros(self.levels.size)
        self.t = 0

    def __call__(self, forecast, state: GameState | None = None) -> float:
        k = adversarial_nature(forecast, self.counts, self.t, self.grid, self.levels)
        y = float(self.grid[k])
        pit = float(_forecast_density(forecast).cdf(y))
        self.counts += pit <= self.levels
        self.t += 1
        return y


class PayoffNature:
    """Greedy maximizer of the next average payoff norm for any spec.

    Picks ``argmax_y ||t * avg + pi(y)||^2`` (ties to the smallest y). For a
    quantile payoff this coincides with the cumulative QCE maximizer.
    """

    def __init__(self, spec: PayoffSpec, grid, x=None):
        self.spec = spec
        self.grid = np.asarray(grid, dtype=float)
        self.x = x

    def __call__(self, forecast, state: GameState) -> float:
        vals = self.spec.values_many(self.x, forecast, self.grid)
        if state.avg_payoff is not None:
            vals = vals + state.t * state.avg_payoff.values[None, :]
        return float(self.grid[int(np.argmax(np.sum(vals * vals, axis=1)))])
