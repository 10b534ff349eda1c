"""Forecast densities, payoff vectors and the running game state."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

MASS_TOL = 1e-12


class DomainError(ValueError):
    """Raised when an outcome lies outside a forecast's support interval."""


class ContractViolation(ValueError):
    """Raised when two payoff vectors with different labels are combined."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PiecewiseDensity:
    """Piecewise-constant density on ``[edges[0], edges[-1]]``.

    ``masses[b]`` is the probability of bin ``[edges[b], edges[b+1]]``; the
    CDF is continuous and piecewise linear.
    """

    edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        edges = np.array(self.edges, dtype=float)
        masses = np.array(self.masses, dtype=float)
        if edges.ndim != 1 or masses.ndim != 1 or edges.size != masses.size + 1:
            raise ValueError("need len(edges) == len(masses) + 1")
        if masses.size < 1:
            raise ValueError("need at least one bin")
        if not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be finite and strictly increasing")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise ValueError("masses must be finite and nonnegative")
        total = masses.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {total!r}, expected 1")
        object.__setattr__(self, "edges", _readonly(edges))
        object.__setattr__(self, "masses", _readonly(masses))

    # -- constructors --------------------------------------------------
    @classmethod
    def uniform(cls, y_min: float = 0.0, y_max: float = 1.0, bins: int = 50) -> "PiecewiseDensity":
        return cls(np.linspace(y_min, y_max, bins + 1), np.full(bins, 1.0 / bins))

    @classmethod
    def from_weights(cls, edges, weights) -> "PiecewiseDensity":
        """Normalize nonnegative weights into masses."""
        w = np.asarray(weights, dtype=float)
        return cls(edges, w / w.sum())

    @classmethod
    def from_logits(cls, edges, theta) -> "PiecewiseDensity":
        return cls(edges, softmax(theta))

    # -- basic properties ----------------------------------------------
    @property
    def bins(self) -> int:
        return self.masses.size

    @property
    def y_min(self) -> float:
        return float(self.edges[0])

    @property
    def y_max(self) -> float:
        return float(self.edges[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def mean(self) -> float:
        return self.moment(1)

    def __repr__(self) -> str:
        return f"PiecewiseDensity(bins={self.bins}, range=[{self.y_min:g}, {self.y_max:g}], mean={self.mean:.4g})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PiecewiseDensity):
            return NotImplemented
        return np.array_equal(self.edges, other.edges) and np.array_equal(self.masses, other.masses)

    __hash__ = None  # type: ignore[assignment]

    # -- evaluation ----------------------------------------------------
    def _check_domain(self, y: np.ndarray) -> None:
        if np.any(y < self.edges[0]) or np.any(y > self.edges[-1]) or np.any(np.isnan(y)):
            raise DomainError(f"outcome outside [{self.y_min}, {self.y_max}]")

    def cdf_weights(self, y) -> np.ndarray:
        """Rows ``C`` with ``cdf(y) == C @ masses`` (fraction of each bin below y)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        lo, w = self.edges[:-1], self.widths
        return np.clip((y[:, None] - lo[None, :]) / w[None, :], 0.0, 1.0)

    def cdf(self, y):
        ya = np.asarray(y, dtype=float)
        self._check_domain(ya)
        cum = np.concatenate(([0.0], np.cumsum(self.masses)))
        b = np.clip(np.searchsorted(self.edges, ya, side="right") - 1, 0, self.bins - 1)
        frac = (ya - self.edges[b]) / self.widths[b]
        out = np.minimum(cum[b] + self.masses[b] * frac, 1.0)
        out = np.where(ya >= self.edges[-1], 1.0, out)
        return float(out) if out.ndim == 0 else out

    def quantile(self, alpha):
        """Generalized inverse of the CDF.

        Inside a zero-mass gap the left end of the flat region is returned.
        """
        a = np.asarray(alpha, dtype=float)
        if np.any(a < 0) or np.any(a > 1) or np.any(np.isnan(a)):
            raise ValueError("quantile level must lie in [0, 1]")
        cum = np.concatenate(([0.0], np.cumsum(self.masses)))
        cum[-1] = 1.0
        # first bin whose cumulative mass reaches alpha
        b = np.clip(np.searchsorted(cum, a, side="left") - 1, 0, self.bins - 1)
        m = self.masses[b]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(m > 0, (a - cum[b]) / np.where(m > 0, m, 1.0), 0.0)
        out = self.edges[b] + np.clip(frac, 0.0, 1.0) * self.widths[b]
        out = np.where(a <= 0, self.edges[0], out)
        return float(out) if out.ndim == 0 else out

    def moment_vector(self, k: int) -> np.ndarray:
        """Per-bin weights ``M`` with ``moment(k) == M @ masses``."""
        if int(k) != k or k < 1:
            raise ValueError("moment order must be a positive integer")
        lo, hi = self.edges[:-1], self.edges[1:]
        return (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo))

    def moment(self, k: int) -> float:
        return float(self.moment_vector(k) @ self.masses)

    def crps(self, y):
        """Exact CRPS, vectorized over ``y``."""
        ya = np.asarray(y, dtype=float)
        self._check_domain(ya)
        A = crps_quadratic(self.edges)
        D = crps_linear(self.edges, np.atleast_1d(ya))
        m = self.masses
        val = m @ A @ m - 2.0 * D @ m + (self.y_max - np.atleast_1d(ya))
        val = np.maximum(val, 0.0)
        return float(val[0]) if ya.ndim == 0 else val

    def sample(self, rng: np.random.Generator, size: int | None = None):
        b = rng.choice(self.bins, size=size, p=self.masses)
        u = rng.random(size)
        return self.edges[b] + u * self.widths[b]

    def wasserstein1(self, other: "PiecewiseDensity") -> float:
        """W1 distance; exact because both CDFs are linear on the merged edge set."""
        grid = np.union1d(self.edges, other.edges)
        d = self.cdf(grid) - other.cdf(grid)
        return float(_abs_linear_integral(grid, d))


def _abs_linear_integral(x: np.ndarray, d: np.ndarray) -> float:
    """Integral of |g| where g is linear between knots ``x`` with values ``d``."""
    a, b, h = d[:-1], d[1:], np.diff(x)
    same = a * b >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = h * (a * a + b * b) / (2.0 * (np.abs(a) + np.abs(b)))
    seg = np.where(same, h * (np.abs(a) + np.abs(b)) / 2.0, np.nan_to_num(cross))
    return float(seg.sum())


def crps_quadratic(edges: np.ndarray) -> np.ndarray:
    """Matrix ``A`` with ``integral of F(z)^2 dz == m @ A @ m``."""
    edges = np.asarray(edges, dtype=float)
    w = np.diff(edges)
    hi = edges[-1]
    tail = hi - edges[1:]
    off = w / 2.0 + tail  # integral of the ramp of bin c
    idx = np.arange(w.size)
    A = off[np.maximum(idx[:, None], idx[None, :])]
    A[idx, idx] = w / 3.0 + tail
    return A


def crps_linear(edges: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Rows ``D`` with ``integral_y^hi F(z) dz == D @ m`` for each outcome."""
    edges = np.asarray(edges, dtype=float)
    y = np.asarray(y, dtype=float)[:, None]
    lo, hi_b = edges[None, :-1], edges[None, 1:]
    w = hi_b - lo
    top = edges[-1]
    below = w / 2.0 + top - hi_b
    above = top - y
    inside = (w * w - (y - lo) ** 2) / (2.0 * w) + top - hi_b
    return np.where(y <= lo, below, np.where(y >= hi_b, above, inside))


def softmax(theta) -> np.ndarray:
    t = np.asarray(theta, dtype=float)
    z = np.exp(t - t.max())
    return z / z.sum()


# module-level operation names
def cdf_eval(p: PiecewiseDensity, y):
    return p.cdf(y)


def quantile_eval(p: PiecewiseDensity, alpha):
    return p.quantile(alpha)


def moment(p: PiecewiseDensity, k: int) -> float:
    return p.moment(k)


def crps(p: PiecewiseDensity, y):
    return p.crps(y)


# ----------------------------------------------------------------------
# payoff vectors
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class PayoffVector:
    labels: tuple
    values: np.ndarray
    bound_B: float = 0.0

    def __post_init__(self):
        labels = tuple(self.labels)
        values = np.array(self.values, dtype=float).reshape(-1)
        if len(labels) != values.size:
            raise ValueError(f"{len(labels)} labels for {values.size} values")
        if self.bound_B < 0:
            raise ValueError("bound_B must be nonnegative")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", _readonly(values))

    @classmethod
    def zeros(cls, labels: Sequence, bound_B: float = 0.0) -> "PayoffVector":
        return cls(tuple(labels), np.zeros(len(labels)), bound_B)

    def __len__(self) -> int:
        return self.values.size

    def check_labels(self, other: "PayoffVector") -> None:
        if self.labels is not other.labels and self.labels != other.labels:
            raise ContractViolation("payoff labels do not match")

    def norm2(self) -> float:
        return float(self.values @ self.values)

    def norm(self) -> float:
        return math.sqrt(self.norm2())

    def block(self, prefix: str) -> np.ndarray:
        """Values whose label is a tuple starting with ``prefix``."""
        mask = [isinstance(l, tuple) and l and l[0] == prefix for l in self.labels]
        return self.values[np.asarray(mask, dtype=bool)]


def inner_product(a: PayoffVector, b: PayoffVector) -> float:
    a.check_labels(b)
    return float(a.values @ b.values)


def norm(a: PayoffVector) -> float:
    return a.norm()


# ----------------------------------------------------------------------
# game state
# ----------------------------------------------------------------------
@dataclass
class StepRecord:
    t: int
    x: Any
    forecast: Any
    outcome: float
    payoff: PayoffVector
    certificate: Any
    inner: float  # realized <avg_{t-1}, payoff_t>
    extra: dict = field(default_factory=dict)


@dataclass
class GameState:
    """Step counter, running average payoff and an append-only step log.

    The running sum is kept with Neumaier compensation so the average stays
    accurate over long runs. ``update_average`` returns a new state that
    shares the (append-only) history list.
    """

    t: int = 0
    avg_payoff: PayoffVector | None = None
    history: list = field(default_factory=list)
    _sum: np.ndarray | None = field(default=None, repr=False)
    _comp: np.ndarray | None = field(default=None, repr=False)

    @property
    def labels(self):
        return None if self.avg_payoff is None else self.avg_payoff.labels


def update_average(state: GameState, payoff: PayoffVector) -> GameState:
    if state.t == 0 or state.avg_payoff is None:
        s = np.array(payoff.values, dtype=float)
        c = np.zeros_like(s)
    else:
        state.avg_payoff.check_labels(payoff)
        s, c = state._sum.copy(), state._comp.copy()
        x = payoff.values
        tot = s + x
        big = np.abs(s) >= np.abs(x)
        c += np.where(big, (s - tot) + x, (x - tot) + s)
        s = tot
    t = state.t + 1
    avg = PayoffVector(payoff.labels, (s + c) / t, payoff.bound_B)
    return GameState(t=t, avg_payoff=avg, history=state.history, _sum=s, _comp=c)
