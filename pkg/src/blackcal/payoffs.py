"""Payoff constructions for the calibration notions supported by the engine.

Each ``PayoffSpec`` maps ``(features, forecast, outcome)`` to a
``PayoffVector``. Specs that ORCA can optimize also compile the inner
product ``<c, pi(x, p_theta, y)>`` into an ``OrcaTerms`` bundle so the hot
loop never calls back into Python.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .core_types import (
    ContractViolation,
    PayoffVector,
    PiecewiseDensity,
    crps_linear,
    crps_quadratic,
)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ----------------------------------------------------------------------
# compiled ORCA objective
# ----------------------------------------------------------------------
@dataclass
class OrcaTerms:
    """Inner product against ``c`` as a function of bin masses ``m``.

    For adversary point ``y_p``::

        G_p(m) = m.H.m + L[p].m + c0[p]
                 + sum_a qw[a] * 1{C[p].m <= qlev[a]}
                 + sum_g gate_g(m) * (gV[g].m + gv0[p, g])

    where ``gate`` is the one-hot argmax of ``gU @ m`` (smallest index on ties).
    """

    H: np.ndarray
    L: np.ndarray
    c0: np.ndarray
    C: np.ndarray
    qlev: np.ndarray
    qw: np.ndarray
    gU: np.ndarray
    gV: np.ndarray
    gv0: np.ndarray

    @classmethod
    def empty(cls, n: int, P: int) -> "OrcaTerms":
        return cls(
            H=np.zeros((n, n)),
            L=np.zeros((P, n)),
            c0=np.zeros(P),
            C=np.zeros((P, n)),
            qlev=np.zeros(0),
            qw=np.zeros(0),
            gU=np.zeros((0, n)),
            gV=np.zeros((0, n)),
            gv0=np.zeros((P, 0)),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.L.shape

    def scaled(self, s: float) -> "OrcaTerms":
        return OrcaTerms(
            self.H * s, self.L * s, self.c0 * s, self.C, self.qlev, self.qw * s,
            self.gU, self.gV * s, self.gv0 * s,
        )

    def __add__(self, other: "OrcaTerms") -> "OrcaTerms":
        if self.shape != other.shape:
            raise ValueError("terms built for different point sets")
        if self.qlev.size and other.qlev.size and not np.array_equal(self.C, other.C):
            raise ValueError("quantile blocks disagree on the CDF rows")
        if self.gU.shape[0] and other.gU.shape[0]:
            raise ValueError("at most one gated block is supported")
        C = self.C if self.qlev.size else other.C
        lev = np.concatenate([self.qlev, other.qlev])
        w = np.concatenate([self.qw, other.qw])
        uniq, inv = np.unique(lev, return_inverse=True)
        qw = np.zeros(uniq.size)
        np.add.at(qw, inv, w)
        g = self if self.gU.shape[0] else other
        return OrcaTerms(
            self.H + other.H, self.L + other.L, self.c0 + other.c0, C, uniq, qw,
            g.gU, g.gV, g.gv0,
        )

    def evaluate(self, m: np.ndarray, tau: float | None = None) -> np.ndarray:
        """Per-point values; ``tau`` switches indicators to logistic surrogates."""
        m = np.asarray(m, dtype=float)
        val = m @ self.H @ m + self.L @ m + self.c0
        if self.qlev.size:
            F = self.C @ m
            if tau is None:
                ind = F[:, None] <= self.qlev[None, :]
            else:
                ind = _sigmoid((self.qlev[None, :] - F[:, None]) / tau)
            val = val + ind @ self.qw
        if self.gU.shape[0]:
            s = self.gU @ m
            if tau is None:
                gate = np.zeros_like(s)
                gate[int(np.argmax(s))] = 1.0
            else:
                z = np.exp((s - s.max()) / tau)
                gate = z / z.sum()
            val = val + (self.gv0 + (self.gV @ m)[None, :]) @ gate
        return val


# ----------------------------------------------------------------------
# base class
# ----------------------------------------------------------------------
class PayoffSpec:
    """Base payoff specification.

    Subclasses implement ``values_many``. ``semi_consistent`` marks specs
    whose expectation under the forecast is only nonpositive.
    """

    name: str = "payoff"
    labels: tuple = ()
    bound_B: float = 0.0
    smoothable: bool = False
    semi_consistent: bool = False

    def __len__(self) -> int:
        return len(self.labels)

    def values_many(self, x, p, ys, tau: float | None = None) -> np.ndarray:
        raise NotImplementedError

    def values(self, x, p, y, tau: float | None = None) -> np.ndarray:
        return self.values_many(x, p, np.atleast_1d(np.asarray(y, dtype=float)), tau)[0]

    def evaluate(self, x, p, y) -> PayoffVector:
        return PayoffVector(self.labels, self.values(x, p, y), self.bound_B)

    def evaluate_many(self, x, p, ys, tau: float | None = None) -> np.ndarray:
        return self.values_many(x, p, np.asarray(ys, dtype=float), tau)

    def orca_terms(self, c: np.ndarray, x, edges: np.ndarray, points: np.ndarray) -> OrcaTerms:
        raise NotImplementedError(f"{self.name} has no compiled ORCA objective")

    def blocks(self) -> list[tuple[str, slice, float]]:
        return [(self.name, slice(0, len(self.labels)), self.bound_B)]

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, dim={len(self.labels)}, B={self.bound_B:.4g})"


def _rescale(y, lo: float, hi: float):
    return (np.asarray(y, dtype=float) - lo) / (hi - lo)


# ----------------------------------------------------------------------
# binary calibration
# ----------------------------------------------------------------------
def _prob_of_one(p) -> float:
    if isinstance(p, PiecewiseDensity):
        return 1.0 - p.cdf(0.5 * (p.y_min + p.y_max))
    return float(p)


class BinaryPayoff(PayoffSpec):
    def __init__(self, grid: Sequence[float], bandwidth: float, name: str = "binary"):
        g = np.asarray(grid, dtype=float)
        if g.size == 0 or np.any(g < 0) or np.any(g > 1):
            raise ValueError("grid must be a nonempty subset of [0, 1]")
        if bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        self.name = name
        self.grid = g
        self.bandwidth = float(bandwidth)
        self.labels = tuple((name, float(v)) for v in g)
        # sum of squared kernel weights is convex between breakpoints
        cand = np.concatenate([g, g - bandwidth, g + bandwidth, [0.0, 1.0]])
        cand = cand[(cand >= 0) & (cand <= 1)]
        k = self.kernel(cand)
        self.bound_B = float(np.max(np.sum(k * k, axis=1)))

    def kernel(self, pt) -> np.ndarray:
        pt = np.atleast_1d(np.asarray(pt, dtype=float))
        return np.maximum(0.0, 1.0 - np.abs(pt[:, None] - self.grid[None, :]) / self.bandwidth)

    def values_many(self, x, p, ys, tau=None):
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        if np.any((ys != 0) & (ys != 1)):
            raise ValueError("binary payoff needs outcomes in {0, 1}")
        pt = _prob_of_one(p)
        k = self.kernel(pt)[0]
        return (ys - pt)[:, None] * k[None, :]


def binary_payoff(grid, bandwidth: float | None = None) -> BinaryPayoff:
    g = np.asarray(grid, dtype=float)
    if bandwidth is None:
        bandwidth = float(np.min(np.diff(np.sort(g)))) if g.size > 1 else 1.0
    return BinaryPayoff(g, bandwidth)


# ----------------------------------------------------------------------
# quantile calibration
# ----------------------------------------------------------------------
DEFAULT_LEVELS = tuple(np.round(np.arange(1, 100) / 100.0, 2))


@dataclass(frozen=True)
class DiscreteForecast:
    """Finitely supported forecast; its CDF has jumps, so the linearized payoff applies."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        w = np.asarray(self.probs, dtype=float)
        order = np.argsort(a)
        object.__setattr__(self, "atoms", a[order])
        object.__setattr__(self, "probs", w[order] / w.sum())

    def cdf(self, y):
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(self.atoms, np.asarray(y, dtype=float), side="right")
        return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)

    def cdf_range(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.probs)))

    def sample(self, rng, size=None):
        return rng.choice(self.atoms, size=size, p=self.probs)


def linearized_indicator(pit: np.ndarray, levels: np.ndarray, cdf_range: np.ndarray) -> np.ndarray:
    """``lam*1{F<=a-} + (1-lam)*1{F<=a+}`` for every (pit, level) pair."""
    r = np.unique(np.clip(cdf_range, 0.0, 1.0))
    if r[0] > 0:
        r = np.concatenate(([0.0], r))
    hi_idx = np.searchsorted(r, levels, side="left")
    a_plus = r[np.minimum(hi_idx, r.size - 1)]
    lo_idx = np.searchsorted(r, levels, side="right") - 1
    a_minus = r[np.maximum(lo_idx, 0)]
    gap = a_plus - a_minus
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(gap > 0, (a_plus - levels) / np.where(gap > 0, gap, 1.0), 0.0)
    pit = np.clip(np.asarray(pit, dtype=float), 0.0, 1.0)[:, None]
    return lam * (pit <= a_minus) + (1.0 - lam) * (pit <= a_plus)


class QuantilePayoff(PayoffSpec):
    smoothable = True

    def __init__(self, levels: Sequence[float] = DEFAULT_LEVELS, name: str = "quantile"):
        lv = np.asarray(levels, dtype=float)
        if lv.size == 0 or np.any(lv <= 0) or np.any(lv >= 1):
            raise ValueError("quantile levels must lie in (0, 1)")
        if np.any(np.diff(lv) <= 0):
            raise ValueError("quantile levels must be strictly increasing")
        self.name = name
        self.levels = lv
        self.labels = tuple((name, float(a)) for a in lv)
        self.bound_B = float(np.sum(np.maximum(lv, 1 - lv) ** 2))

    def pit(self, p, ys) -> np.ndarray:
        return np.atleast_1d(p.cdf(np.asarray(ys, dtype=float)))

    def values_many(self, x, p, ys, tau=None):
        F = self.pit(p, ys)
        if hasattr(p, "cdf_range"):
            ind = linearized_indicator(F, self.levels, p.cdf_range())
        elif tau is None:
            ind = F[:, None] <= self.levels[None, :]
        else:
            ind = _sigmoid((self.levels[None, :] - F[:, None]) / tau)
        return ind - self.levels[None, :]

    def orca_terms(self, c, x, edges, points):
        n, P = len(edges) - 1, len(points)
        t = OrcaTerms.empty(n, P)
        probe = PiecewiseDensity(edges, np.full(n, 1.0 / n))
        t.C = probe.cdf_weights(points)
        t.qlev = self.levels.copy()
        t.qw = np.asarray(c, dtype=float).copy()
        t.c0 = np.full(P, -float(np.dot(c, self.levels)))
        return t


def quantile_payoff(levels: Sequence[float] = DEFAULT_LEVELS) -> QuantilePayoff:
    return QuantilePayoff(levels)


# ----------------------------------------------------------------------
# moment matching
# ----------------------------------------------------------------------
class MomentPayoff(PayoffSpec):
    """``E_p[u^k] - u^k`` on outcomes rescaled to ``u in [0, 1]``."""

    smoothable = True

    def __init__(self, orders: Sequence[int] = (1, 2), y_min: float = 0.0, y_max: float = 1.0, name: str = "moment"):
        ords = [int(k) for k in orders]
        if not ords or any(k < 1 for k in ords):
            raise ValueError("moment orders must be positive integers")
        if not y_max > y_min:
            raise ValueError("need y_max > y_min")
        self.name = name
        self.orders = tuple(ords)
        self.y_min, self.y_max = float(y_min), float(y_max)
        self.labels = tuple((name, k) for k in ords)
        self.bound_B = float(len(ords))

    def _scaled_edges(self, p: PiecewiseDensity) -> np.ndarray:
        return np.clip(_rescale(p.edges, self.y_min, self.y_max), 0.0, 1.0)

    def moment_rows(self, edges: np.ndarray) -> np.ndarray:
        e = np.clip(_rescale(edges, self.y_min, self.y_max), 0.0, 1.0)
        lo, hi = e[:-1], e[1:]
        return np.stack([(hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo)) for k in self.orders])

    def values_many(self, x, p, ys, tau=None):
        u = np.clip(_rescale(np.atleast_1d(ys), self.y_min, self.y_max), 0.0, 1.0)
        mom = self.moment_rows(p.edges) @ p.masses
        return mom[None, :] - np.stack([u ** k for k in self.orders], axis=1)

    def orca_terms(self, c, x, edges, points):
        n, P = len(edges) - 1, len(points)
        t = OrcaTerms.empty(n, P)
        c = np.asarray(c, dtype=float)
        t.L[:] = (c @ self.moment_rows(edges))[None, :]
        u = np.clip(_rescale(points, self.y_min, self.y_max), 0.0, 1.0)
        t.c0 = -sum(ck * u ** k for ck, k in zip(c, self.orders))
        return t


def moment_payoff(orders: Sequence[int] = (1, 2), scale: tuple[float, float] = (0.0, 1.0)) -> MomentPayoff:
    return MomentPayoff(orders, scale[0], scale[1])


# ----------------------------------------------------------------------
# decision calibration
# ----------------------------------------------------------------------
class DecisionPayoff(PayoffSpec):
    """Per-action or swap-gated excess utility.

    ``utility(action, y_array, x)`` must be vectorized over ``y_array``.
    Expectations use 32-point Gauss-Legendre per bin, exact for utilities
    polynomial within bins.
    """

    smoothable = True

    def __init__(
        self,
        actions: Sequence[Any],
        utility: Callable,
        swap: bool = False,
        y_min: float = 0.0,
        y_max: float = 1.0,
        utility_range: Sequence[float] | None = None,
        name: str = "decision",
    ):
        if len(actions) == 0:
            raise ValueError("empty action set")
        self.name = name
        self.actions = list(actions)
        self.utility = utility
        self.swap = bool(swap)
        self.y_min, self.y_max = float(y_min), float(y_max)
        A = len(self.actions)
        if self.swap:
            self.labels = tuple((name, i, j) for j in range(A) for i in range(A))
        else:
            self.labels = tuple((name, i) for i in range(A))
        if utility_range is None:
            ys = np.linspace(self.y_min, self.y_max, 4001)
            u = np.stack([np.asarray(utility(a, ys, None), dtype=float) for a in self.actions])
            utility_range = u.max(axis=1) - u.min(axis=1)
        self.utility_range = np.asarray(utility_range, dtype=float)
        self.bound_B = float(np.sum(self.utility_range ** 2))

    def _u(self, ys, x) -> np.ndarray:
        return np.stack([np.asarray(self.utility(a, ys, x), dtype=float) * np.ones_like(ys) for a in self.actions])

    def bin_means(self, edges: np.ndarray, x) -> np.ndarray:
        """``(A, bins)`` average utility of each action over each bin."""
        lo, hi = edges[:-1], edges[1:]
        nodes = 0.5 * (hi - lo)[:, None] * _GL_NODES[None, :] + 0.5 * (hi + lo)[:, None]
        u = self._u(nodes.ravel(), x).reshape(len(self.actions), lo.size, _GL_NODES.size)
        return 0.5 * u @ _GL_WEIGHTS

    def expected_utility(self, p: PiecewiseDensity, x) -> np.ndarray:
        return self.bin_means(p.edges, x) @ p.masses

    def best_action(self, p: PiecewiseDensity, x) -> int:
        return int(np.argmax(self.expected_utility(p, x)))

    def values_many(self, x, p, ys, tau=None):
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        eu = self.expected_utility(p, x)
        diff = eu[:, None] - self._u(ys, x)  # (A, n_y)
        if not self.swap:
            return diff.T
        A = len(self.actions)
        if tau is None:
            gate = np.zeros(A)
            gate[int(np.argmax(eu))] = 1.0
        else:
            z = np.exp((eu - eu.max()) / tau)
            gate = z / z.sum()
        # label (i, j) at flat index j*A + i
        return (gate[:, None, None] * diff[None, :, :]).reshape(A * A, ys.size).T

    def orca_terms(self, c, x, edges, points):
        n, P = len(edges) - 1, len(points)
        t = OrcaTerms.empty(n, P)
        Ubar = self.bin_means(np.asarray(edges, dtype=float), x)  # (A, n)
        up = self._u(np.asarray(points, dtype=float), x)  # (A, P)
        A = len(self.actions)
        c = np.asarray(c, dtype=float)
        if not self.swap:
            t.L[:] = (c @ Ubar)[None, :]
            t.c0 = -(c @ up)
            return t
        cm = c.reshape(A, A)  # row j = gate action, column i = action
        t.gU = Ubar.copy()
        t.gV = cm @ Ubar
        t.gv0 = -(cm @ up).T
        return t


def decision_payoff(actions, utility, swap: bool = False, **kw) -> DecisionPayoff:
    return DecisionPayoff(actions, utility, swap=swap, **kw)


# ----------------------------------------------------------------------
# distribution calibration on a finite forecast grid
# ----------------------------------------------------------------------
class DistributionPayoff(PayoffSpec):
    def __init__(
        self,
        forecast_grid: Sequence[PiecewiseDensity],
        cdf_grid: Sequence[float],
        bandwidth: float | None = None,
        name: str = "distribution",
    ):
        grid = list(forecast_grid)
        z = np.asarray(cdf_grid, dtype=float)
        if not grid or z.size == 0:
            raise ValueError("forecast and cdf grids must be nonempty")
        if len(grid) > 50 or z.size > 50:
            raise ValueError("distribution payoff is limited to 50 x 50 grids")
        self.name = name
        self.forecast_grid = grid
        self.cdf_grid = z
        if bandwidth is None:
            d = [grid[i].wasserstein1(grid[j]) for i in range(len(grid)) for j in range(i + 1, len(grid))]
            bandwidth = float(np.median(d)) if d else 1.0
        if bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        self.bandwidth = float(bandwidth)
        self.labels = tuple((name, i, float(zz)) for i in range(len(grid)) for zz in z)
        self.bound_B = float(len(grid) * z.size)

    def weights(self, p: PiecewiseDensity) -> np.ndarray:
        d = np.array([p.wasserstein1(g) for g in self.forecast_grid])
        return np.maximum(0.0, 1.0 - d / self.bandwidth)

    def values_many(self, x, p, ys, tau=None):
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        w = self.weights(p)
        zc = np.clip(self.cdf_grid, p.y_min, p.y_max)
        Fz = np.atleast_1d(p.cdf(zc))
        diff = Fz[None, :] - (ys[:, None] <= self.cdf_grid[None, :])
        return (w[None, :, None] * diff[:, None, :]).reshape(ys.size, -1)


def distribution_payoff(forecast_grid, cdf_grid, bandwidth: float | None = None) -> DistributionPayoff:
    return DistributionPayoff(forecast_grid, cdf_grid, bandwidth)


# ----------------------------------------------------------------------
# no-regret against experts
# ----------------------------------------------------------------------
def _experts(x) -> list:
    if x is None:
        raise ContractViolation("regret payoff needs expert forecasts in the features")
    ex = x.get("experts") if isinstance(x, dict) else x
    if ex is None:
        raise ContractViolation("regret payoff needs expert forecasts in the features")
    return list(ex)


class RegretPayoff(PayoffSpec):
    """Excess loss of the forecast over each expert, loss scaled into [0, 1]."""

    smoothable = True
    semi_consistent = True

    def __init__(self, num_experts: int, loss: str = "crps", y_min: float = 0.0, y_max: float = 1.0, name: str | None = None):
        if loss not in ("crps", "mse"):
            raise ValueError("loss must be 'crps' or 'mse'")
        if num_experts < 1:
            raise ValueError("need at least one expert")
        self.loss = loss
        self.name = name or f"regret_{loss}"
        self.K = int(num_experts)
        self.y_min, self.y_max = float(y_min), float(y_max)
        self.labels = tuple((self.name, i) for i in range(self.K))
        self.bound_B = float(self.K)

    @property
    def width(self) -> float:
        return self.y_max - self.y_min

    def loss_many(self, p: PiecewiseDensity, ys) -> np.ndarray:
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        if self.loss == "crps":
            return np.atleast_1d(p.crps(ys)) / self.width
        mean = _rescale(p.mean, self.y_min, self.y_max)
        return (mean - _rescale(ys, self.y_min, self.y_max)) ** 2

    def values_many(self, x, p, ys, tau=None):
        ex = _experts(x)
        if len(ex) != self.K:
            raise ContractViolation(f"expected {self.K} expert forecasts, got {len(ex)}")
        own = self.loss_many(p, ys)
        return np.stack([own - self.loss_many(e, ys) for e in ex], axis=1)

    def orca_terms(self, c, x, edges, points):
        ex = _experts(x)
        edges = np.asarray(edges, dtype=float)
        points = np.asarray(points, dtype=float)
        n, P = edges.size - 1, points.size
        t = OrcaTerms.empty(n, P)
        c = np.asarray(c, dtype=float)
        s = float(c.sum())
        expert_part = sum(ci * self.loss_many(e, points) for ci, e in zip(c, ex))
        if self.loss == "crps":
            W = self.width
            t.H = s * crps_quadratic(edges) / W
            t.L = -2.0 * s * crps_linear(edges, points) / W
            t.c0 = s * (edges[-1] - points) / W - expert_part
        else:
            mu = _rescale(0.5 * (edges[:-1] + edges[1:]), self.y_min, self.y_max)
            u = _rescale(points, self.y_min, self.y_max)
            t.H = s * np.outer(mu, mu)
            t.L = -2.0 * s * u[:, None] * mu[None, :]
            t.c0 = s * u * u - expert_part
        return t


def regret_payoff(num_experts: int, loss: str = "crps", y_min: float = 0.0, y_max: float = 1.0) -> RegretPayoff:
    return RegretPayoff(num_experts, loss, y_min, y_max)


# ----------------------------------------------------------------------
# combination
# ----------------------------------------------------------------------
class CombinedPayoff(PayoffSpec):
    """Direct sum of payoffs.

    ``normalized`` divides block i by sqrt(B_i), so each block has squared
    norm at most 1, the total bound is the block count, and
    ``||combined||^2 == sum_i ||block_i||^2 / B_i``.
    """

    def __init__(self, specs: Sequence[PayoffSpec], mode: str = "concat"):
        specs = list(specs)
        if not specs:
            raise ValueError("need at least one payoff")
        if mode not in ("concat", "normalized"):
            raise ValueError("mode must be 'concat' or 'normalized'")
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ContractViolation(f"duplicate block names {names}")
        labels = tuple(l for s in specs for l in s.labels)
        if len(set(labels)) != len(labels):
            raise ContractViolation("duplicate labels across blocks")
        self.specs = specs
        self.mode = mode
        self.name = "+".join(names)
        self.labels = labels
        self.smoothable = all(s.smoothable for s in specs)
        self.semi_consistent = any(s.semi_consistent for s in specs)
        if mode == "concat":
            self.scales = [1.0] * len(specs)
            self.bound_B = float(sum(s.bound_B for s in specs))
        else:
            self.scales = [1.0 / math.sqrt(s.bound_B) if s.bound_B > 0 else 1.0 for s in specs]
            self.bound_B = float(len(specs))
        self._slices = []
        start = 0
        for s in specs:
            self._slices.append(slice(start, start + len(s.labels)))
            start += len(s.labels)

    def blocks(self):
        return [(s.name, sl, s.bound_B) for s, sl in zip(self.specs, self._slices)]

    def values_many(self, x, p, ys, tau=None):
        return np.concatenate(
            [sc * s.values_many(x, p, ys, tau) for s, sc in zip(self.specs, self.scales)], axis=1
        )

    def raw_block(self, values: np.ndarray, i: int) -> np.ndarray:
        """Undo the block scaling for block ``i``."""
        return np.asarray(values)[..., self._slices[i]] / self.scales[i]

    def orca_terms(self, c, x, edges, points):
        c = np.asarray(c, dtype=float)
        total = None
        for s, sl, sc in zip(self.specs, self._slices, self.scales):
            t = s.orca_terms(c[sl] * sc, x, edges, points)
            total = t if total is None else total + t
        return total


def combine(specs: Sequence[PayoffSpec], mode: str = "concat") -> PayoffSpec:
    specs = list(specs)
    if len(specs) == 1 and mode == "concat":
        return specs[0]
    return CombinedPayoff(specs, mode)


def block_norms(spec: PayoffSpec, values: np.ndarray) -> dict[str, float]:
    """Squared norm of each block, in the block's own (unscaled) units."""
    out = {}
    if isinstance(spec, CombinedPayoff):
        for i, (name, sl, _) in enumerate(spec.blocks()):
            v = spec.raw_block(values, i)
            out[name] = float(v @ v)
    else:
        v = np.asarray(values)
        out[spec.name] = float(v @ v)
    return out


# ----------------------------------------------------------------------
# condition audits
# ----------------------------------------------------------------------
@dataclass
class AuditResult:
    name: str
    passed: bool
    worst: float
    detail: dict = field(default_factory=dict)


def audit_boundedness(spec: PayoffSpec, draw: Callable, n: int, rng: np.random.Generator) -> AuditResult:
    """``draw(rng) -> (x, p, ys)``; checks ``||pi||^2 <= B`` on every sample."""
    worst = 0.0
    count = 0
    while count < n:
        x, p, ys = draw(rng)
        v = spec.values_many(x, p, ys)
        worst = max(worst, float(np.max(np.sum(v * v, axis=1))))
        count += len(ys)
    return AuditResult("boundedness", worst <= spec.bound_B * (1 + 1e-12), worst, {"B": spec.bound_B, "samples": count})


def audit_consistency(
    spec: PayoffSpec,
    draw_forecast: Callable,
    n_forecasts: int,
    n_samples: int,
    rng: np.random.Generator,
    sigmas: float = 4.0,
    chunk: int = 20000,
    confirm_samples: int = 0,
) -> AuditResult:
    """Monte Carlo check that ``E_{y~p}[pi]`` is 0 (or <= 0 for semi-consistent specs).

    ``draw_forecast(rng) -> (x, p)`` where ``p`` has a ``sample`` method.
    The reported statistic is the largest standardized deviation. With
    ``confirm_samples > 0`` a forecast that exceeds ``sigmas`` is re-tested
    on that many fresh outcomes and the fresh statistic is kept; a real bias
    only grows with the larger sample while a chance excursion does not repeat.
    """

    def stat(x, p, n):
        s1 = np.zeros(len(spec.labels))
        s2 = np.zeros(len(spec.labels))
        done = 0
        while done < n:
            k = min(chunk, n - done)
            v = spec.values_many(x, p, p.sample(rng, k))
            s1 += v.sum(axis=0)
            s2 += (v * v).sum(axis=0)
            done += k
        mean = s1 / n
        var = np.maximum(s2 / n - mean * mean, 0.0)
        se = np.sqrt(var / n)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, mean / np.where(se > 0, se, 1.0), np.where(np.abs(mean) > 1e-12, np.inf, 0.0))
        return float(np.max(z if spec.semi_consistent else np.abs(z)))

    worst = -np.inf
    alarms = []
    for _ in range(n_forecasts):
        x, p = draw_forecast(rng)
        z = stat(x, p, n_samples)
        if z > sigmas and confirm_samples > 0:
            z2 = stat(x, p, confirm_samples)
            alarms.append((z, z2))
            z = z2
        worst = max(worst, z)
    return AuditResult("consistency", worst <= sigmas, worst, {"sigmas": sigmas, "rechecked": alarms})


def audit_continuity(
    spec: PayoffSpec,
    draw: Callable,
    n: int,
    rng: np.random.Generator,
    h: float = 1e-4,
    tau: float | None = None,
) -> AuditResult:
    """Finite-difference continuity in the forecast masses.

    Measures ``||pi(p') - pi(p)|| / W1(p, p')`` for mass perturbations of size
    ``h`` and ``h/10``; a jump would make the ratio grow about tenfold. For
    specs with indicators the logistic surrogate at temperature ``tau`` is
    audited.
    """
    ratios = {h: 0.0, h / 10: 0.0}
    for _ in range(n):
        x, p, ys = draw(rng)
        base = spec.values_many(x, p, ys, tau)
        direction = rng.standard_normal(p.bins)
        direction -= direction.mean()
        for step in ratios:
            m = p.masses + step * direction / np.abs(direction).sum()
            if np.any(m < 0):
                m = np.maximum(m, 0.0)
            q = PiecewiseDensity.from_weights(p.edges, m)
            d = p.wasserstein1(q)
            if d == 0:
                continue
            v = spec.values_many(x, q, ys, tau)
            ratios[step] = max(ratios[step], float(np.max(np.linalg.norm(v - base, axis=1))) / d)
    L_coarse, L_fine = ratios[h], ratios[h / 10]
    ok = np.isfinite(L_coarse) and L_fine <= 2.0 * L_coarse + 1e-9
    return AuditResult("continuity", bool(ok), L_fine, {"L_h": L_coarse, "L_h/10": L_fine})
