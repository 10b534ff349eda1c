"""Gradient-based approximate half-space oracle with worst-case certificates.

The forecaster is a softmax-parameterized piecewise density. The adversary
mixes a finite family of components; the inner problem is linear in the
mixture weights, so its optimum sits at a vertex and equals the largest
component value. Descent runs on a smoothed surrogate (logistic indicators,
log-sum-exp over components); certificates always use the true objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import kernels
from .blackwell import Certificate
from .core_types import PayoffVector, PiecewiseDensity, softmax
from .payoffs import PayoffSpec

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class ForecastParams:
    theta: np.ndarray
    edges: np.ndarray

    @property
    def density(self) -> PiecewiseDensity:
        return PiecewiseDensity(self.edges, softmax(self.theta))

    @classmethod
    def from_density(cls, p: PiecewiseDensity, floor: float = 1e-12) -> "ForecastParams":
        th = np.log(np.maximum(p.masses, floor))
        return cls(th - th.max(), p.edges)

    @classmethod
    def uniform(cls, edges) -> "ForecastParams":
        edges = np.asarray(edges, dtype=float)
        return cls(np.zeros(edges.size - 1), edges)


@dataclass(frozen=True)
class AdversaryFamily:
    """Mixture components stored as weighted point sets over shared points.

    ``epsilon`` is the net radius of the union of supports in the outcome
    interval and ``diameter`` the largest component support diameter.
    """

    points: np.ndarray
    comp_ptr: np.ndarray
    comp_idx: np.ndarray
    comp_w: np.ndarray
    y_min: float
    y_max: float

    @property
    def K(self) -> int:
        return self.comp_ptr.size - 1

    @classmethod
    def diracs(cls, points, y_min: float, y_max: float) -> "AdversaryFamily":
        pts = np.asarray(points, dtype=float)
        if np.any(np.diff(pts) <= 0):
            raise ValueError("Dirac points must be strictly increasing")
        K = pts.size
        return cls(pts, np.arange(K + 1), np.arange(K), np.ones(K), float(y_min), float(y_max))

    @classmethod
    def bin_centers(cls, edges) -> "AdversaryFamily":
        """Default family: one Dirac per forecast bin, at the bin centre."""
        e = np.asarray(edges, dtype=float)
        return cls.diracs(0.5 * (e[:-1] + e[1:]), e[0], e[-1])

    @classmethod
    def from_densities(cls, comps: Sequence[PiecewiseDensity]) -> "AdversaryFamily":
        """Non-Dirac components, integrated by 8-point Gauss-Legendre per bin."""
        pts, ptr, idx, w = [], [0], [], []
        for q in comps:
            lo, hi = q.edges[:-1], q.edges[1:]
            nodes = 0.5 * (hi - lo)[:, None] * _GL_NODES[None, :] + 0.5 * (hi + lo)[:, None]
            wts = 0.5 * q.masses[:, None] * _GL_WEIGHTS[None, :]
            keep = wts.ravel() > 0
            start = len(pts)
            pts.extend(nodes.ravel()[keep])
            w.extend(wts.ravel()[keep])
            idx.extend(range(start, len(pts)))
            ptr.append(len(pts))
        pts = np.asarray(pts)
        order = np.argsort(pts, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        return cls(pts[order], np.asarray(ptr), rank[np.asarray(idx)], np.asarray(w),
                   float(min(q.y_min for q in comps)), float(max(q.y_max for q in comps)))

    @property
    def epsilon(self) -> float:
        """Largest distance from a point of the interval to the nearest support point."""
        p = self.points
        gaps = np.diff(p) / 2.0
        ends = [p[0] - self.y_min, self.y_max - p[-1]]
        return float(max([*ends, *(gaps.tolist() or [0.0])]))

    @property
    def diameter(self) -> float:
        d = 0.0
        for k in range(self.K):
            s = self.points[self.comp_idx[self.comp_ptr[k]:self.comp_ptr[k + 1]]]
            d = max(d, float(s.max() - s.min()))
        return d

    def component_matrix(self) -> np.ndarray:
        W = np.zeros((self.K, self.points.size))
        for k in range(self.K):
            sl = slice(self.comp_ptr[k], self.comp_ptr[k + 1])
            np.add.at(W[k], self.comp_idx[sl], self.comp_w[sl])
        return W


@dataclass
class OrcaConfig:
    steps: int = 400
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tau: float = 0.01
    early_stop: float = -1e-6
    backend: str | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


def _avg_values(avg) -> np.ndarray:
    return avg.values if isinstance(avg, PayoffVector) else np.asarray(avg, dtype=float)


def component_values(p: PiecewiseDensity, avg, x, adversary: AdversaryFamily, spec: PayoffSpec, tau=None) -> np.ndarray:
    """``E_{y~q_k}[<avg, pi(x, p, y)>]`` for every component, by direct evaluation."""
    c = _avg_values(avg)
    per_point = spec.values_many(x, p, adversary.points, tau) @ c
    return adversary.component_matrix() @ per_point


def inner_max(theta, avg, x, adversary: AdversaryFamily, spec: PayoffSpec, edges=None):
    """Worst adversary mixture for the forecast ``p_theta``.

    Returns ``(value, k_star, phi_star)``; the maximizing mixture is the
    indicator of the best component (smallest index on ties).
    """
    if isinstance(theta, ForecastParams):
        p = theta.density
    elif isinstance(theta, PiecewiseDensity):
        p = theta
    else:
        p = PiecewiseDensity(edges, softmax(theta))
    vals = component_values(p, avg, x, adversary, spec)
    k = int(np.argmax(vals))
    phi = np.zeros(vals.size)
    phi[k] = 1.0
    return float(vals[k]), k, phi


def compile_problem(avg, x, spec: PayoffSpec, adversary: AdversaryFamily, edges) -> tuple:
    c = _avg_values(avg)
    terms = spec.orca_terms(c, x, np.asarray(edges, dtype=float), adversary.points)
    return kernels.pack(terms, adversary.comp_ptr, adversary.comp_idx, adversary.comp_w)


def lse_temperature(avg, spec: PayoffSpec, tau: float) -> float:
    """Temperature of the log-sum-exp, proportional to the objective scale."""
    scale = float(np.linalg.norm(_avg_values(avg))) * math.sqrt(max(spec.bound_B, 1e-300))
    return tau * max(scale, 1e-300)


def smoothed_objective(theta, avg, x, spec, adversary, edges, tau: float = 0.01, backend: str | None = None):
    """Value and gradient of the smoothed objective in ``theta``."""
    args = compile_problem(avg, x, spec, adversary, edges)
    return kernels.get_backend(backend).smoothed_objective(
        np.asarray(theta, dtype=float), *args, tau, lse_temperature(avg, spec, tau)
    )


@dataclass
class OrcaResult:
    forecast: PiecewiseDensity
    certificate: Certificate
    theta: np.ndarray
    init_bound: float
    iterations: int
    halvings: int = 0


def orca_solve(
    avg,
    x,
    spec: PayoffSpec,
    adversary: AdversaryFamily,
    config: OrcaConfig | None = None,
    edges=None,
    theta0=None,
) -> OrcaResult:
    """Minimize the worst-case inner product over the forecast logits."""
    config = config or OrcaConfig()
    if not spec.smoothable:
        raise ValueError(f"{spec.name} has no smooth surrogate")
    if theta0 is None:
        if edges is None:
            raise ValueError("need edges or an initial ForecastParams")
        theta0 = ForecastParams.uniform(edges)
    if isinstance(theta0, ForecastParams):
        edges, th0 = theta0.edges, np.asarray(theta0.theta, dtype=float)
    else:
        th0 = np.asarray(theta0, dtype=float)
    edges = np.asarray(edges, dtype=float)
    c = _avg_values(avg)
    if not np.any(c):
        p0 = PiecewiseDensity(edges, softmax(th0))
        return OrcaResult(p0, Certificate(0.0, False, {"iterations": 0}), th0, 0.0, 0)
    args = compile_problem(c, x, spec, adversary, edges)
    kb = kernels.get_backend(config.backend)
    theta, _, init, iters, halvings = kb.orca_descent(
        th0, *args, config.tau, lse_temperature(c, spec, config.tau), int(config.steps),
        config.lr, config.beta1, config.beta2, config.eps, config.early_stop,
    )
    theta = np.asarray(theta, dtype=float)
    p = PiecewiseDensity(edges, softmax(theta))
    bound, k, _ = inner_max(p, c, x, adversary, spec)
    cert = Certificate(bound, False, {"iterations": int(iters), "argmax": k, "init": float(init)})
    return OrcaResult(p, cert, theta, float(init), int(iters), int(halvings))


def approximation_gap_audit(theta, avg, x, spec: PayoffSpec, adversary: AdversaryFamily, dense_grid, edges=None, tau: float = 0.01) -> dict:
    """Compare the family optimum with a dense-grid optimum on the smoothed payoff.

    The dense grid is merged with the adversary points, so ``A* >= A*_Q``
    holds by construction and the upper bound follows from the empirical
    Lipschitz constant along the grid.
    """
    if isinstance(theta, ForecastParams):
        p = theta.density
    elif isinstance(theta, PiecewiseDensity):
        p = theta
    else:
        p = PiecewiseDensity(edges, softmax(theta))
    c = _avg_values(avg)
    grid = np.union1d(np.asarray(dense_grid, dtype=float), adversary.points)
    vals = spec.values_many(x, p, grid, tau)
    inner = vals @ c
    A_star = float(inner.max())
    A_Q = float(np.max(component_values(p, c, x, adversary, spec, tau)))
    dv = np.linalg.norm(np.diff(vals, axis=0), axis=1) / np.diff(grid)
    L_hat = float(dv.max()) if dv.size else 0.0
    nrm = float(np.linalg.norm(c))
    bound = (adversary.diameter + adversary.epsilon) * L_hat * nrm
    gap = A_star - A_Q
    return {"A_star": A_star, "A_Q": A_Q, "gap": gap, "bound": bound, "L_hat": L_hat,
            "d": adversary.diameter, "epsilon": adversary.epsilon, "norm": nrm}


class OrcaOracle:
    """Oracle wrapper: warm-starts each solve from the previous forecast.

    With ``warm_from_expert`` set, the start is the expert forecast found in
    the features (``x['experts'][warm_from_expert]``).
    """

    def __init__(self, spec: PayoffSpec, adversary: AdversaryFamily, edges, config: OrcaConfig | None = None, warm_from_expert: int | None = None):
        self.spec = spec
        self.adversary = adversary
        self.edges = np.asarray(edges, dtype=float)
        self.config = config or OrcaConfig()
        self.warm_from_expert = warm_from_expert
        self._prev: ForecastParams | None = None
        self.last: OrcaResult | None = None

    def _start(self, x) -> ForecastParams:
        if self.warm_from_expert is not None and isinstance(x, dict) and x.get("experts"):
            ex = x["experts"][self.warm_from_expert]
            if np.array_equal(ex.edges, self.edges):
                return ForecastParams.from_density(ex)
        if self._prev is not None:
            return self._prev
        return ForecastParams.uniform(self.edges)

    def respond(self, avg, x, rng=None):
        start = self._start(x)
        res = orca_solve(avg, x, self.spec, self.adversary, self.config, theta0=start)
        self._prev = ForecastParams(res.theta - res.theta.max(), self.edges)
        self.last = res
        return res.forecast, res.certificate
