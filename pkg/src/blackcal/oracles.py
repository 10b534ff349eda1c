"""Exact half-space oracles for specific calibration notions.

* adaptive conformal inference (randomized mixing and interpolated root),
* quantile calibration with a two-atom step quantile function,
* moment calibration by a fixed point on a triangulated grid,
* distribution calibration on a triangulated simplex (small instances).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .blackwell import Certificate
from .core_types import ContractViolation, PayoffVector, PiecewiseDensity
from .payoffs import PayoffSpec, QuantilePayoff

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


# ======================================================================
# adaptive conformal inference
# ======================================================================
def aci_coverage(levels, y, base: PiecewiseDensity) -> np.ndarray:
    """``e(a) = 1{y <= Q(a)}`` with the conventions ``e(0) = 0`` and ``e(1) = 1``.

    A scalar ``y`` gives one row over the levels; an array gives (len(y), len(levels)).
    """
    a = np.atleast_1d(np.asarray(levels, dtype=float))
    ys = np.asarray(y, dtype=float)
    yy = np.atleast_1d(ys)
    inner = (a > 0) & (a < 1)
    e = np.broadcast_to((a >= 1).astype(float), (yy.size, a.size)).copy()
    if np.any(inner):
        e[:, inner] = yy[:, None] <= base.quantile(a[inner])[None, :]
    return e[0] if ys.ndim == 0 else e


@dataclass(frozen=True)
class AciForecast:
    """Mixture over the action grid.

    ``eval_levels[i]`` is the level whose coverage event enters coordinate i:
    the node itself for the randomized oracle, the played root for the
    interpolated one.
    """

    weights: np.ndarray
    eval_levels: np.ndarray
    action: float
    base: PiecewiseDensity

    def covered(self, y: float) -> bool:
        return bool(aci_coverage([self.action], y, self.base)[0])

    @property
    def upper(self) -> float:
        if self.action <= 0:
            return -math.inf
        if self.action >= 1:
            return math.inf
        return float(self.base.quantile(self.action))

    def to_record(self):
        return {"action": self.action, "support": [int(i) for i in np.flatnonzero(self.weights)]}


class AciPayoff(PayoffSpec):
    """``pi_a = p(a) * (e(a) - beta)`` over the action grid."""

    def __init__(self, beta: float = 0.9, M: int = 100, name: str = "aci"):
        if not 0 < beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if M < 1:
            raise ValueError("need M >= 1")
        self.name = name
        self.beta = float(beta)
        self.grid = np.linspace(0.0, 1.0, M + 1)
        self.labels = tuple((name, float(a)) for a in self.grid)
        self.bound_B = max(beta, 1 - beta) ** 2

    def values_many(self, x, f: AciForecast, ys, tau=None):
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        nz = np.flatnonzero(f.weights)
        out = np.zeros((ys.size, self.grid.size))
        e = aci_coverage(f.eval_levels[nz], ys, f.base)
        out[:, nz] = f.weights[nz][None, :] * (e - self.beta)
        return out


def _sign_change(c: np.ndarray) -> int:
    """Index i with c[i], c[i+1] of opposite strict sign (binary search when the ends differ)."""
    lo, hi = 0, c.size - 1
    if np.sign(c[lo]) != np.sign(c[hi]) and c[lo] != 0 and c[hi] != 0:
        s = np.sign(c[lo])
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if np.sign(c[mid]) == s or c[mid] == 0 and s > 0:
                lo = mid
            else:
                hi = mid
        return lo
    for i in range(c.size - 1):
        if c[i] * c[i + 1] < 0:
            return i
    raise ValueError("no sign change")


def aci_randomized(c, grid=None) -> np.ndarray:
    """Mixed action over the grid from the average payoff ``c``.

    All coordinates >= 0: point mass on ``a_0``; all <= 0: on ``a_M``;
    otherwise the endpoints of an adjacent sign change are mixed with
    weights proportional to ``1/|c_i|``.
    """
    c = np.asarray(c, dtype=float)
    w = np.zeros(c.size)
    if np.all(c >= 0):
        w[0] = 1.0
        return w
    if np.all(c <= 0):
        w[-1] = 1.0
        return w
    i = _sign_change(c)
    inv_i, inv_j = 1.0 / abs(c[i]), 1.0 / abs(c[i + 1])
    w[i] = inv_i / (inv_i + inv_j)
    w[i + 1] = inv_j / (inv_i + inv_j)
    return w


def aci_deterministic(c, grid=None, tol: float = 1e-10, max_iter: int = 60) -> float:
    """Root of the linear interpolant of ``c``; 0 if ``c >= 0``, 1 if ``c <= 0``."""
    c = np.asarray(c, dtype=float)
    grid = np.linspace(0.0, 1.0, c.size) if grid is None else np.asarray(grid, dtype=float)
    zero = np.flatnonzero(c == 0)
    if np.all(c > 0):
        return 0.0
    if np.all(c < 0):
        return 1.0
    cross = np.flatnonzero(c[:-1] * c[1:] < 0)
    if zero.size and (not cross.size or zero[0] <= cross[0]):
        return float(grid[zero[0]])
    i = int(cross[0])
    a0, a1 = grid[i], grid[i + 1]
    f = lambda a: c[i] + (c[i + 1] - c[i]) * (a - grid[i]) / (grid[i + 1] - grid[i])
    lo, hi = a0, a1
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (c[i] > 0):
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    # the interpolant is linear on the bracket, so its root is exact
    return float(a0 + (a1 - a0) * c[i] / (c[i] - c[i + 1]))


def _interp_weights(grid: np.ndarray, a: float, c: np.ndarray | None = None) -> np.ndarray:
    w = np.zeros(grid.size)
    i = int(np.clip(np.searchsorted(grid, a, side="right") - 1, 0, grid.size - 2))
    if a >= grid[-1]:
        w[-1] = 1.0
        return w
    if c is not None and c[i] * c[i + 1] < 0:
        # weights that cancel c exactly
        w[i] = -c[i + 1] / (c[i] - c[i + 1])
        w[i + 1] = c[i] / (c[i] - c[i + 1])
        return w
    t = (a - grid[i]) / (grid[i + 1] - grid[i])
    w[i], w[i + 1] = 1.0 - t, t
    return w


def _base_from(x, default: PiecewiseDensity) -> PiecewiseDensity:
    if isinstance(x, PiecewiseDensity):
        return x
    if isinstance(x, dict) and isinstance(x.get("base"), PiecewiseDensity):
        return x["base"]
    return default


class AciOracle:
    """ACI oracle; ``mode`` is ``'deterministic'`` (interpolated root) or ``'randomized'``."""

    def __init__(self, payoff: AciPayoff, mode: str = "deterministic", base: PiecewiseDensity | None = None):
        if mode not in ("deterministic", "randomized"):
            raise ValueError("mode must be 'deterministic' or 'randomized'")
        self.payoff = payoff
        self.mode = mode
        self.base = base or PiecewiseDensity.uniform(0.0, 1.0, 50)

    def respond(self, avg, x, rng):
        c = avg.values if isinstance(avg, PayoffVector) else np.asarray(avg, dtype=float)
        grid = self.payoff.grid
        base = _base_from(x, self.base)
        beta = self.payoff.beta
        if self.mode == "randomized":
            w = aci_randomized(c, grid)
            action = float(rng.choice(grid, p=w))
            f = AciForecast(w, grid.copy(), action, base)
            # coverage is monotone in the level: enumerate threshold patterns
            nz = np.flatnonzero(w)
            contrib = c[nz] * w[nz]
            pats = [(np.arange(nz.size) >= k).astype(float) for k in range(nz.size + 1)]
            # forced coordinates at the grid ends
            vals = []
            for e in pats:
                e = e.copy()
                e[grid[nz] <= 0] = 0.0
                e[grid[nz] >= 1] = 1.0
                vals.append(float(contrib @ (e - beta)))
            return f, Certificate(max(vals), True)
        a = aci_deterministic(c, grid)
        w = _interp_weights(grid, a, c)
        f = AciForecast(w, np.full(grid.size, a), a, base)
        s = float(c @ w)
        if 0 < a < 1:
            bound = max(s * (1 - beta), -s * beta)
        else:
            bound = s * ((1.0 if a >= 1 else 0.0) - beta)
        return f, Certificate(bound, True)


# ======================================================================
# quantile calibration: two-atom step quantile function
# ======================================================================
def quantile_step_value(c, levels, u) -> np.ndarray:
    """Inner product when every in-range outcome has PIT ``u``."""
    c = np.asarray(c, dtype=float)
    lv = np.asarray(levels, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return (u[:, None] <= lv[None, :]).astype(float) @ c - float(c @ lv)


def _step_root(c, levels) -> tuple[float, float, float]:
    """Root ``a'`` of the interpolated average payoff and the integrals on each side."""
    lv = np.concatenate(([0.0], np.asarray(levels, dtype=float), [1.0]))
    cv = np.concatenate(([c[0]], c, [c[-1]]))
    a_root = aci_deterministic(cv, lv)
    # the interpolant is linear between knots, so trapezoids on the knots are exact
    x = np.union1d(lv, [a_root])
    y = np.interp(x, lv, cv)
    left = x <= a_root
    A1 = float(_trapezoid(y[left], x[left]))
    A2 = float(_trapezoid(y[~left | (x == a_root)], x[~left | (x == a_root)]))
    return a_root, A1, A2


def quantile_calibration_oracle(c, edges, levels=None) -> tuple[PiecewiseDensity, float, dict]:
    """Step quantile function ``Q(a) = y_lo`` for ``a <= u`` else ``y_hi``.

    The forecast puts mass ``u`` in the first bin and ``1 - u`` in the last,
    so every outcome in ``[edges[1], edges[-2]]`` has PIT exactly ``u``. The
    candidates are the four step constructions (constant low, constant high,
    split at the root, split by the side integrals) and the PIT value of
    every level; the smallest inner product is played.
    """
    edges = np.asarray(edges, dtype=float)
    c = np.asarray(c, dtype=float)
    levels = np.asarray(levels if levels is not None else np.arange(1, c.size + 1) / (c.size + 1), dtype=float)
    if edges.size < 4:
        raise ValueError("need at least three bins so the outcome range is interior")
    a_root, A1, A2 = _step_root(c, levels)
    named = {"low": 1.0, "high": 0.0, "root": a_root, "integral": a_root if A2 - A1 <= 0 else 1.0 - a_root}
    cands = list(named.values()) + list(levels) + [1.0]
    vals = quantile_step_value(c, levels, cands)
    k = int(np.argmin(vals))
    u = float(cands[k])
    m = np.zeros(edges.size - 1)
    m[0], m[-1] = u, 1.0 - u
    p = PiecewiseDensity(edges, m)
    return p, float(vals[k]), {"u": u, "root": a_root, "A1": A1, "A2": A2}


class QuantileStepOracle:
    """Exact oracle for the quantile payoff on outcomes in ``[edges[1], edges[-2]]``."""

    def __init__(self, payoff: QuantilePayoff, edges):
        self.payoff = payoff
        self.edges = np.asarray(edges, dtype=float)

    def respond(self, avg, x, rng=None):
        c = avg.values if isinstance(avg, PayoffVector) else np.asarray(avg, dtype=float)
        p, bound, info = quantile_calibration_oracle(c, self.edges, self.payoff.levels)
        return p, Certificate(bound, True, info)


# ======================================================================
# fixed points on triangulated grids
# ======================================================================
@dataclass
class Triangulation:
    """Simplicial cells over a polytope ``{z : A z <= b, E z = e}``.

    ``vertices`` (V, d); ``cells`` (n_cells, k) vertex indices in scan order.
    """

    vertices: np.ndarray
    cells: np.ndarray
    A: np.ndarray
    b: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        k = self.cells.shape[1]
        faces = [f for r in range(1, k + 1) for f in itertools.combinations(range(k), r)]
        self.faces = faces
        on = np.abs(self.vertices @ self.A.T - self.b[None, :]) <= 1e-12  # (V, ncons)
        # per face: groups of cells sharing the same active constraint set
        self.groups = []
        for f in faces:
            act = np.all(on[self.cells[:, f]], axis=1)  # (n_cells, ncons)
            for mask in np.unique(act, axis=0):
                sel = np.flatnonzero(np.all(act == mask, axis=1))
                self.groups.append((f, sel, np.flatnonzero(mask)))

    @property
    def diameter(self) -> float:
        """Largest cell diameter."""
        d = 0.0
        V = self.vertices[self.cells]
        for i, j in itertools.combinations(range(self.cells.shape[1]), 2):
            d = max(d, float(np.max(np.linalg.norm(V[:, i] - V[:, j], axis=1))))
        return d

    def locate(self, f: np.ndarray) -> tuple[int, np.ndarray]:
        """First cell containing ``f`` and its barycentric weights."""
        V = self.vertices[self.cells]  # (n, k, d)
        M = np.concatenate([np.transpose(V, (0, 2, 1)), np.ones((V.shape[0], 1, V.shape[1]))], axis=1)
        rhs = np.concatenate([f, [1.0]])
        lam = np.einsum("nij,j->ni", np.linalg.pinv(M), rhs)
        ok = np.all(lam >= -1e-12, axis=1) & np.all(np.abs(np.einsum("nij,nj->ni", M, lam) - rhs) <= 1e-9, axis=1)
        idx = int(np.flatnonzero(ok)[0])
        return idx, np.clip(lam[idx], 0, None) / np.clip(lam[idx], 0, None).sum()


@dataclass
class FixedPoint:
    cell: int
    vertex_ids: np.ndarray
    weights: np.ndarray
    point: np.ndarray
    g: np.ndarray
    residual: float
    face: tuple


def solve_fixed_point(tri: Triangulation, mu: np.ndarray, tol: float = 1e-12) -> FixedPoint:
    """Point ``f`` with ``g(f) = sum_v w_v(f) mu_v`` in the negative normal cone at ``f``.

    Every outcome ``z`` of the polytope then satisfies ``g . (f - z) <= 0``.
    All (cell, face) systems are solved in batch; the first cell in scan
    order with a feasible solution wins, smallest face first.
    """
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)):
        raise ContractViolation("calibration errors must be finite")
    n, k = tri.cells.shape
    d = tri.vertices.shape[1]
    ne = tri.E.shape[0]
    scale = max(1.0, float(np.max(np.abs(mu))) if mu.size else 1.0)
    best = None
    for face, sel, I in tri.groups:
        if best is not None and sel[0] > best[0]:
            continue
        nf, ni = len(face), I.size
        vid = tri.cells[sel][:, face]  # (s, nf)
        mus = mu[vid]  # (s, nf, d)
        Mx = np.zeros((sel.size, 1 + d, nf + ni + ne))
        Mx[:, 0, :nf] = 1.0
        Mx[:, 1:, :nf] = np.transpose(mus, (0, 2, 1))
        if ni:
            Mx[:, 1:, nf:nf + ni] = tri.A[I].T[None]
        if ne:
            Mx[:, 1:, nf + ni:] = tri.E.T[None]
        rhs = np.zeros(1 + d)
        rhs[0] = 1.0
        sol = np.einsum("sij,j->si", np.linalg.pinv(Mx), rhs)
        res = np.linalg.norm(np.einsum("sij,sj->si", Mx, sol) - rhs[None], axis=1)
        lam, nu = sol[:, :nf], sol[:, nf:nf + ni]
        ok = (res <= tol * scale) & np.all(lam >= -tol, axis=1) & np.all(nu >= -tol * scale, axis=1)
        if np.any(ok):
            j = int(np.flatnonzero(ok)[0])
            cell = int(sel[j])
            if best is None or cell < best[0]:
                best = (cell, face, lam[j], vid[j], I, nu[j])
    if best is None:
        raise ContractViolation("no fixed point found; the existence lemma guarantees one")
    cell, face, lam, vid, I, nu = best
    lam = np.clip(lam, 0.0, None)
    lam = lam / lam.sum()
    f = lam @ tri.vertices[vid]
    g = lam @ mu[vid]
    return FixedPoint(cell, vid, lam, f, g, normal_cone_residual(tri, f, g), tuple(face))


def normal_cone_residual(tri: Triangulation, f: np.ndarray, g: np.ndarray) -> float:
    """Distance from ``g`` to the cone ``{-A_I^T nu - E^T c : nu >= 0}`` at ``f``.

    Zero exactly when ``f`` minimizes ``g . z`` over the polytope; in the
    interior it equals ``|g|``.
    """
    act = np.flatnonzero(np.abs(tri.A @ f - tri.b) <= 1e-9)
    G = np.concatenate([-tri.A[act], -tri.E], axis=0) if act.size or tri.E.size else np.zeros((0, f.size))
    if G.shape[0] == 0:
        return float(np.linalg.norm(g))
    from scipy.optimize import nnls

    nn = act.size
    # free multipliers for equalities: split into positive and negative parts
    cols = np.concatenate([G[:nn], tri.E, -tri.E], axis=0).T if tri.E.size else G[:nn].T
    _, r = nnls(cols, g)
    return float(r)


# ----------------------------------------------------------------------
# moment calibration grid
# ----------------------------------------------------------------------
def square_triangulation(M: int) -> Triangulation:
    """``M`` ticks per axis on the unit square, two triangles per cell, row-major."""
    if M < 2:
        raise ValueError("need at least two ticks per axis")
    ticks = np.linspace(0.0, 1.0, M)
    verts = np.array([(a, b) for a in ticks for b in ticks])
    vid = lambda i, j: i * M + j
    cells = []
    for i in range(M - 1):
        for j in range(M - 1):
            cells.append((vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)))
            cells.append((vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)))
    A = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
    b = np.array([0.0, 1.0, 0.0, 1.0])
    return Triangulation(verts, np.array(cells), A, b, np.zeros((0, 2)))


@dataclass(frozen=True)
class GridForecast:
    """Fixed point ``point`` with vertex weights; ``vertex`` is the sampled corner."""

    point: np.ndarray
    vertex_ids: np.ndarray
    weights: np.ndarray
    vertex: np.ndarray
    vertex_coords: np.ndarray
    residual: float = 0.0

    def to_record(self):
        return {"point": [float(v) for v in self.point], "vertices": [int(v) for v in self.vertex_ids],
                "weights": [float(w) for w in self.weights]}


class MomentGridPayoff(PayoffSpec):
    """``pi_v = w_v(f) * ((u, u^2) - f)`` per grid vertex, ``u`` the rescaled outcome."""

    def __init__(self, M: int = 20, y_min: float = 0.0, y_max: float = 1.0, name: str = "moment_grid"):
        self.name = name
        self.tri = square_triangulation(M)
        self.M = M
        self.y_min, self.y_max = float(y_min), float(y_max)
        V = self.tri.vertices.shape[0]
        self.labels = tuple((name, v, comp) for v in range(V) for comp in ("mean", "second"))
        self.bound_B = 2.0

    def values_many(self, x, f: GridForecast, ys, tau=None):
        u = np.clip((np.atleast_1d(np.asarray(ys, dtype=float)) - self.y_min) / (self.y_max - self.y_min), 0, 1)
        psi = np.stack([u, u * u], axis=1)
        out = np.zeros((u.size, len(self.labels)))
        for v, w in zip(f.vertex_ids, f.weights):
            out[:, 2 * v:2 * v + 2] += w * (psi - f.point[None, :])
        return out


@dataclass
class MomentGridState:
    """Per-vertex average calibration error ``mu_T(v)``, shape (V, 2)."""

    mu: np.ndarray

    @classmethod
    def from_average(cls, avg) -> "MomentGridState":
        v = avg.values if isinstance(avg, PayoffVector) else np.asarray(avg, dtype=float)
        return cls(v.reshape(-1, 2))


def moment_fixed_point_oracle(state: MomentGridState, tri: Triangulation) -> FixedPoint:
    """Fixed point of ``rho(v) = v + mu(v)`` composed with the projection onto the square.

    ``f`` maximizes ``g . z`` over the square, ``g = sum_v w_v(f) mu(v)``;
    in the interior this is ``g = 0``.
    """
    fp = solve_fixed_point(tri, -state.mu)
    fp.g = -fp.g
    return fp


def _quad_max(g1: float, g2: float) -> float:
    """max over u in [0, 1] of g1*u + g2*u^2."""
    vals = [0.0, g1 + g2]
    if g2 < 0:
        u = -g1 / (2 * g2)
        if 0 < u < 1:
            vals.append(g1 * u + g2 * u * u)
    return max(vals)


class MomentGridOracle:
    """Fixed-point oracle; ``quasi_random`` samples the played corner by weight."""

    def __init__(self, payoff: MomentGridPayoff, quasi_random: bool = True):
        self.payoff = payoff
        self.quasi_random = quasi_random

    def respond(self, avg, x, rng):
        fp = moment_fixed_point_oracle(MomentGridState.from_average(avg), self.payoff.tri)
        if self.quasi_random:
            j = int(rng.choice(fp.vertex_ids.size, p=fp.weights))
        else:
            j = int(np.argmax(fp.weights))
        coords = self.payoff.tri.vertices[fp.vertex_ids]
        f = GridForecast(fp.point, fp.vertex_ids, fp.weights, coords[j] if self.quasi_random else fp.point, coords, fp.residual)
        bound = _quad_max(fp.g[0], fp.g[1]) - float(fp.g @ fp.point)
        return f, Certificate(bound, True, {"residual": fp.residual, "cell": fp.cell})


# ----------------------------------------------------------------------
# distribution calibration grid
# ----------------------------------------------------------------------
MAX_GRID_CELLS = 10_000


def simplex_triangulation(N: int, M: int) -> Triangulation:
    """Kuhn triangulation of the pmf simplex in cumulative coordinates.

    Cumulative sums take values in ``{0, 1/(M-1), ..., 1}``.
    """
    if N < 2 or M < 2:
        raise ValueError("need N >= 2 and M >= 2")
    if M ** N > MAX_GRID_CELLS:
        raise ValueError(f"instance too large: M^N = {M ** N} exceeds {MAX_GRID_CELLS}")
    D = N - 1
    h = M - 1
    index: dict[tuple, int] = {}
    verts = []

    def vid(S):
        S = tuple(S)
        if S not in index:
            index[S] = len(verts)
            s = np.asarray(S, dtype=float) / h
            verts.append(np.diff(np.concatenate(([0.0], s, [1.0]))))
        return index[S]

    cells = []
    for base in itertools.product(range(h), repeat=D):
        for perm in itertools.permutations(range(D)):
            pts = [np.array(base)]
            for ax in perm:
                nxt = pts[-1].copy()
                nxt[ax] += 1
                pts.append(nxt)
            if all(np.all(np.diff(p) >= 0) for p in pts):
                cells.append([vid(p) for p in pts])
    if D == 1:
        cells = [[vid((i,)), vid((i + 1,))] for i in range(h)]
    V = np.array(verts)
    A = -np.eye(N)
    b = np.zeros(N)
    E = np.ones((1, N))
    return Triangulation(V, np.array(cells), A, b, E)


class DistributionGridPayoff(PayoffSpec):
    """``pi_v = w_v(f) * (onehot(y) - f)`` per vertex; outcomes are class indices."""

    def __init__(self, N: int, M: int, name: str = "dist_grid"):
        self.name = name
        self.N, self.M = N, M
        self.tri = simplex_triangulation(N, M)
        V = self.tri.vertices.shape[0]
        self.labels = tuple((name, v, j) for v in range(V) for j in range(N))
        self.bound_B = 2.0

    def values_many(self, x, f: GridForecast, ys, tau=None):
        ys = np.atleast_1d(np.asarray(ys))
        if np.any((ys < 0) | (ys >= self.N) | (ys != np.round(ys))):
            raise ValueError(f"outcomes must be class indices in 0..{self.N - 1}")
        onehot = np.eye(self.N)[ys.astype(int)]
        out = np.zeros((ys.size, len(self.labels)))
        N = self.N
        for v, w in zip(f.vertex_ids, f.weights):
            out[:, N * v:N * v + N] += w * (onehot - f.point[None, :])
        return out


class DistributionGridOracle:
    def __init__(self, payoff: DistributionGridPayoff, quasi_random: bool = True):
        self.payoff = payoff
        self.quasi_random = quasi_random

    def respond(self, avg, x, rng):
        v = avg.values if isinstance(avg, PayoffVector) else np.asarray(avg, dtype=float)
        mu = v.reshape(-1, self.payoff.N)
        fp = solve_fixed_point(self.payoff.tri, -mu)
        fp.g = -fp.g
        j = int(rng.choice(fp.vertex_ids.size, p=fp.weights)) if self.quasi_random else int(np.argmax(fp.weights))
        coords = self.payoff.tri.vertices[fp.vertex_ids]
        f = GridForecast(fp.point, fp.vertex_ids, fp.weights, coords[j], coords, fp.residual)
        bound = float(fp.g.max() - fp.g @ fp.point)
        return f, Certificate(bound, True, {"residual": fp.residual, "cell": fp.cell})


def distribution_grid_oracle(mu: np.ndarray, N: int, M: int) -> FixedPoint:
    """Fixed point for per-vertex errors ``mu`` (V, N) on the ``(N, M)`` simplex grid."""
    fp = solve_fixed_point(simplex_triangulation(N, M), -np.asarray(mu, dtype=float).reshape(-1, N))
    fp.g = -fp.g
    return fp
