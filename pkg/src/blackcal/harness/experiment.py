"""Experiment configuration and end-to-end runs."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..blackwell import Certificate, OracleError, _digest, budget_trajectory, play_step
from ..core_types import GameState, PiecewiseDensity
from ..metrics import (
    RunReport,
    _forecast_density,
    decision_loss,
    markov_coverage,
    optimal_commitment,
    pit_values,
    qce_trajectory,
)
from ..oracles import AciOracle, AciPayoff, QuantileStepOracle
from ..orca import AdversaryFamily, OrcaConfig, OrcaOracle
from ..payoffs import DEFAULT_LEVELS, QuantilePayoff, block_norms
from ..recalibration import OrcaRecalibrator, regret_report
from .data import SeriesConfig
from .experts import EXPERT_KINDS, Expert
from .nature import PayoffNature, QceNature

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

REPORT_SCHEMA = "blackcal.report/1"
STEPS_SCHEMA = "blackcal.steps/1"

MODES = ("recalibrate", "adversarial", "decision")
ADVERSARIAL_ORACLES = ("orca", "quantile", "aci") + EXPERT_KINDS


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    """A module failed mid-run; carries the step and a digest of the game state."""

    def __init__(self, step: int, digest: str, cause: BaseException):
        super().__init__(f"step {step} failed (state {digest}): {cause}")
        self.step = step
        self.digest = digest


@dataclass
class ExperimentConfig:
    """Flat experiment description; every key maps to one field."""

    mode: str = "recalibrate"
    seed: int = 0
    T: int = 1000
    lags: int = 24
    bins: int = 50
    data: str = ""
    generator: str = "ar1"
    experts: list = field(default_factory=lambda: ["marginal"])
    oracle: str = "orca"
    steps: int = 400
    lr: float = 0.05
    tau: float = 0.01
    early_stop: float = -1e-6
    backend: str = ""
    lam: float = 0.5
    beta: float = 0.9
    aci_grid: int = 100
    dense_nature: bool = False
    trajectory_every: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("T", "lags", "bins", "steps", "aci_grid", "trajectory_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.bins < 3:
            raise ConfigError("bins must be >= 3")
        if not self.experts:
            raise ConfigError("need at least one expert")
        for e in self.experts:
            if e not in EXPERT_KINDS:
                raise ConfigError(f"unknown expert {e!r}; choose from {EXPERT_KINDS}")
        if self.mode == "adversarial" and self.oracle not in ADVERSARIAL_ORACLES:
            raise ConfigError(f"oracle must be one of {ADVERSARIAL_ORACLES}")
        if not 0 <= self.lam < 1:
            raise ConfigError("lam must lie in [0, 1)")
        if not 0 < self.beta < 1:
            raise ConfigError("beta must lie in (0, 1)")
        if not self.tau > 0 or not self.lr > 0:
            raise ConfigError("tau and lr must be positive")
        if self.backend not in ("", "compiled", "python"):
            raise ConfigError("backend must be 'compiled' or 'python'")

    @classmethod
    def from_mapping(cls, d: dict) -> "ExperimentConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(fields))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kw = {}
        defaults = cls()
        for k, v in d.items():
            want = type(getattr(defaults, k))
            if want is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if want is list and isinstance(v, str):
                v = [v]
            if not isinstance(v, want) or (want is int and isinstance(v, bool)):
                raise ConfigError(f"{k}: expected {want.__name__}, got {type(v).__name__}")
            kw[k] = v
        return cls(**kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def orca(self) -> OrcaConfig:
        return OrcaConfig(steps=self.steps, lr=self.lr, tau=self.tau, early_stop=self.early_stop,
                          backend=self.backend or None)

    def series(self) -> SeriesConfig:
        return SeriesConfig(path=self.data or None, generator=self.generator, seed=self.seed, lags=self.lags, T=self.T)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            d = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    nested = [k for k, v in d.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config must be flat; found tables {nested}")
    return ExperimentConfig.from_mapping(d)


# ----------------------------------------------------------------------
# results
# ----------------------------------------------------------------------
@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list
    checks: dict
    rows: list
    states: dict = field(default_factory=dict)

    def report_json(self) -> str:
        doc = {
            "schema": REPORT_SCHEMA,
            "config": self.config.to_dict(),
            "reports": [r.to_dict() for r in self.reports],
            "checks": self.checks,
        }
        return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"

    def steps_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema: {STEPS_SCHEMA}\n")
        cols = list(self.rows[0].keys()) if self.rows else []
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in cols])
        return buf.getvalue()

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rp, sp = out / "report.json", out / "steps.csv"
        rp.write_text(self.report_json())
        sp.write_text(self.steps_csv())
        return rp, sp


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else None
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def _summary(f) -> float:
    """A scalar for the step log: the forecast mean, or the ACI upper quantile."""
    if isinstance(f, PiecewiseDensity):
        return f.mean
    return float(getattr(f, "upper"))


# ----------------------------------------------------------------------
# modes
# ----------------------------------------------------------------------
class _ExpertOracle:
    """Plays an expert forecast; the certificate is the exact max over the outcome grid."""

    def __init__(self, expert: Expert, outcomes: list, spec, grid):
        self.expert, self.outcomes, self.spec, self.grid = expert, outcomes, spec, grid

    def respond(self, avg, x, rng):
        p = self.expert(self.outcomes)
        inner = self.spec.values_many(x, p, self.grid) @ avg.values
        return p, Certificate(float(inner.max()), False, {"grid": True})


def _play(state, x, oracle, outcome, spec, seed):
    try:
        return play_step(state, x, oracle, outcome, spec, seed)
    except OracleError as exc:
        raise ExperimentError(exc.step, _digest(state.avg_payoff.values if state.avg_payoff else None), exc.__cause__) from exc


def _run_adversarial(cfg: ExperimentConfig) -> ExperimentResult:
    edges = np.linspace(0.0, 1.0, cfg.bins + 1)
    grid = edges[1:-1]
    nature_grid = np.linspace(grid[0], grid[-1], 10 * (grid.size - 1) + 1) if cfg.dense_nature else grid
    outcomes: list[float] = []
    if cfg.oracle == "aci":
        spec = AciPayoff(cfg.beta, cfg.aci_grid)
        oracle = AciOracle(spec, "deterministic", PiecewiseDensity(edges, np.diff(edges)))
        nature = PayoffNature(spec, nature_grid)
    else:
        spec = QuantilePayoff(DEFAULT_LEVELS)
        if cfg.oracle == "orca":
            oracle = OrcaOracle(spec, AdversaryFamily.diracs(grid, 0.0, 1.0), edges, cfg.orca())
        elif cfg.oracle == "quantile":
            oracle = QuantileStepOracle(spec, edges)
        else:
            oracle = _ExpertOracle(Expert(cfg.oracle, edges), outcomes, spec, nature_grid)
        nature = QceNature(nature_grid, spec.levels)
    state = GameState()
    for t in range(1, cfg.T + 1):
        state = _play(state, None, oracle, nature, spec, cfg.seed)
        outcomes.append(state.history[-1].outcome)

    norm2, bound, budget = budget_trajectory(state)
    hist = state.history
    certs = np.array([r.certificate.bound for r in hist])
    inners = np.array([r.inner for r in hist])
    checks: dict[str, Any] = {
        "budget_violations": int(np.sum(norm2 > bound * (1 + 1e-12))),
        "certificate_violations": int(np.sum(inners > certs + 1e-9)),
        "final_norm2": float(norm2[-1]),
        "final_bound": float(bound[-1]),
    }
    rows = []
    if cfg.oracle == "aci":
        covered = np.array([r.forecast.covered(r.outcome) for r in hist], dtype=float)
        checks["coverage"] = float(covered.mean())
        running = np.cumsum(covered) / np.arange(1, len(hist) + 1)
        report = RunReport(cfg.oracle, cfg.T, float("nan"), float("nan"), float("nan"),
                           miscalibration=[float(v) for v in norm2[cfg.trajectory_every - 1::cfg.trajectory_every]],
                           extra={"coverage": checks["coverage"]})
        traj = running
    else:
        report = RunReport.from_history(cfg.oracle, state, every=cfg.trajectory_every)
        pit = pit_values(state)
        traj = qce_trajectory(pit)
        for r_ in (2.0, 4.0):
            cov = markov_coverage(state, r_)
            checks[f"markov_r{int(r_)}"] = dataclasses.asdict(cov)
    for i, r in enumerate(hist):
        rows.append({
            "t": r.t,
            "outcome": r.outcome,
            "forecast_mean": _summary(r.forecast),
            "payoff_norm2": float(norm2[i]),
            "certificate": float(certs[i]),
            "qce_so_far": float(traj[i]),
        })
    return ExperimentResult(cfg, [report], checks, rows, {cfg.oracle: state})


def _run_recalibration(cfg: ExperimentConfig) -> ExperimentResult:
    scfg = cfg.series()
    y = scfg.load()
    lo, hi = scfg.outcome_range(y[: cfg.lags + cfg.T])
    edges = np.linspace(lo, hi, cfg.bins + 1)
    experts = [Expert(k, edges) for k in cfg.experts]
    rec = OrcaRecalibrator(cfg.experts, edges, cfg.orca())
    expert_hist: list[list] = [[] for _ in experts]
    rows = []
    own_loss, ex_loss = [], []
    lam = cfg.lam
    for i in range(cfg.T):
        t = cfg.lags + i
        past = y[:t]
        fc = [e(past) for e in experts]
        yt = float(y[t])
        try:
            p = rec.step(fc, yt, cfg.seed)
        except OracleError as exc:
            raise ExperimentError(i + 1, _digest(rec.state.avg_payoff.values if rec.state.avg_payoff else None), exc.__cause__) from exc
        for k, f in enumerate(fc):
            expert_hist[k].append((f, yt))
        if cfg.mode == "decision":
            own_loss.append(decision_loss(optimal_commitment(p, lam), [yt], lam))
            ex_loss.append(decision_loss(optimal_commitment(fc[0], lam), [yt], lam))

    state = rec.state
    hist = state.history
    pit = pit_values(state)
    traj = qce_trajectory(pit)
    norm2, bound, _ = budget_trajectory(state)
    for i, r in enumerate(hist):
        row = {
            "t": r.t,
            "outcome": r.outcome,
            "forecast_mean": r.forecast.mean,
            "payoff_norm2": float(norm2[i]),
            "certificate": float(r.certificate.bound),
            "qce_so_far": float(traj[i]),
        }
        if cfg.mode == "decision":
            row["decision_loss"] = float(own_loss[i])
            row["expert_decision_loss"] = float(ex_loss[i])
        rows.append(row)

    def daily(losses):
        # commitments are settled per 24-hour day; trailing partial days are dropped
        v = np.asarray(losses, dtype=float)
        days = v.size // 24
        return float(v[: days * 24].reshape(days, 24).sum(axis=1).mean()) if days else float(v.sum())

    reports = []
    for k, name in enumerate(cfg.experts):
        recs = [_Rec(f, yy) for f, yy in expert_hist[k]]
        rep = RunReport.from_history(f"expert:{name}", recs, every=cfg.trajectory_every)
        if cfg.mode == "decision" and k == 0:
            rep.mean_decision_loss = daily(ex_loss)
        reports.append(rep)
    own = RunReport.from_history("orca", state, every=cfg.trajectory_every, regret=rec.ledger.trajectory()[cfg.trajectory_every - 1::cfg.trajectory_every])
    if cfg.mode == "decision":
        own.mean_decision_loss = daily(own_loss)
    reports.append(own)
    cert = np.array([r.certificate.bound for r in hist])
    inner = np.array([r.inner for r in hist])
    checks = {
        "regret_crps": regret_report(rec.ledger, n_blocks=len(rec.spec.specs), bound_B=1.0),
        "regret_mse": regret_report(rec.mse_ledger, n_blocks=len(rec.spec.specs), bound_B=1.0),
        "final_norm2": float(norm2[-1]),
        "final_bound": float(bound[-1]),
        "per_block": block_norms(rec.spec, state.avg_payoff.values),
        "certificate_exceedances": int(np.sum(inner > cert + 1e-9)),
        "outcome_range": [lo, hi],
    }
    return ExperimentResult(cfg, reports, checks, rows, {"orca": state})


@dataclass
class _Rec:
    forecast: Any
    outcome: float


def run_experiment(config: ExperimentConfig | dict, out_dir=None) -> ExperimentResult:
    """Run one configured experiment; with ``out_dir`` also write report.json and steps.csv."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_mapping(config)
    cfg.validate()
    if cfg.mode == "adversarial":
        res = _run_adversarial(cfg)
    else:
        res = _run_recalibration(cfg)
    if out_dir is not None:
        res.write(out_dir)
    return res
