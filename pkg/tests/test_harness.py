"""Tests for data loading, experts, adversarial Nature, configs, experiments and the CLI."""

from __future__ import annotations

import json

import numpy as np
import pytest
from scipy.stats import norm

from blackcal.core_types import GameState, PiecewiseDensity, update_average
from blackcal.harness.cli import main
from blackcal.harness.data import DataError, SeriesConfig, lag_features, load_series, synthetic
from blackcal.harness.experiment import (
    REPORT_SCHEMA,
    STEPS_SCHEMA,
    ConfigError,
    ExperimentConfig,
    load_config,
    run_experiment,
)
from blackcal.harness.experts import Expert, expert_forecast, marginal, rolling_gaussian
from blackcal.harness.nature import PayoffNature, QceNature, adversarial_nature
from blackcal.metrics import qce_from_pit
from blackcal.payoffs import DEFAULT_LEVELS, QuantilePayoff

from conftest import random_density

LEVELS = np.asarray(DEFAULT_LEVELS)


def write_csv(path, text):
    path.write_text(text)
    return path


# =============================================================================
# Series ingestion
# =============================================================================


class TestLoadSeries:
    def test_three_rows(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", "timestamp,value\n0,1\n1,2\n2,3\n")
        np.testing.assert_array_equal(load_series(p), [1.0, 2.0, 3.0])

    def test_value_only_column(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", "value\n4.5\n-1e3\n")
        np.testing.assert_array_equal(load_series(p), [4.5, -1000.0])

    def test_blank_value_names_line(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", "timestamp,value\n0,1\n1,\n2,3\n")
        with pytest.raises(DataError, match="line 3"):
            load_series(p)

    def test_unparseable_value(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", "value\n1\nabc\n")
        with pytest.raises(DataError, match="line 3"):
            load_series(p)

    def test_non_finite_rejected(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", "value\n1\nnan\n")
        with pytest.raises(DataError, match="non-finite"):
            load_series(p)

    def test_missing_column(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", "timestamp,y\n0,1\n")
        with pytest.raises(DataError, match="missing 'value'"):
            load_series(p)

    def test_empty_file(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", "")
        with pytest.raises(DataError, match="empty"):
            load_series(p)

    def test_header_only(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", "value\n")
        with pytest.raises(DataError, match="no data rows"):
            load_series(p)


class TestGenerators:
    @pytest.mark.parametrize("name", ["ar1", "seasonal", "wind"])
    def test_same_seed_same_bytes(self, name):
        assert synthetic(name, 7, 300).tobytes() == synthetic(name, 7, 300).tobytes()

    @pytest.mark.parametrize("name", ["ar1", "seasonal", "wind"])
    def test_seeds_differ(self, name):
        assert not np.array_equal(synthetic(name, 1, 100), synthetic(name, 2, 100))

    def test_ar1_level_shift(self):
        y = synthetic("ar1", 0, 2000)
        assert y[1200:].mean() - y[:800].mean() > 4.0

    def test_wind_is_bounded(self):
        y = synthetic("wind", 3, 2000)
        assert np.all((y > 0) & (y < 100))

    def test_unknown_generator(self):
        with pytest.raises(DataError, match="unknown generator"):
            synthetic("sunspots", 0)


class TestSeriesConfig:
    def test_needs_a_source(self):
        with pytest.raises(DataError, match="need a data path"):
            SeriesConfig(generator=None, path=None).load()

    def test_generator_length(self):
        cfg = SeriesConfig(generator="ar1", T=100, lags=24)
        assert cfg.load().size == 124

    def test_horizon_too_long_for_file(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", "value\n" + "\n".join(str(i) for i in range(30)) + "\n")
        with pytest.raises(DataError, match="exceeds"):
            SeriesConfig(path=str(p), T=10, lags=24).load()

    def test_outcome_range_margin(self):
        lo, hi = SeriesConfig(margin=0.05).outcome_range(np.array([2.0, 4.0, 12.0]))
        assert (lo, hi) == pytest.approx((1.5, 12.5))

    def test_constant_series_range_nonempty(self):
        lo, hi = SeriesConfig().outcome_range(np.full(5, 3.0))
        assert lo < 3.0 < hi


class TestLagFeatures:
    def test_alignment(self):
        y = np.arange(100.0)
        np.testing.assert_array_equal(lag_features(y, 30, 24), np.arange(6.0, 30.0))

    @pytest.mark.parametrize("t", [24, 25, 57, 99])
    def test_excludes_current_outcome(self, t):
        y = np.arange(100.0)
        f = lag_features(y, t, 24)
        assert f.size == 24 and f[-1] == y[t - 1] and f[0] == y[t - 24]

    def test_too_early(self):
        with pytest.raises(DataError):
            lag_features(np.arange(10.0), 3, 5)


# =============================================================================
# Experts
# =============================================================================


EDGES = np.linspace(0.0, 10.0, 11)


class TestExperts:
    @pytest.mark.parametrize("kind", ["marginal", "rolling_gaussian", "persistence"])
    def test_empty_history_is_uniform(self, kind):
        p = expert_forecast(kind, [], EDGES)
        np.testing.assert_allclose(p.masses, np.full(10, 0.1), atol=1e-15)

    def test_marginal_add_one(self):
        """Five outcomes in bin 2: mass 6/15 there and 1/15 elsewhere."""
        p = marginal([2.1, 2.5, 2.9, 2.2, 2.7], EDGES)
        want = np.full(10, 1 / 15)
        want[2] = 6 / 15
        np.testing.assert_allclose(p.masses, want, rtol=1e-14)

    def test_marginal_clips_out_of_range(self):
        p = marginal([-5.0, 50.0], EDGES)
        assert p.masses[0] == pytest.approx(2 / 12) and p.masses[-1] == pytest.approx(2 / 12)

    def test_rolling_gaussian_constant_series(self):
        """Zero sample spread falls back to the floor, one bin width."""
        p = rolling_gaussian(np.full(30, 4.5), EDGES)
        cdf = norm.cdf((EDGES - 4.5) / 1.0)
        want = np.diff(cdf) / (cdf[-1] - cdf[0])
        np.testing.assert_allclose(p.masses, want, rtol=1e-12)
        assert int(np.argmax(p.masses)) == 4

    def test_rolling_gaussian_window(self):
        hist = np.concatenate([np.full(50, 1.0), np.linspace(7, 8, 24)])
        p = rolling_gaussian(hist, EDGES, window=24)
        assert 7.0 < p.mean < 8.0

    def test_persistence_centres_on_last(self):
        p = expert_forecast("persistence", [1.0, 8.0, 6.5], EDGES)
        assert int(np.argmax(p.masses)) == 6

    def test_far_outside_collapses_to_end_bin(self):
        p = rolling_gaussian(np.full(5, 1e6), EDGES, sd_floor=1e-3)
        assert p.masses[-1] == 1.0

    def test_expert_object(self):
        e = Expert("marginal", EDGES)
        assert isinstance(e([3.3]), PiecewiseDensity)
        with pytest.raises(ValueError):
            Expert("oracle", EDGES)
        with pytest.raises(ValueError):
            expert_forecast("oracle", [], EDGES)


# =============================================================================
# Adversarial Nature
# =============================================================================


def scan_qce(forecast, pits, grid):
    """Cumulative QCE after appending each grid outcome (exhaustive recheck)."""
    return np.array([qce_from_pit(np.append(pits, forecast.cdf(y)), LEVELS) for y in grid])


class TestAdversarialNature:
    GRID = np.linspace(0.0, 1.0, 11)

    def test_first_step_uniform_hits_smallest_extreme(self, uniform01):
        k = adversarial_nature(uniform01, np.zeros(LEVELS.size), 0, self.GRID)
        vals = scan_qce(uniform01, [], self.GRID)
        assert k == 0
        assert vals[0] == pytest.approx(vals.max(), abs=1e-12)
        assert vals[-1] == pytest.approx(vals[0], abs=1e-12)  # tie between the extremes

    def test_point_mass_forecast(self):
        edges = np.array([0.0, 0.299, 0.301, 1.0])
        p = PiecewiseDensity(edges, [0.0, 1.0, 0.0])
        k = adversarial_nature(p, np.zeros(LEVELS.size), 0, self.GRID)
        vals = scan_qce(p, [], self.GRID)
        assert p.cdf(self.GRID[k]) in (0.0, 1.0)
        assert vals[k] == pytest.approx(vals.max(), abs=1e-12)
        assert k == int(np.flatnonzero(vals >= vals.max() - 1e-12)[0])

    def test_deterministic(self, rng):
        p = random_density(rng)
        counts = np.sort(rng.integers(0, 20, LEVELS.size))
        a = adversarial_nature(p, counts, 20, self.GRID)
        assert all(adversarial_nature(p, counts.copy(), 20, self.GRID) == a for _ in range(5))

    def test_optimal_on_random_states(self, rng):
        """The pick attains the exhaustive maximum and is the smallest maximizer."""
        grid = np.linspace(0.02, 0.98, 49)
        for _ in range(100):
            t = int(rng.integers(0, 60))
            pits = rng.random(t)
            counts = np.array([np.sum(pits <= a) for a in LEVELS], dtype=float)
            p = random_density(rng, alpha=0.3)
            k = adversarial_nature(p, counts, t, grid)
            vals = scan_qce(p, pits, grid)
            assert vals[k] >= vals.max() - 1e-12
            assert np.all(vals[:k] < vals[k] + 1e-12)

    def test_qce_nature_tracks_counts(self, rng):
        nat = QceNature(self.GRID)
        pits = []
        for _ in range(20):
            p = random_density(rng)
            y = nat(p)
            vals = scan_qce(p, pits, self.GRID)
            assert vals[list(self.GRID).index(y)] >= vals.max() - 1e-12
            pits.append(p.cdf(y))
        assert nat.t == 20

    def test_payoff_nature_matches_qce_nature(self, rng):
        """For the quantile payoff the norm maximizer is the cumulative QCE maximizer."""
        spec = QuantilePayoff()
        qn, pn = QceNature(self.GRID), PayoffNature(spec, self.GRID)
        state = GameState()
        for _ in range(15):
            p = random_density(rng)
            y1 = qn(p)
            y2 = pn(p, state)
            assert y1 == y2
            state = update_average(state, spec.evaluate(None, p, y1))


# =============================================================================
# Configuration
# =============================================================================


class TestConfig:
    def test_defaults_valid(self):
        cfg = ExperimentConfig()
        assert cfg.mode == "recalibrate" and cfg.lags == 24 and cfg.T == 1000

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            ExperimentConfig.from_mapping({"mode": "adversarial", "horizon": 10})

    @pytest.mark.parametrize(
        "key,value",
        [("T", "100"), ("T", 1.5), ("T", True), ("lr", "fast"), ("dense_nature", 1), ("experts", 3)],
    )
    def test_type_errors(self, key, value):
        with pytest.raises(ConfigError, match=key):
            ExperimentConfig.from_mapping({key: value})

    def test_coercions(self):
        cfg = ExperimentConfig.from_mapping({"lr": 1, "experts": "persistence"})
        assert cfg.lr == 1.0 and isinstance(cfg.lr, float)
        assert cfg.experts == ["persistence"]

    @pytest.mark.parametrize(
        "kw",
        [
            {"mode": "live"},
            {"T": 0},
            {"bins": 2},
            {"experts": []},
            {"experts": ["oracle"]},
            {"mode": "adversarial", "oracle": "magic"},
            {"lam": 1.0},
            {"beta": 0.0},
            {"tau": 0.0},
            {"backend": "gpu"},
        ],
    )
    def test_invalid_values(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)

    def test_load_flat_toml(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('mode = "adversarial"\noracle = "quantile"\nT = 20\nseed = 3\n')
        cfg = load_config(p)
        assert (cfg.mode, cfg.oracle, cfg.T, cfg.seed) == ("adversarial", "quantile", 20, 3)

    def test_nested_table_rejected(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('mode = "adversarial"\n[orca]\nsteps = 10\n')
        with pytest.raises(ConfigError, match="flat"):
            load_config(p)

    def test_malformed_toml(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("mode = \n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_round_trip(self):
        cfg = ExperimentConfig(mode="decision", T=48, experts=["rolling_gaussian"])
        assert ExperimentConfig.from_mapping(cfg.to_dict()) == cfg


# =============================================================================
# Experiments
# =============================================================================


SMALL_RECAL = dict(mode="recalibrate", T=30, lags=24, bins=20, steps=60, seed=4)


class TestRunExperiment:
    def test_adversarial_quantile_budget(self, tmp_path):
        res = run_experiment(dict(mode="adversarial", oracle="quantile", T=200, bins=20), tmp_path)
        assert res.checks["budget_violations"] == 0
        assert res.checks["certificate_violations"] == 0
        assert {"markov_r2", "markov_r4"} <= set(res.checks)
        rows = res.rows
        assert [r["t"] for r in rows] == list(range(1, 201))
        B = QuantilePayoff().bound_B
        assert all(r["payoff_norm2"] <= B / r["t"] * (1 + 1e-12) for r in rows)

    def test_adversarial_aci_reports_coverage(self):
        res = run_experiment(dict(mode="adversarial", oracle="aci", T=200, bins=20))
        assert 0.0 <= res.checks["coverage"] <= 1.0
        assert res.checks["budget_violations"] == 0

    def test_adversarial_expert_baseline(self):
        res = run_experiment(dict(mode="adversarial", oracle="marginal", T=50, bins=10))
        assert res.reports[0].forecaster == "marginal"
        assert res.checks["certificate_violations"] == 0

    def test_outputs_carry_schema(self, tmp_path):
        run_experiment(SMALL_RECAL, tmp_path)
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["schema"] == REPORT_SCHEMA
        assert doc["config"]["T"] == 30
        lines = (tmp_path / "steps.csv").read_text().splitlines()
        assert lines[0] == f"# schema: {STEPS_SCHEMA}"
        assert lines[1] == "t,outcome,forecast_mean,payoff_norm2,certificate,qce_so_far"
        assert len(lines) == 2 + 30

    def test_recalibrate_reports(self):
        res = run_experiment(dict(SMALL_RECAL, experts=["marginal", "persistence"]))
        assert [r.forecaster for r in res.reports] == ["expert:marginal", "expert:persistence", "orca"]
        # real outcomes fall off the adversary grid, so exceedances are counted, not forbidden
        assert isinstance(res.checks["certificate_exceedances"], int)
        assert set(res.checks["per_block"]) == {"quantile", "moment", "regret_crps", "regret_mse"}

    def test_decision_mode_losses(self):
        res = run_experiment(dict(mode="decision", generator="wind", experts=["rolling_gaussian"], T=48, steps=60))
        assert "decision_loss" in res.rows[0] and "expert_decision_loss" in res.rows[0]
        orca = res.reports[-1]
        daily = np.array([r["decision_loss"] for r in res.rows]).reshape(2, 24).sum(axis=1).mean()
        assert orca.mean_decision_loss == pytest.approx(daily, rel=1e-12)

    def test_replay_byte_identical(self, tmp_path):
        a = run_experiment(SMALL_RECAL, tmp_path / "a")
        b = run_experiment(SMALL_RECAL, tmp_path / "b")
        assert (tmp_path / "a" / "steps.csv").read_bytes() == (tmp_path / "b" / "steps.csv").read_bytes()
        assert a.report_json() == b.report_json()

    def test_from_data_file(self, tmp_path):
        y = synthetic("seasonal", 0, 60)
        p = write_csv(tmp_path / "s.csv", "value\n" + "\n".join(repr(float(v)) for v in y) + "\n")
        res = run_experiment(dict(SMALL_RECAL, data=str(p)))
        np.testing.assert_array_equal([r["outcome"] for r in res.rows], y[24:54])


# =============================================================================
# CLI
# =============================================================================


class TestCli:
    def test_adversarial(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["adversarial", "--oracle", "quantile", "--T", "40", "--bins", "10", "--out", str(out)]) == 0
        assert (out / "report.json").exists() and (out / "steps.csv").exists()
        assert "QCE=" in capsys.readouterr().out

    def test_recalibrate_csv(self, tmp_path):
        y = synthetic("ar1", 1, 60)
        p = write_csv(tmp_path / "s.csv", "timestamp,value\n" + "\n".join(f"{i},{float(v)!r}" for i, v in enumerate(y)) + "\n")
        argv = ["recalibrate", "--data", str(p), "--expert", "marginal", "--bins", "20",
                "--steps", "20", "--orca-steps", "50", "--out", str(tmp_path / "o")]
        assert main(argv) == 0

    def test_run_config(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('mode = "adversarial"\noracle = "aci"\nT = 30\n')
        assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert json.loads((tmp_path / "o" / "report.json").read_text())["config"]["oracle"] == "aci"

    def test_bad_csv_exit_code(self, tmp_path, capsys):
        p = write_csv(tmp_path / "s.csv", "value\n1\n\n2\nx\n")
        assert main(["recalibrate", "--data", str(p), "--out", str(tmp_path / "o")]) == 2
        assert "cannot parse" in capsys.readouterr().err

    def test_missing_file_exit_code(self, tmp_path):
        assert main(["recalibrate", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 2

    def test_bad_config_exit_code(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("colour = 1\n")
        assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit):
            main(["plot"])
