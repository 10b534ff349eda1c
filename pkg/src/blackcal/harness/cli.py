"""Command line entry point: ``cal run | recalibrate | adversarial | decision``."""

from __future__ import annotations

import argparse
import sys

from .data import DataError
from .experiment import ADVERSARIAL_ORACLES, ConfigError, ExperimentConfig, ExperimentError, load_config, run_experiment
from .experts import EXPERT_KINDS


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/latest", help="output directory for report.json and steps.csv")
    p.add_argument("--orca-steps", type=int, default=400, help="ORCA iterations per forecast")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--backend", choices=["compiled", "python"], default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cal", description="Online calibration by approachability.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a TOML config file")
    r.add_argument("config")
    r.add_argument("--out", default="runs/latest")

    rc = sub.add_parser("recalibrate", help="recalibrate expert forecasts on a series")
    src = rc.add_mutually_exclusive_group()
    src.add_argument("--data", help="CSV with a 'value' column")
    src.add_argument("--generator", default="ar1", help="synthetic series: ar1, seasonal or wind")
    rc.add_argument("--expert", action="append", choices=EXPERT_KINDS, help="repeat for a panel")
    rc.add_argument("--bins", type=int, default=50)
    rc.add_argument("--steps", type=int, default=1000, help="number of forecast steps T")
    rc.add_argument("--lags", type=int, default=24)
    _common(rc)

    ad = sub.add_parser("adversarial", help="forecaster against a QCE-maximizing adversary")
    ad.add_argument("--oracle", choices=ADVERSARIAL_ORACLES, default="orca")
    ad.add_argument("--T", type=int, default=5000)
    ad.add_argument("--bins", type=int, default=50)
    ad.add_argument("--dense-nature", action="store_true", help="adversary scans a 10x finer grid")
    _common(ad)

    de = sub.add_parser("decision", help="commitment losses of expert vs recalibrated forecasts")
    de.add_argument("--lambda", dest="lam", type=float, default=0.5)
    de.add_argument("--data")
    de.add_argument("--generator", default="wind")
    de.add_argument("--expert", default="rolling_gaussian", choices=EXPERT_KINDS)
    de.add_argument("--bins", type=int, default=50)
    de.add_argument("--steps", type=int, default=1000, help="number of forecast steps T")
    _common(de)
    return ap


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.command == "run":
        return load_config(args.config)
    kw = dict(seed=args.seed, steps=args.orca_steps, lr=args.lr, tau=args.tau, backend=args.backend or "")
    if args.command == "recalibrate":
        kw.update(mode="recalibrate", data=args.data or "", generator=args.generator, experts=args.expert or ["marginal"],
                  bins=args.bins, T=args.steps, lags=args.lags)
    elif args.command == "adversarial":
        kw.update(mode="adversarial", oracle=args.oracle, T=args.T, bins=args.bins, dense_nature=args.dense_nature)
    else:
        kw.update(mode="decision", lam=args.lam, data=args.data or "", generator=args.generator, experts=[args.expert],
                  bins=args.bins, T=args.steps)
    return ExperimentConfig(**kw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        res = run_experiment(cfg, args.out)
    except (ConfigError, DataError, ExperimentError, OSError) as exc:
        print(f"cal: error: {exc}", file=sys.stderr)
        return 2
    for rep in res.reports:
        line = f"{rep.forecaster:<24} QCE={rep.qce:.4f} SMAPE={rep.smape:.4f}"
        if rep.mean_decision_loss is not None:
            line += f" decision_loss={rep.mean_decision_loss:.4f}"
        print(line)
    print(f"wrote {args.out}/report.json and {args.out}/steps.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
