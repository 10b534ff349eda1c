"""Compare the compiled ORCA kernel against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--bins 50] [--iters 400] [--repeat 5]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from blackcal import kernels
from blackcal.core_types import PiecewiseDensity
from blackcal.orca import AdversaryFamily, compile_problem, lse_temperature
from blackcal.payoffs import QuantilePayoff
from blackcal.recalibration import recalibration_payoff


def problem(kind: str, bins: int, rng: np.random.Generator):
    edges = np.linspace(0.0, 1.0, bins + 1)
    if kind == "quantile":
        spec, x = QuantilePayoff(), None
        adv = AdversaryFamily.diracs(edges[1:-1], 0.0, 1.0)
    else:
        spec = recalibration_payoff(2, 0.0, 1.0)
        x = {"experts": [PiecewiseDensity(edges, rng.dirichlet(np.ones(bins))) for _ in range(2)]}
        adv = AdversaryFamily.bin_centers(edges)
    c = rng.normal(size=len(spec)) * 0.05
    return compile_problem(c, x, spec, adv, edges), lse_temperature(c, spec, 0.01)


def time_descent(backend: str, args, temp: float, bins: int, iters: int, repeat: int) -> list[float]:
    k = kernels.get_backend(backend)
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        # stop_below=-inf so both backends run the full iteration budget
        k.orca_descent(np.zeros(bins), *args, 0.01, temp, iters, 0.05, 0.9, 0.999, 1e-8, -np.inf)
        out.append(time.perf_counter() - t0)
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bins", type=int, default=50)
    ap.add_argument("--iters", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if "compiled" not in kernels.BACKENDS:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'problem':<14}{'backend':<10}{'median ms':>12}{'speedup':>10}")
    for kind in ("quantile", "recalibration"):
        prob, temp = problem(kind, args.bins, rng)
        med = {}
        for b in ("python", "compiled"):
            med[b] = statistics.median(time_descent(b, prob, temp, args.bins, args.iters, args.repeat)) * 1e3
        for b in ("python", "compiled"):
            print(f"{kind:<14}{b:<10}{med[b]:>12.2f}{med['python'] / med[b]:>9.1f}x")


if __name__ == "__main__":
    main()
