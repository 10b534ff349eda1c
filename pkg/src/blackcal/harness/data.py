"""Series ingestion, synthetic generators and lag features."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


def load_series(path) -> np.ndarray:
    """Read the ``value`` column of a headed CSV (an optional ``timestamp`` column is ignored)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        if "value" not in [f.strip() for f in reader.fieldnames]:
            raise DataError(f"{path}: missing 'value' column (found {reader.fieldnames})")
        key = next(f for f in reader.fieldnames if f.strip() == "value")
        vals = []
        for row in reader:
            raw = (row.get(key) or "").strip()
            try:
                v = float(raw)
            except ValueError:
                raise DataError(f"{path}: line {reader.line_num}: cannot parse value {raw!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: line {reader.line_num}: non-finite value {raw!r}")
            vals.append(v)
    if not vals:
        raise DataError(f"{path}: no data rows")
    return np.asarray(vals)


# ----------------------------------------------------------------------
# synthetic generators
# ----------------------------------------------------------------------
def ar1(seed: int, n: int = 1200, phi: float = 0.9, shift_at: float = 0.5) -> np.ndarray:
    """AR(1) around a positive level that jumps (and gets noisier) partway through."""
    rng = np.random.default_rng(seed)
    k = int(n * shift_at)
    mu = np.where(np.arange(n) < k, 10.0, 16.0)
    sd = np.where(np.arange(n) < k, 1.0, 1.8)
    y = np.empty(n)
    prev = mu[0]
    for t in range(n):
        prev = mu[t] + phi * (prev - mu[t]) + sd[t] * rng.standard_normal()
        y[t] = prev
    return y


def seasonal(seed: int, n: int = 1200, period: int = 24) -> np.ndarray:
    """Sinusoidal cycle with slow drift plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    return 20.0 + 5.0 * np.sin(2 * np.pi * t / period) + 0.004 * t + rng.normal(0.0, 1.5, n)


def wind(seed: int, n: int = 1200, capacity: float = 100.0) -> np.ndarray:
    """Bounded hourly generation: a logistic of a persistent latent plus a daily cycle."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    z = np.empty(n)
    prev = 0.0
    for i in range(n):
        prev = 0.95 * prev + 0.35 * rng.standard_normal()
        z[i] = prev
    latent = z + 0.9 * np.cos(2 * np.pi * (t % 24) / 24.0)
    return capacity / (1.0 + np.exp(-latent))


GENERATORS = {"ar1": ar1, "seasonal": seasonal, "wind": wind}


def synthetic(name: str, seed: int, n: int = 1200) -> np.ndarray:
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise DataError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return gen(seed, n)


@dataclass
class SeriesConfig:
    """Where the series comes from and how much of it is played."""

    path: str | None = None
    generator: str | None = "ar1"
    seed: int = 0
    lags: int = 24
    T: int = 1000
    margin: float = 0.05

    def load(self) -> np.ndarray:
        if self.path:
            y = load_series(self.path)
        elif self.generator:
            y = synthetic(self.generator, self.seed, self.T + self.lags)
        else:
            raise DataError("need a data path or a generator")
        if self.T > y.size - self.lags:
            raise DataError(f"T={self.T} exceeds series length {y.size} minus {self.lags} lags")
        return y

    def outcome_range(self, y: np.ndarray) -> tuple[float, float]:
        """Data range widened by ``margin`` on each side."""
        lo, hi = float(np.min(y)), float(np.max(y))
        pad = self.margin * (hi - lo) if hi > lo else max(abs(hi), 1.0) * self.margin
        return lo - pad, hi + pad


def lag_features(y: np.ndarray, t: int, L: int) -> np.ndarray:
    """Outcomes ``t-L .. t-1`` (0-based); requires ``t >= L``."""
    if t < L:
        raise DataError(f"step {t} has fewer than {L} lags")
    return np.asarray(y[t - L:t], dtype=float)
