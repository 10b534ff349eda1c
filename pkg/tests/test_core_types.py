"""Tests for piecewise densities, payoff vectors and the running average."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from blackcal.core_types import (
    ContractViolation,
    DomainError,
    GameState,
    PayoffVector,
    PiecewiseDensity,
    cdf_eval,
    crps,
    inner_product,
    moment,
    quantile_eval,
    softmax,
    update_average,
)

from conftest import random_density


def _crps_numeric(p, y):
    f = lambda z: (p.cdf(z) - (1.0 if z >= y else 0.0)) ** 2
    pts = sorted(set(p.edges.tolist()) | {y})
    return sum(integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-13)[0] for a, b in zip(pts[:-1], pts[1:]))


masses_st = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12).filter(lambda m: sum(m) > 1e-3)


# =============================================================================
# Construction
# =============================================================================


class TestConstruction:
    """Validation of edges and masses."""

    def test_rejects_mass_not_summing_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            PiecewiseDensity([0.0, 0.5, 1.0], [0.5, 0.4])

    def test_rejects_negative_mass(self):
        with pytest.raises(ValueError):
            PiecewiseDensity([0.0, 0.5, 1.0], [1.2, -0.2])

    def test_rejects_unsorted_edges(self):
        with pytest.raises(ValueError):
            PiecewiseDensity([0.0, 0.7, 0.5], [0.5, 0.5])

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            PiecewiseDensity([0.0, 1.0], [0.5, 0.5])

    def test_arrays_are_read_only(self, two_bin):
        with pytest.raises(ValueError):
            two_bin.masses[0] = 0.1

    def test_from_logits_shift_invariant(self):
        edges = np.linspace(0, 1, 6)
        th = np.array([0.3, -1.0, 2.0, 0.0, 0.5])
        a = PiecewiseDensity.from_logits(edges, th)
        b = PiecewiseDensity.from_logits(edges, th + 7.0)
        np.testing.assert_allclose(a.masses, b.masses, rtol=1e-14)


# =============================================================================
# CDF and quantile
# =============================================================================


class TestCdf:
    """CDF evaluation."""

    def test_uniform_identity(self, uniform01):
        assert uniform01.cdf(0.3) == pytest.approx(0.3, abs=1e-12)

    def test_top_edge_is_one(self, two_bin, rng):
        assert two_bin.cdf(1.0) == 1.0
        assert random_density(rng).cdf(1.0) == 1.0

    def test_two_bin_example(self, two_bin):
        """0.8 * (0.25 / 0.5) = 0.4."""
        assert two_bin.cdf(0.25) == pytest.approx(0.4, abs=1e-12)

    def test_two_bin_monte_carlo(self, two_bin):
        ys = two_bin.sample(np.random.default_rng(7), 1_000_000)
        assert np.mean(ys <= 0.25) == pytest.approx(0.4, abs=2e-3)

    @pytest.mark.parametrize("y", [-0.01, 1.01, float("nan")])
    def test_out_of_range_raises(self, two_bin, y):
        with pytest.raises(DomainError):
            two_bin.cdf(y)

    def test_module_function_matches_method(self, two_bin):
        assert cdf_eval(two_bin, 0.7) == two_bin.cdf(0.7)

    @given(masses_st, st.floats(0.0, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_cdf_weights_reproduce_cdf(self, m, y):
        p = PiecewiseDensity.from_weights(np.linspace(0, 1, len(m) + 1), m)
        assert float(p.cdf_weights(y)[0] @ p.masses) == pytest.approx(p.cdf(y), abs=1e-12)


class TestQuantile:
    """Generalized inverse CDF."""

    def test_uniform_median(self, uniform01):
        assert uniform01.quantile(0.5) == pytest.approx(0.5)

    def test_zero_level_is_lower_edge(self, two_bin):
        assert two_bin.quantile(0.0) == 0.0
        assert quantile_eval(two_bin, 0.0) == 0.0

    def test_two_bin_example(self, two_bin):
        assert two_bin.quantile(0.4) == pytest.approx(0.25, abs=1e-12)

    def test_gap_returns_left_end(self):
        p = PiecewiseDensity([0.0, 1.0, 2.0, 3.0], [0.5, 0.0, 0.5])
        assert p.quantile(0.5) == pytest.approx(1.0)

    @pytest.mark.parametrize("a", [-0.1, 1.1])
    def test_bad_level(self, two_bin, a):
        with pytest.raises(ValueError):
            two_bin.quantile(a)

    @given(masses_st, st.floats(0.001, 0.999))
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, m, a):
        p = PiecewiseDensity.from_weights(np.linspace(0, 1, len(m) + 1), m)
        assert p.cdf(p.quantile(a)) == pytest.approx(a, abs=1e-9)


# =============================================================================
# Moments and CRPS
# =============================================================================


class TestMoments:
    """Closed-form moments."""

    @pytest.mark.parametrize("k,expected", [(1, 0.5), (2, 1.0 / 3.0), (3, 0.25)])
    def test_uniform(self, uniform01, k, expected):
        assert uniform01.moment(k) == pytest.approx(expected, abs=1e-12)

    def test_two_bin_mean(self, two_bin):
        """0.8 * 0.25 + 0.2 * 0.75."""
        assert two_bin.mean == pytest.approx(0.35, abs=1e-12)
        assert moment(two_bin, 1) == pytest.approx(0.35, abs=1e-12)

    def test_two_bin_monte_carlo(self, two_bin):
        ys = two_bin.sample(np.random.default_rng(3), 1_000_000)
        assert ys.mean() == pytest.approx(0.35, abs=2e-3)

    def test_bad_order(self, two_bin):
        with pytest.raises(ValueError):
            two_bin.moment(0)


class TestCrps:
    """Exact CRPS against numerical integration."""

    def test_uniform_at_lower_edge(self, uniform01):
        assert uniform01.crps(0.0) == pytest.approx(1.0 / 3.0, abs=1e-9)

    def test_uniform_at_center(self, uniform01):
        assert uniform01.crps(0.5) == pytest.approx(1.0 / 12.0, abs=1e-9)

    def test_narrow_forecast(self):
        edges = np.linspace(0, 1, 1001)
        m = np.zeros(1000)
        m[500] = 1.0
        p = PiecewiseDensity(edges, m)
        assert p.crps(0.5005) <= 1e-3

    def test_matches_quadrature(self, rng):
        for _ in range(5):
            p = random_density(rng, bins=7, lo=-2.0, hi=3.0)
            for y in rng.uniform(-2, 3, 4):
                assert crps(p, y) == pytest.approx(_crps_numeric(p, y), abs=1e-9)

    def test_vectorized(self, two_bin):
        ys = np.array([0.1, 0.5, 0.9])
        np.testing.assert_allclose(two_bin.crps(ys), [two_bin.crps(y) for y in ys], atol=1e-14)


class TestWasserstein:
    def test_shift(self):
        a = PiecewiseDensity([0.0, 1.0, 2.0], [1.0, 0.0])
        b = PiecewiseDensity([0.0, 1.0, 2.0], [0.0, 1.0])
        assert a.wasserstein1(b) == pytest.approx(1.0)

    def test_symmetric_and_zero_on_self(self, rng):
        a, b = random_density(rng), random_density(rng)
        assert a.wasserstein1(a) == 0.0
        assert a.wasserstein1(b) == pytest.approx(b.wasserstein1(a), abs=1e-14)


# =============================================================================
# Payoff vectors
# =============================================================================


class TestPayoffVector:
    """Labelled inner products."""

    @pytest.mark.parametrize(
        "a,b,expected",
        [((1, 0), (0, 1), 0.0), ((3, 4), (3, 4), 25.0), ((1, -2, 3), (-1, 1, 1), 0.0)],
    )
    def test_inner_product(self, a, b, expected):
        labels = tuple(range(len(a)))
        assert inner_product(PayoffVector(labels, a), PayoffVector(labels, b)) == expected

    def test_label_mismatch(self):
        with pytest.raises(ContractViolation):
            inner_product(PayoffVector(("a", "b"), [1, 2]), PayoffVector(("a", "c"), [1, 2]))

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            PayoffVector(("a",), [1.0, 2.0])

    def test_block(self):
        v = PayoffVector((("q", 0.1), ("q", 0.2), ("m", 1)), [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(v.block("q"), [1.0, 2.0])


class TestUpdateAverage:
    """Running mean of payoff vectors."""

    def test_first_step(self):
        s = update_average(GameState(), PayoffVector(("a", "b"), [1.0, 0.0]))
        assert s.t == 1
        np.testing.assert_array_equal(s.avg_payoff.values, [1.0, 0.0])

    def test_two_steps(self):
        lab = ("a", "b")
        s = update_average(GameState(), PayoffVector(lab, [1.0, 0.0]))
        s = update_average(s, PayoffVector(lab, [0.0, 1.0]))
        np.testing.assert_allclose(s.avg_payoff.values, [0.5, 0.5])

    def test_constant_stream(self):
        s = GameState()
        for _ in range(3):
            s = update_average(s, PayoffVector(("x",), [3.0]))
        assert s.avg_payoff.values[0] == 3.0

    def test_label_change_rejected(self):
        s = update_average(GameState(), PayoffVector(("a",), [1.0]))
        with pytest.raises(ContractViolation):
            update_average(s, PayoffVector(("b",), [1.0]))

    def test_norm_recursion(self, rng):
        """t^2 |avg_t|^2 = (t-1)^2 |avg_{t-1}|^2 + 2(t-1)<avg_{t-1}, pi_t> + |pi_t|^2."""
        lab = tuple(range(4))
        s = GameState()
        prev = np.zeros(4)
        for t in range(1, 200):
            pi = rng.normal(size=4)
            s = update_average(s, PayoffVector(lab, pi))
            lhs = t * t * s.avg_payoff.norm2()
            rhs = (t - 1) ** 2 * prev @ prev + 2 * (t - 1) * prev @ pi + pi @ pi
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
            prev = s.avg_payoff.values.copy()

    def test_compensated_sum_long_stream(self):
        lab = ("x",)
        s = GameState()
        for _ in range(100_000):
            s = update_average(s, PayoffVector(lab, [0.1]))
        assert abs(s.avg_payoff.values[0] - 0.1) < 1e-15


def test_softmax_normalizes():
    p = softmax([1000.0, 1000.0, -1000.0])
    np.testing.assert_allclose(p, [0.5, 0.5, 0.0])
    assert math.isclose(p.sum(), 1.0)
