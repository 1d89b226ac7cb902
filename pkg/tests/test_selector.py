"""Tests for the randomized nodewise Lasso and edge combination."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from selgraph.models import Rule
from selgraph.pipeline.selector import (
    ConvergenceError,
    RandomizationSpec,
    combine,
    kkt_map,
    nodewise_objective,
    penalty_weights,
    solve_node,
    suff_stat,
    verify_kkt,
)
from selgraph.pipeline.simdata import generate_precision, sample_data


def proximal_gradient(s, i, lam, eps, omega, iters=20_000):
    """Plain ISTA on the same objective, used as an oracle."""
    pred = np.delete(np.arange(s.shape[0]), i)
    a = s[np.ix_(pred, pred)] + eps * np.eye(len(pred))
    u = s[pred, i] + omega
    step = 1.0 / np.linalg.eigvalsh(a)[-1]
    b = np.zeros(len(pred))
    for _ in range(iters):
        g = a @ b - u
        v = b - step * g
        b = np.sign(v) * np.maximum(np.abs(v) - step * lam, 0.0)
    return b


def random_suff(seed: int, p: int = 6, n: int = 80):
    spec = generate_precision(p, 2, 0.8, seed=seed)
    return suff_stat(sample_data(spec, n, seed=seed + 100))


class TestSuffStat:
    def test_symmetric_cross_product(self, chain_data):
        suff = suff_stat(chain_data)
        np.testing.assert_array_equal(suff.s, suff.s.T)
        assert suff.n == 300
        assert suff.p == 5
        assert suff.is_pd()

    def test_rejects_short_data(self):
        with pytest.raises(ValueError, match="n > p \\+ 1"):
            suff_stat(np.ones((4, 3)))

    def test_rejects_non_finite(self):
        data = np.ones((10, 3))
        data[2, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            suff_stat(data)


class TestPenaltyWeights:
    def test_matches_formula(self, chain_data):
        from scipy.stats import norm

        lam = penalty_weights(chain_data, alpha=0.1, kappa=1.0)
        n, p = chain_data.shape
        sigma = np.sqrt((chain_data**2).sum(axis=0) / n)
        expected = 2 * np.sqrt(n) * sigma * norm.isf(0.1 / (2 * p**2))
        np.testing.assert_allclose(lam, expected)

    def test_kappa_scales_linearly(self, chain_data):
        base = penalty_weights(chain_data, 0.1, 1.0)
        np.testing.assert_allclose(penalty_weights(chain_data, 0.1, 0.5), 0.5 * base)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_rejects_bad_alpha(self, chain_data, alpha):
        with pytest.raises(ValueError):
            penalty_weights(chain_data, alpha)


class TestSolveNode:
    def test_kkt_residual_below_tolerance(self, chain_suff):
        rng = np.random.default_rng(0)
        for i in range(chain_suff.p):
            sol = solve_node(chain_suff, i, 40.0, 1.0, rng.standard_normal(4))
            assert verify_kkt(sol, chain_suff) <= 1e-8
            assert np.all(np.abs(sol.inactive_subgrad) <= 1.0)
            np.testing.assert_array_equal(np.sign(sol.active_coef), sol.signs)

    def test_huge_penalty_gives_empty_active_set(self, chain_suff):
        omega = np.zeros(4)
        lam = 10 * np.abs(chain_suff.s).max()
        sol = solve_node(chain_suff, 0, lam, 1.0, omega)
        assert sol.active_set == ()
        np.testing.assert_allclose(sol.inactive_subgrad, chain_suff.s[1:, 0] / lam)
        np.testing.assert_allclose(kkt_map(chain_suff.s, sol, np.zeros(0), sol.inactive_subgrad), omega, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_objective_matches_proximal_gradient(self, seed):
        suff = random_suff(seed)
        rng = np.random.default_rng(seed)
        omega = rng.standard_normal(suff.p - 1)
        lam = 0.3 * np.abs(suff.s).max() / suff.p
        sol = solve_node(suff, 2, lam, 1.0, omega)
        oracle = proximal_gradient(suff.s, 2, lam, 1.0, omega)
        expected = nodewise_objective(suff, 2, lam, 1.0, omega, oracle)
        assert abs(sol.objective - expected) <= 1e-6 * max(1.0, abs(expected))

    @pytest.mark.parametrize("omega,lam", [(0.7, 5.0), (-3.0, 5.0), (0.0, 1e6)])
    def test_single_predictor_closed_form(self, omega, lam):
        data = np.random.default_rng(21).standard_normal((40, 2)) @ np.array([[1.0, 0.5], [0.0, 1.0]])
        suff = suff_stat(data)
        sol = solve_node(suff, 0, lam, 1.0, np.array([omega]))
        u = suff.s[0, 1] + omega
        expected = np.sign(u) * max(abs(u) - lam, 0.0) / (suff.s[1, 1] + 1.0)
        if expected == 0.0:
            assert sol.active_set == ()
        else:
            assert sol.active_set == (1,)
            assert sol.active_coef[0] == pytest.approx(expected, rel=1e-12)

    def test_repeated_calls_are_bit_identical(self, chain_suff):
        omega = np.random.default_rng(5).standard_normal(4)
        first = solve_node(chain_suff, 3, 25.0, 1.0, omega)
        second = solve_node(chain_suff, 3, 25.0, 1.0, omega)
        assert first.active_set == second.active_set
        np.testing.assert_array_equal(first.signs, second.signs)
        np.testing.assert_array_equal(first.active_coef, second.active_coef)
        np.testing.assert_array_equal(first.inactive_subgrad, second.inactive_subgrad)

    @pytest.mark.parametrize("seed", range(5))
    def test_objective_below_random_points(self, seed):
        suff = random_suff(seed, p=8, n=100)
        rng = np.random.default_rng(seed)
        omega = rng.standard_normal(suff.p - 1)
        lam = 0.2 * np.abs(suff.s).max() / suff.p
        sol = solve_node(suff, 1, lam, 1.0, omega)

        b_hat = np.zeros(suff.p - 1)
        b_hat[sol.positions(sol.active_set)] = sol.active_coef
        assert sol.objective == pytest.approx(nodewise_objective(suff, 1, lam, 1.0, omega, b_hat))
        spread = max(float(np.abs(b_hat).max(initial=0.0)), 0.1)
        scales = spread * np.logspace(-4, 1, 1000)
        for scale in scales:
            trial = b_hat + scale * rng.standard_normal(suff.p - 1)
            value = nodewise_objective(suff, 1, lam, 1.0, omega, trial)
            assert sol.objective <= value + 1e-9 * max(1.0, abs(value))

    def test_objective_trace_is_non_increasing(self, chain_suff):
        trace: list[float] = []
        solve_node(chain_suff, 1, 30.0, 1.0, np.zeros(4), trace=trace)
        assert trace
        assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))

    def test_convergence_error_on_sweep_cap(self, chain_suff):
        with pytest.raises(ConvergenceError):
            solve_node(chain_suff, 0, 30.0, 1.0, np.zeros(4), tol=0.0, max_sweeps=1)

    def test_rejects_non_positive_penalty(self, chain_suff):
        with pytest.raises(ValueError):
            solve_node(chain_suff, 0, 0.0, 1.0, np.zeros(4))

    def test_rejects_bad_omega_length(self, chain_suff):
        with pytest.raises(ValueError, match="omega"):
            solve_node(chain_suff, 0, 10.0, 1.0, np.zeros(3))

    @hyp_settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), node=st.integers(0, 4), scale=st.floats(0.05, 0.8))
    def test_kkt_identity_property(self, seed, node, scale):
        suff = random_suff(seed, p=5, n=60)
        omega = np.random.default_rng(seed).standard_normal(4)
        lam = scale * np.abs(suff.s[node]).max()
        sol = solve_node(suff, node, lam, 1.0, omega)
        assert verify_kkt(sol, suff) <= 1e-8 * max(1.0, np.abs(suff.s).max())


class TestKKTMap:
    def test_dimension_mismatch(self, chain_suff):
        sol = solve_node(chain_suff, 0, 30.0, 1.0, np.zeros(4))
        with pytest.raises(ValueError, match="expected b"):
            kkt_map(chain_suff.s, sol, np.zeros(sol.q + 1), sol.inactive_subgrad)

    def test_reproduces_omega(self, chain_suff):
        omega = np.random.default_rng(3).standard_normal(4)
        sol = solve_node(chain_suff, 2, 30.0, 1.0, omega)
        eta = kkt_map(chain_suff.s, sol, sol.active_coef, sol.inactive_subgrad)
        np.testing.assert_allclose(eta, omega, atol=1e-8)


class TestRandomizationSpec:
    def test_draws_are_reproducible(self):
        spec = RandomizationSpec.isotropic(5, 1.0, seed=3)
        np.testing.assert_array_equal(spec.draw(2), spec.draw(2))
        assert not np.array_equal(spec.draw(1), spec.draw(2))

    def test_scale_multiplies_draw(self):
        unit = RandomizationSpec.isotropic(5, 1.0, seed=3)
        wide = RandomizationSpec.isotropic(5, 2.0, seed=3)
        np.testing.assert_allclose(wide.draw(0), 2.0 * unit.draw(0))

    def test_rejects_non_pd_covariance(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(ValueError, match="positive definite"):
            RandomizationSpec(covariances=(bad, bad, bad), seed=0)


class TestCombine:
    def test_and_subset_of_or(self, chain_suff, chain_data):
        lambdas = penalty_weights(chain_data, 0.1, 0.5)
        omega = RandomizationSpec.isotropic(5, 1.0, seed=7)
        sols = [solve_node(chain_suff, i, lambdas[i], 1.0, omega.draw(i)) for i in range(5)]
        and_edges = combine(sols, Rule.AND).edges
        or_edges = combine(sols, Rule.OR).edges
        assert and_edges <= or_edges
        assert all(j < k for j, k in or_edges)

    def test_rule_semantics(self, chain_suff):
        sols = [solve_node(chain_suff, i, 1e9, 1.0, np.zeros(4)) for i in range(5)]
        # Node 0 gets neighbour 1 by hand; node 1 stays empty.
        sols[0] = replace(sols[0], active_set=(1,))
        assert combine(sols, "or").edges == {(0, 1)}
        assert combine(sols, "and").edges == frozenset()

    def test_requires_one_solution_per_node(self, chain_suff):
        sol = solve_node(chain_suff, 0, 30.0, 1.0, np.zeros(4))
        with pytest.raises(ValueError, match="one solution per node"):
            combine([sol, sol], Rule.OR)

    def test_chain_selection_finds_edges(self, chain_event):
        assert (0, 1) in chain_event.edges
        assert chain_event.sorted_edges() == sorted(chain_event.edges)
