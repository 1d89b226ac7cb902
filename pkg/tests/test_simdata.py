"""Tests for precision-matrix generation and sampling."""

from __future__ import annotations

import numpy as np
import pytest

from selgraph.pipeline.simdata import generate_precision, sample_data, support_edges

from tests.conftest import chain_theta, graph_from_theta


class TestGeneratePrecision:
    def test_same_seed_is_deterministic(self):
        a = generate_precision(20, 2, 0.6, seed=5)
        b = generate_precision(20, 2, 0.6, seed=5)
        np.testing.assert_array_equal(a.theta, b.theta)
        assert a.true_edges == b.true_edges

    def test_different_seeds_differ(self):
        a = generate_precision(20, 2, 0.6, seed=5)
        b = generate_precision(20, 2, 0.6, seed=6)
        assert not np.array_equal(a.theta, b.theta)

    @pytest.mark.parametrize("seed", range(10))
    def test_invariants(self, seed: int):
        spec = generate_precision(20, 3, 0.8, seed=seed)
        theta = spec.theta
        np.testing.assert_array_equal(theta, theta.T)
        np.testing.assert_array_equal(np.diag(theta), np.ones(20))
        assert np.linalg.eigvalsh(theta)[0] > 0
        assert spec.degrees().max(initial=0) <= 3

        off = theta[np.triu_indices(20, k=1)]
        nonzero = off[off != 0]
        assert np.all(nonzero > 0)
        assert np.all(nonzero <= 0.8 / 3)

    def test_relabeling_leaves_degree_distribution_unchanged(self):
        """Node 0 of a relabeled graph has the same degree law as node 0 of the original."""
        p, seeds = 8, 600
        perm = np.array([5, 2, 7, 0, 3, 6, 1, 4])
        original = np.zeros(3)
        relabeled = np.zeros(3)
        for seed in range(seeds):
            spec = generate_precision(p, 2, 0.6, seed=seed)
            degrees = spec.degrees()
            original[degrees[0]] += 1
            relabeled[degrees[perm][0]] += 1

        assert original.sum() == relabeled.sum() == seeds
        share = (original + relabeled) / (2 * seeds)
        sigma = np.sqrt(2 * seeds * share * (1 - share))
        assert np.all(np.abs(original - relabeled) <= 3 * sigma + 1)

    def test_single_edge_degree_cap(self):
        spec = generate_precision(10, 1, 1.0, seed=3)
        assert spec.degrees().max(initial=0) <= 1

    def test_true_edges_match_support(self):
        spec = generate_precision(15, 2, 0.6, seed=9)
        assert spec.true_edges == support_edges(spec.theta)
        assert all(j < k for j, k in spec.true_edges)

    def test_sigma_is_inverse(self):
        spec = generate_precision(12, 2, 0.6, seed=1)
        np.testing.assert_allclose(spec.sigma @ spec.theta, np.eye(12), atol=1e-10)

    @pytest.mark.parametrize(
        "p,m,c",
        [(1, 2, 0.5), (5, 0, 0.5), (5, 2, 0.0), (5, 2, 1.5)],
    )
    def test_rejects_invalid_arguments(self, p: int, m: int, c: float):
        with pytest.raises(ValueError):
            generate_precision(p, m, c, seed=0)


class TestSampleData:
    def test_shape_and_determinism(self):
        spec = generate_precision(6, 2, 0.6, seed=2)
        x1 = sample_data(spec, 50, seed=4)
        x2 = sample_data(spec, 50, seed=4)
        assert x1.shape == (50, 6)
        np.testing.assert_array_equal(x1, x2)

    def test_rejects_too_few_rows(self):
        spec = generate_precision(6, 2, 0.6, seed=2)
        with pytest.raises(ValueError, match="p \\+ 1"):
            sample_data(spec, 7, seed=0)

    @pytest.mark.parametrize("seed", [8, 9, 10])
    def test_sample_covariance_within_entrywise_bound(self, seed: int):
        spec = graph_from_theta(chain_theta(4, 0.3))
        n = 50 * spec.p * 20
        x = sample_data(spec, n, seed=seed)
        sigma = spec.sigma
        sd = np.sqrt(np.outer(np.diag(sigma), np.diag(sigma)) + sigma**2)
        bound = 5 * np.sqrt(2 / n) * sd
        assert np.all(np.abs(x.T @ x / n - sigma) <= bound)

    def test_generated_graph_covariance_within_entrywise_bound(self):
        spec = generate_precision(10, 2, 0.6, seed=4)
        n = 50 * spec.p
        x = sample_data(spec, n, seed=12)
        sigma = spec.sigma
        sd = np.sqrt(np.outer(np.diag(sigma), np.diag(sigma)) + sigma**2)
        assert np.all(np.abs(x.T @ x / n - sigma) <= 5 * np.sqrt(2 / n) * sd)
