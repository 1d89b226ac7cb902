"""Sparse precision matrices on random geometric graphs and Gaussian samples."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.stats import norm

logger = logging.getLogger(__name__)

PD_FLOOR = 1e-6
REPAIR_FACTOR = 0.9
MAX_REPAIRS = 20


class GraphGenerationError(RuntimeError):
    """Raised when a positive definite precision matrix cannot be produced."""


@dataclass(frozen=True)
class GraphSpec:
    p: int
    m: int
    c: float
    theta: np.ndarray
    sigma: np.ndarray
    true_edges: frozenset[tuple[int, int]]
    positions: np.ndarray = field(repr=False)

    @property
    def edge_count(self) -> int:
        return len(self.true_edges)

    def degrees(self) -> np.ndarray:
        return np.count_nonzero(self.theta - np.diag(np.diag(self.theta)), axis=1)


def support_edges(theta: np.ndarray) -> frozenset[tuple[int, int]]:
    """Unordered off-diagonal support of a symmetric matrix, as (j, k) with j < k."""
    rows, cols = np.nonzero(np.triu(theta, k=1))
    return frozenset((int(j), int(k)) for j, k in zip(rows, cols))


def _prune_to_degree(
    edges: list[tuple[int, int]], p: int, m: int, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Remove random edges touching over-degree nodes until every degree is <= m."""
    edges = sorted(edges)
    degree = np.zeros(p, dtype=int)
    for j, k in edges:
        degree[j] += 1
        degree[k] += 1

    while True:
        violating = [
            idx for idx, (j, k) in enumerate(edges) if degree[j] > m or degree[k] > m
        ]
        if not violating:
            return edges
        j, k = edges.pop(violating[int(rng.integers(len(violating)))])
        degree[j] -= 1
        degree[k] -= 1


def generate_precision(p: int, m: int, c: float, seed: int) -> GraphSpec:
    """Draw a sparse precision matrix on a random geometric graph.

    Nodes get uniform positions on the unit square; each pair is linked with
    probability phi(d / sqrt(p)). Edges are then pruned at random until no node
    has more than ``m`` neighbours, and every retained edge gets a weight drawn
    from Unif(0, c/m) on a unit diagonal.

    Args:
        p: Number of nodes, at least 2.
        m: Degree cap.
        c: Signal magnitude in (0, 1].
        seed: Seed for a ``numpy.random.default_rng`` (PCG64) generator.

    Returns:
        The generated GraphSpec.
    """
    if p < 2:
        raise ValueError(f"p must be at least 2, got {p}")
    if m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    if not 0.0 < c <= 1.0:
        raise ValueError(f"c must lie in (0, 1], got {c}")

    rng = np.random.default_rng(seed)
    positions = rng.uniform(size=(p, 2))

    drawn: list[tuple[int, int]] = []
    for j, k in combinations(range(p), 2):
        dist = np.linalg.norm(positions[j] - positions[k])
        if rng.uniform() < norm.pdf(dist / np.sqrt(p)):
            drawn.append((j, k))
    edges = _prune_to_degree(drawn, p, m, rng)

    theta = np.eye(p)
    high = c / m
    for j, k in edges:
        value = rng.uniform(0.0, high)
        while value <= 0.0:
            value = rng.uniform(0.0, high)
        theta[j, k] = theta[k, j] = value

    for attempt in range(MAX_REPAIRS + 1):
        if np.linalg.eigvalsh(theta)[0] > PD_FLOOR:
            break
        if attempt == MAX_REPAIRS:
            raise GraphGenerationError(
                f"precision matrix not positive definite after {MAX_REPAIRS} rescalings"
            )
        logger.warning("Rescaling off-diagonal precision entries (attempt %d)", attempt + 1)
        off = theta - np.eye(p)
        theta = np.eye(p) + REPAIR_FACTOR * off

    sigma = np.linalg.inv(theta)
    sigma = (sigma + sigma.T) / 2.0

    return GraphSpec(
        p=p,
        m=m,
        c=c,
        theta=theta,
        sigma=sigma,
        true_edges=support_edges(theta),
        positions=positions,
    )


def sample_data(spec: GraphSpec, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. rows from N_p(0, sigma)."""
    if n <= spec.p + 1:
        raise ValueError(f"n must exceed p + 1 = {spec.p + 1}, got n={n}")
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(spec.sigma)
    return rng.standard_normal((n, spec.p)) @ chol.T
