"""Shared fixtures for the selgraph test suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from selgraph.events.progress import ProgressEmitter
from selgraph.jobs.registry import RunRegistry
from selgraph.models import GridConfig, Rule, RunConfig
from selgraph.pipeline.selector import (
    RandomizationSpec,
    SelectionEvent,
    SuffStat,
    penalty_weights,
    select_edges,
    suff_stat,
)
from selgraph.pipeline.simdata import GraphSpec, sample_data, support_edges


def graph_from_theta(theta: np.ndarray, m: int = 2, c: float = 0.6) -> GraphSpec:
    """GraphSpec around a hand-written precision matrix."""
    sigma = np.linalg.inv(theta)
    return GraphSpec(
        p=theta.shape[0],
        m=m,
        c=c,
        theta=theta,
        sigma=(sigma + sigma.T) / 2,
        true_edges=support_edges(theta),
        positions=np.zeros((theta.shape[0], 2)),
    )


def chain_theta(p: int = 5, weight: float = 0.4) -> np.ndarray:
    theta = np.eye(p)
    for j in range(p - 1):
        theta[j, j + 1] = theta[j + 1, j] = weight
    return theta


@pytest.fixture
def chain_graph() -> GraphSpec:
    """Five-node chain with strong edges, so selection is never empty."""
    return graph_from_theta(chain_theta())


@pytest.fixture
def chain_data(chain_graph: GraphSpec) -> np.ndarray:
    return sample_data(chain_graph, n=300, seed=11)


@pytest.fixture
def chain_suff(chain_data: np.ndarray) -> SuffStat:
    return suff_stat(chain_data)


@pytest.fixture
def chain_event(chain_data: np.ndarray, chain_suff: SuffStat) -> SelectionEvent:
    """Randomized OR-rule selection on the chain data."""
    lambdas = penalty_weights(chain_data, alpha=0.1, kappa=0.5)
    randomization = RandomizationSpec.isotropic(chain_suff.p, 1.0, seed=7)
    return select_edges(chain_suff, lambdas, 1.0, randomization, Rule.OR)


@pytest.fixture
def small_grid() -> GridConfig:
    """Coarser grid for fast tests."""
    return GridConfig(points=301)


@pytest.fixture
def run_registry(tmp_path: Path) -> RunRegistry:
    return RunRegistry(tmp_path / "run")


@pytest.fixture
def progress_emitter() -> ProgressEmitter:
    return ProgressEmitter(buffer_size=50)


@pytest.fixture
def make_config(tmp_path: Path):
    """Factory for RunConfig with output under tmp_path."""

    def _make(command: str = "simulate", **kwargs) -> RunConfig:
        kwargs.setdefault("out_dir", tmp_path / "out")
        return RunConfig(command=command, **kwargs)

    return _make
