"""Evaluation metrics for single runs and Monte-Carlo batches."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence

import numpy as np
import pandas as pd

from selgraph.models import IntervalResult, MetricsReport
from selgraph.pipeline.simdata import GraphSpec

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "coverage_rate",
    "avg_length",
    "precision",
    "recall",
    "f1",
    "selection_power",
    "conditional_power",
)

Edge = tuple[int, int]


def _usable(results: Iterable[IntervalResult]) -> list[IntervalResult]:
    return [r for r in results if r.error is None]


def coverage_rate(results: Sequence[IntervalResult], truth: GraphSpec) -> float | None:
    """Fraction of intervals containing the true precision entry.

    Returns None for an empty selection; failed edges are left out.
    """
    usable = _usable(results)
    if not usable:
        return None
    hits = sum(r.covers(float(truth.theta[r.edge])) for r in usable)
    return hits / len(usable)


def avg_length(results: Sequence[IntervalResult]) -> float | None:
    """Mean length over bounded intervals; None when none is bounded."""
    lengths = [r.length for r in _usable(results) if r.bounded]
    if not lengths:
        return None
    return float(np.mean(lengths))


def count_unbounded(results: Sequence[IntervalResult]) -> int:
    return sum(not r.bounded for r in _usable(results))


def reported_edges(results: Sequence[IntervalResult]) -> set[Edge]:
    return {r.edge for r in _usable(results) if r.significant}


def precision_recall_f1(
    results: Sequence[IntervalResult], true_edges: Iterable[Edge]
) -> tuple[float | None, float | None, float]:
    """Precision and recall of the significant edges, and their harmonic mean."""
    reported = reported_edges(results)
    truth = set(true_edges)
    hits = len(reported & truth)
    precision = hits / len(reported) if reported else None
    recall = hits / len(truth) if truth else None
    if precision is None or recall is None or precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def selection_power(selected: Iterable[Edge], true_edges: Iterable[Edge]) -> float | None:
    """Share of true edges that survive selection."""
    truth = set(true_edges)
    if not truth:
        return None
    return len(set(selected) & truth) / len(truth)


def conditional_power(
    results: Sequence[IntervalResult], true_edges: Iterable[Edge]
) -> float | None:
    """Share of selected true edges that are also declared significant."""
    truth = set(true_edges)
    selected_true = {r.edge for r in results} & truth
    if not selected_true:
        return None
    return len(reported_edges(results) & selected_true) / len(selected_true)


def summarize(results: Sequence[IntervalResult], truth: GraphSpec) -> MetricsReport:
    truth_edges = truth.true_edges
    precision, recall, f1 = precision_recall_f1(results, truth_edges)
    return MetricsReport(
        coverage_rate=coverage_rate(results, truth),
        avg_length=avg_length(results),
        precision=precision,
        recall=recall,
        f1=f1,
        selection_power=selection_power((r.edge for r in results), truth_edges),
        conditional_power=conditional_power(results, truth_edges),
        n_selected=len(results),
        n_reported=len(reported_edges(results)),
        n_true=len(truth_edges),
        n_unbounded=count_unbounded(results),
        n_failed=len(results) - len(_usable(results)),
    )


def aggregate(rows: pd.DataFrame, by: Sequence[str]) -> pd.DataFrame:
    """Per-group means, Monte-Carlo standard errors and exclusion counts.

    Undefined metrics (NaN) are excluded from the mean and counted in
    ``<metric>_excluded``. Rows with an ``error`` are dropped first.
    """
    frame = rows
    if "error" in frame.columns:
        failed = frame["error"].notna() & (frame["error"].astype(str) != "")
        if failed.any():
            logger.warning("Dropping %d failed replications from the summary", int(failed.sum()))
        frame = frame.loc[~failed]

    present = [col for col in METRIC_COLUMNS if col in frame.columns]
    grouped = frame.groupby(list(by), sort=True)
    values = grouped[present].agg(["mean", "sem", "count"])
    reps = grouped.size().rename("reps")

    out = pd.DataFrame(index=values.index)
    for col in present:
        out[f"{col}_mean"] = values[(col, "mean")]
        out[f"{col}_se"] = values[(col, "sem")]
        out[f"{col}_excluded"] = reps - values[(col, "count")]
    out["reps"] = reps
    return out.reset_index()
