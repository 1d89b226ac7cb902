"""CSV and JSON codecs for datasets, graphs, selections and interval results."""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import TypeAdapter

from selgraph.models import IntervalResult, NodeRecord, Rule, SelectionRecord
from selgraph.pipeline.selector import (
    NodewiseSolution,
    RandomizationSpec,
    SelectionEvent,
    SuffStat,
    combine,
    verify_kkt,
)
from selgraph.pipeline.simdata import GraphSpec

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
SELECTION_KKT_TOL = 1e-6

_results_adapter = TypeAdapter(list[IntervalResult])
_LINE_RE = re.compile(r"line (\d+)")


class DataFormatError(ValueError):
    """Malformed CSV input, with the 1-based line number of the first bad row."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_data_csv(path: Path) -> np.ndarray:
    """Read an n x p numeric matrix with a header row."""
    try:
        raw = pd.read_csv(
            path, dtype=str, keep_default_na=False, index_col=False, engine="python"
        )
    except pd.errors.ParserError as exc:
        match = _LINE_RE.search(str(exc))
        raise DataFormatError(int(match.group(1)) if match else 0, "ragged row") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataFormatError(1, "empty file") from exc

    if raw.shape[1] < 2:
        raise DataFormatError(1, f"expected at least two columns, got {raw.shape[1]}")

    # Header is line 1, so data row r sits on line r + 2.
    for row_idx, row in enumerate(raw.itertuples(index=False)):
        for col, cell in zip(raw.columns, row):
            cell = cell.strip() if isinstance(cell, str) else cell
            if not isinstance(cell, str) or cell == "":
                raise DataFormatError(row_idx + 2, f"missing value in column {col!r}")
            try:
                value = float(cell)
            except ValueError:
                raise DataFormatError(
                    row_idx + 2, f"non-numeric value {cell!r} in column {col!r}"
                ) from None
            if not np.isfinite(value):
                raise DataFormatError(row_idx + 2, f"non-finite value in column {col!r}")

    return raw.astype(float).to_numpy()


def _matrix_frame(values: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame(values, columns=[f"x{j + 1}" for j in range(values.shape[1])])


def write_data_csv(path: Path, data: np.ndarray) -> Path:
    """Header x1..xp, one row per sample, 17 significant digits."""
    path.parent.mkdir(parents=True, exist_ok=True)
    _matrix_frame(np.asarray(data, dtype=float)).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
    )
    return path


def write_theta_csv(path: Path, theta: np.ndarray) -> Path:
    return write_data_csv(path, theta)


def read_theta_csv(path: Path) -> np.ndarray:
    theta = read_data_csv(path)
    if theta.shape[0] != theta.shape[1]:
        raise DataFormatError(1, f"precision matrix must be square, got {theta.shape}")
    return theta


def write_edges_json(path: Path, graph: GraphSpec) -> Path:
    """True edge set as a sorted array of 0-indexed ``[j, k]`` pairs with j < k."""
    payload = [[int(j), int(k)] for j, k in sorted(graph.true_edges)]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload) + "\n", encoding="utf-8")
    return path


def selection_record(
    event: SelectionEvent,
    *,
    n: int,
    alpha: float,
    kappa: float,
    omega_scale: float,
    seed: int,
    config_hash: str = "",
) -> SelectionRecord:
    """Flatten a selection event into its serializable conditioning record."""
    if event.suff is None:
        raise ValueError("selection event carries no sufficient statistic")
    nodes = [
        NodeRecord(
            node=sol.node,
            lam=sol.lam,
            omega=sol.omega.tolist(),
            active_set=list(sol.active_set),
            signs=sol.signs.tolist(),
            coef=sol.active_coef.tolist(),
            subgrad=sol.inactive_subgrad.tolist(),
            kkt_residual=verify_kkt(sol, event.suff),
        )
        for sol in event.solutions
    ]
    return SelectionRecord(
        n=n,
        p=event.p,
        rule=event.rule,
        eps=event.solutions[0].ridge if event.solutions else 0.0,
        alpha=alpha,
        kappa=kappa,
        omega_scale=omega_scale,
        seed=seed,
        nodes=nodes,
        edges=event.sorted_edges(),
        config_hash=config_hash,
    )


def write_selection_json(path: Path, record: SelectionRecord) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def read_selection_json(path: Path) -> SelectionRecord:
    return SelectionRecord.model_validate_json(path.read_text(encoding="utf-8"))


def selection_event(record: SelectionRecord, suff: SuffStat) -> SelectionEvent:
    """Rebuild a selection event and check it is consistent with ``suff``.

    Raises:
        ValueError: if dimensions disagree or a node violates its KKT identity.
    """
    if suff.p != record.p or suff.n != record.n:
        raise ValueError(
            f"selection was fitted on n={record.n}, p={record.p}; "
            f"data has n={suff.n}, p={suff.p}"
        )
    solutions = []
    for node in record.nodes:
        sol = NodewiseSolution(
            node=node.node,
            lam=node.lam,
            ridge=record.eps,
            omega=np.asarray(node.omega, dtype=float),
            active_set=tuple(node.active_set),
            signs=np.asarray(node.signs, dtype=int),
            active_coef=np.asarray(node.coef, dtype=float),
            inactive_subgrad=np.asarray(node.subgrad, dtype=float),
            p=record.p,
        )
        residual = verify_kkt(sol, suff)
        if residual > SELECTION_KKT_TOL:
            raise ValueError(
                f"node {node.node}: KKT residual {residual:.3e} against the supplied data"
            )
        solutions.append(sol)

    randomization = RandomizationSpec.isotropic(record.p, record.omega_scale, record.seed)
    event = combine(solutions, Rule(record.rule), suff=suff, randomization=randomization)
    if event.sorted_edges() != [tuple(e) for e in record.edges]:
        raise ValueError("edge list does not match the recorded active sets")
    return event


def write_results_json(path: Path, results: Sequence[IntervalResult]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_results_adapter.dump_json(list(results), indent=2, exclude_none=True) + b"\n")
    return path


def read_results_json(path: Path) -> list[IntervalResult]:
    return _results_adapter.validate_json(path.read_bytes())
