"""Async Monte-Carlo benchmark runner."""

from __future__ import annotations

import asyncio
import hashlib
import logging
import math
import time
from concurrent.futures import Executor
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from selgraph.events.progress import ProgressEmitter
from selgraph.models import IntervalResult, Method, Rule, RunConfig, SplitConfig
from selgraph.pipeline.inference import infer_all, infer_naive_all, infer_split_all
from selgraph.pipeline.metrics import METRIC_COLUMNS, aggregate, summarize
from selgraph.pipeline.selector import (
    RandomizationSpec,
    penalty_weights,
    select_edges,
    suff_stat,
)
from selgraph.pipeline.simdata import GraphSpec, generate_precision, sample_data

logger = logging.getLogger(__name__)

SWEEPS: dict[str, tuple[str, tuple[float, ...]]] = {
    "1": ("c", (0.4, 0.5, 0.6, 0.7, 0.8)),
    "2": ("m", (1, 2, 3, 4, 5)),
    "motivating": ("kappa", (0.5, 0.75, 1.0, 1.25, 1.5)),
    "randomization": ("tau", (0.5, 1.0, 2.0)),
}
RANDOMIZATION_SIZES = ((200, 10), (400, 20), (1000, 50))

SCENARIO_COLUMNS = ["setting", "swept", "value", "n", "p", "m", "c", "kappa", "omega_scale", "rule"]
COUNT_COLUMNS = ["n_selected", "n_reported", "n_true", "n_unbounded", "n_failed"]
ROW_COLUMNS = [*SCENARIO_COLUMNS, "rep", "method", *METRIC_COLUMNS, *COUNT_COLUMNS, "error", "config_hash"]
SUMMARY_KEYS = ["setting", "swept", "value", "n", "p", "m", "c", "kappa", "omega_scale", "rule", "method"]


@dataclass(frozen=True)
class Scenario:
    """One point of a benchmark sweep."""

    setting: str
    swept: str
    value: float
    n: int
    p: int
    m: int
    c: float
    kappa: float
    omega_scale: float
    rule: Rule

    @property
    def key(self) -> str:
        return f"{self.setting}:{self.swept}={self.value:g}:n={self.n}:p={self.p}"


def scenarios(config: RunConfig) -> list[Scenario]:
    """Expand a benchmark setting into its sweep points.

    Settings ``1`` and ``2`` use the configured n and p; ``motivating`` and
    ``randomization`` carry their own sizes.
    """
    if config.setting not in SWEEPS:
        raise ValueError(f"unknown setting {config.setting!r}; expected one of {sorted(SWEEPS)}")
    swept, defaults = SWEEPS[config.setting]
    values = tuple(config.values) if config.values else defaults

    base = dict(
        setting=config.setting,
        swept=swept,
        n=config.n,
        p=config.p,
        m=config.m,
        c=config.c,
        kappa=config.kappa,
        omega_scale=config.omega_scale,
        rule=config.rule,
    )
    out: list[Scenario] = []
    for value in values:
        if config.setting == "1":
            out.append(Scenario(**{**base, "value": value, "m": 2, "c": float(value)}))
        elif config.setting == "2":
            if value != int(value) or value < 1:
                raise ValueError(f"degree cap must be a positive integer, got {value}")
            out.append(Scenario(**{**base, "value": value, "m": int(value), "c": 1.0}))
        elif config.setting == "motivating":
            out.append(
                Scenario(**{**base, "value": value, "n": 200, "p": 10, "m": 2, "c": 0.6, "kappa": float(value)})
            )
        else:
            for n, p in RANDOMIZATION_SIZES:
                out.append(
                    Scenario(
                        **{
                            **base,
                            "value": value,
                            "n": n,
                            "p": p,
                            "m": 4,
                            "c": 0.6,
                            "kappa": 0.5,
                            "omega_scale": float(value),
                            "rule": Rule.AND,
                        }
                    )
                )
    return out


def replication_seed(seed: int, scenario: Scenario, rep: int) -> int:
    """Seed of one replication, independent of scheduling order."""
    digest = hashlib.sha256(f"{seed}|{scenario.key}|{rep}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _row(
    scenario: Scenario,
    rep: int,
    method: Method,
    config_hash: str,
    results: list[IntervalResult] | None = None,
    graph: GraphSpec | None = None,
    error: str = "",
) -> dict:
    row = {**asdict(scenario), "rule": scenario.rule.value, "rep": rep, "method": method.value}
    if results is not None and graph is not None:
        report = summarize(results, graph).model_dump()
        for col in (*METRIC_COLUMNS, *COUNT_COLUMNS):
            value = report[col]
            row[col] = math.nan if value is None else value
    else:
        row.update({col: math.nan for col in METRIC_COLUMNS})
        row.update({col: 0 for col in COUNT_COLUMNS})
    row["error"] = error
    row["config_hash"] = config_hash
    return row


def run_replication(scenario: Scenario, rep: int, config: RunConfig) -> list[dict]:
    """Simulate one dataset and run every requested method on it."""
    config_hash = config.config_hash()
    rep_seed = replication_seed(config.seed, scenario, rep)
    graph_seed, data_seed, omega_seed = (
        int(x) for x in np.random.SeedSequence(rep_seed).generate_state(3, dtype=np.uint64)
    )
    graph = generate_precision(scenario.p, scenario.m, scenario.c, graph_seed)
    data = sample_data(graph, scenario.n, data_seed)
    split_cfg = SplitConfig(
        alpha=config.alpha, kappa=scenario.kappa, rule=scenario.rule, eps=config.split_config().eps
    )

    rows = []
    for method in config.methods:
        try:
            if method is Method.proposed:
                suff = suff_stat(data)
                lambdas = penalty_weights(data, config.alpha, scenario.kappa)
                randomization = RandomizationSpec.isotropic(scenario.p, scenario.omega_scale, omega_seed)
                event = select_edges(suff, lambdas, config.eps, randomization, scenario.rule)
                results = infer_all(event, suff, config.alpha, config.grid)
            elif method is Method.split:
                _, results = infer_split_all(data, config.alpha, split_cfg, config.grid)
            else:
                _, results = infer_naive_all(data, config.alpha, split_cfg, config.grid)
            rows.append(_row(scenario, rep, method, config_hash, results, graph))
        except Exception as exc:
            logger.error("%s rep %d: %s failed: %s", scenario.key, rep, method.value, exc)
            rows.append(_row(scenario, rep, method, config_hash, error=str(exc) or type(exc).__name__))
    return rows


def rows_frame(rows: list[dict]) -> pd.DataFrame:
    """Rows in a fixed column order, sorted independently of completion order."""
    frame = pd.DataFrame(rows, columns=ROW_COLUMNS)
    frame = frame.sort_values(["setting", "value", "n", "p", "rep", "method"], kind="mergesort")
    return frame.reset_index(drop=True)


def summarize_frame(frame: pd.DataFrame) -> pd.DataFrame:
    return aggregate(frame, SUMMARY_KEYS)


async def run_benchmark(
    config: RunConfig,
    emitter: ProgressEmitter,
    *,
    executor: Executor | None = None,
) -> pd.DataFrame:
    """Run every replication of every scenario and collect per-method rows.

    Replications run in ``executor`` with at most ``config.threads`` in flight.
    One ``replication.completed`` or ``replication.failed`` event is emitted
    per replication; the emitter is closed on return.
    """
    plan = [(sc, rep) for sc in scenarios(config) for rep in range(config.reps)]
    started = time.monotonic()
    emitter.emit("benchmark.started", {
        "setting": config.setting,
        "scenarios": len(plan) // max(config.reps, 1),
        "replications": len(plan),
        "methods": [m.value for m in config.methods],
    })

    semaphore = asyncio.Semaphore(max(1, config.threads))
    loop = asyncio.get_running_loop()
    rows: list[dict] = []

    async def worker(scenario: Scenario, rep: int) -> None:
        async with semaphore:
            try:
                result = await loop.run_in_executor(executor, run_replication, scenario, rep, config)
                rows.extend(result)
                emitter.emit("replication.completed", {
                    "scenario": scenario.key,
                    "rep": rep,
                    "failed_methods": [r["method"] for r in result if r["error"]],
                })
            except Exception as exc:
                logger.error("Replication %s/%d failed: %s", scenario.key, rep, exc)
                config_hash = config.config_hash()
                rows.extend(
                    _row(scenario, rep, m, config_hash, error=str(exc) or type(exc).__name__)
                    for m in config.methods
                )
                emitter.emit("replication.failed", {
                    "scenario": scenario.key,
                    "rep": rep,
                    "error": str(exc),
                })

    try:
        await asyncio.gather(*(worker(sc, rep) for sc, rep in plan))
        frame = rows_frame(rows)
        emitter.emit("benchmark.completed", {
            "rows": len(frame),
            "failed_rows": int((frame["error"] != "").sum()),
            "duration_seconds": round(time.monotonic() - started, 1),
        })
        return frame
    finally:
        emitter.close()
