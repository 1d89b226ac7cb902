"""Command-line entry point: simulate, fit, infer, benchmark, plot."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from selgraph.config import settings
from selgraph.events.progress import ProgressEmitter, log_progress
from selgraph.jobs.registry import RunRegistry
from selgraph.models import Command, GridConfig, Method, Rule, RunConfig
from selgraph.pipeline import artifacts
from selgraph.pipeline.inference import (
    failed_result,
    infer_all,
    infer_split_all,
    naive_interval,
)
from selgraph.pipeline.orchestrator import SWEEPS, run_benchmark, summarize_frame
from selgraph.pipeline.plots import read_metrics_csv, render_plots
from selgraph.pipeline.selector import (
    RandomizationSpec,
    penalty_weights,
    select_edges,
    suff_stat,
)
from selgraph.pipeline.simdata import generate_precision, sample_data

logger = logging.getLogger(__name__)

BENCHMARK_METHODS = {
    "motivating": [Method.proposed, Method.split, Method.naive],
}
DEFAULT_BENCHMARK_METHODS = [Method.proposed, Method.split]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selgraph",
        description="Selection-adjusted inference for Gaussian graphical models.",
    )
    parser.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    parser.add_argument("--threads", type=int, help=f"worker count (default {settings.threads})")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw a precision matrix and a dataset")
    sim.add_argument("--p", type=int)
    sim.add_argument("--n", type=int)
    sim.add_argument("--m", type=int)
    sim.add_argument("--c", type=float)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out-dir", type=Path)

    fit = sub.add_parser("fit", help="randomized neighbourhood selection")
    fit.add_argument("--data", type=Path, required=True)
    fit.add_argument("--alpha", type=float)
    fit.add_argument("--kappa", type=float)
    fit.add_argument("--eps", type=float)
    fit.add_argument("--omega-scale", type=float)
    fit.add_argument("--rule", choices=[r.value for r in Rule])
    fit.add_argument("--seed", type=int)
    fit.add_argument("--out-dir", type=Path)

    inf = sub.add_parser("infer", help="intervals for the selected edges")
    inf.add_argument("--data", type=Path, required=True)
    inf.add_argument("--selection", type=Path)
    inf.add_argument("--alpha", type=float)
    inf.add_argument("--method", choices=[m.value for m in Method])
    inf.add_argument("--grid-points", type=int)
    inf.add_argument("--scan-step", type=float, help="invert by scanning theta with this step")
    inf.add_argument("--dump-grid", type=Path, help="directory for per-edge grid CSVs")
    inf.add_argument("--out", type=Path)

    bench = sub.add_parser("benchmark", help="Monte-Carlo coverage, length and F1")
    bench.add_argument("--setting", choices=sorted(SWEEPS))
    bench.add_argument("--reps", type=int)
    bench.add_argument("--rule", choices=[r.value for r in Rule])
    bench.add_argument("--methods", nargs="+", choices=[m.value for m in Method])
    bench.add_argument("--values", nargs="+", type=float, help="restrict the swept values")
    bench.add_argument("--n", type=int)
    bench.add_argument("--p", type=int)
    bench.add_argument("--alpha", type=float)
    bench.add_argument("--seed", type=int)
    bench.add_argument("--grid-points", type=int)
    bench.add_argument("--plots", action="store_true", help="also render SVG charts")
    bench.add_argument("--out-dir", type=Path)

    plot = sub.add_parser("plot", help="render metrics.csv as SVG charts")
    plot.add_argument("--metrics", type=Path, required=True)
    plot.add_argument("--out-dir", type=Path)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Flags override the --config file, which overrides Settings defaults."""
    values: dict = {}
    if args.config is not None:
        values.update(json.loads(args.config.read_text(encoding="utf-8")))

    flags = {k: v for k, v in vars(args).items() if v is not None and k in RunConfig.model_fields}
    if getattr(args, "method", None):
        flags["methods"] = [args.method]
    values.update(flags)
    values["command"] = args.command

    if getattr(args, "grid_points", None) is not None:
        grid = values.get("grid") or GridConfig.from_settings().model_dump()
        values["grid"] = {**grid, "points": args.grid_points}
    if args.command == Command.benchmark.value and "methods" not in values:
        setting = values.get("setting", "1")
        values["methods"] = BENCHMARK_METHODS.get(setting, DEFAULT_BENCHMARK_METHODS)
    return RunConfig.model_validate(values)


def _simulate(config: RunConfig, run: RunRegistry) -> None:
    graph = generate_precision(config.p, config.m, config.c, config.seed)
    # data stream: seed + 1
    data = sample_data(graph, config.n, config.seed + 1)
    run.record(artifacts.write_data_csv(run.path("data.csv"), data))
    run.record(artifacts.write_theta_csv(run.path("theta.csv"), graph.theta))
    run.record(artifacts.write_edges_json(run.path("edges.json"), graph))
    logger.info("Simulated n=%d, p=%d with %d edges", config.n, config.p, graph.edge_count)


def _fit(config: RunConfig, run: RunRegistry) -> None:
    data = artifacts.read_data_csv(config.data)
    suff = suff_stat(data)
    lambdas = penalty_weights(data, config.alpha, config.kappa)
    randomization = RandomizationSpec.isotropic(suff.p, config.omega_scale, config.seed)
    event = select_edges(suff, lambdas, config.eps, randomization, config.rule, threads=config.threads)
    record = artifacts.selection_record(
        event,
        n=suff.n,
        alpha=config.alpha,
        kappa=config.kappa,
        omega_scale=config.omega_scale,
        seed=config.seed,
        config_hash=run.config_hash,
    )
    run.record(artifacts.write_selection_json(run.path("selection.json"), record))
    logger.info("Selected %d edges under the %s rule", len(event.edges), config.rule.value)


def _naive_or_failed(suff, edge: tuple[int, int], config: RunConfig):
    try:
        return naive_interval(suff, edge, config.alpha, config.grid)
    except Exception as exc:
        logger.error("Naive inference failed for edge %s: %s", edge, exc)
        return failed_result(edge, config.alpha, Method.naive, str(exc))


def _infer(config: RunConfig, run: RunRegistry, out: Path) -> None:
    data = artifacts.read_data_csv(config.data)
    method = config.methods[0]
    if method is Method.split:
        _, results = infer_split_all(
            data, config.alpha, config.split_config(), config.grid, threads=config.threads
        )
    else:
        if config.selection is None:
            raise ValueError(f"--selection is required for method {method.value}")
        suff = suff_stat(data)
        event = artifacts.selection_event(artifacts.read_selection_json(config.selection), suff)
        if method is Method.proposed:
            results = infer_all(
                event,
                suff,
                config.alpha,
                config.grid,
                threads=config.threads,
                dump_dir=config.dump_grid,
                scan_step=config.scan_step,
            )
        else:
            results = [_naive_or_failed(suff, e, config) for e in event.sorted_edges()]
    run.record(artifacts.write_results_json(out, results))
    logger.info(
        "%d intervals, %d significant", len(results), sum(r.significant for r in results)
    )


async def _run_benchmark_with_progress(config: RunConfig, log_path: Path):
    emitter = ProgressEmitter()
    drain = asyncio.create_task(log_progress(emitter.subscribe()))
    executor = ProcessPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        frame = await run_benchmark(config, emitter, executor=executor)
    finally:
        if executor is not None:
            executor.shutdown()
        emitter.write_log(log_path)
    await drain
    return frame


def _records(frame) -> list[dict]:
    records = frame.to_dict(orient="records")
    return [
        {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
        for row in records
    ]


def _benchmark(config: RunConfig, run: RunRegistry, plots: bool) -> None:
    frame = asyncio.run(_run_benchmark_with_progress(config, run.path("progress.log")))
    run.record(run.path("progress.log"))
    metrics_path = run.path("metrics.csv")
    frame.to_csv(metrics_path, index=False, float_format="%.17g", lineterminator="\n")
    run.record(metrics_path)

    summary = {"config_hash": run.config_hash, "alpha": config.alpha, "rows": _records(summarize_frame(frame))}
    run.write_text("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if plots:
        for path in render_plots(frame, run.path("plots"), nominal=1 - config.alpha):
            run.record(path)


def _plot(config: RunConfig, run: RunRegistry) -> None:
    frame = read_metrics_csv(config.metrics)
    for path in render_plots(frame, run.out_dir, nominal=1 - config.alpha):
        run.record(path)


def run_pipeline(config: RunConfig, *, plots: bool = False) -> int:
    """Execute one subcommand and write its artifacts; returns the exit status."""
    out = config.out
    if config.command is Command.infer:
        out = out or config.out_dir / "results.json"
        out_dir = out.parent
    else:
        out_dir = config.out_dir
    run = RunRegistry(out_dir)
    run.start(config)

    if config.command is Command.simulate:
        _simulate(config, run)
    elif config.command is Command.fit:
        if config.data is None:
            raise ValueError("--data is required")
        _fit(config, run)
    elif config.command is Command.infer:
        _infer(config, run, out)
    elif config.command is Command.benchmark:
        _benchmark(config, run, plots)
    else:
        if config.metrics is None:
            raise ValueError("--metrics is required")
        _plot(config, run)

    run.finalize()
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        config = resolve_config(args)
        return run_pipeline(config, plots=getattr(args, "plots", False))
    except ValueError as exc:
        logger.debug("Invalid input", exc_info=True)
        print(f"selgraph: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.exception("Run failed")
        print(f"selgraph: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
