from __future__ import annotations

import hashlib
import json
import math
from enum import Enum
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from selgraph.config import Settings, settings


class Rule(str, Enum):
    AND = "and"
    OR = "or"


class Method(str, Enum):
    proposed = "proposed"
    split = "split"
    naive = "naive"


class Command(str, Enum):
    simulate = "simulate"
    fit = "fit"
    infer = "infer"
    benchmark = "benchmark"
    plot = "plot"


class GridConfig(BaseModel):
    points: int = 1201
    half_width_sd: float = 8.0
    expansion: float = 1.5
    max_expansions: int = 12
    tail_drop: float = 40.0
    barrier_scale: float = 1.0
    barrier_mode: Literal["posterior_sd", "fixed"] = "posterior_sd"
    newton_max_steps: int = 200
    newton_max_halvings: int = 30
    newton_tol: float = 1e-10
    ci_tol: float = 1e-6
    ci_max_expansions: int = 20

    @classmethod
    def from_settings(cls, s: Settings = settings) -> GridConfig:
        return cls(
            points=s.grid_points,
            half_width_sd=s.grid_half_width_sd,
            expansion=s.grid_expansion,
            max_expansions=s.grid_max_expansions,
            tail_drop=s.grid_tail_drop,
            barrier_scale=s.barrier_scale,
            barrier_mode=s.barrier_mode,
            newton_max_steps=s.newton_max_steps,
            newton_max_halvings=s.newton_max_halvings,
            newton_tol=s.newton_tol,
            ci_tol=s.ci_tol,
            ci_max_expansions=s.ci_max_expansions,
        )


class SplitConfig(BaseModel):
    alpha: float = 0.1
    kappa: float = 1.0
    rule: Rule = Rule.OR
    eps: float = 1e-6


class IntervalResult(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    edge: tuple[int, int]
    lower: float
    upper: float
    pvalue: float = Field(ge=0.0, le=1.0)
    alpha: float
    significant: bool
    method: Method = Method.proposed
    error: str | None = None

    @model_validator(mode="after")
    def _check_bounds(self) -> IntervalResult:
        if self.lower > self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")
        return self

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


class NodeRecord(BaseModel):
    """Serialized outcome of one randomized nodewise regression."""

    node: int
    lam: float
    omega: list[float]
    active_set: list[int]
    signs: list[int]
    coef: list[float]
    subgrad: list[float]
    kkt_residual: float


class SelectionRecord(BaseModel):
    """The conditioning record written by ``fit`` and consumed by ``infer``."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    n: int
    p: int
    rule: Rule
    eps: float
    alpha: float
    kappa: float
    omega_scale: float
    seed: int
    nodes: list[NodeRecord]
    edges: list[tuple[int, int]]
    config_hash: str = ""


class MetricsReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    coverage_rate: float | None
    avg_length: float | None
    precision: float | None
    recall: float | None
    f1: float
    selection_power: float | None = None
    conditional_power: float | None = None
    n_selected: int
    n_reported: int
    n_true: int
    n_unbounded: int = 0
    n_failed: int = 0

    @model_validator(mode="after")
    def _check_counts(self) -> MetricsReport:
        if self.n_reported > self.n_selected:
            raise ValueError("more reported edges than selected edges")
        return self


class RunConfig(BaseModel):
    """Fully resolved parameters of one CLI invocation."""

    command: Command
    seed: int = 0
    alpha: float = settings.alpha
    kappa: float = settings.kappa
    eps: float = settings.eps
    omega_scale: float = settings.omega_scale
    rule: Rule = Rule(settings.rule)
    methods: list[Method] = Field(default_factory=lambda: [Method.proposed])
    grid: GridConfig = Field(default_factory=GridConfig.from_settings)
    threads: int = settings.threads

    # infer diagnostics
    scan_step: float | None = Field(default=None, gt=0)
    dump_grid: Path | None = None

    # simulate
    p: int = 20
    n: int = 400
    m: int = 2
    c: float = 0.6

    # benchmark
    setting: str = "1"
    reps: int = 10
    values: list[float] | None = None

    # paths
    data: Path | None = None
    selection: Path | None = None
    metrics: Path | None = None
    out_dir: Path = settings.output_dir
    out: Path | None = None

    def config_hash(self) -> str:
        payload = self.model_dump(mode="json", exclude={"threads", "out_dir", "out", "dump_grid"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def split_config(self) -> SplitConfig:
        return SplitConfig(alpha=self.alpha, kappa=self.kappa, rule=self.rule, eps=settings.split_eps)
