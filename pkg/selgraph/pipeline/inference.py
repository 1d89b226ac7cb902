"""Pivots, p-values and confidence intervals for selected precision-matrix entries."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from selgraph.config import settings
from selgraph.models import GridConfig, IntervalResult, Method, SplitConfig
from selgraph.pipeline.adjustment import (
    EdgeTarget,
    UnselectedEdgeError,
    dump_grid_csv,
    gamma_logdet_grid,
    log_lambda_hat_grid,
    pd_interval,
    target_sets,
)
from selgraph.pipeline.selector import (
    SelectionEvent,
    SuffStat,
    combine,
    penalty_weights,
    solve_node,
    suff_stat,
)

logger = logging.getLogger(__name__)

PIVOT_RTOL = 1e-12


class GridError(RuntimeError):
    """Raised when no grid point carries positive weight."""


@dataclass(frozen=True)
class PivotGrid:
    target: EdgeTarget
    points: np.ndarray
    base_log_weights: np.ndarray
    pd_mask: np.ndarray
    n: int

    @property
    def spacing(self) -> float:
        return float(self.points[1] - self.points[0])

    @property
    def valid(self) -> np.ndarray:
        return self.pd_mask & np.isfinite(self.base_log_weights)

    @property
    def s_obs(self) -> float:
        return self.target.s_obs

    def log_weights(self, theta: float) -> np.ndarray:
        """Exponential tilt of the base weights; invalid points stay at -inf."""
        out = np.full(self.points.shape, -np.inf)
        valid = self.valid
        out[valid] = self.base_log_weights[valid] - theta * self.points[valid]
        return out

    def cdf(self, theta: float) -> np.ndarray:
        """Discrete CDF of the grid density at every grid point."""
        lw = self.log_weights(theta)
        weights = np.exp(lw - lw.max())
        return np.cumsum(weights) / weights.sum()

    def cdf_mass(self) -> np.ndarray:
        """Per-point share counted by the pivot: 1 below s_obs, 1/2 at s_obs, 0 above."""
        tol = PIVOT_RTOL * max(1.0, abs(self.s_obs))
        mass = np.where(self.points < self.s_obs - tol, 1.0, 0.0)
        mass[np.abs(self.points - self.s_obs) <= tol] = 0.5
        return mass

    def scale(self) -> float:
        """Standard deviation of the untilted grid density."""
        lw = self.log_weights(0.0)
        weights = np.exp(lw - lw.max())
        weights /= weights.sum()
        mean = weights @ self.points
        return float(np.sqrt(weights @ (self.points - mean) ** 2))


def _centred_points(lo: float, hi: float, s_obs: float, count: int) -> np.ndarray:
    """Evenly spaced points covering [lo, hi] with s_obs an exact interior point."""
    delta = (hi - lo) / (count - 1)
    k = int(np.clip(round((s_obs - lo) / delta), 1, count - 2))
    return s_obs + delta * (np.arange(count) - k)


def _curvature_sd(target: EdgeTarget, n: int, lo: float, hi: float) -> float:
    """1 / sqrt(-g''(s_obs)) for g(c) = (n - p - 1)/2 log det Gamma(c)."""
    s = target.s_bar
    j0, k0 = target.j0, target.k0
    c0 = target.s_obs
    h = min(1e-4 * math.sqrt(s[j0, j0] * s[k0, k0]), 0.25 * min(c0 - lo, hi - c0))
    logdet = gamma_logdet_grid(s, j0, k0, np.array([c0 - h, c0, c0 + h]))
    curvature = -0.5 * (n - target.p - 1) * (logdet[0] - 2 * logdet[1] + logdet[2]) / h**2
    if np.isfinite(curvature) and curvature > 0:
        return 1.0 / math.sqrt(curvature)
    return math.sqrt((s[j0, j0] * s[k0, k0] + c0**2) / n)


def build_grid(
    target: EdgeTarget,
    event: SelectionEvent | None,
    n: int,
    cfg: GridConfig | None = None,
    *,
    adjust: bool = True,
    dump_path: Path | None = None,
) -> PivotGrid:
    """Evaluate the untilted log density of S_{j0,k0} on an adaptive grid.

    The grid starts at s_obs +/- half_width_sd * sd and widens by ``expansion``
    until the log-weight at both endpoints sits ``tail_drop`` below the
    maximum, or an endpoint reaches the positive-definite boundary.
    """
    cfg = cfg or GridConfig.from_settings()
    p = target.p
    if n <= p + 1:
        raise ValueError(f"need n > p + 1, got n={n}, p={p}")
    if cfg.points < 3:
        raise ValueError("grid needs at least three points")

    s, j0, k0, s_obs = target.s_bar, target.j0, target.k0, target.s_obs
    pd_lo, pd_hi = pd_interval(s, j0, k0)
    half = cfg.half_width_sd * _curvature_sd(target, n, pd_lo, pd_hi)
    use_event = adjust and event is not None

    for attempt in range(cfg.max_expansions + 1):
        lo, hi = max(s_obs - half, pd_lo), min(s_obs + half, pd_hi)
        points = _centred_points(lo, hi, s_obs, cfg.points)
        logdet = gamma_logdet_grid(s, j0, k0, points)
        pd_mask = np.isfinite(logdet)
        base = np.full(points.shape, -np.inf)
        base[pd_mask] = 0.5 * (n - p - 1) * logdet[pd_mask]
        optima: dict[int, np.ndarray] = {}
        if use_event:
            adjustment, optima = log_lambda_hat_grid(points[pd_mask], target, event, cfg)
            base[pd_mask] += adjustment

        valid = pd_mask & np.isfinite(base)
        if not valid.any():
            raise GridError(f"edge {target.edge}: no grid point with finite weight")
        top = base[valid].max()
        left_ok = s_obs - half <= pd_lo or base[0] <= top - cfg.tail_drop
        right_ok = s_obs + half >= pd_hi or base[-1] <= top - cfg.tail_drop
        if left_ok and right_ok:
            break
        half *= cfg.expansion
    else:
        logger.warning(
            "Edge %s: tail rule unmet after %d expansions", target.edge, cfg.max_expansions
        )

    if dump_path is not None:
        full_optima = {}
        for node, values in optima.items():
            column = np.full(points.shape, np.nan)
            column[pd_mask] = values
            full_optima[node] = column
        dump_grid_csv(dump_path, points, logdet, full_optima, base)

    return PivotGrid(
        target=target, points=points, base_log_weights=base, pd_mask=pd_mask, n=n
    )


def pivot(grid: PivotGrid, theta0: float) -> float:
    """Mid-point discrete CDF of the tilted grid density at s_obs.

    Not the plain sum over t <= s_obs: points below s_obs count fully and the
    point at s_obs counts half, so each grid point stands for the cell of
    width ``spacing`` centred on it.
    """
    return float(pivot_curve(grid, np.array([theta0]))[0])


def pivot_curve(grid: PivotGrid, thetas: np.ndarray) -> np.ndarray:
    """Vectorized :func:`pivot` over many parameter values."""
    valid = grid.valid
    t = grid.points[valid]
    mass = grid.cdf_mass()[valid]
    lw = grid.base_log_weights[valid][None, :] - np.asarray(thetas, dtype=float)[:, None] * t[None, :]
    counted = mass > 0
    if not counted.any():
        return np.zeros(len(thetas))
    num = logsumexp(lw[:, counted], axis=1, b=mass[counted][None, :])
    return np.clip(np.exp(num - logsumexp(lw, axis=1)), 0.0, 1.0)


def p_value(grid: PivotGrid, theta0: float) -> float:
    """Two-sided p-value 2 min(F, 1 - F) for H0: theta = theta0."""
    f = pivot(grid, theta0)
    return min(1.0, 2.0 * min(f, 1.0 - f))


def _bracket(grid: PivotGrid, level: float, cfg: GridConfig) -> tuple[float, float] | float:
    """Bracket the root of pivot = level, or return the infinite endpoint."""
    width = 1.0 / max(grid.scale(), 1e-300)
    lo, hi = -width, width
    for _ in range(cfg.ci_max_expansions):
        f_lo, f_hi = pivot(grid, lo) - level, pivot(grid, hi) - level
        if f_lo <= 0.0 <= f_hi:
            return lo, hi
        span = hi - lo
        if f_lo > 0.0:
            lo -= span
        if f_hi < 0.0:
            hi += span
    if pivot(grid, lo) - level > 0.0:
        return -math.inf
    if pivot(grid, hi) - level < 0.0:
        return math.inf
    return lo, hi


def _solve_level(grid: PivotGrid, level: float, cfg: GridConfig) -> float:
    bracket = _bracket(grid, level, cfg)
    if isinstance(bracket, float):
        logger.warning("Edge %s: unbounded interval endpoint at level %.3g", grid.target.edge, level)
        return bracket
    lo, hi = bracket
    xtol = 1e-12 * (hi - lo)
    root = brentq(lambda th: pivot(grid, th) - level, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
    miss = abs(pivot(grid, root) - level)
    if miss > cfg.ci_tol:
        logger.debug("Edge %s: pivot misses level %.3g by %.2e", grid.target.edge, level, miss)
    return float(root)


def scan_interval(
    grid: PivotGrid, alpha: float, step: float, lo: float, hi: float
) -> tuple[float, float]:
    """Accept every theta on an evenly spaced grid with alpha/2 < F < 1 - alpha/2."""
    thetas = np.arange(lo, hi + step, step)
    values = pivot_curve(grid, thetas)
    kept = thetas[(values > alpha / 2) & (values < 1 - alpha / 2)]
    if kept.size == 0:
        return math.nan, math.nan
    return float(kept.min()), float(kept.max())


def confidence_interval(
    grid: PivotGrid,
    alpha: float,
    *,
    method: Method = Method.proposed,
    cfg: GridConfig | None = None,
    scan_step: float | None = None,
) -> IntervalResult:
    """Invert the pivot into a 1 - alpha interval.

    Endpoints are roots of F = alpha/2 and F = 1 - alpha/2, found by bracketed
    root finding on the monotone pivot. With ``scan_step`` the interval is
    instead read off an evenly spaced theta grid around those roots.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    cfg = cfg or GridConfig.from_settings()
    lower = _solve_level(grid, alpha / 2, cfg)
    upper = _solve_level(grid, 1 - alpha / 2, cfg)
    if scan_step is not None and math.isfinite(lower) and math.isfinite(upper):
        margin = max(upper - lower, 10 * scan_step)
        lower, upper = scan_interval(grid, alpha, scan_step, lower - margin, upper + margin)
    if lower > upper:
        lower = upper = 0.5 * (lower + upper)

    return IntervalResult(
        edge=grid.target.edge,
        lower=lower,
        upper=upper,
        pvalue=p_value(grid, 0.0),
        alpha=alpha,
        significant=not lower <= 0.0 <= upper,
        method=method,
    )


def failed_result(
    edge: tuple[int, int], alpha: float, method: Method, error: str
) -> IntervalResult:
    return IntervalResult(
        edge=edge,
        lower=-math.inf,
        upper=math.inf,
        pvalue=1.0,
        alpha=alpha,
        significant=False,
        method=method,
        error=error,
    )


def infer_all(
    event: SelectionEvent,
    suff: SuffStat,
    alpha: float,
    cfg: GridConfig | None = None,
    *,
    threads: int = 1,
    dump_dir: Path | None = None,
    scan_step: float | None = None,
) -> list[IntervalResult]:
    """Selective intervals for every selected edge, in lexicographic edge order.

    ``dump_dir`` receives one grid_<j>_<k>.csv per edge; ``scan_step`` switches
    interval inversion to the evenly spaced theta scan.
    """
    cfg = cfg or GridConfig.from_settings()
    dump_dir = dump_dir if dump_dir is not None else settings.debug_grid_dir

    def _one(edge: tuple[int, int]) -> IntervalResult:
        try:
            target = target_sets(event, *edge)
            dump = dump_dir / f"grid_{edge[0]}_{edge[1]}.csv" if dump_dir else None
            grid = build_grid(target, event, suff.n, cfg, dump_path=dump)
            return confidence_interval(grid, alpha, cfg=cfg, scan_step=scan_step)
        except Exception as exc:
            logger.error("Inference failed for edge %s: %s", edge, exc)
            return failed_result(edge, alpha, Method.proposed, str(exc))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(_one, event.sorted_edges()))


def unadjusted_interval(
    suff: SuffStat,
    edge: tuple[int, int],
    alpha: float,
    method: Method,
    cfg: GridConfig | None = None,
) -> IntervalResult:
    """Interval from the plain conditional Wishart density of one entry."""
    cfg = cfg or GridConfig.from_settings()
    target = EdgeTarget.unconditional(suff.s, *edge)
    grid = build_grid(target, None, suff.n, cfg, adjust=False)
    return confidence_interval(grid, alpha, method=method, cfg=cfg)


def naive_interval(
    suff: SuffStat, edge: tuple[int, int], alpha: float, cfg: GridConfig | None = None
) -> IntervalResult:
    """Full-data interval that ignores selection."""
    return unadjusted_interval(suff, edge, alpha, Method.naive, cfg)


@dataclass(frozen=True)
class SplitSelection:
    event: SelectionEvent
    inference: SuffStat


def plain_selection(data: np.ndarray, cfg: SplitConfig) -> SelectionEvent:
    """Non-randomized neighbourhood selection (omega = 0, tiny ridge)."""
    suff = suff_stat(data)
    lambdas = penalty_weights(data, cfg.alpha, cfg.kappa)
    zeros = np.zeros(suff.p - 1)
    solutions = [solve_node(suff, i, float(lambdas[i]), cfg.eps, zeros) for i in range(suff.p)]
    return combine(solutions, cfg.rule, suff=suff)


def split_selection(data: np.ndarray, cfg: SplitConfig) -> SplitSelection:
    """Select on the first ceil(n/2) rows; keep S of the remaining rows for inference."""
    data = np.asarray(data, dtype=float)
    n, p = data.shape
    n1 = math.ceil(n / 2)
    if n - n1 <= p + 1:
        raise ValueError(f"each half needs more than p + 1 = {p + 1} rows, got n={n}")
    return SplitSelection(event=plain_selection(data[:n1], cfg), inference=suff_stat(data[n1:]))


def split_interval(
    data: np.ndarray,
    edge: tuple[int, int],
    alpha: float,
    split_cfg: SplitConfig,
    *,
    selection: SplitSelection | None = None,
    cfg: GridConfig | None = None,
) -> IntervalResult:
    """Data-splitting interval from the held-out half."""
    selection = selection or split_selection(data, split_cfg)
    edge = (min(edge), max(edge))
    if edge not in selection.event.edges:
        raise UnselectedEdgeError(f"edge {edge} was not selected on the selection half")
    return unadjusted_interval(selection.inference, edge, alpha, Method.split, cfg)


def infer_split_all(
    data: np.ndarray,
    alpha: float,
    split_cfg: SplitConfig,
    cfg: GridConfig | None = None,
    *,
    threads: int = 1,
) -> tuple[SplitSelection, list[IntervalResult]]:
    selection = split_selection(data, split_cfg)

    def _one(edge: tuple[int, int]) -> IntervalResult:
        try:
            return split_interval(data, edge, alpha, split_cfg, selection=selection, cfg=cfg)
        except Exception as exc:
            logger.error("Split inference failed for edge %s: %s", edge, exc)
            return failed_result(edge, alpha, Method.split, str(exc))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(_one, selection.event.sorted_edges()))
    return selection, results


def infer_naive_all(
    data: np.ndarray,
    alpha: float,
    split_cfg: SplitConfig,
    cfg: GridConfig | None = None,
    *,
    threads: int = 1,
) -> tuple[SelectionEvent, list[IntervalResult]]:
    """Select on the full data without randomization and report unadjusted intervals."""
    event = plain_selection(data, split_cfg)

    def _one(edge: tuple[int, int]) -> IntervalResult:
        try:
            return naive_interval(event.suff, edge, alpha, cfg)
        except Exception as exc:
            logger.error("Naive inference failed for edge %s: %s", edge, exc)
            return failed_result(edge, alpha, Method.naive, str(exc))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(_one, event.sorted_edges()))
    return event, results
