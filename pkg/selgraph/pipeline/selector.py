"""Randomized neighborhood selection: nodewise Lasso solves and edge combination."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve
from scipy.stats import norm

from selgraph.config import settings
from selgraph.models import Rule

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Raised when coordinate descent misses its stopping rule within the sweep cap."""


@dataclass(frozen=True)
class SuffStat:
    """The cross-product matrix S = X'X of an n x p design."""

    s: np.ndarray
    n: int

    @property
    def p(self) -> int:
        return self.s.shape[0]

    def is_pd(self) -> bool:
        from selgraph.pipeline.adjustment import pd_check

        return pd_check(self.s)


@dataclass(frozen=True)
class RandomizationSpec:
    """Per-node Gaussian randomization covariances and the seed of their draws."""

    covariances: tuple[np.ndarray, ...]
    seed: int
    _chol: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        p = len(self.covariances)
        factors = []
        for node, cov in enumerate(self.covariances):
            if cov.shape != (p - 1, p - 1):
                raise ValueError(f"covariance for node {node} must be {p - 1}x{p - 1}")
            try:
                factors.append(np.linalg.cholesky(cov))
            except np.linalg.LinAlgError as exc:
                raise ValueError(f"covariance for node {node} is not positive definite") from exc
        object.__setattr__(self, "_chol", tuple(factors))

    @classmethod
    def isotropic(cls, p: int, scale: float, seed: int) -> RandomizationSpec:
        """Omega = scale^2 * I for every node."""
        if scale <= 0:
            raise ValueError(f"randomization scale must be positive, got {scale}")
        cov = scale**2 * np.eye(p - 1)
        return cls(covariances=tuple(cov.copy() for _ in range(p)), seed=seed)

    @property
    def p(self) -> int:
        return len(self.covariances)

    def draw(self, node: int) -> np.ndarray:
        # Each node owns an independent stream keyed by its index.
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(node,)))
        return self._chol[node] @ rng.standard_normal(self.p - 1)


@dataclass(frozen=True)
class NodewiseSolution:
    node: int
    lam: float
    ridge: float
    omega: np.ndarray
    active_set: tuple[int, ...]
    signs: np.ndarray
    active_coef: np.ndarray
    inactive_subgrad: np.ndarray
    p: int
    objective: float = math.nan
    sweeps: int = 0

    @property
    def q(self) -> int:
        return len(self.active_set)

    @property
    def qbar(self) -> int:
        return self.p - 1 - self.q

    @property
    def predictors(self) -> np.ndarray:
        return np.delete(np.arange(self.p), self.node)

    @property
    def inactive_set(self) -> tuple[int, ...]:
        active = set(self.active_set)
        return tuple(int(j) for j in self.predictors if j not in active)

    def positions(self, nodes: Sequence[int]) -> np.ndarray:
        """Positions of original node ids inside this node's predictor vector."""
        idx = np.asarray(nodes, dtype=int)
        return idx - (idx > self.node)

    def coefficients(self) -> np.ndarray:
        """Full coefficient vector in predictor order."""
        b = np.zeros(self.p - 1)
        b[self.positions(self.active_set)] = self.active_coef
        return b


@dataclass(frozen=True)
class SelectionEvent:
    solutions: tuple[NodewiseSolution, ...]
    rule: Rule
    edges: frozenset[tuple[int, int]]
    suff: SuffStat | None = None
    randomization: RandomizationSpec | None = None

    @property
    def p(self) -> int:
        return len(self.solutions)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def omega_cov(self, node: int) -> np.ndarray:
        if self.randomization is None:
            return np.eye(self.p - 1)
        return self.randomization.covariances[node]


def suff_stat(data: np.ndarray) -> SuffStat:
    """Compute S = X'X, symmetrized exactly."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be a two-dimensional array")
    n, p = data.shape
    if n <= p + 1:
        raise ValueError(f"need n > p + 1 rows, got n={n}, p={p}")
    if not np.all(np.isfinite(data)):
        raise ValueError("data contains non-finite entries")
    s = data.T @ data
    return SuffStat(s=(s + s.T) / 2.0, n=n)


def penalty_weights(
    data: np.ndarray, alpha: float, kappa: float | Sequence[float] | np.ndarray = 1.0
) -> np.ndarray:
    """Nodewise penalties kappa_i * 2 sqrt(n) sigma_i * isf(alpha / (2 p^2))."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    data = np.asarray(data, dtype=float)
    n, p = data.shape
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (p,))
    if np.any(kappa <= 0):
        raise ValueError("kappa entries must be positive")

    sigma_hat = np.sqrt(np.sum(data**2, axis=0) / n)
    degenerate = np.flatnonzero(sigma_hat == 0.0)
    if degenerate.size:
        logger.warning("Degenerate zero-variance columns: %s", degenerate.tolist())
    return kappa * 2.0 * np.sqrt(n) * sigma_hat * norm.isf(alpha / (2.0 * p**2))


def nodewise_objective(
    suff: SuffStat, i: int, lam: float, eps: float, omega: np.ndarray, b: np.ndarray
) -> float:
    """Randomized Lasso objective at a full predictor-order coefficient vector."""
    pred = np.delete(np.arange(suff.p), i)
    a = suff.s[np.ix_(pred, pred)]
    u = suff.s[pred, i]
    loss = 0.5 * (suff.s[i, i] - 2.0 * b @ u + b @ a @ b)
    return float(loss + lam * np.abs(b).sum() + 0.5 * eps * b @ b - b @ omega)


def kkt_map(
    s: np.ndarray, sol: NodewiseSolution, b: np.ndarray, z: np.ndarray
) -> np.ndarray:
    """Evaluate T + U (b; z) + V for node ``sol.node`` at cross-product matrix ``s``.

    The result is indexed in predictor order (original node ids with the
    response removed), not in the active-first stacking.
    """
    b = np.asarray(b, dtype=float)
    z = np.asarray(z, dtype=float)
    if b.shape != (sol.q,) or z.shape != (sol.qbar,):
        raise ValueError(
            f"expected b of length {sol.q} and z of length {sol.qbar}, "
            f"got {b.shape} and {z.shape}"
        )
    pred = sol.predictors
    active = np.asarray(sol.active_set, dtype=int)
    eta = -s[pred, sol.node].astype(float)
    if sol.q:
        eta += s[np.ix_(pred, active)] @ b
        pos = sol.positions(active)
        eta[pos] += sol.ridge * b + sol.lam * sol.signs
    eta[sol.positions(sol.inactive_set)] += sol.lam * z
    return eta


def verify_kkt(sol: NodewiseSolution, suff: SuffStat) -> float:
    """Max-abs residual of the stationarity identity omega = T + U (b; z) + V."""
    eta = kkt_map(suff.s, sol, sol.active_coef, sol.inactive_subgrad)
    return float(np.max(np.abs(sol.omega - eta), initial=0.0))


def _polish(
    a: np.ndarray, u: np.ndarray, b: np.ndarray, lam: float, eps: float
) -> np.ndarray:
    """Re-solve the stationarity system on the detected active set; keep it if consistent."""
    active = np.flatnonzero(b)
    if active.size == 0:
        return b
    signs = np.sign(b[active])
    gram = a[np.ix_(active, active)] + eps * np.eye(active.size)
    coef = solve(gram, u[active] - lam * signs, assume_a="pos")
    if not np.array_equal(np.sign(coef), signs):
        return b
    trial = np.zeros_like(b)
    trial[active] = coef
    inactive = np.setdiff1d(np.arange(b.size), active)
    if inactive.size and np.max(np.abs((u - a @ trial)[inactive])) > lam:
        return b
    return trial


def solve_node(
    suff: SuffStat,
    i: int,
    lam: float,
    eps: float,
    omega: np.ndarray,
    *,
    tol: float | None = None,
    max_sweeps: int | None = None,
    trace: list[float] | None = None,
) -> NodewiseSolution:
    """Solve one randomized nodewise Lasso by cyclic coordinate descent.

    Minimizes 1/2 ||X_i - X_{-i} b||^2 + lam ||b||_1 + eps/2 ||b||^2 - b'omega
    using only entries of S. Each coordinate update is the soft-threshold of a
    one-dimensional quadratic with curvature s_jj + eps, so inactive
    coordinates are exact zeros.

    Args:
        suff: Cross-product matrix of the full design.
        i: Response node.
        lam: Penalty, must be positive.
        eps: Ridge, must be positive.
        omega: Randomization draw of length p - 1, in predictor order.
        tol: Relative stopping tolerance on the per-sweep coefficient change.
        max_sweeps: Sweep cap before ConvergenceError is raised.
        trace: If given, receives the objective value after every sweep.

    Returns:
        The NodewiseSolution with active set, signs and subgradient.
    """
    tol = settings.cd_tol if tol is None else tol
    max_sweeps = settings.cd_max_sweeps if max_sweeps is None else max_sweeps
    p = suff.p
    if not 0 <= i < p:
        raise ValueError(f"node {i} out of range for p={p}")
    if lam <= 0 or eps <= 0:
        raise ValueError(f"lambda and eps must be positive, got {lam} and {eps}")
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (p - 1,):
        raise ValueError(f"omega must have length {p - 1}")

    pred = np.delete(np.arange(p), i)
    a = suff.s[np.ix_(pred, pred)]
    u = suff.s[pred, i] + omega
    curvature = np.diag(a) + eps

    b = np.zeros(p - 1)
    ab = np.zeros(p - 1)
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(p - 1):
            r = u[j] - ab[j] + a[j, j] * b[j]
            new = math.copysign(max(abs(r) - lam, 0.0), r) / curvature[j]
            delta = new - b[j]
            if delta != 0.0:
                ab += delta * a[:, j]
                b[j] = new
                max_delta = max(max_delta, abs(delta))
        if trace is not None:
            trace.append(nodewise_objective(suff, i, lam, eps, omega, b))
        if max_delta <= tol * max(1.0, float(np.max(np.abs(b)))):
            break
    else:
        raise ConvergenceError(f"node {i}: no convergence after {max_sweeps} sweeps")

    b = _polish(a, u, b, lam, eps)
    active = np.flatnonzero(b)
    inactive = np.setdiff1d(np.arange(p - 1), active)
    subgrad = np.clip((u - a @ b)[inactive] / lam, -1.0, 1.0)

    return NodewiseSolution(
        node=i,
        lam=float(lam),
        ridge=float(eps),
        omega=omega.copy(),
        active_set=tuple(int(pred[j]) for j in active),
        signs=np.sign(b[active]).astype(int),
        active_coef=b[active].copy(),
        inactive_subgrad=subgrad,
        p=p,
        objective=nodewise_objective(suff, i, lam, eps, omega, b),
        sweeps=sweep,
    )


def combine(
    solutions: Sequence[NodewiseSolution],
    rule: Rule | str,
    *,
    suff: SuffStat | None = None,
    randomization: RandomizationSpec | None = None,
) -> SelectionEvent:
    """Combine nodewise neighbourhoods into an edge set under the AND or OR rule."""
    rule = Rule(rule)
    p = len(solutions)
    nodes = sorted(sol.node for sol in solutions)
    if nodes != list(range(p)) or any(sol.p != p for sol in solutions):
        raise ValueError(f"expected exactly one solution per node 0..{p - 1}")
    ordered = tuple(sorted(solutions, key=lambda sol: sol.node))
    neighbours = [set(sol.active_set) for sol in ordered]

    edges = set()
    for j in range(p):
        for k in range(j + 1, p):
            forward, backward = k in neighbours[j], j in neighbours[k]
            if (rule is Rule.OR and (forward or backward)) or (forward and backward):
                edges.add((j, k))

    return SelectionEvent(
        solutions=ordered,
        rule=rule,
        edges=frozenset(edges),
        suff=suff,
        randomization=randomization,
    )


def select_edges(
    suff: SuffStat,
    lambdas: Sequence[float] | np.ndarray,
    eps: float,
    randomization: RandomizationSpec,
    rule: Rule | str,
    *,
    threads: int = 1,
) -> SelectionEvent:
    """Run all p randomized nodewise solves and combine them."""
    if randomization.p != suff.p or len(lambdas) != suff.p:
        raise ValueError("lambdas and randomization must match the dimension of S")

    def _solve(i: int) -> NodewiseSolution:
        return solve_node(suff, i, float(lambdas[i]), eps, randomization.draw(i))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        solutions = list(pool.map(_solve, range(suff.p)))

    for sol in solutions:
        residual = verify_kkt(sol, suff)
        if residual > settings.kkt_tol:
            logger.warning("Node %d KKT residual %.3e above tolerance", sol.node, residual)
    return combine(solutions, rule, suff=suff, randomization=randomization)
