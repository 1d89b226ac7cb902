"""Selection-adjusted density of one entry of S given the randomized selection event."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve

from selgraph.models import GridConfig
from selgraph.pipeline.selector import NodewiseSolution, SelectionEvent, kkt_map

logger = logging.getLogger(__name__)

ARMIJO = 1e-4


class UnselectedEdgeError(ValueError):
    """Raised when inference is requested for an edge outside the selected set."""


@dataclass(frozen=True)
class EdgeTarget:
    j0: int
    k0: int
    s_obs: float
    s_bar: np.ndarray
    F: frozenset[int]
    G: frozenset[int]
    contributing: frozenset[int]

    @property
    def edge(self) -> tuple[int, int]:
        return (self.j0, self.k0)

    @property
    def p(self) -> int:
        return self.s_bar.shape[0]

    @classmethod
    def unconditional(cls, s: np.ndarray, j0: int, k0: int) -> EdgeTarget:
        """Target with no selection adjustment (empty F and G)."""
        j0, k0 = _ordered(j0, k0)
        return cls(
            j0=j0,
            k0=k0,
            s_obs=float(s[j0, k0]),
            s_bar=np.array(s, dtype=float),
            F=frozenset(),
            G=frozenset(),
            contributing=frozenset({j0, k0}),
        )


@dataclass(frozen=True)
class LaplaceResult:
    node: int
    grid_value: float
    optimum: float
    minimizer: np.ndarray
    converged: bool


def _ordered(j0: int, k0: int) -> tuple[int, int]:
    if j0 == k0:
        raise ValueError(f"edge endpoints must differ, got ({j0}, {k0})")
    return (j0, k0) if j0 < k0 else (k0, j0)


def gamma_replace(s_bar: np.ndarray, j0: int, k0: int, c: float) -> np.ndarray:
    """Copy of ``s_bar`` with entries (j0, k0) and (k0, j0) set to ``c``."""
    if j0 == k0:
        raise ValueError("gamma_replace needs an off-diagonal entry")
    out = np.array(s_bar, dtype=float)
    out[j0, k0] = out[k0, j0] = c
    return out


def pd_check(mat: np.ndarray) -> bool:
    """Cholesky-based positive definiteness with a relative pivot floor."""
    mat = np.asarray(mat, dtype=float)
    scale = np.trace(mat) / mat.shape[0]
    if not np.isfinite(scale) or scale <= 0:
        return False
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.diag(chol) ** 2 > 1e-12 * scale))


def pd_interval(s: np.ndarray, j0: int, k0: int) -> tuple[float, float]:
    """Open interval of c for which Gamma(c) stays positive definite.

    Gamma(c) = S + t (e_j e_k' + e_k e_j') with t = c - s_jk, so
    det Gamma(c) = det S * ((1 + t w_jk)^2 - t^2 w_jj w_kk) with W = S^{-1}.
    """
    w = cho_solve(cho_factor(s), np.eye(s.shape[0]))
    r = np.sqrt(w[j0, j0] * w[k0, k0])
    wjk = w[j0, k0]
    s_obs = s[j0, k0]
    return s_obs - 1.0 / (r + wjk), s_obs + 1.0 / (r - wjk)


def gamma_logdet_grid(s: np.ndarray, j0: int, k0: int, cs: np.ndarray) -> np.ndarray:
    """log det Gamma(c) along a grid, -inf outside the PD interval."""
    w = cho_solve(cho_factor(s), np.eye(s.shape[0]))
    _, base = np.linalg.slogdet(s)
    t = np.asarray(cs, dtype=float) - s[j0, k0]
    quad = (1.0 + t * w[j0, k0]) ** 2 - t**2 * w[j0, j0] * w[k0, k0]
    lo, hi = pd_interval(s, j0, k0)
    inside = (cs > lo) & (cs < hi) & (quad > 0)
    out = np.full(t.shape, -np.inf)
    out[inside] = base + np.log(quad[inside])
    return out


def eta_map(
    c: float,
    target: EdgeTarget,
    sol: NodewiseSolution,
    b: np.ndarray,
    z: np.ndarray,
) -> np.ndarray:
    """KKT map of node ``sol.node`` with entry (j0, k0) of S replaced by ``c``."""
    gamma = gamma_replace(target.s_bar, target.j0, target.k0, c)
    return kkt_map(gamma, sol, b, z)


def jacobian_logdet(
    mat_ee: np.ndarray,
    eps: float,
    lambda_i: float,
    qbar: int,
    *,
    include_lambda: bool = False,
) -> float:
    """log det(mat_ee + eps I), optionally plus the constant qbar * log(lambda_i).

    Returns -inf when a Cholesky pivot is not positive.
    """
    mat_ee = np.atleast_2d(np.asarray(mat_ee, dtype=float))
    q = mat_ee.shape[0]
    const = qbar * np.log(lambda_i) if include_lambda else 0.0
    if q == 0:
        return float(const)
    try:
        chol = np.linalg.cholesky(mat_ee + eps * np.eye(q))
    except np.linalg.LinAlgError:
        logger.debug("Singular Jacobian block of size %d", q)
        return -np.inf
    pivots = np.diag(chol)
    if np.any(pivots <= 0):
        return -np.inf
    return float(2.0 * np.sum(np.log(pivots)) + const)


def target_sets(event: SelectionEvent, j0: int, k0: int) -> EdgeTarget:
    """Nodes whose factors depend on s_{j0,k0}: F (either endpoint selected), G (both)."""
    j0, k0 = _ordered(j0, k0)
    if (j0, k0) not in event.edges:
        raise UnselectedEdgeError(f"edge ({j0}, {k0}) was not selected")
    if event.suff is None:
        raise ValueError("selection event carries no sufficient statistic")

    f_nodes, g_nodes = set(), set()
    for sol in event.solutions:
        active = set(sol.active_set)
        if j0 in active or k0 in active:
            f_nodes.add(sol.node)
        if j0 in active and k0 in active:
            g_nodes.add(sol.node)

    s = event.suff.s
    return EdgeTarget(
        j0=j0,
        k0=k0,
        s_obs=float(s[j0, k0]),
        s_bar=np.array(s, dtype=float),
        F=frozenset(f_nodes),
        G=frozenset(g_nodes),
        contributing=frozenset(f_nodes | {j0, k0}),
    )


def barrier(b: np.ndarray, signs: np.ndarray, scale: float | np.ndarray = 1.0) -> float:
    """Sum of log(1 + scale_j / (s_j b_j)); +inf off the sign orthant."""
    x = np.asarray(signs, dtype=float) * np.asarray(b, dtype=float)
    if x.size == 0:
        return 0.0
    if np.any(x <= 0):
        return np.inf
    return float(np.sum(np.log1p(np.asarray(scale, dtype=float) / x)))


def barrier_scales(
    target: EdgeTarget,
    sol: NodewiseSolution,
    omega_cov: np.ndarray,
    cfg: GridConfig | None = None,
) -> np.ndarray:
    """Per-coordinate barrier scale for one node's active coefficients.

    In ``posterior_sd`` mode the scale of b_j is ``barrier_scale`` times the
    standard deviation of b_j under the Gaussian exp(-1/2 eta' Omega^{-1} eta)
    at c = s_obs, so the barrier is invariant to rescaling the data. In
    ``fixed`` mode every coordinate uses ``barrier_scale`` as is.
    """
    cfg = cfg or GridConfig()
    if sol.q == 0 or cfg.barrier_mode == "fixed":
        return np.full(sol.q, cfg.barrier_scale)
    precision = cho_solve(cho_factor(omega_cov), np.eye(omega_cov.shape[0]))
    _, _, m_obs, _ = _affine_pieces(target, sol)
    quad = m_obs.T @ precision @ m_obs
    cov = cho_solve(cho_factor(quad), np.eye(sol.q))
    return cfg.barrier_scale * np.sqrt(np.diag(cov))


def _affine_pieces(
    target: EdgeTarget, sol: NodewiseSolution
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """eta(c, b) = a(c) + M(c) b with a, M affine in c; returns (a_obs, da, M_obs, dM)."""
    zeros_b = np.zeros(sol.q)
    a_obs = kkt_map(target.s_bar, sol, zeros_b, sol.inactive_subgrad)

    pred = sol.predictors
    active = np.asarray(sol.active_set, dtype=int)
    direction = np.zeros_like(target.s_bar)
    direction[target.j0, target.k0] = direction[target.k0, target.j0] = 1.0

    da = -direction[pred, sol.node]
    m_obs = target.s_bar[np.ix_(pred, active)].copy()
    if sol.q:
        m_obs[sol.positions(active), np.arange(sol.q)] += sol.ridge
    dm = direction[np.ix_(pred, active)]
    return a_obs, da, m_obs, dm


def _barrier_terms(
    b: np.ndarray, signs: np.ndarray, scale: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched barrier value, gradient and Hessian diagonal; rows off the orthant get inf."""
    x = b * signs
    feasible = np.all(x > 0, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(feasible, np.sum(np.log1p(scale / x), axis=1), np.inf)
        grad = signs * (1.0 / (x + scale) - 1.0 / x)
        hess = 1.0 / x**2 - 1.0 / (x + scale) ** 2
    return value, grad, hess


def laplace_min_batch(
    cs: np.ndarray,
    target: EdgeTarget,
    sol: NodewiseSolution,
    omega_cov: np.ndarray,
    cfg: GridConfig | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Barrier-penalized Laplace optima for one node at every grid value.

    Minimizes 1/2 eta' Omega^{-1} eta + Bar(b) over b by damped Newton with
    step halving, started at the observed active coefficients (feasible for
    every c because the sign orthant does not depend on c).

    Returns:
        (optima, minimizers, converged) with shapes (G,), (G, q), (G,).
        Optima of unconverged points are nan.
    """
    cfg = cfg or GridConfig()
    cs = np.atleast_1d(np.asarray(cs, dtype=float))
    precision = cho_solve(cho_factor(omega_cov), np.eye(omega_cov.shape[0]))
    a_obs, da, m_obs, dm = _affine_pieces(target, sol)

    delta = cs - target.s_obs
    a = a_obs[None, :] + delta[:, None] * da[None, :]
    const = 0.5 * np.einsum("gi,ij,gj->g", a, precision, a)
    if sol.q == 0:
        return const, np.zeros((cs.size, 0)), np.ones(cs.size, dtype=bool)

    m = m_obs[None, :, :] + delta[:, None, None] * dm[None, :, :]
    pm = np.einsum("ij,gjk->gik", precision, m)
    quad = np.einsum("gji,gjk->gik", m, pm)
    lin = np.einsum("gji,gj->gi", pm, a)
    signs = sol.signs.astype(float)
    scale = barrier_scales(target, sol, omega_cov, cfg)

    def objective(b: np.ndarray, rows: np.ndarray) -> np.ndarray:
        bar, _, _ = _barrier_terms(b, signs, scale)
        q_val = const[rows] + np.einsum("gi,gi->g", lin[rows], b)
        q_val += 0.5 * np.einsum("gi,gij,gj->g", b, quad[rows], b)
        return q_val + bar

    def newton(start: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b = start.copy()
        done = np.zeros(rows.size, dtype=bool)
        stuck = np.zeros(rows.size, dtype=bool)
        for _ in range(cfg.newton_max_steps):
            live = ~(done | stuck)
            if not live.any():
                break
            idx = np.flatnonzero(live)
            r = rows[idx]
            bl = b[idx]
            _, bgrad, bhess = _barrier_terms(bl, signs, scale)
            grad = lin[r] + np.einsum("gij,gj->gi", quad[r], bl) + bgrad
            hess = quad[r] + bhess[:, :, None] * np.eye(sol.q)[None]
            step = -np.linalg.solve(hess, grad[..., None])[..., 0]
            decrement = -np.einsum("gi,gi->g", grad, step)
            finished = 0.5 * decrement <= cfg.newton_tol
            done[idx[finished]] = True

            move = ~finished
            idx, r, bl, step, decrement = (
                idx[move], r[move], bl[move], step[move], decrement[move]
            )
            current = objective(bl, r)
            t = np.ones(idx.size)
            accepted = np.zeros(idx.size, dtype=bool)
            for _ in range(cfg.newton_max_halvings):
                pending = ~accepted
                if not pending.any():
                    break
                cand = bl[pending] + t[pending, None] * step[pending]
                value = objective(cand, r[pending])
                ok = value <= current[pending] - ARMIJO * t[pending] * decrement[pending]
                hit = np.flatnonzero(pending)[ok]
                b[idx[hit]] = cand[ok]
                accepted[hit] = True
                t[pending] = np.where(ok, t[pending], t[pending] / 2.0)
            # A failed line search at a near-stationary point counts as converged.
            tiny = ~accepted & (0.5 * decrement <= 1e3 * cfg.newton_tol)
            done[idx[tiny]] = True
            stuck[idx[~accepted & ~tiny]] = True
        return b, done

    rows = np.arange(cs.size)
    start = np.tile(sol.active_coef, (cs.size, 1))
    minimizers, converged = newton(start, rows)
    if not converged.all():
        retry = np.flatnonzero(~converged)
        logger.warning(
            "Laplace step for node %d: %d grid points retried from a perturbed start",
            sol.node,
            retry.size,
        )
        b_retry, ok = newton(2.0 * start[retry], retry)
        minimizers[retry] = b_retry
        converged[retry] = ok

    optima = objective(minimizers, rows)
    optima[~converged] = np.nan
    return optima, minimizers, converged


def laplace_min(
    c: float,
    target: EdgeTarget,
    sol: NodewiseSolution,
    omega_cov: np.ndarray,
    cfg: GridConfig | None = None,
) -> LaplaceResult:
    """Single-point version of :func:`laplace_min_batch`."""
    optima, minimizers, converged = laplace_min_batch(
        np.array([c]), target, sol, omega_cov, cfg
    )
    return LaplaceResult(
        node=sol.node,
        grid_value=float(c),
        optimum=float(optima[0]),
        minimizer=minimizers[0],
        converged=bool(converged[0]),
    )


def log_lambda_hat_grid(
    cs: np.ndarray,
    target: EdgeTarget,
    event: SelectionEvent,
    cfg: GridConfig | None = None,
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Approximate log adjustment along a grid, plus per-node optima for inspection."""
    cs = np.atleast_1d(np.asarray(cs, dtype=float))
    total = np.zeros(cs.size)
    optima: dict[int, np.ndarray] = {}
    for node in sorted(target.contributing):
        sol = event.solutions[node]
        values, _, _ = laplace_min_batch(cs, target, sol, event.omega_cov(node), cfg)
        optima[node] = values
        total -= values
    for node in sorted(target.G):
        active = list(event.solutions[node].active_set)
        sol = event.solutions[node]
        for g, c in enumerate(cs):
            gamma = gamma_replace(target.s_bar, target.j0, target.k0, c)
            total[g] += jacobian_logdet(
                gamma[np.ix_(active, active)], sol.ridge, sol.lam, sol.qbar
            )
    return np.where(np.isnan(total), -np.inf, total), optima


def log_lambda_hat(
    c: float,
    target: EdgeTarget,
    event: SelectionEvent,
    cfg: GridConfig | None = None,
) -> float:
    """Sum of -optimum over contributing nodes plus Jacobian log-dets over G."""
    values, _ = log_lambda_hat_grid(np.array([c]), target, event, cfg)
    return float(values[0])


def log_weight(
    c: float,
    theta0: float,
    target: EdgeTarget,
    event: SelectionEvent | None,
    n: int,
    *,
    cfg: GridConfig | None = None,
    adjust: bool = True,
) -> float:
    """Unnormalized log density of S_{j0,k0} at ``c`` under parameter ``theta0``.

    With ``adjust=False`` (or no event) the selection term is omitted and the
    result is the plain conditional Wishart log density.
    """
    p = target.p
    if n <= p + 1:
        raise ValueError(f"need n > p + 1, got n={n}, p={p}")
    gamma = gamma_replace(target.s_bar, target.j0, target.k0, c)
    if not pd_check(gamma):
        return -np.inf
    _, logdet = np.linalg.slogdet(gamma)
    value = 0.5 * (n - p - 1) * logdet - theta0 * c
    if adjust and event is not None:
        value += log_lambda_hat(c, target, event, cfg)
    return float(value)


def dump_grid_csv(
    path: Path,
    cs: np.ndarray,
    logdet: np.ndarray,
    optima: dict[int, np.ndarray],
    log_weights: np.ndarray,
) -> Path:
    """Write per-grid-point diagnostics for inspection."""
    frame = pd.DataFrame({"c": cs, "logdet": logdet})
    for node, values in sorted(optima.items()):
        frame[f"optimum_{node}"] = values
    frame["log_weight"] = log_weights
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path
