"""Entropic optimal transport between small discrete measures.

The solver works on batches of padded problems so that the many tiny
neighborhood-vs-neighborhood solves used in training and attacks share one
set of vectorized iterations. A single problem is just a batch of one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidCost, NumericalFailure, ShapeError

LOG_EPS_THRESHOLD = 0.05
KERNEL_FLOOR = 1e-300


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.2
    max_iterations: int = 30
    marginal_tolerance: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidCost("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.marginal_tolerance > 0:
            raise ValueError("marginal_tolerance must be positive")


@dataclass
class CostMatrix:
    values: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        m, n = self.values.shape
        self.a = (np.full(m, 1.0 / m) if self.a is None
                  else np.asarray(self.a, dtype=np.float64).reshape(-1))
        self.b = (np.full(n, 1.0 / n) if self.b is None
                  else np.asarray(self.b, dtype=np.float64).reshape(-1))
        if self.a.shape != (m,) or self.b.shape != (n,):
            raise ShapeError(f"marginals {self.a.shape}, {self.b.shape} do not fit cost {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidCost("cost matrix has non-finite entries")
        if np.any(self.values < 0):
            raise InvalidCost("cost matrix has negative entries")
        for name, w in (("a", self.a), ("b", self.b)):
            if np.any(w <= 0) or not np.isfinite(w).all() or abs(w.sum() - 1.0) > 1e-12:
                raise InvalidCost(f"marginal {name} must be positive and sum to 1")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class TransportPlan:
    P: np.ndarray
    u: np.ndarray  # may overflow to inf after a log-domain solve; log_u does not
    v: np.ndarray
    log_u: np.ndarray
    log_v: np.ndarray
    a: np.ndarray
    b: np.ndarray
    epsilon: float
    iterations: int
    converged: bool
    marginal_residual: float
    log_domain: bool
    cost: float  # <P, C>
    objective: float  # <P, C> + eps * sum P (log P - 1)

    @property
    def shape(self):
        return self.P.shape


def _as_cost(C, a=None, b=None) -> CostMatrix:
    if isinstance(C, CostMatrix):
        return C
    return CostMatrix(C, a, b)


def _xlogx(P):
    out = np.zeros_like(P)
    pos = P > 0
    out[pos] = P[pos] * np.log(P[pos])
    return out


def _needs_log(C, eps):
    return eps < LOG_EPS_THRESHOLD or (C.size and C.max() / eps > -np.log(KERNEL_FLOOR))


def _solve_scaling(C, a, b, eps, cfg):
    """Plain scaling iterations on a padded batch (B, M, N)."""
    B = C.shape[0]
    K = np.exp(-C / eps)
    u = np.zeros_like(a)
    v = (b > 0).astype(np.float64)
    iters = np.zeros(B, dtype=np.int64)
    resid = np.full(B, np.inf)
    active = np.arange(B)
    for it in range(1, cfg.max_iterations + 1):
        Ka, va, aa, ba = K[active], v[active], a[active], b[active]
        Kv = np.einsum("bij,bj->bi", Ka, va)
        if np.any((Kv <= 0) & (aa > 0)):
            raise NumericalFailure("kernel row vanished during scaling")
        ua = np.divide(aa, Kv, out=np.zeros_like(aa), where=aa > 0)
        Ktu = np.einsum("bij,bi->bj", Ka, ua)
        if np.any((Ktu <= 0) & (ba > 0)):
            raise NumericalFailure("kernel column vanished during scaling")
        va = np.divide(ba, Ktu, out=np.zeros_like(ba), where=ba > 0)
        row = np.abs(ua * np.einsum("bij,bj->bi", Ka, va) - aa).sum(axis=1)
        col = np.abs(va * np.einsum("bij,bi->bj", Ka, ua) - ba).sum(axis=1)
        if not (np.isfinite(ua).all() and np.isfinite(va).all()):
            raise NumericalFailure("non-finite scaling vectors")
        u[active], v[active] = ua, va
        iters[active] = it
        resid[active] = np.maximum(row, col)
        active = active[resid[active] > cfg.marginal_tolerance]
        if active.size == 0:
            break
    P = u[:, :, None] * K * v[:, None, :]
    with np.errstate(divide="ignore"):
        return P, u, v, np.log(u), np.log(v), iters, resid


def _solve_log(C, a, b, eps, cfg):
    """Log-domain iterations; stable for tiny epsilon or huge costs."""
    B = C.shape[0]
    logK = -C / eps
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)
    f = np.full_like(a, -np.inf)
    g = np.where(b > 0, 0.0, -np.inf)
    iters = np.zeros(B, dtype=np.int64)
    resid = np.full(B, np.inf)
    active = np.arange(B)

    def lse(x, axis):
        with np.errstate(invalid="ignore"):
            return logsumexp(x, axis=axis)

    for it in range(1, cfg.max_iterations + 1):
        lK, ga, laa, lba = logK[active], g[active], la[active], lb[active]
        fa = np.where(np.isfinite(laa), laa - lse(lK + ga[:, None, :], 2), -np.inf)
        ga = np.where(np.isfinite(lba), lba - lse(lK + fa[:, :, None], 1), -np.inf)
        if not (np.isfinite(fa[np.isfinite(laa)]).all() and np.isfinite(ga[np.isfinite(lba)]).all()):
            raise NumericalFailure("kernel row or column vanished in log domain")
        logP = fa[:, :, None] + lK + ga[:, None, :]
        Pa = np.exp(logP)
        row = np.abs(Pa.sum(axis=2) - a[active]).sum(axis=1)
        col = np.abs(Pa.sum(axis=1) - b[active]).sum(axis=1)
        f[active], g[active] = fa, ga
        iters[active] = it
        resid[active] = np.maximum(row, col)
        active = active[resid[active] > cfg.marginal_tolerance]
        if active.size == 0:
            break
    P = np.exp(f[:, :, None] + logK + g[:, None, :])
    # the scalings themselves may overflow here; log_u/log_v stay exact
    with np.errstate(over="ignore"):
        return P, np.exp(f), np.exp(g), f, g, iters, resid


def _pad(costs):
    B = len(costs)
    M = max(c.shape[0] for c in costs)
    N = max(c.shape[1] for c in costs)
    C = np.zeros((B, M, N))
    a = np.zeros((B, M))
    b = np.zeros((B, N))
    for k, c in enumerate(costs):
        m, n = c.shape
        C[k, :m, :n] = c.values
        a[k, :m] = c.a
        b[k, :n] = c.b
    return C, a, b


def sinkhorn_batch(costs, cfg: SinkhornConfig = SinkhornConfig()) -> list[TransportPlan]:
    """Solve several entropic OT problems; returns plans in input order."""
    costs = [_as_cost(c) for c in costs]
    if not costs:
        return []
    eps = cfg.epsilon
    logmode = [_needs_log(c.values, eps) for c in costs]
    plans: list = [None] * len(costs)
    # bucket by mode and power-of-two size so padding stays modest
    groups: dict = {}
    for k, c in enumerate(costs):
        key = (logmode[k],) + tuple(int(s - 1).bit_length() for s in c.shape)
        groups.setdefault(key, []).append(k)
    for (lg, *_), idx in sorted(groups.items()):
        C, a, b = _pad([costs[k] for k in idx])
        solver = _solve_log if lg else _solve_scaling
        P, u, v, lu, lv, iters, resid = solver(C, a, b, eps, cfg)
        for j, k in enumerate(idx):
            m, n = costs[k].shape
            plans[k] = _finish(costs[k], P[j, :m, :n], u[j, :m], v[j, :n], lu[j, :m], lv[j, :n],
                               eps, int(iters[j]), float(resid[j]), cfg, lg)
    return plans


def _finish(c, P, u, v, lu, lv, eps, iters, resid, cfg, lg):
    cost = float(np.sum(P * c.values))
    objective = cost + eps * float(np.sum(_xlogx(P) - P))
    return TransportPlan(P=P, u=u, v=v, log_u=lu, log_v=lv, a=c.a, b=c.b, epsilon=eps,
                         iterations=iters, converged=resid <= cfg.marginal_tolerance,
                         marginal_residual=resid, log_domain=bool(lg), cost=cost, objective=objective)


def sinkhorn(C, cfg: SinkhornConfig = SinkhornConfig(), a=None, b=None) -> TransportPlan:
    """Entropic OT plan for a single cost matrix.

    Parameters
    ----------
    C : CostMatrix or array_like, shape (m, n)
        Ground costs. When a bare array is given, ``a`` and ``b`` default
        to uniform weights.
    cfg : SinkhornConfig
        Regularization strength, iteration cap and L1 marginal tolerance.

    Returns
    -------
    TransportPlan
        Plan ``P = diag(u) K diag(v)`` with ``K = exp(-C / eps)``.
    """
    return sinkhorn_batch([_as_cost(C, a, b)], cfg)[0]


def sinkhorn_iterates(C, cfg: SinkhornConfig = SinkhornConfig(), a=None, b=None):
    """Yield ``(P, f, g)`` after each full u/v update (plain domain).

    ``f = eps log u`` and ``g = eps log v`` are the dual potentials. Meant for
    inspecting convergence behaviour, not for production solves.
    """
    c = _as_cost(C, a, b)
    eps = cfg.epsilon
    K = np.exp(-c.values / eps)
    v = np.ones(c.shape[1])
    for _ in range(cfg.max_iterations):
        u = c.a / (K @ v)
        v = c.b / (K.T @ u)
        yield u[:, None] * K * v[None, :], eps * np.log(u), eps * np.log(v)


def _check_shape(plan, C):
    values = C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=np.float64)
    if values.shape != plan.P.shape:
        raise ShapeError(f"plan {plan.P.shape} vs cost {values.shape}")
    return values


def transport_cost(plan: TransportPlan, C) -> float:
    return float(np.sum(plan.P * _check_shape(plan, C)))


def entropic_objective(plan: TransportPlan, C) -> float:
    values = _check_shape(plan, C)
    return float(np.sum(plan.P * values) + plan.epsilon * np.sum(_xlogx(plan.P) - plan.P))


def kl_divergence(P, Q) -> float:
    """Generalized KL(P || Q) = sum P log(P/Q) - P + Q."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    pos = P > 0
    return float(np.sum(P[pos] * np.log(P[pos] / Q[pos])) - P.sum() + Q.sum())


def row_masses(plan: TransportPlan) -> np.ndarray:
    return plan.P.sum(axis=1)


def plan_entropy(P) -> float:
    return -float(np.sum(_xlogx(np.asarray(P, dtype=np.float64))))


def conditional_entropies(plan) -> tuple[float, float]:
    """Row- and column-conditional entropies of a plan.

    The conditionals are normalized by the plan's own row and column sums,
    which coincide with the marginals at convergence and keep both values
    nonnegative when the plan is only approximately feasible.
    """
    P = plan.P if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    rows = P.sum(axis=1, keepdims=True)
    cols = P.sum(axis=0, keepdims=True)
    pos = P > 0
    lr = np.zeros_like(P)
    lc = np.zeros_like(P)
    lr[pos] = np.log((P / np.where(rows > 0, rows, 1.0))[pos])
    lc[pos] = np.log((P / np.where(cols > 0, cols, 1.0))[pos])
    h_row = -float(np.sum(P * lr))
    h_col = -float(np.sum(P * lc))
    return max(h_row, 0.0), max(h_col, 0.0)


def cost_gradient(plan: TransportPlan) -> np.ndarray:
    """Envelope gradient of the entropic transport value w.r.t. C."""
    if not plan.converged:
        warnings.warn(
            f"gradient taken at an unconverged plan (residual {plan.marginal_residual:.2e})",
            RuntimeWarning, stacklevel=2)
    return plan.P.copy()
