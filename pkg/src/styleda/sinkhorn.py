"""Entropy-regularized optimal transport between uniform empirical measures.

Marginals are the all-ones vectors (not probability vectors) and the
transport cost is normalized by ``1/(n*m)`` afterwards.  The scaling
iterations ``a <- 1/(K b)``, ``b <- 1/(K^T a)`` run in the log domain so the
Gibbs kernel never underflows, and gradients are taken by differentiating
through exactly the unrolled iterations that produced the value.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, NonFiniteError, ShapeError, logsumexp

DEFAULT_ITERATIONS = 10
DEFAULT_EPS_MOMENTUM = 0.9
EPS_FLOOR_RATIO = 1e-6


def as_measure(points):
    pts = np.asarray(points, dtype=DTYPE)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ShapeError(f"a measure needs at least one point, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise NonFiniteError("measure has non-finite coordinates")
    return pts


def cost_matrix(p, q):
    """Squared Euclidean cost between the points of ``p`` and ``q``."""
    p, q = as_measure(p), as_measure(q)
    if p.shape[1] != q.shape[1]:
        raise ShapeError(f"point dimensions differ: {p.shape[1]} vs {q.shape[1]}")
    diff = p[:, None, :] - q[None, :, :]
    return np.einsum("ijd,ijd->ij", diff, diff)


@dataclass
class TransportState:
    cost: np.ndarray
    eps: float
    iterations: int = DEFAULT_ITERATIONS
    log_a: np.ndarray | None = None
    log_b: np.ndarray | None = None
    # per-iteration log potentials, kept for the reverse pass
    f_hist: list = field(default_factory=list, repr=False)
    g_hist: list = field(default_factory=list, repr=False)

    @property
    def log_k(self):
        return -self.cost / self.eps

    def log_plan(self):
        return self.log_a[:, None] + self.log_k + self.log_b[None, :]

    def plan(self):
        return np.exp(self.log_plan())


def init_state(cost, eps, iterations=DEFAULT_ITERATIONS):
    cost = np.asarray(cost, dtype=DTYPE)
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if iterations < 1:
        raise ValueError("iteration budget must be at least 1")
    n, m = cost.shape
    return TransportState(
        cost=cost,
        eps=float(eps),
        iterations=int(iterations),
        log_a=np.zeros(n),
        log_b=np.zeros(m),  # b_0 = 1_m
    )


def sinkhorn_iterate(state):
    """Run ``state.iterations`` alternating a/b updates starting from b_0 = 1."""
    if not state.eps > 0:
        raise ValueError(f"eps must be positive, got {state.eps}")
    log_k = state.log_k
    g = np.zeros(state.cost.shape[1])
    f_hist, g_hist = [], [g]
    with np.errstate(invalid="ignore"):  # inf - inf shows up below as non-finite potentials
        for _ in range(state.iterations):
            f = -logsumexp(log_k + g[None, :], axis=1)
            g = -logsumexp(log_k + f[:, None], axis=0)
            f_hist.append(f)
            g_hist.append(g)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise NonFiniteError(
            f"non-finite Sinkhorn potentials (cost scale {state.cost.max():.3g} vs eps {state.eps:.3g})"
        )
    state.log_a, state.log_b = f, g
    state.f_hist, state.g_hist = f_hist, g_hist
    return state


def _transport_value(state):
    n, m = state.cost.shape
    return float(np.sum(state.plan() * state.cost) / (n * m))


def _cost_grad(state):
    """d W / d cost, through the unrolled iterations (eps held fixed)."""
    n, m = state.cost.shape
    log_k = state.log_k
    s = 1.0 / (n * m)
    p = state.plan()
    d_cost = s * p
    d_logp = s * p * state.cost
    d_logk = d_logp.copy()
    df = d_logp.sum(axis=1)
    dg = d_logp.sum(axis=0)
    for it in range(state.iterations - 1, -1, -1):
        f, g, g_prev = state.f_hist[it], state.g_hist[it + 1], state.g_hist[it]
        # g = -lse_i(log_k + f)
        sg = np.exp(log_k + f[:, None] + g[None, :])
        d_logk -= sg * dg[None, :]
        df = df - sg @ dg
        # f = -lse_j(log_k + g_prev)
        sf = np.exp(log_k + f[:, None] + g_prev[None, :])
        d_logk -= sf * df[:, None]
        dg = -(sf.T @ df)
        df = np.zeros(n)
    return d_cost - d_logk / state.eps


def points_grad(p, q, d_cost):
    gp = 2.0 * (p * d_cost.sum(axis=1)[:, None] - d_cost @ q)
    gq = 2.0 * (q * d_cost.sum(axis=0)[:, None] - d_cost.T @ p)
    return gp, gq


def transport(p, q, eps, iterations=DEFAULT_ITERATIONS):
    """Solved TransportState for measures ``p`` and ``q``."""
    return sinkhorn_iterate(init_state(cost_matrix(p, q), eps, iterations))


def regularized_ot(p, q, eps, iterations=DEFAULT_ITERATIONS):
    """Normalized transport cost ``a_L^T (K * C) b_L / (n m)``."""
    return _transport_value(transport(p, q, eps, iterations))


def regularized_ot_grad(p, q, eps, iterations=DEFAULT_ITERATIONS):
    """Value and gradients of ``regularized_ot`` w.r.t. the points of p and q."""
    p, q = as_measure(p), as_measure(q)
    state = transport(p, q, eps, iterations)
    gp, gq = points_grad(p, q, _cost_grad(state))
    return _transport_value(state), gp, gq


def sinkhorn_divergence(p, q, eps, iterations=DEFAULT_ITERATIONS):
    """Debiased loss ``2 W(p, q) - W(p, p) - W(q, q)``."""
    return (
        2.0 * regularized_ot(p, q, eps, iterations)
        - regularized_ot(p, p, eps, iterations)
        - regularized_ot(q, q, eps, iterations)
    )


def sinkhorn_divergence_and_grads(p, q, eps, iterations=DEFAULT_ITERATIONS):
    """Divergence value with gradients w.r.t. both point sets."""
    w_pq, gp, gq = regularized_ot_grad(p, q, eps, iterations)
    w_pp, gp1, gp2 = regularized_ot_grad(p, p, eps, iterations)
    w_qq, gq1, gq2 = regularized_ot_grad(q, q, eps, iterations)
    value = 2.0 * w_pq - w_pp - w_qq
    return value, 2.0 * gp - gp1 - gp2, 2.0 * gq - gq1 - gq2


def sinkhorn_divergence_grad(p, q, eps, iterations=DEFAULT_ITERATIONS):
    return sinkhorn_divergence_and_grads(p, q, eps, iterations)[1]


def eps_estimate_batch(source, target, squared=True):
    """Mean pairwise cost between two batches (squared distance by default)."""
    cost = cost_matrix(source, target)
    if not squared:
        cost = np.sqrt(cost)
    return float(cost.mean())


@dataclass
class EpsState:
    """Momentum-averaged entropy regularizer.

    The first update adopts the estimate as-is; later ones blend
    ``eps <- rho*eps + (1-rho)*estimate``.  ``fixed`` pins eps and turns
    updates into no-ops.
    """

    momentum: float = DEFAULT_EPS_MOMENTUM
    eps: float | None = None
    fixed: float | None = None
    steps: int = 0
    mean_estimate: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("eps momentum must lie in (0, 1)")
        if self.fixed is not None:
            if not self.fixed > 0:
                raise ValueError("fixed eps must be positive")
            self.eps = float(self.fixed)

    @property
    def initialized(self):
        return self.eps is not None

    def value(self):
        if self.eps is None:
            raise RuntimeError("eps used before the first update")
        return self.eps


def eps_update(state, estimate):
    """Fold one batch estimate into ``state`` (in place) and return it."""
    if state.fixed is not None:
        return state
    state.steps += 1
    state.mean_estimate += (float(estimate) - state.mean_estimate) / state.steps
    estimate = max(float(estimate), EPS_FLOOR_RATIO * state.mean_estimate)
    if not estimate > 0 or not np.isfinite(estimate):
        raise ValueError(f"eps estimate must be positive, got {estimate}")
    if state.eps is None:
        state.eps = estimate
    else:
        rho = state.momentum
        state.eps = rho * state.eps + (1.0 - rho) * estimate
    return state


def exact_ot_bruteforce(p, q):
    """Unregularized optimum by enumerating assignments, on the same 1/(n m) scale."""
    cost = cost_matrix(p, q)
    n, m = cost.shape
    if n != m:
        raise ShapeError("exact solver needs equally sized measures")
    if n > 8:
        raise ValueError("exact solver limited to 8 points")
    rows = np.arange(n)
    best = min(cost[rows, list(perm)].sum() for perm in itertools.permutations(range(n)))
    return float(best / (n * m))
