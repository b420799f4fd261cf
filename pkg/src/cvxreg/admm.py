"""Edge-based consensus ADMM for the interpolability-constrained least squares fit.

Every ordered pair ``(i, j)`` of sites is an edge carrying private copies
``eta_{e,i}`` and ``eta_{e,j}`` of the node variables ``[f, g]`` and exactly
one interpolability constraint. Copies are pulled together through the
per-node consensus vectors ``z_i`` and scaled duals ``lambda_{e,i}``.

Arrays use edge-major layout: ``xi`` and ``lam`` have shape ``(E, 2, 1 + d)``
where slot 0 is the source node and slot 1 the sink node of the edge.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .local_qcqp import (
    MAX_NEWTON_ITERS,
    NEWTON_TOL,
    InvalidRho,
    SpectralPencil,
    constraint_linear,
    constraint_matrix,
    objective_linear,
    objective_matrix,
    solve_edges,
)
from .model import CertifiedModel, TooFewPoints, ValidationError


class ConvergenceWarning(UserWarning):
    pass


class ZUpdate(str, Enum):
    EXACT = "exact"
    TWO_N = "paper"


@dataclass(frozen=True)
class AdmmConfig:
    """Solver settings.

    ``rho=None`` means ``1/n``. ``z_update="exact"`` averages each node's
    ``2(n-1)`` edge copies; ``"paper"`` divides their sum by ``2n``.
    """

    rho: float | None = None
    eps: float = 0.01
    max_iters: int = 10000
    z_update: ZUpdate = ZUpdate.EXACT
    newton_tol: float = NEWTON_TOL
    max_newton_iters: int = MAX_NEWTON_ITERS
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "z_update", ZUpdate(self.z_update))
        if not self.eps > 0:
            raise ValidationError(f"eps must be positive, got {self.eps}")
        if int(self.max_iters) < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.rho is not None and not self.rho > 0:
            raise InvalidRho(f"rho must be positive, got {self.rho}")
        if int(self.workers) < 1:
            raise ValidationError("workers must be >= 1")

    def resolved_rho(self, n):
        return 1.0 / n if self.rho is None else float(self.rho)


@dataclass(frozen=True, eq=False)
class EdgeSet:
    edges: np.ndarray          # (E, 2) ordered pairs, lexicographic
    node_slots: np.ndarray     # (n, 2(n-1)) flat slot ids ``2 e + s`` per node

    @property
    def count(self):
        return self.edges.shape[0]


def build_edge_set(n):
    """All ``n (n-1)`` ordered pairs in lexicographic order (0-based)."""
    if n < 2:
        raise TooFewPoints(f"need n >= 2, got {n}")
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = ii != jj
    edges = np.stack([ii[mask], jj[mask]], axis=1)
    flat_nodes = edges.reshape(-1)
    # stable sort keeps each node's slots in lexicographic edge order
    order = np.argsort(flat_nodes, kind="stable")
    node_slots = order.reshape(n, 2 * (n - 1))
    edges.setflags(write=False)
    node_slots.setflags(write=False)
    return EdgeSet(edges, node_slots)


@dataclass(eq=False)
class AdmmState:
    xi: np.ndarray        # (E, 2, 1+d)
    z: np.ndarray         # (n, 1+d)
    lam: np.ndarray       # (E, 2, 1+d)
    rho: float
    nu: np.ndarray = None  # (E,) last edge duals, used as Newton starts
    iter: int = 0
    residual: float = np.inf
    newton_failures: int = 0

    def copy(self):
        return replace(self, xi=self.xi.copy(), z=self.z.copy(), lam=self.lam.copy(),
                       nu=None if self.nu is None else self.nu.copy())


@dataclass
class Trace:
    residual: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    newton_failures: int = 0

    @property
    def iterations(self):
        return len(self.residual)


@dataclass(eq=False)
class FitResult:
    model: CertifiedModel
    trace: Trace
    state: AdmmState
    converged: bool


class _Problem:
    """Per-run constants: edge graph, shared pencil, constraint data."""

    def __init__(self, obs, fclass, config):
        self.obs = obs
        self.fclass = fclass
        self.config = config
        n, d = obs.n, obs.d
        self.n, self.d = n, d
        self.rho = config.resolved_rho(n)
        self.edges = build_edge_set(n)
        src, dst = self.edges.edges[:, 0], self.edges.edges[:, 1]
        self.src, self.dst = src, dst
        X, y = obs.points, obs.values
        self.y_src, self.y_dst = y[src], y[dst]
        self.q1, self.r1 = constraint_linear(X[src] - X[dst], fclass)
        self.pencil = SpectralPencil(objective_matrix(n, self.rho, d), constraint_matrix(fclass, d))
        self.q1_hat = self.pencil.transform(self.q1)

    def initial_state(self, z0=None):
        n, d = self.n, self.d
        if z0 is None:
            z = np.zeros((n, 1 + d))
            z[:, 0] = self.obs.values
        else:
            z = np.array(z0, dtype=float).reshape(n, 1 + d)
        E = self.edges.count
        xi = np.stack([z[self.src], z[self.dst]], axis=1)
        return AdmmState(xi=xi, z=z, lam=np.zeros((E, 2, 1 + d)), rho=self.rho, nu=np.zeros(E))

    def solve_chunk(self, sl, v, nu0):
        q0, r0 = objective_linear(self.y_src[sl], self.y_dst[sl], v[sl, 0], v[sl, 1], self.n, self.rho)
        return solve_edges(self.pencil, q0, self.q1[sl], r0, self.r1[sl], nu0=nu0[sl],
                           tol=self.config.newton_tol, max_iter=self.config.max_newton_iters,
                           q1_hat=self.q1_hat[sl])


def _chunks(E, workers):
    bounds = np.linspace(0, E, workers + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _edge_sweep(prob, state, pool):
    """Step 1: solve every edge subproblem around ``z - lambda``."""
    v = state.z[np.stack([prob.src, prob.dst], axis=1)] - state.lam
    E = prob.edges.count
    nu0 = state.nu if state.nu is not None else np.zeros(E)
    xi = np.empty((E, 2 * (1 + prob.d)))
    nu = np.empty(E)
    failures = 0
    slices = _chunks(E, prob.config.workers if pool is not None else 1)
    if pool is None or len(slices) == 1:
        results = [prob.solve_chunk(sl, v, nu0) for sl in slices]
    else:
        results = list(pool.map(lambda sl: prob.solve_chunk(sl, v, nu0), slices))
    # each slice owns a disjoint, preallocated block, so scheduling order is irrelevant
    for sl, (x_s, nu_s, _, conv_s) in zip(slices, results):
        xi[sl] = x_s
        nu[sl] = nu_s
        failures += int(np.count_nonzero(~conv_s))
    return xi.reshape(E, 2, 1 + prob.d), nu, failures


def consensus_update(xi, edges, n, mode=ZUpdate.EXACT):
    """Step 2: per-node reduction of the edge copies in fixed slot order."""
    flat = xi.reshape(-1, xi.shape[-1])
    total = flat[edges.node_slots].sum(axis=1)
    denom = 2.0 * (n - 1) if ZUpdate(mode) is ZUpdate.EXACT else 2.0 * n
    return total / denom


def stopping_residual(state, new_state):
    """``max(max_slots |eta_{e,i}+ - z_i+|_inf, |z+ - z|_inf)`` for consecutive states.

    The edge slots of ``new_state`` are compared against ``new_state.z``; the
    node indices come from the lexicographic edge order of ``n`` nodes.
    """
    n = new_state.z.shape[0]
    edges = build_edge_set(n).edges
    zz = new_state.z[edges]
    primal = np.max(np.abs(new_state.xi - zz)) if zz.size else 0.0
    change = np.max(np.abs(new_state.z - state.z))
    return float(max(primal, change))


def admm_step(state, obs, fclass, config, _prob=None, _pool=None):
    """One pass of edge solves, consensus update and dual update.

    Returns a new state; ``state`` is left untouched.
    """
    prob = _prob if _prob is not None else _Problem(obs, fclass, config)
    xi, nu, failures = _edge_sweep(prob, state, _pool)
    z = consensus_update(xi, prob.edges, prob.n, config.z_update)
    zz = z[prob.edges.edges]
    lam = state.lam + (xi - zz)
    new = AdmmState(xi=xi, z=z, lam=lam, rho=state.rho, nu=nu, iter=state.iter + 1,
                    newton_failures=failures)
    new.residual = max(float(np.max(np.abs(xi - zz))), float(np.max(np.abs(z - state.z))))
    return new


def consensus_objective(obs, z):
    r = obs.values - z[:, 0]
    return float(r @ r)


def fit(obs, fclass, config=None, warm_start=None):
    """Run ADMM until the stopping residual drops to ``config.eps``.

    Parameters
    ----------
    obs : ObservationSet
    fclass : FunctionClass
    config : AdmmConfig, optional
    warm_start : array_like, shape (n, 1 + d), optional
        Initial consensus vectors ``[f_i, g_i]``. Defaults to ``f = y``,
        ``g = 0``.

    Returns
    -------
    FitResult
        The model is *not* certified; run :func:`cvxreg.constraints.certify`
        on it. ``converged`` is False when ``max_iters`` ran out, in which case
        the last iterate is returned and a :class:`ConvergenceWarning` issued.
    """
    config = config or AdmmConfig()
    prob = _Problem(obs, fclass, config)
    state = prob.initial_state(warm_start)
    trace = Trace()
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        converged = False
        for _ in range(int(config.max_iters)):
            t0 = time.perf_counter()
            state = admm_step(state, obs, fclass, config, _prob=prob, _pool=pool)
            trace.wall_time.append(time.perf_counter() - t0)
            trace.residual.append(state.residual)
            trace.objective.append(consensus_objective(obs, state.z))
            trace.newton_failures += state.newton_failures
            if state.residual <= config.eps:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if not converged:
        warnings.warn(f"ADMM stopped after {config.max_iters} iterations with residual "
                      f"{state.residual:.3g} > eps={config.eps:g}", ConvergenceWarning, stacklevel=2)
    model = CertifiedModel(obs.points.copy(), state.z[:, 0].copy(), state.z[:, 1:].copy(), fclass)
    return FitResult(model, trace, state, converged)
