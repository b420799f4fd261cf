"""Single-constraint QCQP for one directed edge, solved through its 1-d dual.

Each edge subproblem has the standard form::

    minimize    xi' P0 xi + q0' xi + r0
    subject to  xi' P1 xi + q1' xi + r1 <= 0

with ``xi = [f_i, g_i, f_j, g_j]``. ``P0`` is positive definite and ``P1`` is
positive semidefinite (it is singular for every edge: it only sees
``g_i - g_j``). The dual is a concave function of a scalar ``nu >= 0`` and is
maximized with projected Newton plus backtracking.

Two evaluation routes are provided. :func:`dual_value`,
:func:`dual_derivatives` and :func:`solve_edge` factorize ``P0 + nu P1`` for
every ``nu``. :func:`solve_edges` handles a batch of edges sharing ``P0`` and
``P1`` (true for every edge of one ADMM run) by diagonalizing the pencil once,
after which each dual evaluation costs ``O(d)`` per edge.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .model import CvxRegError, ValidationError

ARMIJO = 1e-4
BACKTRACK = 0.5
FLAT_CURVATURE = -1e-14
ROUNDING_GAIN = 1e-13
NEWTON_TOL = 1e-9
MAX_NEWTON_ITERS = 50


class InvalidRho(ValidationError):
    pass


class SingularSystem(CvxRegError):
    pass


class MaxIterationsExceeded(CvxRegError):
    """Raised when Newton does not converge; ``result`` holds the best iterate."""

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


@dataclass(frozen=True, eq=False)
class EdgeProblem:
    P0: np.ndarray
    q0: np.ndarray
    r0: float
    P1: np.ndarray
    q1: np.ndarray
    r1: float
    edge: tuple = (0, 1)

    def objective(self, xi):
        return float(xi @ self.P0 @ xi + self.q0 @ xi + self.r0)

    def constraint(self, xi):
        return float(xi @ self.P1 @ xi + self.q1 @ xi + self.r1)


class EdgeSolution(NamedTuple):
    xi: np.ndarray
    nu: float
    n_iter: int
    converged: bool


def objective_matrix(n, rho, d):
    """Diagonal ``P0`` for the ordering ``[f_i, g_i, f_j, g_j]``."""
    block = np.full(1 + d, rho / 2.0)
    block[0] += 1.0 / (2.0 * n)
    return np.diag(np.concatenate([block, block]))


def constraint_matrix(fclass, d):
    """Quadratic part of the edge constraint: ``(c/L) |g_i - g_j|^2``."""
    m = 2 * (1 + d)
    P1 = np.zeros((m, m))
    if not fclass.smooth:
        return P1
    w = fclass.curvature_coeff / fclass.L
    gi = np.arange(1, 1 + d)
    gj = gi + 1 + d
    P1[gi, gi] = w
    P1[gj, gj] = w
    P1[gi, gj] = -w
    P1[gj, gi] = -w
    return P1


def constraint_linear(dx, fclass):
    """Linear part ``q1`` and constant ``r1`` of the edge constraint.

    ``dx`` holds ``x_i - x_j`` with shape ``(..., d)``.
    """
    dx = np.asarray(dx, dtype=float)
    d = dx.shape[-1]
    q1 = np.zeros(dx.shape[:-1] + (2 * (1 + d),))
    c = fclass.curvature_coeff
    q1[..., 0] = -1.0
    q1[..., 1 + d] = 1.0
    if fclass.smooth:
        k = 2.0 * c * fclass.mu / fclass.L
        q1[..., 1:1 + d] = -k * dx
        q1[..., 2 + d:] = (1.0 + k) * dx
    else:
        q1[..., 2 + d:] = dx
    r1 = c * fclass.mu * np.sum(dx * dx, axis=-1)
    return q1, r1


def objective_linear(y_i, y_j, v_i, v_j, n, rho):
    """Linear part ``q0`` and constant ``r0`` of the edge objective.

    ``v_i = z_i - lambda_{e,i}`` is the ADMM anchor for the node copy.
    """
    v = np.concatenate([v_i, v_j], axis=-1)
    q0 = -rho * v
    d1 = v_i.shape[-1]
    q0[..., 0] -= y_i / n
    q0[..., d1] -= y_j / n
    r0 = (y_i ** 2 + y_j ** 2) / (2.0 * n) + 0.5 * rho * np.sum(v * v, axis=-1)
    return q0, r0


def assemble_edge_problem(x_i, x_j, y_i, y_j, z_i, z_j, lam_i, lam_j, rho, n, fclass):
    """Standard-form data of the edge subproblem for ``e = (i -> j)``.

    ``z_*`` and ``lam_*`` are ``(1 + d)`` vectors laid out as
    ``[value, gradient...]``.
    """
    if not rho > 0:
        raise InvalidRho(f"rho must be positive, got {rho}")
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    x_j = np.atleast_1d(np.asarray(x_j, dtype=float))
    d = x_i.shape[0]
    v_i = np.asarray(z_i, dtype=float) - np.asarray(lam_i, dtype=float)
    v_j = np.asarray(z_j, dtype=float) - np.asarray(lam_j, dtype=float)
    q0, r0 = objective_linear(float(y_i), float(y_j), v_i, v_j, n, rho)
    q1, r1 = constraint_linear(x_i - x_j, fclass)
    return EdgeProblem(objective_matrix(n, rho, d), q0, float(r0),
                       constraint_matrix(fclass, d), q1, float(r1))


def _factor(prob, nu):
    P = prob.P0 + nu * prob.P1
    try:
        return linalg.cho_factor(P, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystem(f"P0 + nu P1 not positive definite at nu={nu}") from exc


def dual_value(nu, prob):
    """Dual function ``-q_nu' P_nu^{-1} q_nu / 4 + nu r1 + r0``."""
    cf = _factor(prob, nu)
    q = prob.q0 + nu * prob.q1
    return float(-0.25 * q @ linalg.cho_solve(cf, q) + nu * prob.r1 + prob.r0)


def dual_derivatives(nu, prob):
    """First and second derivative of :func:`dual_value` in ``nu``."""
    cf = _factor(prob, nu)
    q = prob.q0 + nu * prob.q1
    u = linalg.cho_solve(cf, q)          # P^-1 q_nu
    s = linalg.cho_solve(cf, prob.q1)    # P^-1 q1
    P1u = prob.P1 @ u
    t = linalg.cho_solve(cf, P1u)        # P^-1 P1 P^-1 q_nu
    grad = -0.5 * prob.q1 @ u + 0.25 * q @ t + prob.r1
    hess = -0.5 * prob.q1 @ s + prob.q1 @ t - 0.5 * P1u @ t
    return float(grad), float(hess)


def primal_point(nu, prob):
    cf = _factor(prob, nu)
    return -0.5 * linalg.cho_solve(cf, prob.q0 + nu * prob.q1)


def projected_newton(value, derivs, nu0, tol=NEWTON_TOL, max_iter=MAX_NEWTON_ITERS):
    """Maximize a batch of concave scalar functions over ``nu >= 0``.

    ``value(nu, idx)`` and ``derivs(nu, idx)`` evaluate the members selected by
    the integer array ``idx`` at the matching entries of ``nu``. Member ``k``
    stops once ``|grad| * max(1, nu) <= tol``, or ``nu = 0`` with
    ``grad <= tol``; the first condition bounds both the constraint violation
    and ``nu`` times it.

    Returns ``(nu, n_iter, converged)`` arrays.
    """
    nu = np.array(nu0, dtype=float)
    size = nu.shape[0]
    n_iter = np.zeros(size, dtype=int)
    converged = np.zeros(size, dtype=bool)
    active = np.arange(size)
    for _ in range(max_iter + 1):
        if active.size == 0:
            break
        v = nu[active]
        g, h = derivs(v, active)
        done = (np.abs(g) * np.maximum(1.0, v) <= tol) | ((v == 0.0) & (g <= tol))
        converged[active[done]] = True
        keep = ~done & (n_iter[active] < max_iter)
        active, v, g, h = active[keep], v[keep], g[keep], h[keep]
        if active.size == 0:
            break
        n_iter[active] += 1
        curved = h < FLAT_CURVATURE
        target = np.where(curved, v - g / np.where(curved, h, -1.0), v + g)
        step = np.maximum(target, 0.0) - v
        phi0 = value(v, active)
        slope = g * step
        new = v + step
        # below this predicted gain Armijo cannot tell an ascent from noise
        pending = slope > ROUNDING_GAIN * (1.0 + np.abs(phi0))
        t = np.ones_like(v)
        for _ in range(60):
            idx = np.nonzero(pending)[0]
            if idx.size == 0:
                break
            trial = v[idx] + t[idx] * step[idx]
            ok = value(trial, active[idx]) >= phi0[idx] + ARMIJO * t[idx] * slope[idx]
            new[idx[ok]] = trial[ok]
            pending[idx[ok]] = False
            t[idx[~ok]] *= BACKTRACK
        stuck = np.nonzero(pending)[0]
        new[stuck] = v[stuck]
        nu[active] = np.maximum(new, 0.0)
        if stuck.size:
            active = np.setdiff1d(active, active[stuck], assume_unique=True)
    return nu, n_iter, converged


def solve_edge(prob, newton_tol=NEWTON_TOL, max_newton_iters=MAX_NEWTON_ITERS, nu0=0.0):
    """Solve one edge QCQP; returns an :class:`EdgeSolution`.

    If the unconstrained minimizer is feasible the answer is ``nu = 0`` with
    no Newton iterations.
    """
    def value(nu, idx):
        return np.array([dual_value(float(nu[0]), prob)])

    def derivs(nu, idx):
        g, h = dual_derivatives(float(nu[0]), prob)
        return np.array([g]), np.array([h])

    g0, _ = dual_derivatives(0.0, prob)
    if g0 <= 0.0:
        return EdgeSolution(primal_point(0.0, prob), 0.0, 0, True)
    nu, n_iter, conv = projected_newton(value, derivs, [max(float(nu0), 0.0)],
                                        newton_tol, max_newton_iters)
    sol = EdgeSolution(primal_point(float(nu[0]), prob), float(nu[0]), int(n_iter[0]), bool(conv[0]))
    if not sol.converged:
        raise MaxIterationsExceeded(f"edge {prob.edge}: Newton did not converge", sol)
    return sol


class SpectralPencil:
    """Simultaneous diagonalization of a PD ``P0`` and a PSD ``P1``.

    With ``P0 = R R'`` and ``R^-1 P1 R^-T = V diag(lam) V'``, the inverse of
    ``P0 + nu P1`` is ``T diag(1 / (1 + nu lam)) T'`` where ``T = R^-T V``.
    """

    def __init__(self, P0, P1):
        try:
            R = np.linalg.cholesky(P0)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("P0 is not positive definite") from exc
        Rinv = linalg.solve_triangular(R, np.eye(P0.shape[0]), lower=True)
        M = Rinv @ P1 @ Rinv.T
        lam, V = np.linalg.eigh(0.5 * (M + M.T))
        self.lam = np.clip(lam, 0.0, None)
        self.T = Rinv.T @ V
        self.m = P0.shape[0]

    def transform(self, q):
        """``T' q`` row by row with a fixed summation order."""
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape)
        for k in range(self.m):
            out += q[..., k:k + 1] * self.T[k]
        return out

    def back(self, w):
        """``T w`` row by row with a fixed summation order."""
        out = np.zeros(w.shape)
        for k in range(self.m):
            out += w[..., k:k + 1] * self.T[:, k]
        return out


def solve_edges(pencil, q0, q1, r0, r1, nu0=None, tol=NEWTON_TOL,
                max_iter=MAX_NEWTON_ITERS, q1_hat=None):
    """Solve a batch of edge QCQPs that share ``P0`` and ``P1``.

    Parameters
    ----------
    pencil : SpectralPencil
        Diagonalization of the shared ``(P0, P1)``.
    q0, q1 : ndarray, shape (E, m)
    r0, r1 : ndarray, shape (E,)
    nu0 : ndarray, optional
        Newton starting points (e.g. the previous ADMM iteration's duals).
    q1_hat : ndarray, optional
        Precomputed ``T' q1`` when ``q1`` does not change between calls.

    Returns
    -------
    xi : ndarray, shape (E, m)
    nu : ndarray, shape (E,)
    n_iter : ndarray of int
    converged : ndarray of bool
    """
    a = pencil.transform(q0)
    b = pencil.transform(q1) if q1_hat is None else q1_hat
    lam = pencil.lam
    r0 = np.asarray(r0, dtype=float)
    r1 = np.asarray(r1, dtype=float)
    E = a.shape[0]

    def w_of(nu, idx):
        return (a[idx] + nu[:, None] * b[idx]) / (1.0 + nu[:, None] * lam)

    def value(nu, idx):
        qn = a[idx] + nu[:, None] * b[idx]
        quad = np.sum(qn * qn / (1.0 + nu[:, None] * lam), axis=1)
        return -0.25 * quad + nu * r1[idx] + r0[idx]

    def derivs(nu, idx):
        w = w_of(nu, idx)
        bi = b[idx]
        grad = r1[idx] - 0.25 * np.sum(2.0 * bi * w - lam * w * w, axis=1)
        resid = bi - lam * w
        hess = -0.5 * np.sum(resid * resid / (1.0 + nu[:, None] * lam), axis=1)
        return grad, hess

    everyone = np.arange(E)
    zero = np.zeros(E)
    g0, _ = derivs(zero, everyone)
    inactive = g0 <= 0.0
    start = zero if nu0 is None else np.maximum(np.asarray(nu0, dtype=float), 0.0)
    start = np.where(inactive, 0.0, start)
    nu = np.zeros(E)
    n_iter = np.zeros(E, dtype=int)
    converged = np.ones(E, dtype=bool)
    todo = np.nonzero(~inactive)[0]
    if todo.size:
        def sub_value(v, idx):
            return value(v, todo[idx])

        def sub_derivs(v, idx):
            return derivs(v, todo[idx])

        nu_t, it_t, conv_t = projected_newton(sub_value, sub_derivs, start[todo], tol, max_iter)
        nu[todo] = nu_t
        n_iter[todo] = it_t
        converged[todo] = conv_t
    xi = -0.5 * pencil.back(w_of(nu, everyone))
    return xi, nu, n_iter, converged
