"""Everywhere-defined estimators built from fitted triplets.

For a finite ``L`` the estimate is the convex envelope of the quadratic pieces
``p_i(x) = (L - mu)/2 |x - a_i|^2 - b_i`` plus ``mu/2 |x|^2``. Because all
pieces share their curvature, the envelope at ``x`` equals::

    min over the simplex of  (L - mu)/2 |x - sum_i lam_i a_i|^2 - sum_i lam_i b_i

(splitting ``x`` into ``sum_i lam_i x_i`` and applying Jensen to the shared
quadratic), so evaluation is a small simplex-constrained QP.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import linalg

from .model import CvxRegError, ValidationError, conjugate_triplets

SIMPLEX_TOL = 1e-9
SIMPLEX_MAX_ITER = 10000


class Kind(str, Enum):
    SMOOTH_HULL = "smooth_hull"
    MAX_AFFINE = "max_affine"
    MAX_QUADRATIC_MINORANT = "max_quadratic_minorant"


class ClassMismatch(ValidationError):
    pass


class SimplexSolverNotConverged(CvxRegError):
    def __init__(self, msg, lam=None, value=None):
        super().__init__(msg)
        self.lam = lam
        self.value = value


@dataclass(frozen=True, eq=False)
class Interpolant:
    kind: Kind
    mu: float
    L: object
    a: np.ndarray = None        # (n, d) hull centres, SMOOTH_HULL only
    b: np.ndarray = None        # (n,)
    sites: np.ndarray = None    # raw triplets for the L = inf kinds
    values: np.ndarray = None
    gradients: np.ndarray = None

    @property
    def n(self):
        return (self.a if self.kind is Kind.SMOOTH_HULL else self.sites).shape[0]

    @property
    def d(self):
        return (self.a if self.kind is Kind.SMOOTH_HULL else self.sites).shape[1]


def build(model, fclass=None, kind=None):
    """Interpolant for the triplets of ``model`` (certified or not).

    ``kind`` defaults to the natural choice for the class; asking for
    ``SMOOTH_HULL`` with an infinite ``L`` raises :class:`ClassMismatch`.
    """
    fclass = fclass or model.fclass
    if kind is None:
        if fclass.smooth:
            kind = Kind.SMOOTH_HULL
        elif fclass.mu == 0.0:
            kind = Kind.MAX_AFFINE
        else:
            kind = Kind.MAX_QUADRATIC_MINORANT
    kind = Kind(kind)
    X = np.atleast_2d(np.asarray(model.sites, dtype=float))
    G = np.asarray(model.gradients, dtype=float).reshape(X.shape)
    f = np.asarray(model.values, dtype=float).reshape(-1)
    if kind is Kind.SMOOTH_HULL:
        if not fclass.smooth:
            raise ClassMismatch("the smooth hull needs a finite L")
        k = fclass.L - fclass.mu
        ct = conjugate_triplets(X, G, f, fclass.mu)
        a = ct.tilde_g - ct.tilde_x / k
        b = ct.tilde_f - np.einsum("ij,ij->i", ct.tilde_g, ct.tilde_x) \
            + np.einsum("ij,ij->i", ct.tilde_x, ct.tilde_x) / (2.0 * k)
        return Interpolant(kind, fclass.mu, fclass.L, a=a, b=b)
    return Interpolant(kind, fclass.mu, fclass.L, sites=X, values=f, gradients=G)


def project_simplex(V):
    """Euclidean projection of each row of ``V`` onto the probability simplex."""
    V = np.atleast_2d(V)
    n = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    idx = np.arange(1, n + 1)
    cond = U - css / idx > 0
    r = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(V.shape[0]), r] / (r + 1)
    return np.maximum(V - theta[:, None], 0.0)


def _hull_objective(lam, A, b, X, k):
    r = X - lam @ A
    return 0.5 * k * np.sum(r * r, axis=1) - lam @ b


def _face_direction(H_FF, g_F):
    """Descent direction for the QP restricted to the face ``sum(p) = 0``.

    Returns ``(p, ray)``; ``ray`` is True when ``p`` follows a zero-curvature
    direction along which the objective decreases linearly (the step length
    then comes from the ratio test alone).
    """
    m = g_F.shape[0]
    if m == 1:
        return np.zeros(1), False
    Z = linalg.null_space(np.ones((1, m)))
    w, V = np.linalg.eigh(Z.T @ H_FF @ Z)
    gr = Z.T @ g_F
    flat = w <= 1e-12 * max(float(w.max()), 1.0)
    slope = V[:, flat].T @ gr
    if slope.size and np.max(np.abs(slope)) > 1e-15 * max(1.0, float(np.max(np.abs(g_F)))):
        return -Z @ (V[:, flat] @ slope), True
    curved = ~flat
    return -Z @ (V[:, curved] @ ((V[:, curved].T @ gr) / w[curved])), False


def _active_set_polish(H, c, lam, tol, max_steps):
    """Finite active-set refinement of one simplex QP ``min lam'H lam/2 + c'lam``.

    Used when the first-order method stalls on a nearly degenerate face:
    pieces whose ``(a_i, b_i)`` are almost affinely dependent leave a
    direction with tiny slope that projected gradient crosses very slowly.
    """
    lam = lam.copy()
    free = lam > 0.0
    for _ in range(max_steps):
        g = H @ lam + c
        if lam @ g - g.min() <= tol:
            break
        F = np.nonzero(free)[0]
        p, ray = _face_direction(H[np.ix_(F, F)], g[F])
        if np.max(np.abs(p), initial=0.0) <= 1e-15:
            # face optimum: release the most attractive fixed index
            tau = lam[F] @ g[F]
            out = np.nonzero(~free)[0]
            free[out[np.argmin(g[out] - tau)]] = True
            continue
        neg = p < 0
        ratios = -lam[F][neg] / p[neg]
        alpha = float(ratios.min()) if ray else min(1.0, float(ratios.min(initial=np.inf)))
        lam[F] = np.maximum(lam[F] + alpha * p, 0.0)
        if alpha < 1.0 or ray:
            blocked = F[neg][np.argmin(ratios)]
            lam[blocked] = 0.0
            free[blocked] = False
        lam /= lam.sum()
    return lam


def solve_simplex_qp(A, b, X, L, mu, tol=SIMPLEX_TOL, max_iter=SIMPLEX_MAX_ITER, raise_on_fail=True):
    """Minimize ``(L-mu)/2 |x - A' lam|^2 - b' lam`` over the simplex.

    Accelerated projected gradient with adaptive restart, vectorized over the
    rows of ``X``. The Frank-Wolfe gap, an upper bound on the distance to the
    optimal value, is driven below ``tol``; points still above it after
    ``max_iter`` iterations get a finite active-set refinement.

    Parameters
    ----------
    A : ndarray, shape (n, d)
    b : ndarray, shape (n,)
    X : ndarray, shape (P, d) or (d,)

    Returns
    -------
    lam : ndarray, shape (P, n)
    value : ndarray, shape (P,)
    gap : ndarray, shape (P,)
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    single = np.ndim(X) == 1
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = float(L) - float(mu)
    if not k > 0:
        raise ValidationError("need L > mu")
    P, n = X.shape[0], A.shape[0]
    lip = k * max(float(np.linalg.eigvalsh(A.T @ A).max()), 1e-300)
    step = 1.0 / lip

    # start from the best single piece
    pieces = 0.5 * k * np.sum((X[:, None, :] - A[None, :, :]) ** 2, axis=2) - b
    lam = np.zeros((P, n))
    lam[np.arange(P), np.argmin(pieces, axis=1)] = 1.0
    if n == 1:
        val = _hull_objective(lam, A, b, X, k)
        return (lam[0], val[0], 0.0) if single else (lam, val, np.zeros(P))

    y = lam.copy()
    t = np.ones(P)
    gap = np.full(P, np.inf)
    active = np.arange(P)
    for it in range(max_iter):
        ya = y[active]
        grad = -k * (X[active] - ya @ A) @ A.T - b
        new = project_simplex(ya - step * grad)
        old = lam[active]
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t[active] ** 2))
        mom = ((t[active] - 1.0) / t_new)[:, None]
        restart = np.sum((ya - new) * (new - old), axis=1) > 0
        y_new = new + mom * (new - old)
        y_new[restart] = new[restart]
        t_new[restart] = 1.0
        lam[active] = new
        y[active] = y_new
        t[active] = t_new
        if it % 10 == 9 or it == max_iter - 1:
            g = -k * (X[active] - new @ A) @ A.T - b
            fw = np.sum(g * new, axis=1) - g.min(axis=1)
            gap[active] = fw
            active = active[fw > tol]
            if active.size == 0:
                break
    if active.size:
        H = k * (A @ A.T)
        for p in active:
            c = -k * (A @ X[p]) - b
            lam[p] = _active_set_polish(H, c, lam[p], tol, 5 * n + 20)
            g = H @ lam[p] + c
            gap[p] = lam[p] @ g - g.min()
        active = active[gap[active] > tol]
    value = _hull_objective(lam, A, b, X, k)
    if active.size and raise_on_fail:
        raise SimplexSolverNotConverged(
            f"simplex QP: {active.size} point(s) with gap > {tol:g} after {max_iter} iterations",
            lam, value)
    if single:
        return lam[0], value[0], gap[0]
    return lam, value, gap


def _as_points(interp, x):
    X = np.asarray(x, dtype=float)
    single = X.ndim == 0 or (X.ndim == 1 and interp.d != 1) or (X.ndim == 1 and X.shape[0] == 1)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1) if interp.d != 1 else X.reshape(-1, 1)
    if X.shape[1] != interp.d:
        raise ValidationError(f"expected points of dimension {interp.d}, got {X.shape[1]}")
    return X, single


def evaluate_many(interp, X, tol=SIMPLEX_TOL, max_iter=SIMPLEX_MAX_ITER, raise_on_fail=True):
    """Evaluate at each row of ``X`` (shape ``(P, d)``); returns ``(values, ok)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mu = interp.mu
    sq = 0.5 * mu * np.sum(X * X, axis=1)
    if interp.kind is Kind.SMOOTH_HULL:
        _, val, gap = solve_simplex_qp(interp.a, interp.b, X, interp.L, mu, tol, max_iter,
                                       raise_on_fail=raise_on_fail)
        return val + sq, gap <= tol
    diff = X[:, None, :] - interp.sites[None, :, :]
    aff = interp.values + np.einsum("pnd,nd->pn", diff, interp.gradients)
    if interp.kind is Kind.MAX_QUADRATIC_MINORANT:
        aff = aff + 0.5 * mu * np.sum(diff * diff, axis=2)
    return aff.max(axis=1), np.ones(X.shape[0], dtype=bool)


def evaluate(interp, x, tol=SIMPLEX_TOL, max_iter=SIMPLEX_MAX_ITER):
    """Value of the estimator at ``x`` (a point, or an array of points)."""
    X, single = _as_points(interp, x)
    val, _ = evaluate_many(interp, X, tol, max_iter)
    return float(val[0]) if single else val


def gradient(interp, x, tol=SIMPLEX_TOL, max_iter=SIMPLEX_MAX_ITER):
    """Gradient ``mu x + (L - mu)(x - A' lam*)`` of a smooth-hull estimator."""
    if interp.kind is not Kind.SMOOTH_HULL:
        raise ClassMismatch("gradients are only defined for the smooth hull")
    X, single = _as_points(interp, x)
    lam, _, _ = solve_simplex_qp(interp.a, interp.b, X, interp.L, interp.mu, tol, max_iter)
    G = interp.mu * X + (interp.L - interp.mu) * (X - lam @ interp.a)
    return G[0] if single else G


def pieces(interp, X):
    """Pointwise values ``p_i(x) + mu/2 |x|^2`` of every smooth-hull piece, shape ``(P, n)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = interp.L - interp.mu
    p = 0.5 * k * np.sum((X[:, None, :] - interp.a[None, :, :]) ** 2, axis=2) - interp.b
    return p + 0.5 * interp.mu * np.sum(X * X, axis=1)[:, None]
