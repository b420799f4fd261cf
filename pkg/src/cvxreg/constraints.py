"""Pairwise interpolability conditions for the class F(mu, L).

Residuals follow the convention ``lhs - rhs``: nonnegative means the pair
condition holds, and more positive means more slack.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .model import FEASIBILITY_TOL, DimensionMismatch


class PairResidual(NamedTuple):
    i: int
    j: int
    residual: float


def _residual(dx, df, gi, gj, fclass):
    # dx = x_i - x_j, df = f_i - f_j; arrays broadcast over leading axes
    lin = df - np.sum(gj * dx, axis=-1)
    mu = fclass.mu
    if not fclass.smooth:
        if mu == 0.0:
            return lin
        return lin - 0.5 * mu * np.sum(dx * dx, axis=-1)
    L = fclass.L
    dg = gi - gj
    quad = (np.sum(dg * dg, axis=-1) / L
            + mu * np.sum(dx * dx, axis=-1)
            - 2.0 * (mu / L) * np.sum(-dg * -dx, axis=-1))
    return lin - fclass.curvature_coeff * quad


def constraint_residual(x_i, f_i, g_i, x_j, f_j, g_j, fclass):
    """Slack of the interpolability condition for the ordered pair (i, j)."""
    x_i, g_i, x_j, g_j = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x_i, g_i, x_j, g_j))
    if not (x_i.shape == g_i.shape == x_j.shape == g_j.shape) or x_i.ndim != 1:
        raise DimensionMismatch("sites and gradients must share one dimension")
    return float(_residual(x_i - x_j, float(f_i) - float(f_j), g_i, g_j, fclass))


def residual_matrix(sites, values, gradients, fclass):
    """All ordered-pair residuals as an ``(n, n)`` array (row ``i``, column ``j``).

    The diagonal is exactly zero.
    """
    X = np.atleast_2d(np.asarray(sites, dtype=float))
    G = np.asarray(gradients, dtype=float).reshape(X.shape)
    f = np.asarray(values, dtype=float).reshape(-1)
    if f.shape[0] != X.shape[0]:
        raise DimensionMismatch("one value per site required")
    dx = X[:, None, :] - X[None, :, :]
    df = f[:, None] - f[None, :]
    R = _residual(dx, df, G[:, None, :], G[None, :, :], fclass)
    np.fill_diagonal(R, 0.0)
    return R


def worst_pair(R):
    """Smallest off-diagonal residual, first in row-major order on ties."""
    n = R.shape[0]
    masked = R.copy()
    np.fill_diagonal(masked, np.inf)
    k = int(np.argmin(masked))  # argmin returns the first occurrence
    i, j = divmod(k, n)
    return PairResidual(i, j, float(R[i, j]))


def certify(model, tol=FEASIBILITY_TOL):
    """Check every ordered pair of ``model`` and record the outcome on it.

    Returns
    -------
    ok : bool
        True iff all ``n (n-1)`` residuals are ``>= -tol``.
    worst : PairResidual
        The minimizing pair, reported whether or not the check passes.
    """
    R = residual_matrix(model.sites, model.values, model.gradients, model.fclass)
    worst = worst_pair(R)
    ok = worst.residual >= -tol
    model.certified = bool(ok)
    model.worst = worst
    return bool(ok), worst
