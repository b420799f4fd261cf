"""Gaussian-process warm start for the ADMM consensus vector.

A zero-mean GP with squared-exponential kernel
``k(u, v) = s2 * exp(-|u - v|^2 / (2 l^2))`` gives a smooth but not
necessarily convex first guess; its posterior mean and analytic gradient at
the sites seed the ``[f, g]`` slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .model import CvxRegError, ValidationError

JITTER_START = 1e-10
JITTER_MAX = 1e-6


class FactorizationFailed(CvxRegError):
    pass


@dataclass(frozen=True)
class GpConfig:
    """Hyperparameters; ``None`` selects the data-driven default."""

    lengthscale: float | None = None
    signal_var: float | None = None
    noise_var: float | None = None


@dataclass(frozen=True, eq=False)
class GpModel:
    sites: np.ndarray
    alpha: np.ndarray
    chol: np.ndarray
    lengthscale: float
    signal_var: float
    noise_var: float
    jitter: float = 0.0


def sq_exp_kernel(U, V, lengthscale, signal_var):
    U = np.atleast_2d(U)
    V = np.atleast_2d(V)
    d2 = np.sum((U[:, None, :] - V[None, :, :]) ** 2, axis=2)
    return signal_var * np.exp(-0.5 * d2 / lengthscale ** 2)


def default_hyperparameters(obs):
    """Median pairwise site distance, variance of ``y``, 1% of that as noise."""
    X, y = obs.points, obs.values
    iu = np.triu_indices(obs.n, k=1)
    dist = np.sqrt(np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=2))[iu]
    ell = float(np.median(dist))
    s2 = float(np.var(y))
    if s2 <= 0.0:
        # constant data: keep the prior scale comparable to the level
        s2 = max(float(np.mean(y * y)), 1.0)
    return ell, s2, 0.01 * s2


def gp_fit(obs, lengthscale, signal_var, noise_var):
    if not (lengthscale > 0 and signal_var > 0 and noise_var >= 0):
        raise ValidationError("GP hyperparameters must be positive (noise may be 0)")
    X, y = obs.points, obs.values
    K = sq_exp_kernel(X, X, lengthscale, signal_var)
    K[np.diag_indices_from(K)] += noise_var
    jitter = 0.0
    while True:
        try:
            C = linalg.cholesky(K + jitter * np.eye(len(y)), lower=True)
            break
        except linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise FactorizationFailed("kernel matrix not PD even with jitter 1e-6") from None
    alpha = linalg.cho_solve((C, True), y)
    return GpModel(X, alpha, C, float(lengthscale), float(signal_var), float(noise_var), jitter)


def gp_mean_and_derivative(model, x):
    """Posterior mean and its gradient at ``x`` (one point or rows of points)."""
    single = np.ndim(x) <= 1
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if single and X.shape[1] != model.sites.shape[1]:
        X = X.reshape(-1, model.sites.shape[1])
    k = sq_exp_kernel(X, model.sites, model.lengthscale, model.signal_var)   # (P, n)
    value = k @ model.alpha
    diff = X[:, None, :] - model.sites[None, :, :]                            # (P, n, d)
    grad = -np.einsum("pn,pnd->pd", k * model.alpha, diff) / model.lengthscale ** 2
    if single and X.shape[0] == 1:
        return float(value[0]), grad[0]
    return value, grad


def initial_consensus(obs, gp_config=None):
    """``z_i = (m(x_i), grad m(x_i))`` for every site, shape ``(n, 1 + d)``."""
    cfg = gp_config or GpConfig()
    ell, s2, sn2 = default_hyperparameters(obs)
    ell = cfg.lengthscale if cfg.lengthscale is not None else ell
    s2 = cfg.signal_var if cfg.signal_var is not None else s2
    sn2 = cfg.noise_var if cfg.noise_var is not None else sn2
    model = gp_fit(obs, ell, s2, sn2)
    value, grad = gp_mean_and_derivative(model, obs.points)
    return np.column_stack([np.atleast_1d(value), np.atleast_2d(grad)])
