"""scikit-learn compatible front end."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from . import admm, constraints, interpolant, warmstart
from .model import FEASIBILITY_TOL, FunctionClass, validate_observations


class SmoothConvexRegressor(RegressorMixin, BaseEstimator):
    """Least squares fit over L-smooth, mu-strongly convex functions.

    The fitted values and gradients at the training sites come from the
    edge-based consensus ADMM; predictions evaluate the interpolant built
    from them, which belongs to the class everywhere. With ``mu=0`` and
    ``L="inf"`` this is the classical max-affine convex regression.

    Parameters
    ----------
    mu : float, default=1.0
        Strong convexity modulus.
    L : float or "inf", default=5.0
        Smoothness constant.
    rho : float, optional
        ADMM penalty; ``None`` uses ``1 / n_samples``.
    eps : float, default=0.01
        Stopping threshold on the ADMM residual.
    max_iter : int, default=10000
    warm_start : {"gp", "none"}, default="gp"
        Initial consensus vector: Gaussian-process fit or raw observations.
    z_update : {"exact", "paper"}, default="exact"
    workers : int, default=1
        Threads used for the per-edge solves.
    certify_tol : float, default=1e-6

    Attributes
    ----------
    model_ : CertifiedModel
    interpolant_ : Interpolant
    certified_ : bool
    worst_residual_ : PairResidual
    n_iter_ : int
    trace_ : Trace
    """

    def __init__(self, mu=1.0, L=5.0, rho=None, eps=0.01, max_iter=10000, warm_start="gp",
                 z_update="exact", workers=1, certify_tol=FEASIBILITY_TOL):
        self.mu = mu
        self.L = L
        self.rho = rho
        self.eps = eps
        self.max_iter = max_iter
        self.warm_start = warm_start
        self.z_update = z_update
        self.workers = workers
        self.certify_tol = certify_tol

    def _config(self):
        return admm.AdmmConfig(rho=self.rho, eps=self.eps, max_iters=self.max_iter,
                               z_update=self.z_update, workers=self.workers)

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        fclass = FunctionClass(self.mu, self.L)
        obs = validate_observations(X, y)
        z0 = warmstart.initial_consensus(obs) if self.warm_start == "gp" else None
        res = admm.fit(obs, fclass, self._config(), warm_start=z0)
        ok, worst = constraints.certify(res.model, self.certify_tol)
        self.model_ = res.model
        self.trace_ = res.trace
        self.n_iter_ = res.trace.iterations
        self.converged_ = res.converged
        self.certified_ = ok
        self.worst_residual_ = worst
        self.interpolant_ = interpolant.build(res.model)
        return self

    def predict(self, X):
        check_is_fitted(self, "interpolant_")
        X = validate_data(self, X, reset=False)
        values, ok = interpolant.evaluate_many(self.interpolant_, X, raise_on_fail=False)
        if not np.all(ok):
            warnings.warn(f"{np.count_nonzero(~ok)} evaluation(s) did not reach the simplex tolerance",
                          admm.ConvergenceWarning, stacklevel=2)
        return values

    def gradient(self, X):
        """Gradient of the fitted function (finite ``L`` only)."""
        check_is_fitted(self, "interpolant_")
        X = check_array(X)
        return interpolant.gradient(self.interpolant_, X)

