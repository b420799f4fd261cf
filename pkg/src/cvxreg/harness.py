"""Synthetic experiments, reference solutions for tiny problems, and benchmarks."""

from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from . import admm, interpolant, warmstart
from .model import CvxRegError, FunctionClass, ValidationError, validate_observations

ORACLE_MAX_N = 8

RECORD_FIELDS = ["n", "method", "seed", "eps", "iters", "residual", "edges", "E_metric"]
TIMING_FIELDS = ["n", "method", "seed", "eps", "workers", "time_warm_s", "time_total_s", "time_per_iter_s"]


class OracleNotConverged(CvxRegError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    d: int = 1
    noise_sigma: float = 0.1
    fclass: FunctionClass = field(default_factory=lambda: FunctionClass(1.0, 5.0))
    admm: admm.AdmmConfig = field(default_factory=admm.AdmmConfig)
    seed: int = 0
    grid_range: tuple = (-1.0, 1.0)
    n_s: int = 1000
    warm_start: str = "gp"

    def __post_init__(self):
        if self.n_s < 2:
            raise ValidationError("n_s must be >= 2")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if self.d != 1:
            raise ValidationError("the synthetic benchmark is one-dimensional")


@dataclass
class BenchRecord:
    n: int
    method: str
    seed: int
    eps: float
    iters: int
    residual: float
    edges: int
    E_metric: float
    workers: int = 1
    time_warm_s: float = 0.0
    time_total_s: float = 0.0
    time_per_iter_s: float = 0.0


def quadratic(x):
    x = np.asarray(x, dtype=float)
    return x ** 2 if x.ndim <= 1 else np.sum(x ** 2, axis=-1)


def synth_quadratic(n, sigma, seed, random_sites=False):
    """Noisy samples ``y = x^2 + N(0, sigma^2)`` at ``n`` sites in [-1, 1].

    Sites are equispaced unless ``random_sites`` is set.
    """
    if n < 2:
        raise ValidationError(f"need n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    if random_sites:
        x = np.sort(rng.uniform(-1.0, 1.0, n))
    else:
        x = np.linspace(-1.0, 1.0, n)
    y = x ** 2 + sigma * rng.standard_normal(n)
    return validate_observations(x, y)


def error_metric(phi_hat, true_fn=quadratic, grid_range=(-1.0, 1.0), n_s=1000):
    """Mean squared gap between estimator and truth on an equispaced grid.

    ``phi_hat`` is an :class:`~cvxreg.interpolant.Interpolant` or any
    vectorized callable on 1-d arrays.
    """
    if n_s < 2:
        raise ValidationError("n_s must be >= 2")
    grid = np.linspace(grid_range[0], grid_range[1], n_s)
    if isinstance(phi_hat, interpolant.Interpolant):
        est, _ = interpolant.evaluate_many(phi_hat, grid[:, None])
    else:
        est = np.asarray(phi_hat(grid), dtype=float)
    diff = est - np.asarray(true_fn(grid), dtype=float)
    return float(np.mean(diff * diff))


# --- reference solution for tiny instances -----------------------------------
#
# Deliberately shares no code with the constraint/ADMM modules: it rebuilds the
# pairwise conditions from scratch and solves the centralized problem with an
# exterior quadratic penalty.


@dataclass
class OracleResult:
    f: np.ndarray
    g: np.ndarray
    objective: float
    violation: float
    stationarity: float
    kkt_residual: float
    multipliers: np.ndarray
    penalty: float


class _PairSystem:
    """Violations ``v_ij = rhs - lhs`` of all ordered pairs, with derivatives."""

    def __init__(self, X, mu, L):
        n, d = X.shape
        self.n, self.d = n, d
        I, J = np.nonzero(~np.eye(n, dtype=bool))
        self.I, self.J = I, J
        self.dx = X[I] - X[J]
        self.mu = float(mu)
        self.smooth = L is not None and np.isfinite(L)
        self.L = float(L) if self.smooth else None
        self.c = 1.0 / (2.0 * (1.0 - self.mu / self.L)) if self.smooth else 0.5
        m = len(I)
        nv = n * (1 + d)
        # quadratic part is v-independent: (c/L)|g_i - g_j|^2
        self.Q = np.zeros((m, nv, nv))
        if self.smooth:
            w = 2.0 * self.c / self.L
            for k in range(m):
                gi = n + I[k] * d + np.arange(d)
                gj = n + J[k] * d + np.arange(d)
                self.Q[k][np.ix_(gi, gi)] += w * np.eye(d)
                self.Q[k][np.ix_(gj, gj)] += w * np.eye(d)
                self.Q[k][np.ix_(gi, gj)] -= w * np.eye(d)
                self.Q[k][np.ix_(gj, gi)] -= w * np.eye(d)

    def split(self, theta):
        return theta[:self.n], theta[self.n:].reshape(self.n, self.d)

    def violations(self, theta):
        f, G = self.split(theta)
        I, J, dx, c, mu = self.I, self.J, self.dx, self.c, self.mu
        gi, gj = G[I], G[J]
        v = -f[I] + f[J] + np.sum(gj * dx, axis=1) + c * mu * np.sum(dx * dx, axis=1)
        if self.smooth:
            dg = gi - gj
            v = v + (c / self.L) * np.sum(dg * dg, axis=1) \
                - 2.0 * c * (mu / self.L) * np.sum(dg * dx, axis=1)
        return v

    def jacobian(self, theta):
        f, G = self.split(theta)
        n, d = self.n, self.d
        I, J, dx, c, mu = self.I, self.J, self.dx, self.c, self.mu
        m = len(I)
        Jac = np.zeros((m, n * (1 + d)))
        rows = np.arange(m)
        Jac[rows, I] -= 1.0
        Jac[rows, J] += 1.0
        dgi = np.zeros((m, d))
        dgj = dx.copy()
        if self.smooth:
            dg = G[I] - G[J]
            k = 2.0 * c * mu / self.L
            dgi += (2.0 * c / self.L) * dg - k * dx
            dgj += -(2.0 * c / self.L) * dg + k * dx
        for a in range(d):
            Jac[rows, n + I * d + a] += dgi[:, a]
            Jac[rows, n + J * d + a] += dgj[:, a]
        return Jac


def _penalized(theta, y, system, pen):
    f = theta[:system.n]
    v = system.violations(theta)
    vp = np.maximum(v, 0.0)
    r = f - y
    val = r @ r + pen * vp @ vp
    Jac = system.jacobian(theta)
    grad = 2.0 * pen * Jac.T @ vp
    grad[:system.n] += 2.0 * r
    return val, grad, v, Jac


def _penalized_hessian(v, Jac, system, pen):
    nv = Jac.shape[1]
    H = np.zeros((nv, nv))
    H[np.arange(system.n), np.arange(system.n)] = 2.0
    on = v > 0
    if np.any(on):
        Ja = Jac[on]
        H += 2.0 * pen * (Ja.T @ Ja + np.tensordot(v[on], system.Q[on], axes=1))
    return H


def reference_fit_small(obs, fclass, tol=1e-8, max_newton=200):
    """Centralized least squares fit by exterior penalty and damped Newton.

    The penalty weight doubles from 1 up to 1e12; each penalized problem is
    solved by Newton with Armijo backtracking, warm-started from the previous
    one. Stops as soon as the largest violation and the penalized-gradient
    norm (the KKT stationarity residual with multipliers ``2 w max(v, 0)``)
    are both below ``tol``.

    Only meant for ``n <= 8``.
    """
    X = np.atleast_2d(np.asarray(obs.points, dtype=float))
    y = np.asarray(obs.values, dtype=float)
    n, d = X.shape
    if n > ORACLE_MAX_N:
        raise ValidationError(f"reference fit is limited to n <= {ORACLE_MAX_N}")
    L = None if not fclass.smooth else fclass.L
    system = _PairSystem(X, fclass.mu, L)
    theta = np.concatenate([y, np.zeros(n * d)])
    pen = 1.0
    while pen <= 1e12 * (1 + 1e-12):
        for _ in range(max_newton):
            val, grad, v, Jac = _penalized(theta, y, system, pen)
            if np.max(np.abs(grad)) <= 0.1 * tol:
                break
            H = _penalized_hessian(v, Jac, system, pen)
            reg = 1e-12 * max(1.0, float(np.max(np.diag(H))))
            step = -np.linalg.solve(H + reg * np.eye(len(theta)), grad)
            slope = grad @ step
            t = 1.0
            while t > 1e-12:
                val_t = _penalized(theta + t * step, y, system, pen)[0]
                if val_t <= val + 1e-4 * t * slope:
                    break
                t *= 0.5
            if t <= 1e-12:
                break
            theta = theta + t * step
        val, grad, v, Jac = _penalized(theta, y, system, pen)
        violation = max(0.0, float(np.max(v)))
        stationarity = float(np.max(np.abs(grad)))
        if violation <= tol and stationarity <= tol:
            f, G = system.split(theta)
            nu = 2.0 * pen * np.maximum(v, 0.0)
            kkt = max(violation, stationarity, float(np.max(np.abs(nu * v))))
            return OracleResult(f.copy(), G.copy(), float((f - y) @ (f - y)), violation,
                                stationarity, kkt, nu, pen)
        pen *= 2.0
    raise OracleNotConverged(f"penalty reached 1e12 with violation {violation:.3g}, "
                             f"stationarity {stationarity:.3g}")


def reference_fit_slsqp(obs, fclass, ftol=1e-14, maxiter=2000):
    """Second, unrelated route to the same optimum: SciPy's SLSQP.

    Used only to cross-check :func:`reference_fit_small`.
    """
    X = np.atleast_2d(np.asarray(obs.points, dtype=float))
    y = np.asarray(obs.values, dtype=float)
    n, d = X.shape
    system = _PairSystem(X, fclass.mu, None if not fclass.smooth else fclass.L)
    theta0 = np.concatenate([y, np.zeros(n * d)])

    def obj(theta):
        r = theta[:n] - y
        return r @ r

    def obj_grad(theta):
        g = np.zeros_like(theta)
        g[:n] = 2.0 * (theta[:n] - y)
        return g

    cons = {"type": "ineq", "fun": lambda t: -system.violations(t), "jac": lambda t: -system.jacobian(t)}
    res = optimize.minimize(obj, theta0, jac=obj_grad, constraints=[cons], method="SLSQP",
                            options={"ftol": ftol, "maxiter": maxiter})
    f, G = system.split(res.x)
    return f, G, float(obj(res.x)), float(max(0.0, np.max(system.violations(res.x))))


# --- benchmarks ---------------------------------------------------------------


def warm_start_vector(obs, how):
    if how == "gp":
        return warmstart.initial_consensus(obs)
    if how == "none":
        return None
    raise ValidationError(f"unknown warm start {how!r}")


def time_per_iteration(obs, fclass, config, z0=None, warmup=2, repeats=5):
    """Median wall time of ``repeats`` ADMM iterations after ``warmup`` ones."""
    prob = admm._Problem(obs, fclass, config)
    state = prob.initial_state(z0)
    times = []
    for k in range(warmup + repeats):
        t0 = time.perf_counter()
        state = admm.admm_step(state, obs, fclass, config, _prob=prob)
        if k >= warmup:
            times.append(time.perf_counter() - t0)
    return float(np.median(times))


def run_experiment(cfg, method=None, timing=True):
    obs = synth_quadratic(cfg.n, cfg.noise_sigma, cfg.seed)
    t0 = time.perf_counter()
    z0 = warm_start_vector(obs, cfg.warm_start)
    t_warm = time.perf_counter() - t0
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", admm.ConvergenceWarning)
        res = admm.fit(obs, cfg.fclass, cfg.admm, warm_start=z0)
    t_total = time.perf_counter() - t0
    interp = interpolant.build(res.model)
    E = error_metric(interp, quadratic, cfg.grid_range, cfg.n_s)
    per_iter = time_per_iteration(obs, cfg.fclass, cfg.admm, z0) if timing else 0.0
    return BenchRecord(
        n=cfg.n, method=method or f"admm-eps{cfg.admm.eps:g}", seed=cfg.seed, eps=cfg.admm.eps,
        iters=res.trace.iterations, residual=res.state.residual, edges=cfg.n * (cfg.n - 1),
        E_metric=E, workers=cfg.admm.workers, time_warm_s=t_warm, time_total_s=t_total,
        time_per_iter_s=per_iter)


def bench_scaling(configs, timing=True):
    """Run every experiment configuration and return one record per run."""
    return [run_experiment(cfg, timing=timing) for cfg in configs]


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_records(records, path, timing_path=None):
    """Write the reproducible record columns to ``path`` and wall times to ``timing_path``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            row = asdict(r)
            w.writerow([_fmt(row[k]) for k in RECORD_FIELDS])
    if timing_path is not None:
        with open(timing_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIMING_FIELDS)
            for r in records:
                row = asdict(r)
                w.writerow([_fmt(row[k]) for k in TIMING_FIELDS])


def write_records_json(records, path, fields=RECORD_FIELDS):
    """JSON copy of the record columns ``fields`` (floats round-trip exactly)."""
    rows = [{k: asdict(r)[k] for k in fields} for r in records]
    with open(path, "w") as fh:
        json.dump({"fields": list(fields), "records": rows}, fh, indent=2)
        fh.write("\n")


def read_records(path):
    casts = {"n": int, "seed": int, "iters": int, "edges": int, "method": str,
             "workers": int}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({k: casts.get(k, float)(v) for k, v in row.items()})
    return out


def aggregate(rows):
    """Mean of every numeric column per ``(method, n)``, sorted."""
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], r["n"]), []).append(r)
    table = []
    for (method, n), rs in sorted(groups.items()):
        entry = {"method": method, "n": n, "runs": len(rs)}
        for key in ("iters", "residual", "E_metric", "time_total_s", "time_per_iter_s"):
            if key in rs[0]:
                entry[key] = float(np.mean([r[key] for r in rs]))
        table.append(entry)
    return table


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
