"""Domain types shared by the fitting, certification and interpolation code.

The smoothness constant ``L`` may be infinite. It is stored as the
:data:`INFINITY` sentinel rather than an IEEE infinity so that every formula
involving ``1/L`` or ``mu/L`` has to branch explicitly on the limit case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DUPLICATE_TOL = 1e-12
FEASIBILITY_TOL = 1e-6


class CvxRegError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(CvxRegError, ValueError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DuplicateSite(ValidationError):
    def __init__(self, i, j):
        super().__init__(f"sites {i} and {j} coincide")
        self.indices = (i, j)


class TooFewPoints(ValidationError):
    pass


class InvalidClass(ValidationError):
    pass


class InfiniteL(CvxRegError):
    pass


class _Infinity:
    """Singleton marking a non-smooth class (``L = +inf``)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITY"

    def __str__(self):
        return "inf"

    def __reduce__(self):
        return (_Infinity, ())


INFINITY = _Infinity()


def parse_L(value):
    """Normalise user input for ``L`` (number, ``"inf"``, ``math.inf`` or None)."""
    if value is None or value is INFINITY:
        return INFINITY
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "+inf", "infinity"):
            return INFINITY
        value = float(value)
    value = float(value)
    if math.isinf(value) and value > 0:
        return INFINITY
    if not math.isfinite(value):
        raise InvalidClass(f"L must be a positive number or 'inf', got {value!r}")
    return value


@dataclass(frozen=True)
class FunctionClass:
    """The class of ``L``-smooth, ``mu``-strongly convex functions."""

    mu: float = 0.0
    L: object = INFINITY

    def __post_init__(self):
        mu = float(self.mu)
        L = parse_L(self.L)
        if not math.isfinite(mu) or mu < 0:
            raise InvalidClass(f"mu must be finite and nonnegative, got {self.mu!r}")
        if L is not INFINITY and not mu < L:
            raise InvalidClass(f"need 0 <= mu < L, got mu={mu}, L={L}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "L", L)

    @property
    def smooth(self):
        return self.L is not INFINITY

    @property
    def curvature_coeff(self):
        """``1 / (2 (1 - mu/L))``; equals 1/2 when ``L`` is infinite."""
        if not self.smooth:
            return 0.5
        return 1.0 / (2.0 * (1.0 - self.mu / self.L))

    def to_json(self):
        return {"mu": self.mu, "L": "inf" if not self.smooth else self.L}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["mu"], obj["L"])


@dataclass(frozen=True, eq=False)
class ObservationSet:
    points: np.ndarray
    values: np.ndarray

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]


def validate_observations(points, values, dup_tol=DUPLICATE_TOL):
    """Check raw sites and values and pack them into an :class:`ObservationSet`.

    ``points`` may be a flat sequence (``d = 1``) or a sequence of equally
    sized vectors.
    """
    rows = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]
    if rows and any(r.ndim != 1 for r in rows):
        raise DimensionMismatch("each site must be a scalar or a 1-d vector")
    dims = {r.shape[0] for r in rows}
    if len(dims) > 1:
        raise DimensionMismatch(f"sites have mixed dimensions {sorted(dims)}")
    y = np.asarray(values, dtype=float).reshape(-1)
    if len(rows) != y.shape[0]:
        raise DimensionMismatch(f"{len(rows)} sites but {y.shape[0]} values")
    if len(rows) < 2:
        raise TooFewPoints(f"need at least 2 observations, got {len(rows)}")
    X = np.vstack(rows)
    if X.shape[1] < 1:
        raise DimensionMismatch("sites must have dimension >= 1")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("sites and values must be finite")
    # pairwise max-norm distance; n is small enough for the dense check
    dist = np.max(np.abs(X[:, None, :] - X[None, :, :]), axis=2)
    iu, ju = np.nonzero(np.triu(dist <= dup_tol, k=1))
    if iu.size:
        raise DuplicateSite(int(iu[0]), int(ju[0]))
    X.setflags(write=False)
    y.setflags(write=False)
    return ObservationSet(X, y)


@dataclass(eq=False)
class CertifiedModel:
    """Per-site triplets ``(x_i, g_i, f_i)`` for a function class.

    ``certified`` is only ever set by :func:`cvxreg.constraints.certify`.
    """

    sites: np.ndarray
    values: np.ndarray
    gradients: np.ndarray
    fclass: FunctionClass
    certified: bool = False
    worst: object = field(default=None, repr=False)

    def __post_init__(self):
        self.sites = np.atleast_2d(np.asarray(self.sites, dtype=float))
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        self.gradients = np.asarray(self.gradients, dtype=float).reshape(self.sites.shape)
        if self.values.shape[0] != self.sites.shape[0]:
            raise DimensionMismatch("one value per site required")

    @property
    def n(self):
        return self.sites.shape[0]

    @property
    def d(self):
        return self.sites.shape[1]


@dataclass(frozen=True, eq=False)
class ConjugateTriplets:
    tilde_x: np.ndarray
    tilde_g: np.ndarray
    tilde_f: np.ndarray


def conjugate_triplets(x, g, f, mu):
    """Array form of the conjugate-coordinate substitution.

    Returns ``(g - mu x, x, <x, g> - f - mu/2 |x|^2)`` row-wise.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = np.atleast_2d(np.asarray(g, dtype=float))
    f = np.asarray(f, dtype=float).reshape(-1)
    tx = g - mu * x
    tf = np.einsum("ij,ij->i", x, g) - f - 0.5 * mu * np.einsum("ij,ij->i", x, x)
    return ConjugateTriplets(tx, x.copy(), tf)


def to_conjugate_coordinates(model):
    if not model.fclass.smooth:
        raise InfiniteL("conjugate coordinates need a finite L")
    return conjugate_triplets(model.sites, model.gradients, model.values, model.fclass.mu)
