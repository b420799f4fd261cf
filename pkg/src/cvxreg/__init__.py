"""Smooth strongly convex nonparametric least squares regression."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    INFINITY,
    CertifiedModel,
    FunctionClass,
    ObservationSet,
    validate_observations,
)
from .estimator import SmoothConvexRegressor  # noqa: E402

__all__ = [
    "INFINITY",
    "CertifiedModel",
    "FunctionClass",
    "ObservationSet",
    "SmoothConvexRegressor",
    "validate_observations",
]
