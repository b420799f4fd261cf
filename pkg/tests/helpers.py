"""Random instance generators shared by several test modules."""

import numpy as np

from cvxreg.local_qcqp import EdgeProblem, assemble_edge_problem
from cvxreg.model import FunctionClass

CLASSES = [FunctionClass(1.0, 5.0), FunctionClass(0.0, 2.0), FunctionClass(0.5, "inf"),
           FunctionClass(0.0, "inf")]


def random_edge_problem(rng, d, fclass=None, active=None):
    """Edge subproblem with ADMM-shaped data.

    The consensus anchors are drawn so that roughly half the instances have
    an active constraint; ``active=True`` forces a violated unconstrained
    minimizer by pushing ``f_i`` far below its neighbour.
    """
    fclass = fclass or CLASSES[rng.integers(len(CLASSES))]
    n = int(rng.integers(2, 50))
    rho = float(rng.uniform(0.01, 2.0))
    x_i, x_j = rng.normal(size=d), rng.normal(size=d)
    y_i, y_j = rng.normal(size=2)
    z_i, z_j = rng.normal(size=1 + d), rng.normal(size=1 + d)
    lam_i, lam_j = 0.1 * rng.normal(size=1 + d), 0.1 * rng.normal(size=1 + d)
    if active:
        z_i[0] = z_j[0] - 5.0 - abs(z_j[1:] @ (x_i - x_j))
        y_i = z_i[0]
    return assemble_edge_problem(x_i, x_j, y_i, y_j, z_i, z_j, lam_i, lam_j, rho, n, fclass)


def random_generic_problem(rng, m):
    """Dense PD ``P0`` and PSD, rank-deficient ``P1``."""
    A = rng.normal(size=(m, m))
    P0 = A @ A.T + 0.5 * np.eye(m)
    B = rng.normal(size=(m, m - 1))
    P1 = B @ B.T
    return EdgeProblem(P0, rng.normal(size=m), float(rng.normal()), P1, rng.normal(size=m),
                       float(rng.normal()))
