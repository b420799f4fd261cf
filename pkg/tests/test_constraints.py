import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvxreg.constraints import certify, constraint_residual, residual_matrix, worst_pair
from cvxreg.model import CertifiedModel, DimensionMismatch, FunctionClass

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def brute_residual(xi, fi, gi, xj, fj, gj, mu, L):
    # straight transcription of the pairwise condition, no branch handling
    dx, dg = xi - xj, gi - gj
    c = 1.0 / (2.0 * (1.0 - mu / L))
    return (fi - fj - gj @ dx
            - c * (dg @ dg / L + mu * dx @ dx - 2.0 * (mu / L) * ((gj - gi) @ (xj - xi))))


class TestResidual:
    def test_nonsmooth_hand_value(self):
        r = constraint_residual([0.0], 0.0, [0.0], [1.0], 1.0, [2.0], FunctionClass(0, "inf"))
        assert r == 1.0

    def test_smooth_hand_value(self):
        r = constraint_residual([0.0], 0.0, [0.0], [1.0], 1.0, [2.0], FunctionClass(1, 5))
        assert r == pytest.approx(0.375, abs=1e-15)

    @pytest.mark.parametrize("fc", [FunctionClass(0, "inf"), FunctionClass(1, 5), FunctionClass(0.3, "inf")])
    def test_identical_triplets(self, fc):
        assert constraint_residual([1.0, 2.0], 3.0, [0.5, -1], [1.0, 2.0], 3.0, [0.5, -1], fc) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            constraint_residual([0.0], 0.0, [0.0, 1.0], [1.0], 1.0, [2.0], FunctionClass())

    def test_ordered_pairs_differ(self):
        fc = FunctionClass(0, "inf")
        a = constraint_residual([0.0], 0.0, [0.0], [1.0], 1.0, [3.0], fc)
        b = constraint_residual([1.0], 1.0, [3.0], [0.0], 0.0, [0.0], fc)
        assert (a, b) == (2.0, 1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(finite, min_size=6, max_size=6), finite, finite,
           st.floats(0.0, 3.0), st.floats(0.1, 20.0))
    def test_matches_direct_formula(self, v, fi, fj, mu, gap):
        L = mu + gap
        xi, gi, xj = np.array(v[0:2]), np.array(v[2:4]), np.array(v[4:6])
        gj = 0.5 * xi
        got = constraint_residual(xi, fi, gi, xj, fj, gj, FunctionClass(mu, L))
        want = brute_residual(xi, fi, gi, xj, fj, gj, mu, L)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(-3, 3), st.floats(-3, 3),
           st.floats(0.0, 2.0))
    def test_large_L_limit(self, v, fi, fj, mu):
        xi, gi, xj = np.array(v[0:2]), np.array(v[2:4]), np.array(v[4:6])
        gj = xi[::-1].copy()
        big = constraint_residual(xi, fi, gi, xj, fj, gj, FunctionClass(mu, 1e8))
        lim = constraint_residual(xi, fi, gi, xj, fj, gj, FunctionClass(mu, "inf"))
        assert big == pytest.approx(lim, rel=1e-6, abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 4.0), st.floats(0.05, 4.0), st.floats(0.0, 1.0),
           st.lists(st.floats(-2, 2), min_size=4, max_size=4))
    def test_quadratic_ground_truth(self, mu, gap, t, xs):
        # exact triplets of c/2 |x|^2 with mu <= c <= L; both directions share
        # one closed-form slack proportional to |dx|^2
        L = mu + gap
        c = mu + t * gap
        X = np.array(xs).reshape(2, 2)
        f = 0.5 * c * np.sum(X * X, axis=1)
        fc = FunctionClass(mu, L)
        R = residual_matrix(X, f, c * X, fc)
        dx = X[0] - X[1]
        closed = (0.5 * c - (c - mu) ** 2 / (2 * (L - mu)) - 0.5 * mu) * (dx @ dx)
        assert R[0, 1] == pytest.approx(closed, abs=1e-9)
        assert R[1, 0] == pytest.approx(closed, abs=1e-9)
        assert R.min() >= -1e-9


class TestResidualMatrix:
    def test_agrees_with_pairwise(self, rng):
        X, G, f = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=5)
        fc = FunctionClass(0.5, 4.0)
        R = residual_matrix(X, f, G, fc)
        for i in range(5):
            for j in range(5):
                want = 0.0 if i == j else constraint_residual(X[i], f[i], G[i], X[j], f[j], G[j], fc)
                assert R[i, j] == pytest.approx(want, abs=1e-12)

    def test_worst_pair_tie_break(self):
        R = np.array([[0.0, -1.0, 2.0], [-1.0, 0.0, 3.0], [5.0, 5.0, 0.0]])
        assert worst_pair(R) == (0, 1, -1.0)


class TestCertify:
    def test_quadratic_in_class(self, quad_triplets):
        ok, worst = certify(quad_triplets)
        assert ok and quad_triplets.certified
        assert worst.residual >= 0

    def test_quadratic_outside_class(self, quad_triplets):
        m = CertifiedModel(quad_triplets.sites, quad_triplets.values, quad_triplets.gradients,
                           FunctionClass(3.0, 5.0))
        ok, worst = certify(m)
        assert not ok and not m.certified
        assert worst.residual < 0 and m.worst == worst
        R = residual_matrix(m.sites, m.values, m.gradients, m.fclass)
        assert worst.residual == R[worst.i, worst.j] == R[~np.eye(3, dtype=bool)].min()

    def test_equal_gradients_strongly_convex(self):
        m = CertifiedModel([[0.0], [1.0]], [1.0, 1.0], [[0.0], [0.0]], FunctionClass(0.5, "inf"))
        ok, _ = certify(m)
        assert not ok

    def test_tolerance(self):
        m = CertifiedModel([[0.0], [1.0]], [0.0, -1e-7], [[0.0], [0.0]], FunctionClass())
        assert not certify(m, tol=0.0)[0]
        assert certify(m, tol=1e-6)[0]
