import math
import pickle

import numpy as np
import pytest

from cvxreg.model import (
    INFINITY,
    CertifiedModel,
    DimensionMismatch,
    DuplicateSite,
    FunctionClass,
    InfiniteL,
    InvalidClass,
    TooFewPoints,
    ValidationError,
    conjugate_triplets,
    parse_L,
    to_conjugate_coordinates,
    validate_observations,
)


class TestFunctionClass:
    def test_defaults_are_nonsmooth_convex(self):
        fc = FunctionClass()
        assert fc.mu == 0.0 and fc.L is INFINITY and not fc.smooth

    @pytest.mark.parametrize("token", ["inf", "INF", "+inf", math.inf, None])
    def test_infinite_tokens(self, token):
        assert parse_L(token) is INFINITY

    def test_infinity_is_not_a_float(self):
        assert not isinstance(INFINITY, float)
        assert pickle.loads(pickle.dumps(INFINITY)) is INFINITY

    @pytest.mark.parametrize("mu,L", [(1.0, 0.5), (1.0, 1.0), (-0.1, 5.0), (math.nan, 5.0)])
    def test_invalid(self, mu, L):
        with pytest.raises(InvalidClass):
            FunctionClass(mu, L)

    def test_nan_L(self):
        with pytest.raises(InvalidClass):
            FunctionClass(0.0, math.nan)

    def test_curvature_coeff(self):
        assert FunctionClass(1.0, 5.0).curvature_coeff == pytest.approx(0.625)
        assert FunctionClass(0.0, "inf").curvature_coeff == 0.5

    @pytest.mark.parametrize("fc", [FunctionClass(1.0, 5.0), FunctionClass(0.5, "inf")])
    def test_json_round_trip(self, fc):
        obj = fc.to_json()
        assert FunctionClass.from_json(obj) == fc
        if not fc.smooth:
            assert obj["L"] == "inf"


class TestValidateObservations:
    def test_minimal(self):
        obs = validate_observations([0, 1], [0, 1])
        assert (obs.n, obs.d) == (2, 1)

    def test_duplicate(self):
        with pytest.raises(DuplicateSite) as info:
            validate_observations([0, 0], [0, 1])
        assert info.value.indices == (0, 1)

    def test_ragged(self):
        with pytest.raises(DimensionMismatch):
            validate_observations([[0, 0], [1]], [0, 1])

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            validate_observations([0, 1, 2], [0, 1])

    def test_too_few(self):
        with pytest.raises(TooFewPoints):
            validate_observations([0], [1])

    def test_non_finite(self):
        with pytest.raises(ValidationError):
            validate_observations([0, 1], [0, math.nan])

    def test_read_only(self):
        obs = validate_observations([[0, 1], [1, 0]], [0, 1])
        assert obs.d == 2
        with pytest.raises(ValueError):
            obs.values[0] = 3.0


class TestConjugate:
    @pytest.mark.parametrize("mu,expected", [(0.0, (2.0, 1.0, 1.0)), (1.0, (1.0, 1.0, 0.5))])
    def test_hand_values(self, mu, expected):
        ct = conjugate_triplets([[1.0]], [[2.0]], [1.0], mu)
        got = (ct.tilde_x[0, 0], ct.tilde_g[0, 0], ct.tilde_f[0])
        assert got == pytest.approx(expected, abs=1e-15)

    def test_zero_fixed_point(self):
        ct = conjugate_triplets([[0.0]], [[0.0]], [0.0], 0.0)
        assert ct.tilde_x[0, 0] == ct.tilde_g[0, 0] == ct.tilde_f[0] == 0.0

    def test_infinite_L_rejected(self):
        m = CertifiedModel([[0.0], [1.0]], [0, 1], [[0.0], [2.0]], FunctionClass(0.0, "inf"))
        with pytest.raises(InfiniteL):
            to_conjugate_coordinates(m)

    def test_model_shapes(self):
        m = CertifiedModel(np.zeros((3, 2)) + np.arange(3)[:, None], [0, 1, 2], np.zeros(6),
                           FunctionClass(0.0, 2.0))
        assert m.gradients.shape == (3, 2) and not m.certified
        ct = to_conjugate_coordinates(m)
        assert ct.tilde_x.shape == (3, 2)
