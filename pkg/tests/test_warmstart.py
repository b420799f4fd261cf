import numpy as np
import pytest

from cvxreg import harness
from cvxreg.model import ObservationSet, ValidationError, validate_observations
from cvxreg.warmstart import (
    GpConfig,
    default_hyperparameters,
    gp_fit,
    gp_mean_and_derivative,
    initial_consensus,
    sq_exp_kernel,
)


def single_obs(x, y):
    # validate_observations insists on n >= 2; the GP itself does not
    return ObservationSet(np.array([[x]]), np.array([y]))


class TestKernel:
    def test_two_sites(self):
        K = sq_exp_kernel([[0.0], [1.0]], [[0.0], [1.0]], 1.0, 1.0)
        e = np.exp(-0.5)
        np.testing.assert_allclose(K, [[1.0, e], [e, 1.0]], atol=1e-15)


class TestFit:
    def test_single_observation_interpolates(self):
        gp = gp_fit(single_obs(0.3, 2.5), 1.0, 1.0, 0.0)
        assert gp_mean_and_derivative(gp, [0.3])[0] == pytest.approx(2.5, abs=1e-12)

    def test_near_interpolation(self, rng):
        X = rng.uniform(-1, 1, size=(10, 1))
        obs = validate_observations(X, np.sin(3 * X[:, 0]))
        gp = gp_fit(obs, 0.5, 1.0, 1e-8)
        value, _ = gp_mean_and_derivative(gp, X)
        np.testing.assert_allclose(value, obs.values, atol=1e-3)

    def test_zero_noise_interpolates(self, rng):
        obs = validate_observations(np.linspace(-1, 1, 6), rng.normal(size=6))
        gp = gp_fit(obs, 0.3, 1.0, 0.0)
        np.testing.assert_allclose(gp_mean_and_derivative(gp, obs.points)[0], obs.values, atol=1e-8)

    def test_bad_hyperparameters(self):
        with pytest.raises(ValidationError):
            gp_fit(single_obs(0.0, 1.0), 0.0, 1.0, 0.0)

    def test_jitter_recorded(self):
        # nearly coincident sites make K singular to rounding
        obs = validate_observations([0.0, 1e-9, 1.0], [0.0, 0.0, 1.0])
        gp = gp_fit(obs, 1.0, 1.0, 0.0)
        assert 0.0 < gp.jitter <= 1e-6


class TestMean:
    def test_far_extrapolation(self, rng):
        obs = validate_observations(np.linspace(-1, 1, 5), rng.normal(size=5))
        gp = gp_fit(obs, 0.2, 1.0, 0.01)
        value, grad = gp_mean_and_derivative(gp, [50.0])
        assert abs(value) < 1e-12 and abs(grad[0]) < 1e-12

    def test_finite_difference(self, rng):
        X = rng.uniform(-1, 1, size=(8, 2))
        obs = validate_observations(X, rng.normal(size=8))
        gp = gp_fit(obs, 0.7, 1.0, 0.01)
        h = 1e-6
        for p in rng.uniform(-1, 1, size=(10, 2)):
            _, g = gp_mean_and_derivative(gp, p)
            fd = [(gp_mean_and_derivative(gp, p + h * e)[0] - gp_mean_and_derivative(gp, p - h * e)[0])
                  / (2 * h) for e in np.eye(2)]
            np.testing.assert_allclose(fd, g, rtol=1e-5, atol=1e-8)

    def test_symmetric_data(self):
        x = np.array([-1.0, -0.4, 0.4, 1.0])
        gp = gp_fit(validate_observations(x, x ** 2), 0.6, 1.0, 0.01)
        assert abs(gp_mean_and_derivative(gp, [0.0])[1][0]) <= 1e-10

    def test_permutation_invariance(self, rng):
        X = rng.uniform(-1, 1, size=(7, 1))
        y = rng.normal(size=7)
        perm = rng.permutation(7)
        a = gp_fit(validate_observations(X, y), 0.5, 1.0, 0.01)
        b = gp_fit(validate_observations(X[perm], y[perm]), 0.5, 1.0, 0.01)
        P = np.linspace(-1, 1, 20)[:, None]
        np.testing.assert_allclose(gp_mean_and_derivative(a, P)[0], gp_mean_and_derivative(b, P)[0],
                                   atol=1e-12)


class TestInitialConsensus:
    def test_defaults(self):
        obs = validate_observations([0.0, 1.0, 3.0], [1.0, 2.0, 6.0])
        ell, s2, sn2 = default_hyperparameters(obs)
        assert ell == 2.0 and s2 == pytest.approx(np.var([1, 2, 6])) and sn2 == pytest.approx(0.01 * s2)

    def test_noiseless_quadratic(self):
        obs = harness.synth_quadratic(20, 0.0, 0)
        z = initial_consensus(obs, GpConfig(noise_var=1e-8))
        assert z.shape == (20, 2)
        np.testing.assert_allclose(z[:, 0], obs.values, atol=1e-2)

    def test_two_points(self):
        z = initial_consensus(validate_observations([0.0, 1.0], [0.0, 1.0]))
        assert z.shape == (2, 2) and np.all(np.isfinite(z))

    def test_constant_data(self):
        obs = validate_observations(np.linspace(-1, 1, 8), np.full(8, 3.0))
        z = initial_consensus(obs, GpConfig(noise_var=1e-8))
        # zero prior mean bends the fit slightly at the ends; tiny next to the level
        assert np.max(np.abs(z[:, 1])) < 1e-2 * 3.0
