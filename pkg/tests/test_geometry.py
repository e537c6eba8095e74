import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from sgdthermo.geometry import (
    AngularCoords,
    DomainError,
    LossModel,
    from_spherical,
    log_jacobian,
    loss_gradient,
    loss_value,
    project_to_sphere,
    random_unit_vector,
    sample_tangent_noise,
    to_spherical,
)

E1 = np.array([1.0, 0.0, 0.0])

finite = st.floats(-10, 10, allow_nan=False)


def nonzero_vectors(d):
    return arrays(float, d, elements=finite).filter(lambda w: np.linalg.norm(w) > 1e-3)


class TestLossModel:
    def test_value_examples(self):
        m = LossModel(E1)
        assert loss_value(m, -E1) == pytest.approx(0.0)
        assert loss_value(m, E1) == pytest.approx(2.0)
        assert loss_value(m, np.array([0.0, 3.0, 0.0])) == pytest.approx(1.0)

    def test_gradient_example(self):
        # at w = (0, 1, 0) the gradient is mu minus its radial part, over |w|
        g = loss_gradient(LossModel(E1), np.array([0.0, 2.0, 0.0]))
        np.testing.assert_allclose(g, [0.5, 0.0, 0.0], atol=1e-15)

    def test_rejects_bad_mu(self):
        with pytest.raises(ValueError):
            LossModel(np.array([1.0, 1.0, 0.0]))
        with pytest.raises(ValueError):
            LossModel(np.array([1.0, 0.0]))

    def test_mu_is_read_only(self):
        m = LossModel(E1.copy())
        with pytest.raises(ValueError):
            m.mu[0] = 2.0

    def test_random_is_seeded_and_unit(self):
        a, b = LossModel.random(5, seed=3), LossModel.random(5, seed=3)
        np.testing.assert_array_equal(a.mu, b.mu)
        assert np.linalg.norm(a.mu) == pytest.approx(1.0, abs=1e-12)

    def test_zero_weight_is_domain_error(self):
        with pytest.raises(DomainError):
            loss_value(LossModel(E1), np.zeros(3))
        with pytest.raises(DomainError):
            loss_gradient(LossModel(E1), np.zeros(3))
        with pytest.raises(DomainError):
            project_to_sphere(np.zeros(3), 1.0)

    @settings(max_examples=60, deadline=None)
    @given(w=nonzero_vectors(4), alpha=st.floats(0.01, 100))
    def test_scale_invariance(self, w, alpha):
        m = LossModel(np.array([0.0, 0.6, 0.0, 0.8]))
        assert loss_value(m, alpha * w) == pytest.approx(loss_value(m, w), abs=1e-12)
        np.testing.assert_allclose(loss_gradient(m, alpha * w), loss_gradient(m, w) / alpha,
                                   rtol=1e-9, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(w=nonzero_vectors(5))
    def test_gradient_orthogonal_to_w(self, w):
        g = loss_gradient(LossModel.random(5, 1), w)
        assert abs(g @ w) <= 1e-10 * np.linalg.norm(w) * max(1.0, np.linalg.norm(g))

    @pytest.mark.parametrize("d", [3, 6])
    def test_gradient_matches_finite_differences(self, d):
        rng = np.random.default_rng(d)
        m = LossModel.random(d, 7)
        w = rng.standard_normal(d)
        h = 1e-6
        fd = np.array([(loss_value(m, w + h * e) - loss_value(m, w - h * e)) / (2 * h)
                       for e in np.eye(d)])
        np.testing.assert_allclose(loss_gradient(m, w), fd, atol=1e-8)

    def test_minimum_at_minus_mu(self):
        m = LossModel.random(6, 2)
        rng = np.random.default_rng(0)
        vals = [loss_value(m, random_unit_vector(6, rng)) for _ in range(500)]
        assert min(vals) > loss_value(m, -m.mu) - 1e-12

    def test_gradient_examples(self):
        m = LossModel.random(4, 3)
        np.testing.assert_allclose(loss_gradient(m, -m.mu), 0.0, atol=1e-15)
        w = np.random.default_rng(0).standard_normal(4)
        assert np.linalg.norm(loss_gradient(m, 2 * w)) == pytest.approx(
            np.linalg.norm(loss_gradient(m, w)) / 2, rel=1e-12)

    def test_gradient_finite_differences_many_points(self):
        rng = np.random.default_rng(11)
        m = LossModel.random(5, 4)
        h = 1e-6
        for _ in range(100):
            w = rng.standard_normal(5)
            g = loss_gradient(m, w)
            fd = np.array([(loss_value(m, w + h * e) - loss_value(m, w - h * e)) / (2 * h)
                           for e in np.eye(5)])
            assert np.linalg.norm(fd - g) <= 1e-5 * np.linalg.norm(g)

    @pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
    def test_scale_examples(self, alpha):
        m = LossModel.random(3, 5)
        v = np.random.default_rng(1).standard_normal(3)
        assert abs(loss_value(m, alpha * v) - loss_value(m, v)) < 1e-12


class TestProjection:
    def test_examples(self):
        np.testing.assert_allclose(project_to_sphere(2 * E1, 1.0), E1)
        w = np.array([0.0, 1.2, 1.6])
        np.testing.assert_allclose(project_to_sphere(w, 2.0), w, rtol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(w=nonzero_vectors(3), r=st.floats(0.1, 10))
    def test_norm_and_idempotence(self, w, r):
        p = project_to_sphere(w, r)
        assert np.linalg.norm(p) == pytest.approx(r, rel=1e-12)
        np.testing.assert_allclose(project_to_sphere(p, r), p, rtol=1e-12)


class TestSpherical:
    def test_example_d3(self):
        th = to_spherical(np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(th.polar, [math.pi / 2])
        assert th.azimuth == pytest.approx(math.pi / 2)

    @pytest.mark.parametrize("w, polar, azimuth", [
        ([0.0, 1.0, 0.0], math.pi / 2, 0.0),
        ([0.0, 0.0, -1.0], math.pi / 2, 3 * math.pi / 2),
        ([1.0, 0.0, 0.0], 0.0, 0.0),
    ])
    def test_examples_d3(self, w, polar, azimuth):
        th = to_spherical(np.array(w))
        assert th.polar[0] == pytest.approx(polar) and th.azimuth == pytest.approx(azimuth)

    @pytest.mark.parametrize("d", [3, 5, 10])
    def test_round_trip(self, d):
        rng = np.random.default_rng(d)
        x = rng.standard_normal((1000, d))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        th = to_spherical(x)
        assert np.all((th.polar >= 0) & (th.polar <= np.pi))
        assert np.all((th.azimuth >= 0) & (th.azimuth < 2 * np.pi))
        np.testing.assert_allclose(from_spherical(th), x, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(w=nonzero_vectors(4))
    def test_round_trip_property(self, w):
        x = w / np.linalg.norm(w)
        np.testing.assert_allclose(from_spherical(to_spherical(x)), x, atol=1e-12)

    def test_pole_convention(self):
        th = to_spherical(np.array([1.0, 0.0, 0.0, 0.0]))
        np.testing.assert_array_equal(th.polar, [0.0, 0.0])
        assert th.azimuth == 0.0
        assert log_jacobian(th) == -math.inf

    def test_jacobian_integrates_to_sphere_area(self):
        # d = 3: integral of sin(theta) over [0, pi] x [0, 2 pi) is 4 pi
        val, _ = integrate.quad(lambda t: math.exp(log_jacobian(AngularCoords(np.array([t]), 0.0))),
                                0, math.pi)
        assert 2 * math.pi * val == pytest.approx(4 * math.pi, rel=1e-10)

    def test_jacobian_examples(self):
        assert log_jacobian(AngularCoords(np.array([math.pi / 2]), np.array(0.0))) == 0.0
        th = AngularCoords(np.array([math.pi / 2, math.pi / 6]), np.array(0.0))
        assert log_jacobian(th) == pytest.approx(-math.log(2))
        assert log_jacobian(AngularCoords(np.array([0.0]), np.array(0.0))) == -math.inf
        assert log_jacobian(AngularCoords(np.array([math.pi]), np.array(0.0))) == -math.inf

    def test_jacobian_weights_d4(self):
        th = AngularCoords(np.array([0.5, 1.0]), np.array(0.3))
        assert log_jacobian(th) == pytest.approx(2 * math.log(math.sin(0.5)) + math.log(math.sin(1.0)))

    def test_jacobian_area_d4(self):
        # surface area of S^3 is 2 pi^2
        val, _ = integrate.dblquad(
            lambda t2, t1: math.exp(log_jacobian(AngularCoords(np.array([t1, t2]), 0.0))),
            0, math.pi, 0, math.pi)
        assert 2 * math.pi * val == pytest.approx(2 * math.pi**2, rel=1e-8)


class TestTangentNoise:
    def test_orthogonal_and_seeded(self):
        w = np.array([0.6, 0.8, 0.0])
        a = sample_tangent_noise(w, 1.0, np.random.default_rng(4))
        b = sample_tangent_noise(w, 1.0, np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)
        assert abs(a @ w) < 1e-14

    def test_mean_square_norm(self):
        rng = np.random.default_rng(3)
        w = random_unit_vector(3, rng)
        sq = [np.sum(sample_tangent_noise(w, 1.0, rng) ** 2) for _ in range(100_000)]
        assert np.mean(sq) == pytest.approx(2.0, abs=0.02)

    def test_zero_sigma(self):
        assert not np.any(sample_tangent_noise(E1, 0.0, np.random.default_rng(0)))

    def test_covariance_is_projector(self):
        rng = np.random.default_rng(0)
        w = np.array([0.0, 0.0, 1.0])
        xs = np.array([sample_tangent_noise(w, 2.0, rng) for _ in range(20000)])
        cov = xs.T @ xs / len(xs)
        np.testing.assert_allclose(cov, 4.0 * np.diag([1.0, 1.0, 0.0]), atol=0.15)
