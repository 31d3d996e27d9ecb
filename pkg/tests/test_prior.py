"""Elliptic-precision Gaussian prior: factorization and sampling identities."""

import numpy as np
import pytest

from hessmc.fem import Mesh1D, assemble_mass
from hessmc.prior import build_prior


@pytest.fixture
def prior():
    mesh = Mesh1D.uniform(21, 1.0)
    return build_prior(mesh, 1e-2, 1e2, mean=1.0, space=assemble_mass(mesh))


def test_coefficients_must_be_positive():
    mesh = Mesh1D.uniform(5)
    with pytest.raises(ValueError):
        build_prior(mesh, 0.0, 1.0)
    with pytest.raises(ValueError):
        build_prior(mesh, 1.0, -2.0)


def test_scalar_mean_broadcasts(prior):
    np.testing.assert_array_equal(prior.mean, np.ones(21))


def test_eigenbasis_is_m_orthonormal(prior):
    G = prior.V.T @ prior.space.M @ prior.V
    np.testing.assert_allclose(G, np.eye(prior.n), atol=1e-10)
    assert np.all(prior.lam > 0)


def test_log_density_is_stiffness_quadratic(prior):
    rng = np.random.default_rng(0)
    m = rng.standard_normal(prior.n)
    d = m - prior.mean
    assert prior.log_density(m) == pytest.approx(-0.5 * d @ prior.K @ d, rel=1e-12)
    assert prior.log_density(prior.mean) == 0.0


def test_sqrt_factorization_squares_to_covariance(prior):
    rng = np.random.default_rng(1)
    x = rng.standard_normal(prior.n)
    ll = prior.apply_L(prior.apply_L_adj(x))
    cov = prior.apply_covariance(x)
    assert prior.space.norm(ll - cov) <= 1e-10 * prior.space.norm(cov)


def test_precision_inverts_covariance(prior):
    rng = np.random.default_rng(2)
    x = rng.standard_normal(prior.n)
    np.testing.assert_allclose(prior.apply_A(prior.apply_covariance(x)), x,
                               rtol=1e-9, atol=1e-11)
    np.testing.assert_allclose(prior.apply_L_inv(prior.apply_L(x)), x,
                               rtol=1e-9, atol=1e-11)


def test_sqrt_is_self_adjoint(prior):
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal((2, prior.n))
    lhs = prior.space.inner(prior.apply_L(x), y)
    rhs = prior.space.inner(x, prior.apply_L_adj(y))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_zero_noise_maps_to_mean(prior):
    np.testing.assert_array_equal(prior.sample_from_noise(np.zeros(prior.n)), prior.mean)


def test_sample_covariance_matches_analytic():
    # K(m - m0) quadratic form => Euclidean nodal covariance K^{-1}
    mesh = Mesh1D.uniform(13, 1.0)
    prior = build_prior(mesh, 1e-2, 1e2, mean=0.0)
    rng = np.random.default_rng(4)
    draws = prior.sample(rng, size=100_000)
    assert draws.shape == (100_000, 13)
    Kinv = np.linalg.inv(prior.K)
    emp_var = draws.var(axis=0, ddof=1)
    np.testing.assert_allclose(emp_var, np.diag(Kinv), rtol=0.05)
    np.testing.assert_allclose(prior.pointwise_variance(), np.diag(Kinv), rtol=1e-10)
    np.testing.assert_allclose(prior.pointwise_std(), np.sqrt(np.diag(Kinv)), rtol=1e-10)
    # M-weighted covariance quadratic form, <v, Gamma_hat v> vs <v, Gamma v>_M
    v = rng.standard_normal(13)
    coords = draws @ (prior.space.M @ v)
    emp = coords.var(ddof=1)
    ana = prior.space.inner(v, prior.apply_covariance(v))
    assert emp == pytest.approx(ana, rel=0.05)


def test_sample_is_mean_plus_transported_noise(prior):
    rng1 = np.random.default_rng(7)
    rng2 = np.random.default_rng(7)
    s = prior.sample(rng1)
    noise = prior.space.white_noise(rng2)
    np.testing.assert_allclose(s, prior.mean + prior.apply_L(noise), atol=1e-13)
