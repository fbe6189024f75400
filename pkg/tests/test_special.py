import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.special import roots_legendre

from martpost.special import (
    AlphaSchedule,
    alpha,
    bernoulli_copula,
    copula_conditional_cdf,
    copula_density,
    copula_sq_integral,
    norm_cdf,
    norm_pdf,
    norm_quantile,
)

from . import oracles

probs = st.floats(0.001, 0.999)
rhos = st.floats(0.01, 0.99)


def test_norm_pdf_values():
    assert_allclose(norm_pdf(0.0), 1 / np.sqrt(2 * np.pi), rtol=1e-15)
    assert_allclose(norm_pdf(1.0), 0.2419707245, atol=1e-10)
    assert norm_pdf(2.3) == norm_pdf(-2.3)


def test_norm_cdf_against_mpmath():
    assert norm_cdf(0.0) == 0.5
    assert norm_cdf(10.0) > 1 - 1e-15
    assert abs(norm_cdf(1.959964) - 0.975) < 1e-9
    z = np.linspace(-8, 8, 161)
    ref = np.array([oracles.phi_cdf(v) for v in z])
    assert np.max(np.abs(norm_cdf(z) - ref)) < 1e-12
    assert np.all(np.diff(norm_cdf(z)) >= 0)


def test_norm_quantile_against_bisection():
    assert norm_quantile(0.5) == 0.0
    assert abs(norm_quantile(0.975) - oracles.phi_quantile(0.975)) < 1e-12
    assert abs(norm_quantile(0.975) - 1.959964) < 1e-6
    p = np.concatenate([[1e-9, 1e-6], np.linspace(0.001, 0.999, 50), [1 - 1e-6, 1 - 1e-9]])
    assert np.max(np.abs(norm_cdf(norm_quantile(p)) - p)) < 1e-9


def test_norm_quantile_round_trip_and_domain():
    z = np.linspace(-6, 6, 241)
    assert np.max(np.abs(norm_quantile(norm_cdf(z)) - z)) < 1e-8
    for bad in (-0.1, 1.1, np.nan):
        with pytest.raises(ValueError):
            norm_quantile(bad)
    # endpoints are clamped, not rejected
    assert np.isfinite(norm_quantile(0.0)) and np.isfinite(norm_quantile(1.0))


def test_copula_density_examples():
    assert_allclose(copula_density(0.5, 0.5, 0.8), 1 / np.sqrt(1 - 0.64), rtol=1e-14)
    assert_allclose(copula_density(np.array([0.1, 0.7]), 0.3, 1e-9), 1.0, atol=1e-8)
    assert_allclose(copula_density(0.2, 0.9, 0.6), oracles.gauss_copula(0.2, 0.9, 0.6), rtol=1e-12)
    assert abs(oracles.quad_copula_integral(0.3, 0.7) - 1) < 1e-6
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            copula_density(0.5, 0.5, bad)


def test_copula_density_ceiling():
    assert copula_density(1e-10, 1e-10, 0.999) == 1e6
    assert copula_density(1e-10, 1e-10, 0.999, ceiling=10.0) == 10.0


def test_conditional_cdf_examples():
    assert_allclose(copula_conditional_cdf(0.5, 0.5, 0.3), 0.5, atol=1e-15)
    assert_allclose(copula_conditional_cdf(0.37, 0.8, 1e-9), 0.37, atol=1e-8)
    assert abs(copula_conditional_cdf(0.9, 0.1, 0.5) - 0.98679) < 1e-4
    assert_allclose(copula_conditional_cdf(0.9, 0.1, 0.5), oracles.conditional_cdf(0.9, 0.1, 0.5), rtol=1e-12)


def test_sq_integral_examples():
    assert_allclose(copula_sq_integral(0.5, 0.4), 1 / np.sqrt(1 - 0.4 ** 4), rtol=1e-14)
    assert_allclose(copula_sq_integral(0.5, 0.8), 1.301448, atol=1e-6)
    assert abs(copula_sq_integral(0.9, 0.5) - oracles.quad_copula_integral(0.9, 0.5, power=2)) < 1e-5


def test_kernel_identities_gauss_legendre():
    # Gauss-Legendre in v over (0, 1) after mapping v = Phi(z), z in [-10, 10]
    x, w = roots_legendre(400)
    z = 10.0 * x
    wz = 10.0 * w * norm_pdf(z)
    v = norm_cdf(z)
    for u in np.arange(0.05, 0.951, 0.1125):
        for rho in np.arange(0.1, 0.91, 0.1):
            c = copula_density(u, v, rho)
            assert abs(c @ wz - 1) < 1e-6
            assert abs((c * c) @ wz - copula_sq_integral(u, rho)) < 1e-5


def test_derivative_consistency():
    h = 1e-5
    for u in (0.1, 0.4, 0.75):
        for v in (0.2, 0.5, 0.9):
            for rho in (0.2, 0.6, 0.9):
                fd = (copula_conditional_cdf(u + h, v, rho) - copula_conditional_cdf(u - h, v, rho)) / (2 * h)
                assert abs(fd - copula_density(u, v, rho)) < 1e-4


@given(probs, probs, rhos)
def test_copula_symmetry(u, v, rho):
    assert_allclose(copula_density(u, v, rho), copula_density(v, u, rho), rtol=1e-12)


@given(probs, probs, probs, rhos)
def test_conditional_cdf_monotone(u1, u2, v, rho):
    lo, hi = sorted((u1, u2))
    assert copula_conditional_cdf(lo, v, rho) <= copula_conditional_cdf(hi, v, rho)


def test_bernoulli_copula_examples():
    assert_allclose(bernoulli_copula(0.5, 0.5, True, 0.7), 1.7, rtol=1e-15)
    assert_allclose(bernoulli_copula(0.3, 0.6, True, 0.5), 1 - 0.5 + 0.5 * 0.3 / 0.18, rtol=1e-14)
    assert_allclose(bernoulli_copula(0.3, 0.6, True, 0.5), 1.3333333333, atol=1e-9)
    for bad in ((0.0, 0.5), (0.5, 1.0)):
        with pytest.raises(ValueError):
            bernoulli_copula(*bad, True, 0.5)


def test_bernoulli_copula_mass_grid():
    g = np.linspace(0.01, 0.99, 99)
    Q, R = np.meshgrid(g, g)  # Q = P(class 1) at the probe, R = P(observed class) at the datum
    for rho in (0.1, 0.5, 0.9):
        for observed_one in (True, False):
            q1 = Q * bernoulli_copula(Q, R, observed_one, rho)
            q0 = (1 - Q) * bernoulli_copula(1 - Q, R, not observed_one, rho)
            assert np.max(np.abs(q1 + q0 - 1)) < 1e-12


@settings(max_examples=200)
@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6), rhos, st.booleans())
def test_bernoulli_normalization_property(q, r, rho, observed_one):
    q1 = q * bernoulli_copula(q, r, observed_one, rho)
    q0 = (1 - q) * bernoulli_copula(1 - q, r, not observed_one, rho)
    assert abs(q1 + q0 - 1) < 1e-12


def test_alpha_values():
    assert alpha(1) == 0.5
    assert alpha(2) == 0.5
    assert_allclose(alpha(3), 5 / 12, rtol=1e-15)
    assert np.all(np.diff(alpha(np.arange(2, 1000))) < 0)
    with pytest.raises(ValueError):
        alpha(0)


def test_alpha_series_behaviour():
    a = alpha(np.arange(1, 1_000_001))
    assert a.sum() > 25
    assert (a * a).sum() < 4 * np.pi ** 2 / 6


def test_alpha_schedule_scaled_harmonic():
    s = AlphaSchedule("scaled_harmonic", 0.39)
    assert_allclose(s(np.array([1, 9])), [0.39 / 2, 0.039], rtol=1e-15)
    assert AlphaSchedule.from_dict(s.to_dict()) == s
    with pytest.raises(ValueError):
        AlphaSchedule("scaled_harmonic")
    with pytest.raises(ValueError):
        AlphaSchedule("bogus")
