"""Reference computations that share no code with the package.

They are slow and scalar on purpose: each one recomputes a quantity from its
defining formula (high-precision arithmetic, adaptive quadrature, explicit
loops) so the vectorised engines can be checked against them.
"""
import math

import mpmath
import numpy as np
from scipy import integrate, optimize, stats

mpmath.mp.dps = 40


def phi_cdf(z) -> float:
    """Standard normal CDF via the mpmath erfc series."""
    return float(mpmath.ncdf(mpmath.mpf(z)))


def phi_quantile(p, lo=-40.0, hi=40.0) -> float:
    """Bisection on the high-precision CDF."""
    p = mpmath.mpf(p)
    a, b = mpmath.mpf(lo), mpmath.mpf(hi)
    for _ in range(200):
        m = (a + b) / 2
        if mpmath.ncdf(m) < p:
            a = m
        else:
            b = m
    return float((a + b) / 2)


def gauss_copula(u, v, rho) -> float:
    """Bivariate normal density over the product of its marginals."""
    x, y = phi_quantile(u), phi_quantile(v)
    bvn = math.exp(-(x * x - 2 * rho * x * y + y * y) / (2 * (1 - rho * rho))) / (2 * math.pi * math.sqrt(1 - rho * rho))
    return bvn / (math.exp(-x * x / 2) / math.sqrt(2 * math.pi) * math.exp(-y * y / 2) / math.sqrt(2 * math.pi))


def fast_copula(u, v, rho):
    """Same formula in float arithmetic, vectorised; for quadrature integrands."""
    x, y = stats.norm.ppf(u), stats.norm.ppf(v)
    return np.exp(-(rho ** 2 * (x ** 2 + y ** 2) - 2 * rho * x * y) / (2 * (1 - rho ** 2))) / np.sqrt(1 - rho ** 2)


def quad_copula_integral(u, rho, power=1) -> float:
    """int_0^1 c_rho(u, v)^power dv by adaptive quadrature in z = Phi^-1(v)."""
    x = stats.norm.ppf(u)

    def f(z):
        c = np.exp(-(rho ** 2 * (x ** 2 + z ** 2) - 2 * rho * x * z) / (2 * (1 - rho ** 2))) / np.sqrt(1 - rho ** 2)
        return c ** power * stats.norm.pdf(z)

    return integrate.quad(f, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def conditional_cdf(u, v, rho) -> float:
    return float(stats.norm.cdf((stats.norm.ppf(u) - rho * stats.norm.ppf(v)) / math.sqrt(1 - rho ** 2)))


def univariate_recursion(data, probes, rho, alphas, m0=0.0, s0=1.0):
    """Explicit scalar loop for p_n and P_n at ``probes`` for one ordering.

    Everything is on the scale of ``data`` (no standardization).
    """
    data = list(map(float, data))
    pts = list(map(float, probes)) + data
    P = [stats.norm.cdf((y - m0) / s0) for y in pts]
    p = [stats.norm.pdf((y - m0) / s0) / s0 for y in pts]
    k = len(probes)
    for i, yi in enumerate(data):
        v = min(max(P[k + i], 1e-10), 1 - 1e-10)
        a = alphas[i]
        newP, newp = [], []
        for Pj, pj in zip(P, p):
            u = min(max(Pj, 1e-10), 1 - 1e-10)
            c = float(fast_copula(u, v, rho))
            newp.append((1 - a + a * c) * pj)
            newP.append((1 - a) * Pj + a * conditional_cdf(u, v, rho))
        P, p = newP, newp
    return np.array(p[:k]), np.array(P[:k])


def prequential_oracle(data, rho, alphas):
    """sum_i log p_{i-1}(y_i) by the scalar recursion (single ordering)."""
    total = 0.0
    for i in range(len(data)):
        p, _ = univariate_recursion(data[:i], [data[i]], rho, alphas)
        total += math.log(p[0])
    return total


def bivariate_two_step_grid(data, rho, alphas, lim=10.0, size=2001):
    """p_2 on a grid for d = 2, n = 2 with conditionals found by quadrature.

    p_0 is the standard normal product. After the first step the marginal and
    conditional CDFs are obtained by integrating the tabulated density, not
    from any closed form.
    """
    g = np.linspace(-lim, lim, size)
    Y1, Y2 = np.meshgrid(g, g, indexing="ij")
    (a1, b1), (a2, b2) = data
    p0 = stats.norm.pdf(Y1) * stats.norm.pdf(Y2)
    c = lambda u, v, r: fast_copula(np.clip(u, 1e-10, 1 - 1e-10), np.clip(v, 1e-10, 1 - 1e-10), r)  # noqa: E731
    p1 = (1 - alphas[0] + alphas[0] * c(stats.norm.cdf(Y1), stats.norm.cdf(a1), rho[0])
          * c(stats.norm.cdf(Y2), stats.norm.cdf(b1), rho[1])) * p0
    marg = integrate.trapezoid(p1, g, axis=1)
    U1 = integrate.cumulative_trapezoid(marg, g, initial=0.0)
    U2 = integrate.cumulative_trapezoid(p1, g, axis=1, initial=0.0) / marg[:, None]
    i2, j2 = np.argmin(np.abs(g - a2)), np.argmin(np.abs(g - b2))
    v1, v2 = U1[i2], U2[i2, j2]
    p2 = (1 - alphas[1] + alphas[1] * c(U1[:, None], v1, rho[0]) * c(U2, v2, rho[1])) * p1
    return g, p2


def mixture_quantile(tau, w=0.8, m=(-2.0, 2.0)) -> float:
    F = lambda x: w * stats.norm.cdf(x - m[0]) + (1 - w) * stats.norm.cdf(x - m[1]) - tau  # noqa: E731
    return optimize.brentq(F, -20, 20, xtol=1e-14)


def gmm_density(x):
    return 0.8 * stats.norm.pdf(x, -2, 1) + 0.2 * stats.norm.pdf(x, 2, 1)


def gmm_sample(n, seed):
    rng = np.random.default_rng(seed)
    z = rng.random(n) < 0.8
    return np.where(z, rng.normal(-2.0, 1.0, n), rng.normal(2.0, 1.0, n))


def classifier_two_step(x, labels, probe, rho_x, rho_y, alphas):
    """Hand recursion of the conditional-mode classifier for one covariate."""
    q1 = {"probe": 0.5, 0: 0.5, 1: 0.5}
    pts = {"probe": probe, 0: x[0], 1: x[1]}
    for i in range(len(labels)):
        xi, yi = x[i], labels[i]
        r = q1[i] if yi == 1 else 1 - q1[i]
        new = {}
        for key, xv in pts.items():
            k = float(fast_copula(stats.norm.cdf(xv), stats.norm.cdf(xi), rho_x))
            a = alphas[i] * k / (1 - alphas[i] + alphas[i] * k)
            q = q1[key]
            same = (1 - rho_y) + rho_y * min(q, r) / (q * r)
            diff = (1 - rho_y) + rho_y * (q - min(q, 1 - r)) / (q * r)
            new[key] = (1 - a + a * (same if yi == 1 else diff)) * q
        q1 = new
    return q1["probe"]
