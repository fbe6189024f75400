"""Normal distribution helpers and the bivariate copula kernels.

Everything here is vectorised over numpy arrays and free of state, so it is
safe to call from any thread.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

EPS = 1e-10
DENSITY_CEILING = 1e6
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def clamp_prob(p, eps: float = EPS):
    return np.clip(p, eps, 1.0 - eps)


def check_rho(rho) -> None:
    r = np.asarray(rho, dtype=float)
    if np.any(~(r > 0.0)) or np.any(~(r < 1.0)):
        raise ValueError(f"bandwidth rho must lie strictly inside (0, 1), got {rho!r}")


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z - _LOG_SQRT_2PI)


def norm_logpdf(z):
    z = np.asarray(z, dtype=float)
    return -0.5 * z * z - _LOG_SQRT_2PI


def norm_cdf(z):
    return ndtr(np.asarray(z, dtype=float))


def norm_quantile(p):
    """Inverse of the standard normal CDF.

    Inputs in [0, 1] are clamped to [EPS, 1 - EPS] first; anything outside
    [0, 1] (or NaN) is a domain error.
    """
    p = np.asarray(p, dtype=float)
    if np.any(~((p >= 0.0) & (p <= 1.0))):
        raise ValueError("norm_quantile: probability outside [0, 1]")
    return ndtri(clamp_prob(p))


def log_copula_density_z(zu, zv, rho):
    """log c_rho evaluated on normal scores zu = Phi^-1(u), zv = Phi^-1(v)."""
    r2 = rho * rho
    return -0.5 * np.log1p(-r2) + (2.0 * rho * zu * zv - r2 * (zu * zu + zv * zv)) / (2.0 * (1.0 - r2))


def copula_density_z(zu, zv, rho, ceiling: float = DENSITY_CEILING):
    return np.minimum(np.exp(log_copula_density_z(zu, zv, rho)), ceiling)


def copula_cdf_z(zu, zv, rho):
    return ndtr((zu - rho * zv) / np.sqrt(1.0 - rho * rho))


def copula_density(u, v, rho, ceiling: float = DENSITY_CEILING):
    """Bivariate Gaussian copula density c_rho(u, v), capped at ``ceiling``."""
    check_rho(rho)
    zu = ndtri(clamp_prob(np.asarray(u, dtype=float)))
    zv = ndtri(clamp_prob(np.asarray(v, dtype=float)))
    return copula_density_z(zu, zv, rho, ceiling)


def copula_conditional_cdf(u, v, rho):
    """H_rho(u, v) = Phi((Phi^-1(u) - rho Phi^-1(v)) / sqrt(1 - rho^2))."""
    check_rho(rho)
    zu = ndtri(clamp_prob(np.asarray(u, dtype=float)))
    zv = ndtri(clamp_prob(np.asarray(v, dtype=float)))
    return copula_cdf_z(zu, zv, rho)


def copula_sq_integral(u, rho):
    """Closed form of the integral of c_rho(u, v)^2 over v in (0, 1)."""
    check_rho(rho)
    z = ndtri(clamp_prob(np.asarray(u, dtype=float)))
    r2 = rho * rho
    return np.exp(r2 / (1.0 + r2) * z * z) / np.sqrt(1.0 - r2 * r2)


def bernoulli_copula(q, r, same_class, rho):
    """Beta-Bernoulli update factor for binary responses.

    ``q`` is the current probability of the class being scored, ``r`` the
    current probability of the observed class. Both must lie strictly in
    (0, 1); callers clamp.
    """
    check_rho(rho)
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(~((q > 0) & (q < 1))) or np.any(~((r > 0) & (r < 1))):
        raise ValueError("bernoulli_copula: q and r must lie strictly inside (0, 1)")
    return _bernoulli_copula(q, r, same_class, rho)


def _bernoulli_copula(q, r, same_class, rho):
    same = (1.0 - rho) + rho * np.minimum(q, r) / (q * r)
    diff = (1.0 - rho) + rho * (q - np.minimum(q, 1.0 - r)) / (q * r)
    return np.where(same_class, same, diff)


class AlphaSchedule:
    """Step sizes alpha_i of the recursive update.

    ``paper_default`` is (2 - 1/i)/(i + 1); ``scaled_harmonic`` is a/(i + 1).
    """

    FORMS = ("paper_default", "scaled_harmonic")

    def __init__(self, form: str = "paper_default", a: float | None = None):
        if form not in self.FORMS:
            raise ValueError(f"unknown alpha schedule {form!r}")
        if form == "scaled_harmonic":
            if a is None or not a > 0:
                raise ValueError("scaled_harmonic schedule needs a positive 'a'")
        self.form = form
        self.a = None if form == "paper_default" else float(a)

    def __call__(self, i):
        return alpha(i, self)

    def __eq__(self, other):
        return isinstance(other, AlphaSchedule) and (self.form, self.a) == (other.form, other.a)

    def __repr__(self):
        if self.form == "paper_default":
            return "AlphaSchedule('paper_default')"
        return f"AlphaSchedule('scaled_harmonic', a={self.a})"

    def to_dict(self) -> dict:
        return {"form": self.form, "a": self.a}

    @classmethod
    def from_dict(cls, d: dict) -> "AlphaSchedule":
        return cls(d["form"], d.get("a"))


def alpha(i, schedule: AlphaSchedule | None = None):
    i_arr = np.asarray(i)
    if np.any(i_arr < 1):
        raise ValueError("alpha: step index must be >= 1")
    i_f = i_arr.astype(float)
    if schedule is None or schedule.form == "paper_default":
        return (2.0 - 1.0 / i_f) / (i_f + 1.0)
    return schedule.a / (i_f + 1.0)
