"""Invariant checks on fitted predictives.

Each check returns a plain dict report with a ``passed`` flag so the CLI can
write it as JSON.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

from .density import FitState, average_state, eval_kernel, state_at
from .regression import RegressionFit, _average_conditional, _fixed_scores, covariate_kernel, regression_state, weighted_alpha
from .resampling import concentration_check
from .special import alpha, clamp_prob, copula_density_z, norm_pdf


def _v_nodes(count: int):
    """Quadrature for E over V ~ U(0, 1): trapezoid in z = Phi^-1(V) on [-12, 12]."""
    z = np.linspace(-12.0, 12.0, count)
    w = norm_pdf(z) * (z[1] - z[0])
    w[[0, -1]] *= 0.5
    return z, w / w.sum()


def martingale_quadrature(fit, probes, nodes: int = 100_000, tol: float = 1e-6, chunk: int = 20_000) -> dict:
    """Average of the one-step updated density over V equals the current density.

    Supports univariate FitState (probes: points) and conditional-mode
    RegressionFit (probes: (x, y) pairs as an (K, d + 1) array). For
    regression, the new covariate x' is held at each training covariate in
    turn and the worst case is reported.
    """
    z, w = _v_nodes(nodes)
    if isinstance(fit, FitState):
        if fit.d != 1:
            raise ValueError("martingale_quadrature supports univariate density fits")
        pts = np.asarray(probes, dtype=float).reshape(-1, 1)
        u, logp = state_at(fit, fit.standardize(pts))
        a = float(alpha(fit.n + 1, fit.config.alpha))
        zu = ndtri(clamp_prob(u[:, 0]))
        factor = np.zeros_like(zu)
        for s in range(0, nodes, chunk):
            c = copula_density_z(zu[:, None], z[None, s:s + chunk], fit.rho()[0], fit.config.ceiling)
            factor += (1.0 - a + a * c) @ w[s:s + chunk]
        err = np.abs(np.exp(logp[:, 0]) * (factor - 1.0))
        return {"check": "martingale_quadrature", "nodes": nodes, "max_abs_error": float(err.max()),
                "tolerance": tol, "passed": bool(err.max() < tol)}
    if isinstance(fit, RegressionFit) and fit.mode == "conditional":
        pr = np.asarray(probes, dtype=float).reshape(-1, fit.d + 1)
        xs, ys = fit.std_x(pr[:, :-1]), fit.std_y(pr[:, -1])
        q, lp = _average_conditional(*regression_state(fit, xs, ys))
        k = covariate_kernel(_fixed_scores(xs)[:, None, :], _fixed_scores(fit.train_x)[None, :, :], fit.rho_x(),
                             fit.config.ceiling)
        a = weighted_alpha(float(alpha(fit.n + 1, fit.config.alpha)), k)  # (K, n)
        zq = ndtri(clamp_prob(q))
        mean_c = np.zeros_like(zq)
        for s in range(0, nodes, chunk):
            mean_c += copula_density_z(zq[:, None], z[None, s:s + chunk], fit.rho_y(), fit.config.ceiling) @ w[s:s + chunk]
        factor = 1.0 - a + a * mean_c[:, None]
        err = np.abs(np.exp(lp)[:, None] * (factor - 1.0)) / fit.y_sd
        return {"check": "martingale_quadrature", "nodes": nodes, "max_abs_error": float(err.max()),
                "tolerance": tol, "passed": bool(err.max() < tol)}
    raise ValueError("martingale_quadrature supports univariate and conditional-regression fits")


def normalization_check(fit: FitState, grid_size: int = 2001, width: float = 8.0, tol: float = 1e-4) -> dict:
    """|integral p_i - 1| after every update i = 0..n on a +/- width sd grid."""
    if fit.d != 1:
        raise ValueError("normalization_check supports univariate fits")
    g = np.linspace(-width, width, grid_size)[:, None]
    m0, s0 = fit.init_params()
    devs = []
    for i in range(fit.n + 1):
        u, lp = eval_kernel(g, fit.v_history[:, :i], fit.rho(), fit.alphas(i), m0, s0, fit.config.ceiling)
        _, lpa = average_state(u, lp)
        devs.append(abs(np.trapezoid(np.exp(lpa[:, 0]), g[:, 0]) - 1.0))
    devs = np.array(devs)
    return {"check": "normalization", "steps": int(fit.n + 1), "max_abs_error": float(devs.max()),
            "tolerance": tol, "passed": bool(devs.max() < tol)}


def cdf_validity(fit: FitState, grid_size: int = 400, width: float = 8.0) -> dict:
    if fit.d != 1:
        raise ValueError("cdf_validity supports univariate fits")
    g = np.linspace(-width, width, grid_size)[:, None]
    u, _ = state_at(fit, g)
    P = u[:, 0]
    ok = bool(np.all(np.diff(P) >= 0) and P.min() >= 0 and P.max() <= 1)
    return {"check": "cdf_validity", "passed": ok}


def run_suite(fit, suites=("martingale", "normalization", "concentration"), probes=None, N=None, continuation=1000,
              trajectories=1000, seed=0, workers=None) -> dict:
    reports = []
    if probes is None and isinstance(fit, FitState) and fit.d == 1:
        probes = fit.mean[0] + fit.sd[0] * np.linspace(-2, 2, 5)
    for name in suites:
        if name == "martingale":
            reports.append(martingale_quadrature(fit, probes))
        elif name == "normalization":
            reports.append(normalization_check(fit))
            reports.append(cdf_validity(fit))
        elif name == "concentration":
            conc = concentration_check(fit, np.asarray(probes).reshape(-1, fit.d), N if N is not None else fit.n + 5000,
                                       continuation, trajectories, seed=seed, workers=workers)
            conc["check"] = "concentration"
            reports.append(conc)
        else:
            raise ValueError(f"unknown diagnostic suite {name!r}")
    return {"reports": reports, "passed": all(r["passed"] for r in reports)}


__all__ = ["martingale_quadrature", "normalization_check", "cdf_validity", "run_suite"]
