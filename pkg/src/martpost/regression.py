"""Copula regression (joint and conditional) and binary classification.

Joint mode runs the multivariate recursion on (x, y) with the response ordered
last, so p_n(y | x) is a ratio of tractable prefix densities. Conditional mode
never updates the covariate distribution: the covariate kernel uses the fixed
transform Phi of the standardized covariates and only the response CDFs
q_i = P_i(y | x), r_i = P_i(y_{i+1} | x_{i+1}) are propagated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtri

from .config import CopulaConfig
from .density import _as_matrix, draw_permutations, eval_kernel, fit_kernel, mv_update, standardization
from .special import EPS, _bernoulli_copula, alpha, clamp_prob, copula_cdf_z, copula_density_z, log_copula_density_z, norm_cdf, norm_logpdf

MODES = ("joint", "conditional")


def covariate_kernel(zx, zx_obs, rho_x, ceiling):
    """prod_j c_{rho_j}(Phi(x^j), Phi(x'^j)) from normal scores; broadcasts over leading axes."""
    return np.minimum(np.exp(np.sum(log_copula_density_z(zx, zx_obs, rho_x), axis=-1)), ceiling)


def weighted_alpha(a, k):
    """Covariate-dependent step size alpha_i(x, x') for kernel value k."""
    return a * k / (1.0 - a + a * k)


def _fixed_scores(x_std):
    # P_0(x) = Phi(x) is never updated in conditional mode
    return ndtri(clamp_prob(norm_cdf(x_std)))


@dataclass(frozen=True, eq=False)
class RegressionFit:
    mode: str
    config: CopulaConfig
    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float
    train_x: np.ndarray
    train_y: np.ndarray
    permutations: np.ndarray
    perm_seeds: tuple
    # joint: (M, n, d + 1) conditional CDFs with the response last;
    # conditional: (M, n, 1) response CDFs r_i
    v_history: np.ndarray
    prequential: np.ndarray  # (M, n) log p_{i-1}(y_i | x_i), standardized response scale

    @property
    def n(self) -> int:
        return self.train_x.shape[0]

    @property
    def d(self) -> int:
        return self.train_x.shape[1]

    def rho_x(self) -> np.ndarray:
        return self.config.rho_for(self.d) if self.d else np.empty(0)

    def rho_y(self) -> float:
        return response_rho(self.config)

    def alphas(self) -> np.ndarray:
        return alpha(np.arange(1, self.n + 1), self.config.alpha)

    def std_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.d:
            raise ValueError(f"expected covariates with {self.d} coordinates, got shape {x.shape}")
        return (x - self.x_mean) / self.x_sd

    def std_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_sd

    def init_mean(self, x_std) -> np.ndarray:
        beta = self.config.init.beta
        if beta is None or self.d == 0:
            return np.zeros(x_std.shape[:-1])
        return x_std @ np.asarray(beta, dtype=float)


@dataclass(frozen=True, eq=False)
class ClassifierFit:
    mode: str
    config: CopulaConfig
    x_mean: np.ndarray
    x_sd: np.ndarray
    train_x: np.ndarray
    labels: np.ndarray
    permutations: np.ndarray
    perm_seeds: tuple
    r_history: np.ndarray  # (M, n) p_{i-1}(y_i | x_i), clamped
    x_history: np.ndarray  # joint mode: (M, n, d) covariate conditional CDFs; conditional: empty
    prequential: np.ndarray  # (M, n)

    @property
    def n(self) -> int:
        return self.train_x.shape[0]

    @property
    def d(self) -> int:
        return self.train_x.shape[1]

    def rho_x(self) -> np.ndarray:
        return self.config.rho_for(self.d) if self.d else np.empty(0)

    def rho_y(self) -> float:
        return response_rho(self.config)

    def alphas(self) -> np.ndarray:
        return alpha(np.arange(1, self.n + 1), self.config.alpha)

    def std_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError(f"expected covariates with {self.d} coordinates, got shape {x.shape}")
        return (x - self.x_mean) / self.x_sd


def response_rho(config: CopulaConfig) -> float:
    return config.rho_y if config.rho_y is not None else config.rho[0]


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _prepare(x, y, config, response_name="y"):
    y = np.asarray(y, dtype=float).ravel()
    n = y.shape[0]
    x = np.zeros((n, 0)) if x is None else _as_matrix(x)
    if x.shape[0] != n:
        raise ValueError("x and y have different numbers of rows")
    if n == 0:
        raise ValueError("cannot fit on empty data")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite response value")
    x_mean, x_sd = standardization(x, config.standardize)
    return x, y, x_mean, x_sd


def fit_joint_regression(x, y, config: CopulaConfig) -> RegressionFit:
    x, y, x_mean, x_sd = _prepare(x, y, config)
    (y_mean,), (y_sd,) = standardization(y[:, None], config.standardize, ["response"])
    n, d = x.shape
    xs = (x - x_mean) / x_sd
    ys = (y - y_mean) / y_sd
    data = np.column_stack([xs, ys])
    perms, seeds = draw_permutations(n, config.permutations, config.seed)
    rho = np.append(config.rho_for(d) if d else np.empty(0), response_rho(config))
    alphas = alpha(np.arange(1, n + 1), config.alpha)
    v_hist, preq = fit_kernel(data[perms], rho, alphas, np.zeros(d + 1), np.ones(d + 1), config.ceiling)
    cond = preq[..., -1] - (preq[..., -2] if d else 0.0)
    return RegressionFit("joint", config, x_mean, x_sd, float(y_mean), float(y_sd), xs, ys, perms, seeds, v_hist, cond)


def conditional_regression_kernel(zx, y_std, init_mean, rho_x, rho_y, alphas, ceiling, perms):
    """Prequential pass of the conditional method for all permutations."""
    M, n = perms.shape
    K = covariate_kernel(zx[:, None, :], zx[None, :, :], rho_x, ceiling)  # (n, n)
    z0 = y_std - init_mean
    q = norm_cdf(z0)[perms]
    logp = norm_logpdf(z0)[perms]
    r_hist = np.empty((M, n))
    preq = np.empty((M, n))
    for i in range(n):
        r = clamp_prob(q[:, i])
        r_hist[:, i] = r
        preq[:, i] = logp[:, i]
        if i == n - 1:
            break
        k = K[perms[:, i + 1:], perms[:, i][:, None]]
        a = weighted_alpha(alphas[i], k)
        zq = ndtri(clamp_prob(q[:, i + 1:]))
        zr = ndtri(r)[:, None]
        c = copula_density_z(zq, zr, rho_y, ceiling)
        h = copula_cdf_z(zq, zr, rho_y)
        logp[:, i + 1:] += np.log(1.0 - a + a * c)
        q[:, i + 1:] = (1.0 - a) * q[:, i + 1:] + a * h
    return r_hist, preq


def fit_conditional_regression(x, y, config: CopulaConfig) -> RegressionFit:
    x, y, x_mean, x_sd = _prepare(x, y, config)
    (y_mean,), (y_sd,) = standardization(y[:, None], config.standardize, ["response"])
    n, d = x.shape
    xs = (x - x_mean) / x_sd
    ys = (y - y_mean) / y_sd
    perms, seeds = draw_permutations(n, config.permutations, config.seed)
    alphas = alpha(np.arange(1, n + 1), config.alpha)
    beta = config.init.beta
    init_mean = xs @ np.asarray(beta, dtype=float) if beta is not None and d else np.zeros(n)
    rho_x = config.rho_for(d) if d else np.empty(0)
    r_hist, preq = conditional_regression_kernel(_fixed_scores(xs), ys, init_mean, rho_x, response_rho(config),
                                                 alphas, config.ceiling, perms)
    return RegressionFit("conditional", config, x_mean, x_sd, float(y_mean), float(y_sd), xs, ys, perms, seeds,
                         r_hist[..., None], preq)


def fit_regression(x, y, config: CopulaConfig, mode: str = "conditional") -> RegressionFit:
    _check_mode(mode)
    return fit_joint_regression(x, y, config) if mode == "joint" else fit_conditional_regression(x, y, config)


def regression_state(fit: RegressionFit, x_std, y_std):
    """Per-permutation conditional CDF q and log density at standardized (x, y).

    ``x_std`` has shape (..., d) and ``y_std`` shape (...,), broadcast
    together. Returns (q, log p(y|x), log p(x)) each with a leading
    permutation axis; log p(x) is zero in conditional mode.
    """
    x_std, y_std = np.asarray(x_std, dtype=float), np.asarray(y_std, dtype=float)
    batch = np.broadcast_shapes(x_std.shape[:-1], y_std.shape)
    x_std = np.broadcast_to(x_std, batch + x_std.shape[-1:])
    y_std = np.broadcast_to(y_std, batch)
    M = fit.permutations.shape[0]
    alphas = fit.alphas()
    if fit.mode == "joint":
        pts = np.concatenate([x_std, y_std[..., None]], axis=-1)
        rho = np.append(fit.rho_x(), fit.rho_y())
        u, logp = eval_kernel(pts, fit.v_history, rho, alphas, np.zeros(fit.d + 1), np.ones(fit.d + 1),
                              fit.config.ceiling)
        logpx = logp[..., -2] if fit.d else np.zeros_like(logp[..., -1])
        return u[..., -1], logp[..., -1] - logpx, logpx
    zx = _fixed_scores(x_std)
    zx_obs = _fixed_scores(fit.train_x)
    z0 = y_std - fit.init_mean(x_std)
    shape = (M,) + z0.shape
    q = np.broadcast_to(norm_cdf(z0), shape).copy()
    logp = np.broadcast_to(norm_logpdf(z0), shape).copy()
    zr_all = ndtri(fit.v_history[..., 0])
    extra = (1,) * z0.ndim
    rho_x, rho_y = fit.rho_x(), fit.rho_y()
    for i in range(fit.n):
        k = covariate_kernel(zx[None], zx_obs[fit.permutations[:, i]].reshape((M,) + extra + (fit.d,)), rho_x,
                             fit.config.ceiling)
        a = weighted_alpha(alphas[i], k)
        zq = ndtri(clamp_prob(q))
        zr = zr_all[:, i].reshape((M,) + extra)
        c = copula_density_z(zq, zr, rho_y, fit.config.ceiling)
        h = copula_cdf_z(zq, zr, rho_y)
        logp += np.log(1.0 - a + a * c)
        q = (1.0 - a) * q + a * h
    return q, logp, np.zeros(shape)


def _average_conditional(q, logp, logpx):
    """Conditional CDF and log density of the permutation mixture at fixed x."""
    lw = logpx - logsumexp(logpx, axis=0, keepdims=True)
    w = np.exp(lw)
    q_avg = np.clip(np.sum(w * q, axis=0), 0.0, 1.0)
    logp_avg = logsumexp(logp + lw, axis=0)
    return q_avg, logp_avg


def eval_conditional_log_density(fit: RegressionFit, x, y):
    q, logp, logpx = regression_state(fit, fit.std_x(x), fit.std_y(y))
    _, lp = _average_conditional(q, logp, logpx)
    return lp - np.log(fit.y_sd)


def eval_conditional_density(fit: RegressionFit, x, y):
    """p_n(y | x) on the data scale; ``x`` (..., d) broadcasts against ``y`` (...)."""
    return np.exp(eval_conditional_log_density(fit, x, y))


def eval_conditional_cdf(fit: RegressionFit, x, y):
    q, logp, logpx = regression_state(fit, fit.std_x(x), fit.std_y(y))
    q_avg, _ = _average_conditional(q, logp, logpx)
    return q_avg


def joint_and_marginal_density(fit: RegressionFit, x, y):
    """Permutation-averaged p_n(x, y) and p_n(x) on the data scale (joint mode only)."""
    if fit.mode != "joint":
        raise ValueError("joint density is only modelled in joint mode")
    _, logp_c, logpx = regression_state(fit, fit.std_x(x), fit.std_y(y))
    M = logp_c.shape[0]
    jac_x = float(np.sum(np.log(fit.x_sd))) if fit.d else 0.0
    lj = logsumexp(logp_c + logpx, axis=0) - np.log(M) - jac_x - np.log(fit.y_sd)
    lm = logsumexp(logpx, axis=0) - np.log(M) - jac_x
    return np.exp(lj), np.exp(lm)


def regression_prequential_loglik(fit: RegressionFit) -> float:
    """Sum of log p_{i-1}(y_i | x_i) on the response's data scale, averaged over permutations."""
    return float(fit.prequential.sum(axis=1).mean() - fit.n * np.log(fit.y_sd))


# -- classification -------------------------------------------------------


def classifier_kernel(xs, labels, rho_x, rho_y, alphas, ceiling, perms, mode, check=None):
    """Prequential pass of the beta-Bernoulli copula recursion.

    Tracks both class probabilities at every training point. ``check`` is
    called with (q0, q1) after each step when given (used by tests).
    """
    M, n = perms.shape
    d = xs.shape[1]
    lab = labels[perms]
    q1 = np.full((M, n), 0.5)
    q0 = np.full((M, n), 0.5)
    r_hist = np.empty((M, n))
    preq = np.empty((M, n))
    if mode == "joint":
        u = norm_cdf(xs)[perms]
        x_hist = np.empty((M, n, d))
    else:
        zx = _fixed_scores(xs)
        K = covariate_kernel(zx[:, None, :], zx[None, :, :], rho_x, ceiling)
        x_hist = np.empty((M, 0, d))
    for i in range(n):
        y_i = lab[:, i]
        r = clamp_prob(np.where(y_i == 1, q1[:, i], q0[:, i]))
        r_hist[:, i] = r
        preq[:, i] = np.log(r)
        if mode == "joint":
            x_hist[:, i, :] = clamp_prob(u[:, i, :])
        if i == n - 1:
            break
        if mode == "joint":
            zv = ndtri(x_hist[:, i, :])[:, None, :]
            if d:
                u_new, _, cum = mv_update(u[:, i + 1:, :], zv, rho_x, alphas[i], ceiling)
                u[:, i + 1:, :] = u_new
                k = cum[..., -1]
            else:
                k = np.ones((M, n - i - 1))
        else:
            k = K[perms[:, i + 1:], perms[:, i][:, None]]
        a = weighted_alpha(alphas[i], k)
        rr = r[:, None]
        same1 = (y_i == 1)[:, None]
        f1 = _bernoulli_copula(clamp_prob(q1[:, i + 1:]), rr, same1, rho_y)
        f0 = _bernoulli_copula(clamp_prob(q0[:, i + 1:]), rr, ~same1, rho_y)
        q1[:, i + 1:] = (1.0 - a + a * f1) * q1[:, i + 1:]
        q0[:, i + 1:] = (1.0 - a + a * f0) * q0[:, i + 1:]
        if check is not None:
            check(q0[:, i + 1:], q1[:, i + 1:])
    return r_hist, x_hist, preq


def fit_classifier(x, labels, config: CopulaConfig, mode: str = "conditional") -> ClassifierFit:
    _check_mode(mode)
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be a vector of 0/1 values")
    labels = labels.astype(int)
    x, _, x_mean, x_sd = _prepare(x, labels.astype(float), config)
    n, d = x.shape
    xs = (x - x_mean) / x_sd
    perms, seeds = draw_permutations(n, config.permutations, config.seed)
    alphas = alpha(np.arange(1, n + 1), config.alpha)
    rho_x = config.rho_for(d) if d else np.empty(0)
    r_hist, x_hist, preq = classifier_kernel(xs, labels, rho_x, response_rho(config), alphas, config.ceiling, perms,
                                             mode)
    return ClassifierFit(mode, config, x_mean, x_sd, xs, labels, perms, seeds, r_hist, x_hist, preq)


def classifier_state(fit: ClassifierFit, x_std):
    """Per-permutation (q0, q1, log p(x)) at standardized covariates (..., d)."""
    x_std = np.asarray(x_std, dtype=float)
    M = fit.permutations.shape[0]
    shape = (M,) + x_std.shape[:-1]
    extra = (1,) * (x_std.ndim - 1)
    q1 = np.full(shape, 0.5)
    q0 = np.full(shape, 0.5)
    logpx = np.zeros(shape)
    alphas = fit.alphas()
    rho_x, rho_y = fit.rho_x(), fit.rho_y()
    lab = fit.labels[fit.permutations]
    if fit.mode == "joint":
        u = np.broadcast_to(norm_cdf(x_std), shape + (fit.d,)).copy()
        logpx += np.sum(norm_logpdf(x_std), axis=-1)
        zv_all = ndtri(fit.x_history)
    else:
        zx = _fixed_scores(x_std)
        zx_obs = _fixed_scores(fit.train_x)
    for i in range(fit.n):
        if fit.mode == "joint":
            if fit.d:
                zv = zv_all[:, i, :].reshape((M,) + extra + (fit.d,))
                u, logfac, cum = mv_update(u, zv, rho_x, alphas[i], fit.config.ceiling)
                logpx += logfac[..., -1]
                k = cum[..., -1]
            else:
                k = np.ones(shape)
        else:
            k = covariate_kernel(zx[None], zx_obs[fit.permutations[:, i]].reshape((M,) + extra + (fit.d,)), rho_x,
                                 fit.config.ceiling)
        a = weighted_alpha(alphas[i], k)
        r = fit.r_history[:, i].reshape((M,) + extra)
        same1 = (lab[:, i] == 1).reshape((M,) + extra)
        f1 = _bernoulli_copula(clamp_prob(q1), r, same1, rho_y)
        f0 = _bernoulli_copula(clamp_prob(q0), r, ~same1, rho_y)
        q1 = (1.0 - a + a * f1) * q1
        q0 = (1.0 - a + a * f0) * q0
    return q0, q1, logpx


def eval_class_probs(fit: ClassifierFit, x) -> np.ndarray:
    """(p_n(y=0|x), p_n(y=1|x)) stacked on the last axis, permutation averaged."""
    q0, q1, logpx = classifier_state(fit, fit.std_x(x))
    w = np.exp(logpx - logsumexp(logpx, axis=0, keepdims=True))
    return np.stack([np.sum(w * q0, axis=0), np.sum(w * q1, axis=0)], axis=-1)


def eval_class_prob(fit: ClassifierFit, x):
    """p_n(y = 1 | x)."""
    return clamp_prob(eval_class_probs(fit, x)[..., 1], EPS)


def classifier_prequential_loglik(fit: ClassifierFit) -> float:
    return float(fit.prequential.sum(axis=1).mean())
