"""Recursive Gaussian-copula predictive for univariate and multivariate data.

The fit stores, for every permutation of the rows, the conditional CDF values
v[i, j] = P_{i}(y_{i+1}^j | y_{i+1}^{1:j-1}) of each observation under the
predictive built from the rows before it. Everything downstream (density
evaluation, conditional CDFs, predictive resampling) only needs these values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtri

from .config import CopulaConfig
from .special import EPS, alpha, clamp_prob, copula_cdf_z, copula_density_z, norm_cdf, norm_logpdf


def mv_update(u, zv, rho, a, ceiling):
    """One copula step on conditional CDFs.

    ``u`` (..., d) are conditional CDFs at the evaluation points, ``zv`` the
    normal scores of the new observation's conditional CDFs. Returns the
    updated conditionals, log{1 - a + a prod_{j<=k} c_j} for k = 1..d and
    the running copula products prod_{j<=k} c_j.
    """
    zu = ndtri(clamp_prob(u))
    c = copula_density_z(zu, zv, rho, ceiling)
    h = copula_cdf_z(zu, zv, rho)
    cum = np.cumprod(c, axis=-1)
    prev = np.concatenate([np.ones_like(cum[..., :1]), cum[..., :-1]], axis=-1)
    fac = 1.0 - a + a * cum
    u_new = ((1.0 - a) * u + a * h * prev) / (1.0 - a + a * prev)
    return u_new, np.log(fac), cum


def fit_kernel(Y, rho, alphas, m0, s0, ceiling):
    """Prequential pass over permuted data.

    Y: (M, n, d) standardized observations in fitting order; rho: (d,) or
    per-step (n, d); alphas: (n,) step sizes where alphas[i] moves p_i to
    p_{i+1}. Returns v_history (M, n, d) and prequential prefix log terms
    log p_{i-1}(y_i^{1:k}) with shape (M, n, d).
    """
    M, n, d = Y.shape
    rho = np.asarray(rho, dtype=float)
    per_step = rho.ndim == 2
    z0 = (Y - m0) / s0
    u = norm_cdf(z0)
    logp = np.cumsum(norm_logpdf(z0) - np.log(s0), axis=-1)
    v_hist = np.empty((M, n, d))
    preq = np.empty((M, n, d))
    for i in range(n):
        v = clamp_prob(u[:, i, :])
        v_hist[:, i, :] = v
        preq[:, i, :] = logp[:, i, :]
        if i == n - 1:
            break
        r = rho[i] if per_step else rho
        zv = ndtri(v)[:, None, :]
        u_new, logfac, _ = mv_update(u[:, i + 1:, :], zv, r, alphas[i], ceiling)
        u[:, i + 1:, :] = u_new
        logp[:, i + 1:, :] += logfac
    return v_hist, preq


def eval_kernel(P, v_hist, rho, alphas, m0, s0, ceiling):
    """Push evaluation points through every stored update.

    P: (..., d) standardized points; v_hist: (M, n, d). Returns conditional
    CDFs (M, ..., d) and prefix log densities log p(y^{1:k}) (M, ..., d).
    """
    M, n, d = v_hist.shape
    rho = np.asarray(rho, dtype=float)
    per_step = rho.ndim == 2
    z0 = (P - m0) / s0
    shape = (M,) + P.shape
    u = np.broadcast_to(norm_cdf(z0), shape).copy()
    logp = np.broadcast_to(np.cumsum(norm_logpdf(z0) - np.log(s0), axis=-1), shape).copy()
    zv_all = ndtri(v_hist)
    extra = (1,) * (P.ndim - 1)
    for i in range(n):
        zv = zv_all[:, i, :].reshape((M,) + extra + (d,))
        r = rho[i] if per_step else rho
        u, logfac, _ = mv_update(u, zv, r, alphas[i], ceiling)
        logp += logfac
    return u, logp


def average_state(u, logp):
    """Permutation average of a state as the mixture of the M predictives.

    Returns averaged conditional CDFs and prefix log densities. The k-th
    conditional of the mixture weights each permutation by its marginal
    density of the first k-1 coordinates.
    """
    M = u.shape[0]
    logp_avg = logsumexp(logp, axis=0) - np.log(M)
    lw = np.concatenate([np.zeros_like(logp[..., :1]), logp[..., :-1]], axis=-1)
    lw = lw - logsumexp(lw, axis=0, keepdims=True)
    u_avg = np.sum(np.exp(lw) * u, axis=0)
    return np.clip(u_avg, 0.0, 1.0), logp_avg


@dataclass(frozen=True, eq=False)
class FitState:
    """Immutable fitted copula predictive.

    ``train`` holds the standardized observations (columns already in fitting
    order); ``permutations`` the row orders, one per permutation, and
    ``v_history``/``prequential`` the corresponding per-step quantities.
    """

    config: CopulaConfig
    mean: np.ndarray
    sd: np.ndarray
    ordering: np.ndarray
    train: np.ndarray
    permutations: np.ndarray
    perm_seeds: tuple
    v_history: np.ndarray
    prequential: np.ndarray

    @property
    def n(self) -> int:
        return self.train.shape[0]

    @property
    def d(self) -> int:
        return self.train.shape[1]

    @property
    def permutation_count(self) -> int:
        return self.v_history.shape[0]

    def rho(self) -> np.ndarray:
        return self.config.rho_for(self.d)

    def alphas(self, count: int | None = None, start: int = 1) -> np.ndarray:
        count = self.n if count is None else count
        return alpha(np.arange(start, start + count), self.config.alpha)

    def init_params(self):
        return init_params(self.config, self.mean, self.sd, self.ordering)

    def standardize(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.d:
            raise ValueError(f"expected points with {self.d} coordinates, got shape {pts.shape}")
        return (pts[..., self.ordering] - self.mean) / self.sd

    def log_jacobian(self) -> float:
        return float(np.sum(np.log(self.sd)))


def init_params(config: CopulaConfig, mean, sd, ordering):
    """Mean and sd of p_0 per (ordered) dimension, on the standardized scale."""
    d = len(ordering)
    if config.init.kind == "user_normal":
        if len(config.init.mean) != d:
            raise ValueError("initial density dimension does not match data")
        m = np.asarray(config.init.mean, dtype=float)[ordering]
        s = np.asarray(config.init.sd, dtype=float)[ordering]
        return (m - mean) / sd, s / sd
    return np.zeros(d), np.ones(d)


def standardization(data: np.ndarray, standardize: bool = True, names=None):
    n, d = data.shape
    if not standardize or n == 0:
        return np.zeros(d), np.ones(d)
    mean = data.mean(axis=0)
    if n == 1:
        return mean, np.ones(d)
    sd = data.std(axis=0)
    for j in range(d):
        if not sd[j] > 0:
            label = names[j] if names is not None else j
            raise ValueError(f"column {label!r} is constant; cannot standardize")
    return mean, sd


def draw_permutations(n: int, M: int, seed: int):
    """Row orders for permutation averaging. M = 1 keeps the given order."""
    if M == 1:
        return np.arange(n)[None, :], (None,)
    children = np.random.SeedSequence(seed).spawn(M)
    seeds = tuple(int(c.generate_state(1, np.uint64)[0]) for c in children)
    perms = np.stack([np.random.default_rng(s).permutation(n) for s in seeds])
    return perms, seeds


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("data must be a vector or an n x d matrix")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise ValueError(f"non-finite value at row {bad[0]}, column {bad[1]}")
    return arr


def fit_multivariate(data, config: CopulaConfig, ordering=None, names=None, row_orders=None) -> FitState:
    """Fit the multivariate copula predictive.

    ``row_orders`` (M, n) overrides the seeded permutation draws, e.g. to
    average over every ordering of a small dataset.
    """
    arr = _as_matrix(data)
    n, d = arr.shape
    if n == 0:
        raise ValueError("cannot fit on empty data; use prior_state for n = 0")
    if d == 0:
        raise ValueError("data has no columns")
    ordering = np.arange(d) if ordering is None else np.asarray(ordering, dtype=int)
    if sorted(ordering.tolist()) != list(range(d)):
        raise ValueError("ordering must be a permutation of the columns")
    ordered_names = None if names is None else [names[j] for j in ordering]
    arr = arr[:, ordering]
    mean, sd = standardization(arr, config.standardize, ordered_names)
    train = (arr - mean) / sd
    if row_orders is None:
        perms, seeds = draw_permutations(n, config.permutations, config.seed)
    else:
        perms = np.atleast_2d(np.asarray(row_orders, dtype=int))
        if perms.shape[1] != n or any(sorted(r) != list(range(n)) for r in perms.tolist()):
            raise ValueError("row_orders must hold permutations of the rows")
        seeds = (None,) * perms.shape[0]
    m0, s0 = init_params(config, mean, sd, ordering)
    alphas = alpha(np.arange(1, n + 1), config.alpha)
    v_hist, preq = fit_kernel(train[perms], config.rho_for(d), alphas, m0, s0, config.ceiling)
    return FitState(config, mean, sd, ordering, train, perms, seeds, v_hist, preq)


def fit_univariate(data, config: CopulaConfig) -> FitState:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 1:
        raise ValueError("fit_univariate expects a vector")
    return fit_multivariate(arr[:, None], config)


def prior_state(d: int, config: CopulaConfig, mean=None, sd=None) -> FitState:
    """Degenerate n = 0 fit: the initial density itself."""
    mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
    sd = np.ones(d) if sd is None else np.asarray(sd, dtype=float)
    M = 1
    return FitState(config, mean, sd, np.arange(d), np.empty((0, d)), np.empty((M, 0), dtype=int), (None,),
                    np.empty((M, 0, d)), np.empty((M, 0, d)))


def state_at(fit: FitState, points_std: np.ndarray):
    """Permutation-averaged conditionals and prefix log densities (standardized scale)."""
    m0, s0 = fit.init_params()
    u, logp = eval_kernel(points_std, fit.v_history, fit.rho(), fit.alphas(), m0, s0, fit.config.ceiling)
    return average_state(u, logp)


def eval_log_density(fit: FitState, points) -> np.ndarray:
    z = fit.standardize(points)
    _, logp = state_at(fit, z)
    return logp[..., -1] - fit.log_jacobian()


def eval_density(fit: FitState, points):
    """p_n at ``points`` (shape (..., d), or (...,) for univariate fits)."""
    pts = np.asarray(points, dtype=float)
    if fit.d == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
        pts = pts[..., None]
    return np.exp(eval_log_density(fit, pts))


def eval_cdf_conditionals(fit: FitState, points) -> np.ndarray:
    """Conditional CDFs P_n(y^j | earlier coordinates), returned in input column order."""
    pts = np.asarray(points, dtype=float)
    if fit.d == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
        pts = pts[..., None]
    u, _ = state_at(fit, fit.standardize(pts))
    out = np.empty_like(u)
    out[..., fit.ordering] = u
    return out


def eval_cdf(fit: FitState, y):
    """Univariate predictive CDF P_n(y)."""
    if fit.d != 1:
        raise ValueError("eval_cdf is for univariate fits")
    return eval_cdf_conditionals(fit, y)[..., 0]


def prequential_loglik(fit: FitState) -> float:
    """Sum of log p_{i-1}(y_i) on the data scale, averaged over permutations."""
    if fit.n == 0:
        return 0.0
    per_perm = fit.prequential[..., -1].sum(axis=1) - fit.n * fit.log_jacobian()
    return float(per_perm.mean())


__all__ = [
    "EPS",
    "FitState",
    "fit_univariate",
    "fit_multivariate",
    "prior_state",
    "eval_density",
    "eval_log_density",
    "eval_cdf",
    "eval_cdf_conditionals",
    "prequential_loglik",
]
