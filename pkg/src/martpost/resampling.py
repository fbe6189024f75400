"""Predictive resampling of fitted copula predictives.

Each trajectory starts from the fitted (permutation averaged) predictive on a
set of evaluation nodes and applies the copula update with fresh uniforms, so
no future observation is ever materialised. Trajectories are independent:
each owns a random stream derived from ``(master_seed, index)`` and work is
cut into fixed-size chunks, so results do not depend on how many worker
threads run them.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri, polygamma

from .density import FitState, average_state, eval_kernel, mv_update, state_at
from .regression import (
    ClassifierFit,
    RegressionFit,
    _average_conditional,
    _fixed_scores,
    classifier_state,
    covariate_kernel,
    regression_state,
    weighted_alpha,
)
from .special import _bernoulli_copula, alpha, clamp_prob, copula_cdf_z, copula_density_z

THREADS_ENV = "MARTPOST_THREADS"


@dataclass
class ResampleConfig:
    forward_steps: int = 5000
    ensemble_size: int = 1000
    master_seed: int = 0
    record_trace: bool = False
    trace_stride: int = 50
    workers: int | None = None
    chunk_size: int = 256

    def __post_init__(self):
        if self.forward_steps < 0:
            raise ValueError("forward_steps must be >= 0")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.trace_stride < 1:
            raise ValueError("trace_stride must be >= 1")


@dataclass
class GridState:
    """Density and CDF of one predictive on an increasing grid."""

    grid: np.ndarray
    p: np.ndarray
    P: np.ndarray
    step: int = 0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 1 or self.grid.size == 0:
            raise ValueError("grid must be a non-empty vector")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")


@dataclass
class PosteriorEnsemble:
    """B resampled predictives evaluated at fixed nodes.

    ``density`` is (B, K); ``cdf`` is (B, K) for univariate and conditional
    quantities or (B, K, d) of conditional CDFs for multivariate fits.
    ``trace`` is (B, T, 3) holding L1(p), L1(P) and the mean absolute density
    change at ``trace_steps``.
    """

    kind: str
    nodes: np.ndarray
    density: np.ndarray | None
    cdf: np.ndarray | None
    initial_density: np.ndarray | None
    initial_cdf: np.ndarray | None
    seeds: tuple
    n: int
    forward_steps: int
    trace_steps: np.ndarray | None = None
    trace: np.ndarray | None = None
    values: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        if self.values is not None:
            return len(self.values)
        return self.density.shape[0] if self.density is not None else self.cdf.shape[0]

    def gridstate(self, b: int) -> GridState:
        if self.kind != "univariate":
            raise ValueError("grid states exist for univariate ensembles only")
        return GridState(self.nodes, self.density[b], self.cdf[b], self.n + self.forward_steps)


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def trajectory_seeds(master_seed: int, count: int) -> tuple:
    children = np.random.SeedSequence(master_seed).spawn(count)
    return tuple(int(c.generate_state(1, np.uint64)[0]) for c in children)


def _run_chunks(fn, seeds, config: ResampleConfig):
    chunks = [seeds[i:i + config.chunk_size] for i in range(0, len(seeds), config.chunk_size)]
    workers = worker_count(config.workers)
    if workers == 1 or len(chunks) == 1:
        results = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, chunks))
    return results


def _trace_steps(T: int, stride: int) -> np.ndarray:
    return np.arange(0, T + 1, stride)


def trapezoid_l1(grid, a, b):
    return np.trapezoid(np.abs(a - b), grid, axis=-1)


# -- density engines ------------------------------------------------------


def default_grid(fit: FitState, size: int = 200, width: float = 4.0) -> np.ndarray:
    """Evenly spaced univariate grid over mean +/- width sd of the data."""
    if fit.d != 1:
        raise ValueError("default_grid is for univariate fits")
    return fit.mean[0] + fit.sd[0] * np.linspace(-width, width, size)


def _mv_chunk(u0, logp0, rho, alphas, ceiling, seeds, trace_fn, stride, d):
    T = len(alphas)
    b = len(seeds)
    V = np.stack([np.random.default_rng(s).random((T, d)) for s in seeds]) if T else np.empty((b, 0, d))
    zV = ndtri(clamp_prob(V))
    extra = (1,) * (u0.ndim - 1)
    u = np.broadcast_to(u0, (b,) + u0.shape).copy()
    logp = np.broadcast_to(logp0, (b,) + logp0.shape).copy()
    traces = [trace_fn(u, logp)] if trace_fn else []
    for t in range(T):
        zv = zV[:, t, :].reshape((b,) + extra + (d,))
        u, logfac, _ = mv_update(u, zv, rho, alphas[t], ceiling)
        logp += logfac
        if trace_fn and (t + 1) % stride == 0:
            traces.append(trace_fn(u, logp))
    return u, logp, (np.stack(traces, axis=1) if trace_fn else None)


def _resample_density(fit: FitState, nodes_std, config: ResampleConfig, trace_fn):
    u0, logp0 = state_at(fit, nodes_std)
    T = config.forward_steps
    alphas = alpha(np.arange(fit.n + 1, fit.n + T + 1), fit.config.alpha)
    seeds = trajectory_seeds(config.master_seed, config.ensemble_size)
    rho = fit.rho()

    def run(chunk):
        return _mv_chunk(u0, logp0, rho, alphas, fit.config.ceiling, chunk,
                         trace_fn if config.record_trace else None, config.trace_stride, fit.d)

    results = _run_chunks(run, seeds, config)
    u = np.concatenate([r[0] for r in results])
    logp = np.concatenate([r[1] for r in results])
    trace = np.concatenate([r[2] for r in results]) if config.record_trace else None
    return u0, logp0, u, logp, trace, seeds


def resample_univariate(fit: FitState, grid=None, config: ResampleConfig | None = None) -> PosteriorEnsemble:
    """Ensemble of p_N, P_N on ``grid`` (data scale) for a univariate fit."""
    config = config or ResampleConfig()
    if fit.d != 1:
        raise ValueError("resample_univariate needs a univariate fit")
    grid = default_grid(fit) if grid is None else np.asarray(grid, dtype=float)
    GridState(grid, np.zeros_like(grid), np.zeros_like(grid))  # validates the grid
    nodes_std = fit.standardize(grid[:, None])
    jac = fit.log_jacobian()
    p_init = None

    def trace_fn(u, logp):
        p = np.exp(logp[..., -1] - jac)
        P = u[..., 0]
        return np.stack([trapezoid_l1(grid, p, p_init[0]), trapezoid_l1(grid, P, p_init[1]),
                         np.mean(np.abs(p - p_init[0]), axis=-1)], axis=-1)

    u0, logp0 = state_at(fit, nodes_std)
    p_init = (np.exp(logp0[..., -1] - jac), u0[..., 0])
    _, _, u, logp, trace, seeds = _resample_density(fit, nodes_std, config, trace_fn)
    return PosteriorEnsemble(
        "univariate", grid, np.exp(logp[..., -1] - jac), u[..., 0], p_init[0], p_init[1], seeds, fit.n,
        config.forward_steps, _trace_steps(config.forward_steps, config.trace_stride) if config.record_trace else None,
        trace,
    )


def tensor_grid(axes) -> np.ndarray:
    mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def resample_multivariate(fit: FitState, nodes, config: ResampleConfig | None = None) -> PosteriorEnsemble:
    """Ensemble of p_N and conditional CDFs at probe ``nodes`` (K, d).

    ``nodes`` may also be a list of per-dimension axes, expanded to a tensor
    grid. The returned ``cdf`` holds the conditional CDFs in data column order.
    """
    config = config or ResampleConfig()
    if isinstance(nodes, (list, tuple)) and len(nodes) == fit.d and all(np.ndim(a) == 1 for a in nodes):
        nodes = tensor_grid(nodes)
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 2 or nodes.shape[0] == 0:
        raise ValueError("nodes must be a non-empty (K, d) array")
    nodes_std = fit.standardize(nodes)
    jac = fit.log_jacobian()
    p_init = None

    def trace_fn(u, logp):
        p = np.exp(logp[..., -1] - jac)
        return np.stack([np.full(p.shape[0], np.nan), np.full(p.shape[0], np.nan),
                         np.mean(np.abs(p - p_init), axis=-1)], axis=-1)

    u0, logp0 = state_at(fit, nodes_std)
    p_init = np.exp(logp0[..., -1] - jac)
    _, _, u, logp, trace, seeds = _resample_density(fit, nodes_std, config, trace_fn)
    order = np.argsort(fit.ordering)
    return PosteriorEnsemble(
        "multivariate", nodes, np.exp(logp[..., -1] - jac), u[..., order], p_init, u0[..., order], seeds, fit.n,
        config.forward_steps, _trace_steps(config.forward_steps, config.trace_stride) if config.record_trace else None,
        trace, meta={"ordering": fit.ordering.tolist()},
    )


# -- regression and classification ---------------------------------------


def _urn_atoms(J, n):
    """Resolve Polya-urn draws: step t picks item J[:, t] of the n + t current items."""
    b, T = J.shape
    atoms = np.empty((b, T), dtype=np.int64)
    rows = np.arange(b)
    for t in range(T):
        j = J[:, t]
        atoms[:, t] = np.where(j < n, j, atoms[rows, np.maximum(j - n, 0)])
    return atoms


def _urn_draws(rng, n, T):
    U = rng.random(T)
    return np.minimum((U * (n + np.arange(T))).astype(np.int64), n + np.arange(T) - 1)


def resample_regression(fit: RegressionFit, x_probes, y_grid, config: ResampleConfig | None = None) -> PosteriorEnsemble:
    """Ensemble of p_N(y | x) and P_N(y | x) on ``x_probes`` x ``y_grid``.

    Conditional mode draws future covariates from the Polya urn over the
    observed covariates and future responses through uniforms r_i. Joint mode
    resamples (x, y) jointly from the multivariate predictive.
    """
    config = config or ResampleConfig()
    x_probes = np.atleast_2d(np.asarray(x_probes, dtype=float))
    y_grid = np.asarray(y_grid, dtype=float)
    if x_probes.shape[0] == 0 or y_grid.size == 0:
        raise ValueError("empty probe set")
    if fit.d == 0 and x_probes.shape[-1] != 0:
        x_probes = np.zeros((x_probes.shape[0], 0))
    xs = fit.std_x(x_probes)
    ys = fit.std_y(y_grid)
    K, G = xs.shape[0], ys.shape[0]
    q0, logp0, logpx0 = regression_state(fit, xs[:, None, :], ys[None, :])
    q_init, lp_init = _average_conditional(q0, logp0, logpx0)
    T = config.forward_steps
    n = fit.n
    alphas = alpha(np.arange(n + 1, n + T + 1), fit.config.alpha)
    seeds = trajectory_seeds(config.master_seed, config.ensemble_size)
    ceiling = fit.config.ceiling
    rho_y = fit.rho_y()
    p_init = np.exp(lp_init)
    record = config.record_trace

    def trace_fn(lp):
        return np.mean(np.abs(np.exp(lp) - p_init), axis=(-2, -1))

    if fit.mode == "joint":
        pts = np.concatenate([np.broadcast_to(xs[:, None, :], (K, G, fit.d)), np.broadcast_to(ys[None, :, None], (K, G, 1))],
                             axis=-1)
        rho = np.append(fit.rho_x(), rho_y)
        u, lp = eval_kernel(pts, fit.v_history, rho, fit.alphas(), np.zeros(fit.d + 1), np.ones(fit.d + 1), ceiling)
        u0, lp0 = average_state(u, lp)

        def run(chunk):
            def tf(uu, ll):
                cond = ll[..., -1] - (ll[..., -2] if fit.d else 0.0)
                return trace_fn(cond)
            u_, l_, tr = _mv_chunk(u0, lp0, rho, alphas, ceiling, chunk, tf if record else None,
                                   config.trace_stride, fit.d + 1)
            cond = l_[..., -1] - (l_[..., -2] if fit.d else 0.0)
            return u_[..., -1], cond, tr
    else:
        zx_p = _fixed_scores(xs)
        zx_o = _fixed_scores(fit.train_x)
        Kpa = covariate_kernel(zx_p[:, None, :], zx_o[None, :, :], fit.rho_x(), ceiling)  # (K, n)

        def run(chunk):
            b = len(chunk)
            rngs = [np.random.default_rng(s) for s in chunk]
            V = np.stack([r.random(T) for r in rngs]) if T else np.empty((b, 0))
            J = np.stack([_urn_draws(r, n, T) for r in rngs]) if T else np.empty((b, 0), dtype=np.int64)
            atoms = _urn_atoms(J, n)
            zV = ndtri(clamp_prob(V))
            q = np.broadcast_to(q_init, (b, K, G)).copy()
            lp = np.broadcast_to(lp_init, (b, K, G)).copy()
            traces = [trace_fn(lp)] if record else []
            for t in range(T):
                a = weighted_alpha(alphas[t], Kpa[:, atoms[:, t]].T)[:, :, None]
                zq = ndtri(clamp_prob(q))
                zr = zV[:, t, None, None]
                c = copula_density_z(zq, zr, rho_y, ceiling)
                h = copula_cdf_z(zq, zr, rho_y)
                lp += np.log(1.0 - a + a * c)
                q = (1.0 - a) * q + a * h
                if record and (t + 1) % config.trace_stride == 0:
                    traces.append(trace_fn(lp))
            return q, lp, (np.stack(traces, axis=1) if record else None)

    results = _run_chunks(run, seeds, config)
    q = np.concatenate([r[0] for r in results])
    lp = np.concatenate([r[1] for r in results])
    trace = None
    if record:
        tr = np.concatenate([r[2] for r in results])
        trace = np.stack([np.full_like(tr, np.nan), np.full_like(tr, np.nan), tr], axis=-1)
    scale = np.log(fit.y_sd)
    return PosteriorEnsemble(
        "regression", x_probes, np.exp(lp - scale).reshape(len(seeds), K * G), q.reshape(len(seeds), K * G),
        np.exp(lp_init - scale).ravel(), q_init.ravel(), seeds, n, T,
        _trace_steps(T, config.trace_stride) if record else None, trace,
        meta={"mode": fit.mode, "y_grid": y_grid.tolist(), "x_probes": x_probes.tolist()},
    )


def resample_classifier(fit: ClassifierFit, x_probes, config: ResampleConfig | None = None) -> PosteriorEnsemble:
    """Ensemble of p_N(y = 1 | x) at ``x_probes``.

    Future covariates come from the Polya urn over the observed covariates and
    future labels are drawn from the current class probabilities at the drawn
    covariate, so the state is carried at every observed covariate as well
    as at the probes.
    """
    config = config or ResampleConfig()
    x_probes = np.atleast_2d(np.asarray(x_probes, dtype=float))
    if x_probes.shape[0] == 0:
        raise ValueError("empty probe set")
    xs = np.concatenate([fit.train_x, fit.std_x(x_probes)])
    n = fit.n
    Kp = x_probes.shape[0]
    q0_, q1_, lpx = classifier_state(fit, xs)
    w = np.exp(lpx - np.max(lpx, axis=0, keepdims=True))
    w /= w.sum(axis=0, keepdims=True)
    q1_init = np.sum(w * q1_, axis=0)
    q0_init = np.sum(w * q0_, axis=0)
    T = config.forward_steps
    alphas = alpha(np.arange(n + 1, n + T + 1), fit.config.alpha)
    seeds = trajectory_seeds(config.master_seed, config.ensemble_size)
    ceiling = fit.config.ceiling
    rho_x, rho_y = fit.rho_x(), fit.rho_y()
    record = config.record_trace
    joint = fit.mode == "joint"
    if joint:
        u_, lp_ = eval_kernel(xs, fit.x_history, rho_x, fit.alphas(), np.zeros(fit.d), np.ones(fit.d), ceiling)
        ux0, _ = average_state(u_, lp_) if fit.d else (np.empty((xs.shape[0], 0)), None)
    else:
        zx = _fixed_scores(xs)
        Kall = covariate_kernel(zx[:, None, :], zx[None, :n, :], rho_x, ceiling)  # (n + Kp, n)

    def run(chunk):
        b = len(chunk)
        rows = np.arange(b)
        rngs = [np.random.default_rng(s) for s in chunk]
        V = np.stack([r.random(T) for r in rngs]) if T else np.empty((b, 0))
        J = np.stack([_urn_draws(r, n, T) for r in rngs]) if T else np.empty((b, 0), dtype=np.int64)
        atoms = _urn_atoms(J, n)
        q1 = np.broadcast_to(q1_init, (b, n + Kp)).copy()
        q0 = np.broadcast_to(q0_init, (b, n + Kp)).copy()
        if joint:
            ux = np.broadcast_to(ux0, (b,) + ux0.shape).copy()
        traces = [np.zeros(b)] if record else []
        for t in range(T):
            k_atom = atoms[:, t]
            r1 = q1[rows, k_atom]
            y1 = V[:, t] < r1
            r = clamp_prob(np.where(y1, r1, q0[rows, k_atom]))
            if joint:
                if fit.d:
                    zv = ndtri(clamp_prob(ux[rows, k_atom, :]))[:, None, :]
                    ux, _, cum = mv_update(ux, zv, rho_x, alphas[t], ceiling)
                    kv = cum[..., -1]
                else:
                    kv = np.ones((b, n + Kp))
            else:
                kv = Kall[:, k_atom].T
            a = weighted_alpha(alphas[t], kv)
            same1 = y1[:, None]
            f1 = _bernoulli_copula(clamp_prob(q1), r[:, None], same1, rho_y)
            f0 = _bernoulli_copula(clamp_prob(q0), r[:, None], ~same1, rho_y)
            q1 = (1.0 - a + a * f1) * q1
            q0 = (1.0 - a + a * f0) * q0
            if record and (t + 1) % config.trace_stride == 0:
                traces.append(np.mean(np.abs(q1[:, n:] - q1_init[n:]), axis=-1))
        return q1[:, n:], (np.stack(traces, axis=1) if record else None)

    results = _run_chunks(run, seeds, config)
    q1 = np.concatenate([r[0] for r in results])
    trace = None
    if record:
        tr = np.concatenate([r[1] for r in results])
        trace = np.stack([np.full_like(tr, np.nan), np.full_like(tr, np.nan), tr], axis=-1)
    return PosteriorEnsemble(
        "classifier", x_probes, None, q1, None, q1_init[n:], seeds, n, T,
        _trace_steps(T, config.trace_stride) if record else None, trace, meta={"mode": fit.mode},
    )


# -- diagnostics and statistics -------------------------------------------


def l1_trace(ensemble: PosteriorEnsemble):
    """(steps, trace) with trace[b, t] = (||p_N - p_n||_1, ||P_N - P_n||_1, mean |p_N - p_n|)."""
    if ensemble.trace is None:
        raise ValueError("ensemble was produced without record_trace")
    return ensemble.trace_steps, ensemble.trace


def count_modes(p) -> int:
    """Strict interior local maxima of a gridded density; plateaus count once."""
    p = np.asarray(p, dtype=float)
    keep = np.concatenate([[True], np.diff(p) != 0])
    q = p[keep]
    if q.size < 3:
        return 0
    return int(np.sum((q[1:-1] > q[:-2]) & (q[1:-1] > q[2:])))


def grid_quantile(grid, P, tau: float) -> float:
    if not 0.0 < tau < 1.0:
        raise ValueError("quantile level must lie in (0, 1)")
    P = np.maximum.accumulate(np.asarray(P, dtype=float))
    idx = np.searchsorted(P, tau, side="left")
    if idx == 0:
        return float(grid[0])
    if idx >= len(P):
        return float(grid[-1])
    p_lo, p_hi = P[idx - 1], P[idx]
    w = 0.0 if p_hi == p_lo else (tau - p_lo) / (p_hi - p_lo)
    return float(grid[idx - 1] + w * (grid[idx] - grid[idx - 1]))


def parse_statistic(spec: str):
    """'mean' | 'var' | 'modes' | 'density' | 'quantile:<tau>' -> (name, tau)."""
    if spec.startswith("quantile:"):
        tau = float(spec.split(":", 1)[1])
        if not 0.0 < tau < 1.0:
            raise ValueError("quantile level must lie in (0, 1)")
        return "quantile", tau
    if spec not in ("mean", "var", "modes", "density"):
        raise ValueError(f"unsupported statistic {spec!r}")
    return spec, None


def gridstate_statistic(state: GridState, spec: str):
    name, tau = parse_statistic(spec)
    g, p = state.grid, state.p
    if name == "mean":
        return float(np.trapezoid(g * p, g) / np.trapezoid(p, g))
    if name == "var":
        mass = np.trapezoid(p, g)
        m = np.trapezoid(g * p, g) / mass
        return float(np.trapezoid((g - m) ** 2 * p, g) / mass)
    if name == "quantile":
        return grid_quantile(g, state.P, tau)
    if name == "modes":
        return count_modes(p)
    raise ValueError("density is not a scalar statistic")


def extract_statistics(ensemble: PosteriorEnsemble, spec: str) -> np.ndarray:
    """Per-trajectory statistic of a univariate ensemble."""
    if ensemble.kind != "univariate":
        raise ValueError("statistics are extracted from univariate grid ensembles")
    return np.array([gridstate_statistic(ensemble.gridstate(b), spec) for b in range(ensemble.size)])


def inverse_cdf_sample(target, u, tol: float = 1e-8, bound: float = 12.0):
    """Inverse-transform draws from a fitted predictive or a GridState.

    For a FitState, ``u`` has shape (..., d) and each coordinate is solved in
    turn from its conditional CDF by bracketed bisection (standardized
    scale, brackets grown from +/-1 up to +/-``bound``).
    """
    if isinstance(target, GridState):
        u = np.asarray(u, dtype=float)
        P = target.P
        if np.any(u < P[0]) or np.any(u > P[-1]):
            raise ValueError("probability outside the grid's CDF range; cannot bracket")
        keep = np.concatenate([[True], np.diff(P) > 0])
        return np.interp(u, P[keep], target.grid[keep])
    fit: FitState = target
    u = np.asarray(u, dtype=float)
    squeeze = fit.d == 1 and (u.ndim == 0 or u.shape[-1] != 1)
    if squeeze:
        u = u[..., None]
    if np.any(~((u > 0) & (u < 1))):
        raise ValueError("u must lie in (0, 1)")
    u = u[..., fit.ordering]  # data column order -> fitting order
    m0, s0 = fit.init_params()
    out = np.zeros(u.shape)
    rho, alphas = fit.rho(), fit.alphas()

    def cond(z, j):
        uu, lp = eval_kernel(z[..., : j + 1], fit.v_history[..., : j + 1], rho[: j + 1], alphas, m0[: j + 1],
                             s0[: j + 1], fit.config.ceiling)
        return average_state(uu, lp)[0][..., j]

    for j in range(fit.d):
        target_u = u[..., j]
        lo = np.full(target_u.shape, -1.0)
        hi = np.full(target_u.shape, 1.0)
        for _ in range(8):
            z = out.copy()
            z[..., j] = lo
            need = cond(z, j) > target_u
            if not need.any():
                break
            lo = np.where(need, np.maximum(2 * lo, -bound), lo)
        for _ in range(8):
            z = out.copy()
            z[..., j] = hi
            need = cond(z, j) < target_u
            if not need.any():
                break
            hi = np.where(need, np.minimum(2 * hi, bound), hi)
        z = out.copy()
        z[..., j] = lo
        f_lo = cond(z, j)
        z[..., j] = hi
        f_hi = cond(z, j)
        if np.any(f_lo > target_u) or np.any(f_hi < target_u):
            raise ValueError(f"failed to bracket the quantile within +/-{bound} sd")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            z[..., j] = mid
            f = cond(z, j)
            if np.all(np.abs(f - target_u) < tol):
                break
            below = f < target_u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out[..., j] = mid
    z_orig = out * fit.sd + fit.mean
    res = np.empty_like(z_orig)
    res[..., fit.ordering] = z_orig
    return res[..., 0] if squeeze else res


# -- concentration --------------------------------------------------------


def alpha_sq_tail(N: int, M: int | None, schedule) -> float:
    """sum_{i=N+1}^{M} alpha_i^2, with M = None meaning infinity."""
    if M is not None:
        if M <= N:
            return 0.0
        a = alpha(np.arange(N + 1, M + 1), schedule)
        return float(np.sum(a * a))
    if schedule is None or schedule.form == "paper_default":
        # alpha_i = 3/(i+1) - 1/i
        return float(9 * polygamma(1, N + 2) - 6.0 / (N + 1) + polygamma(1, N + 1))
    return float(schedule.a ** 2 * polygamma(1, N + 2))


def concentration_bound(eps: float, N: int, M: int | None, schedule=None) -> float:
    """2 exp{-eps^2 / (2 eps alpha_{N+1} / 3 + sum_{N+1}^{M} alpha_i^2 / 2)}."""
    denom = 2.0 * eps * float(alpha(N + 1, schedule)) / 3.0 + 0.5 * alpha_sq_tail(N, M, schedule)
    if eps == 0 or denom == 0:
        return 2.0 if eps == 0 else 0.0
    return float(2.0 * np.exp(-eps * eps / denom))


def concentration_check(fit: FitState, probes, N: int, continuation: int, trajectories: int = 5000,
                        eps=(0.02, 0.05, 0.1), seed: int = 0, workers: int | None = None) -> dict:
    """Monte Carlo frequency of |P_M(y) - P_N(y)| >= eps against the martingale bound.

    Trajectories are forward sampled from the fit up to N observations, then
    continued to M = N + continuation. For multivariate fits the first
    coordinate's marginal CDF is used.
    """
    if N < fit.n:
        raise ValueError("N must be at least the number of observations")
    probes = np.asarray(probes, dtype=float).reshape(-1, fit.d)
    nodes_std = fit.standardize(probes)
    u0, logp0 = state_at(fit, nodes_std)
    M = N + continuation
    alphas_all = alpha(np.arange(fit.n + 1, M + 1), fit.config.alpha)
    split = N - fit.n
    seeds = trajectory_seeds(seed, trajectories)
    cfg = ResampleConfig(forward_steps=M - fit.n, ensemble_size=trajectories, master_seed=seed, workers=workers)

    def run(chunk):
        u_n, lp_n, _ = _mv_chunk(u0, logp0, fit.rho(), alphas_all[:split], fit.config.ceiling, chunk, None, 1, fit.d)
        # continue each trajectory on a second, independent stream
        cont = [int(np.random.SeedSequence([s, 1]).generate_state(1, np.uint64)[0]) for s in chunk]
        b = len(chunk)
        V = np.stack([np.random.default_rng(s).random((continuation, fit.d)) for s in cont]) if continuation else None
        u, lp = u_n.copy(), lp_n.copy()
        for t in range(continuation):
            zv = ndtri(clamp_prob(V[:, t, :])).reshape(b, 1, fit.d)
            u, logfac, _ = mv_update(u, zv, fit.rho(), alphas_all[split + t], fit.config.ceiling)
            lp += logfac
        return u_n[..., 0], u[..., 0]

    results = _run_chunks(run, seeds, cfg)
    P_N = np.concatenate([r[0] for r in results])
    P_M = np.concatenate([r[1] for r in results])
    dev = np.abs(P_M - P_N)
    rows = []
    for e in eps:
        freq = float(np.max(np.mean(dev >= e, axis=0)))
        bound = concentration_bound(e, N, M, fit.config.alpha)
        limit = concentration_bound(e, N, None, fit.config.alpha)
        rows.append({"eps": float(e), "empirical": freq, "bound": bound, "limit_bound": limit,
                     "passed": bool(freq <= bound)})
    return {"N": N, "M": M, "trajectories": trajectories, "probes": probes.tolist(),
            "max_deviation": float(dev.max()), "results": rows, "passed": all(r["passed"] for r in rows)}
