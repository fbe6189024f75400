"""Bayesian and Efron bootstraps over weighted empirical distributions.

Both bootstraps reduce to a matrix of atom weights (B, n): Dirichlet(1, ..., 1)
draws for the Bayesian bootstrap, multinomial counts / n for Efron's, and
Polya-urn colour proportions for the urn form of the Bayesian bootstrap. A
statistic maps data plus weights to one value per replicate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .resampling import PosteriorEnsemble, _urn_atoms, _urn_draws, parse_statistic


class UnsupportedStatistic(ValueError):
    pass


@dataclass(frozen=True)
class WeightedLoss:
    """theta = argmin sum_i w_i loss(theta, y_i), searched on ``bounds``.

    ``bounds`` defaults to the data range, which contains the minimiser of
    any loss that is convex and minimised at a data point.
    """

    loss: Callable[[float, np.ndarray], np.ndarray]
    bounds: tuple[float, float] | None = None
    name: str = "weighted_loss"

    def __call__(self, y, w):
        lo, hi = self.bounds if self.bounds is not None else (float(y.min()), float(y.max()))
        if lo == hi:
            return np.full(w.shape[0], lo)
        out = np.empty(w.shape[0])
        for b in range(w.shape[0]):
            res = minimize_scalar(lambda t: float(np.dot(w[b], self.loss(t, y))), bounds=(lo, hi),
                                  method="bounded", options={"xatol": 1e-10})
            out[b] = res.x
        return out


def weighted_mean(y, w):
    return w @ y


def weighted_var(y, w):
    m = w @ y
    return np.einsum("bi,bi->b", w, (y[None, :] - m[:, None]) ** 2)


def weighted_quantile(y, w, tau):
    """Left-continuous inverse of the weighted empirical CDF."""
    order = np.argsort(y, kind="stable")
    ys = y[order]
    cw = np.cumsum(w[:, order], axis=1)
    cw /= cw[:, -1:]
    idx = np.array([np.searchsorted(row, tau - 1e-12, side="left") for row in cw])
    return ys[np.minimum(idx, len(ys) - 1)]


def resolve_statistic(statistic) -> Callable:
    """Map a statistic spec ('mean', 'var', 'quantile:tau') or WeightedLoss to f(y, w)."""
    if callable(statistic):
        return statistic
    try:
        name, tau = parse_statistic(statistic)
    except ValueError as err:
        raise UnsupportedStatistic(str(err)) from None
    if name == "mean":
        return weighted_mean
    if name == "var":
        return weighted_var
    if name == "quantile":
        return lambda y, w: weighted_quantile(y, w, tau)
    raise UnsupportedStatistic(f"statistic {statistic!r} is not defined for weighted atoms")


def _data(data) -> np.ndarray:
    y = np.asarray(data, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("bootstrap needs at least one observation")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"non-finite value at row {int(np.argmin(np.isfinite(y)))}")
    return y


def dirichlet_weights(n: int, B: int, seed: int) -> np.ndarray:
    e = np.random.default_rng(seed).standard_exponential((B, n))
    return e / e.sum(axis=1, keepdims=True)


def multinomial_weights(n: int, B: int, seed: int) -> np.ndarray:
    idx = np.random.default_rng(seed).integers(0, n, size=(B, n))
    counts = np.zeros((B, n))
    np.add.at(counts, (np.repeat(np.arange(B), n), idx.ravel()), 1.0)
    return counts / n


def polya_weights(n: int, B: int, seed: int, forward_steps: int) -> np.ndarray:
    """Colour proportions of a Polya urn started with one ball per atom."""
    rng = np.random.default_rng(seed)
    J = np.stack([_urn_draws(rng, n, forward_steps) for _ in range(B)])
    atoms = _urn_atoms(J, n)
    counts = np.ones((B, n))
    np.add.at(counts, (np.repeat(np.arange(B), forward_steps), atoms.ravel()), 1.0)
    return counts / (n + forward_steps)


def _ensemble(kind, y, w, statistic, seed, meta) -> PosteriorEnsemble:
    f = resolve_statistic(statistic)
    values = np.asarray(f(y, w), dtype=float)
    label = statistic if isinstance(statistic, str) else getattr(statistic, "name", "custom")
    return PosteriorEnsemble(kind, np.empty(0), None, None, None, None, (seed,), len(y), 0, values=values,
                             meta={"statistic": label, **meta})


def bayesian_bootstrap(data, statistic="mean", B: int = 1000, seed: int = 0) -> PosteriorEnsemble:
    y = _data(data)
    resolve_statistic(statistic)
    return _ensemble("bayesian_bootstrap", y, dirichlet_weights(len(y), B, seed), statistic, seed, {})


def efron_bootstrap(data, statistic="mean", B: int = 1000, seed: int = 0) -> PosteriorEnsemble:
    y = _data(data)
    resolve_statistic(statistic)
    return _ensemble("efron_bootstrap", y, multinomial_weights(len(y), B, seed), statistic, seed, {})


def polya_bootstrap(data, statistic="mean", B: int = 1000, seed: int = 0, forward_steps: int = 2000) -> PosteriorEnsemble:
    """Bayesian bootstrap by forward sampling the empirical predictive (Polya urn)."""
    y = _data(data)
    resolve_statistic(statistic)
    w = polya_weights(len(y), B, seed, forward_steps)
    return _ensemble("polya_bootstrap", y, w, statistic, seed, {"forward_steps": forward_steps})
