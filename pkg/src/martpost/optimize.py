"""Bandwidth selection by maximising the prequential log-likelihood.

Bandwidths are searched in log-odds space with bounded scalar minimisation
along one coordinate at a time, sweeping cyclically until a sweep improves the
score by less than the tolerance. The permutation seed is held fixed, so the
objective is a deterministic function of the bandwidths.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit, logit

from .config import CopulaConfig
from .density import fit_multivariate, prequential_loglik
from .regression import classifier_prequential_loglik, fit_classifier, fit_regression, regression_prequential_loglik


RESTART_WINDOW = 1.5


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizationSpec:
    bounds: tuple[float, float] = (0.01, 0.99)
    tolerance: float = 1e-3
    max_evaluations: int = 200
    restarts: int = 3
    shared_rho: bool = True

    def __post_init__(self):
        lo, hi = self.bounds
        if not (0.0 < lo < hi < 1.0):
            raise ValueError("bandwidth bounds must satisfy 0 < lo < hi < 1")
        if self.max_evaluations < 1 or self.restarts < 0:
            raise ValueError("max_evaluations must be >= 1 and restarts >= 0")


@dataclass
class OptimizationResult:
    config: CopulaConfig
    score: float
    flat: bool
    evaluations: int
    trace: list = field(default_factory=list)  # (iteration, coordinate, rho, score)


class _Objective:
    """Score as a function of a bandwidth vector; memoised and budgeted."""

    def __init__(self, build, score, budget):
        self.build, self.score, self.budget = build, score, budget
        self.cache = {}
        self.trace = []
        self.iteration = 0

    def __call__(self, theta, coordinate):
        key = tuple(float(t) for t in theta)
        if key not in self.cache:
            if len(self.cache) >= self.budget:
                raise _Budget()
            try:
                s = float(self.score(self.build(np.asarray(key))))
            except (FloatingPointError, ValueError):
                s = -np.inf
            self.cache[key] = s if np.isfinite(s) else -np.inf
        self.iteration += 1
        self.trace.append((self.iteration, coordinate, float(theta[coordinate]) if coordinate >= 0 else float(theta[0]),
                           self.cache[key]))
        return self.cache[key]


class _Budget(Exception):
    pass


def _search(obj: _Objective, start, lo, hi, tol, window=None):
    """Cyclic coordinate search; ``window`` limits each line search to
    +/- window (log-odds) around the current value so restarts explore
    different regions."""
    theta = np.array(start, dtype=float)
    best = obj(theta, -1)
    while True:
        before = best
        for k in range(len(theta)):
            def f(z, k=k):
                trial = theta.copy()
                trial[k] = expit(z)
                return -obj(trial, k)

            zlo, zhi = logit(lo), logit(hi)
            if window is not None:
                zc = logit(theta[k])
                zlo, zhi = max(zlo, zc - window), min(zhi, zc + window)
            res = minimize_scalar(f, bounds=(zlo, zhi), method="bounded", options={"xatol": tol})
            cand = theta.copy()
            cand[k] = expit(res.x)
            val = obj(cand, k)
            if val > best:
                theta, best = cand, val
        if not best - before >= tol:
            return theta, best


def _maximise(build, score, dim, spec: OptimizationSpec, seed: int):
    obj = _Objective(build, score, spec.max_evaluations)
    lo, hi = spec.bounds
    mid = 0.5 * (lo + hi)
    rng = np.random.default_rng(seed)
    starts = [np.full(dim, mid)] + [rng.uniform(lo, hi, size=dim) for _ in range(spec.restarts)]
    best_theta, best = starts[0], -np.inf
    for r, s in enumerate(starts):
        try:
            theta, val = _search(obj, s, lo, hi, spec.tolerance, None if r == 0 else RESTART_WINDOW)
        except _Budget:
            break
        if val > best:
            best_theta, best = theta, val
    if not np.isfinite(best):
        finite = [v for v in obj.cache.values() if np.isfinite(v)]
        raise OptimizationError(f"objective was non-finite at all {len(obj.cache)} probe points "
                                f"(finite values: {len(finite)})")
    return best_theta, best, obj


def _flat_result(template, spec, dim, build):
    mid = 0.5 * sum(spec.bounds)
    return build(np.full(dim, mid)), mid


def optimize_rho(data, template: CopulaConfig, spec: OptimizationSpec | None = None, *, y=None, labels=None,
                 mode: str = "conditional") -> OptimizationResult:
    """Fit bandwidths for a density (``data``), regression (``data`` = x, ``y``)
    or classifier (``data`` = x, ``labels``) by prequential log-likelihood.

    Regression and classification optimise (rho_y, rho_x...) jointly; with
    ``shared_rho`` all covariate bandwidths share one value.
    """
    spec = spec or OptimizationSpec()
    if y is not None or labels is not None:
        x = np.asarray(data, dtype=float)
        x = x[:, None] if x.ndim == 1 else x
        n, d = x.shape
        dim = 1 + (min(d, 1) if spec.shared_rho else d)

        def build(theta):
            rx = (theta[1],) * d if spec.shared_rho and d else tuple(theta[1:])
            return template.with_(rho=rx if d else template.rho, rho_y=float(theta[0]))

        if labels is not None:
            score = lambda c: classifier_prequential_loglik(fit_classifier(x, labels, c, mode))  # noqa: E731
        else:
            score = lambda c: regression_prequential_loglik(fit_regression(x, y, c, mode))  # noqa: E731
    else:
        arr = np.asarray(data, dtype=float)
        arr = arr[:, None] if arr.ndim == 1 else arr
        n, d = arr.shape
        dim = 1 if spec.shared_rho else d

        def build(theta):
            return template.with_(rho=tuple(np.broadcast_to(theta, (d,)).tolist()) if not spec.shared_rho
                                  else (float(theta[0]),))

        score = lambda c: prequential_loglik(fit_multivariate(arr, c))  # noqa: E731

    if n < 2:
        config, mid = _flat_result(template, spec, dim, build)
        s = float(score(config))
        return OptimizationResult(config, s, True, 1, [(1, -1, mid, s)])
    theta, best, obj = _maximise(build, score, dim, spec, template.seed)
    config = build(theta)
    final = float(score(config))
    values = np.array([v for v in obj.cache.values() if np.isfinite(v)])
    flat = bool(values.size and np.ptp(values) <= 1e-12 * max(1.0, abs(final)))
    return OptimizationResult(config, final, flat, len(obj.cache), obj.trace)
