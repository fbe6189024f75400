"""Conjugate normal model y ~ N(theta, 1), theta ~ N(0, 1).

Used as an analytic oracle: forward sampling from the posterior predictive
N(theta_bar_n, 1 + sigma_bar_n^2) makes theta_bar a martingale whose limit is
distributed as the Bayes posterior N(theta_bar_n, sigma_bar_n^2).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import fit_kernel
from .resampling import trajectory_seeds

# n = 10 values with sum 20.24, so the posterior mean is 20.24 / 11 = 1.84.
PINNED_DATA = np.array([2.31, 0.87, 3.05, 1.62, 2.48, 1.19, 2.96, 1.74, 2.20, 1.82])


@dataclass(frozen=True)
class NormalModelState:
    n_eff: int = 0
    sum_y: float = 0.0

    @property
    def mean(self) -> float:
        return self.sum_y / (self.n_eff + 1)

    @property
    def var(self) -> float:
        return 1.0 / (self.n_eff + 1)

    @property
    def predictive_sd(self) -> float:
        return float(np.sqrt(1.0 + self.var))

    def update(self, y: float) -> "NormalModelState":
        return NormalModelState(self.n_eff + 1, self.sum_y + float(y))

    @classmethod
    def from_data(cls, data) -> "NormalModelState":
        y = np.asarray(data, dtype=float).ravel()
        return cls(int(y.size), float(y.sum()))


def exact_posterior(data) -> tuple[float, float]:
    s = NormalModelState.from_data(data)
    return s.mean, s.var


def terminal_variance(n: int, N: int) -> float:
    """Var(theta_bar_N | y_{1:n}) = 1/(n+1) - 1/(N+1)."""
    return 1.0 / (n + 1) - 1.0 / (N + 1)


@dataclass
class ForwardSample:
    terminal: np.ndarray  # (B,) theta_bar_N
    paths: np.ndarray | None  # (B, T + 1) theta_bar_{n+i}, i = 0..T
    seeds: tuple
    state: NormalModelState
    forward_steps: int


def forward_sample_posterior_mean(state: NormalModelState, forward_steps: int, B: int, seed: int = 0,
                                  record_paths: bool = False) -> ForwardSample:
    """Draw Y_{i+1} from the current predictive and update, B trajectories."""
    if forward_steps < 1:
        raise ValueError("forward_steps must be >= 1")
    seeds = trajectory_seeds(seed, B)
    Z = np.stack([np.random.default_rng(s).standard_normal(forward_steps) for s in seeds])
    n = state.n_eff
    sums = np.full(B, state.sum_y)
    paths = np.empty((B, forward_steps + 1)) if record_paths else None
    if record_paths:
        paths[:, 0] = state.mean
    for t in range(forward_steps):
        k = n + t
        mean = sums / (k + 1)
        y = mean + np.sqrt(1.0 + 1.0 / (k + 1)) * Z[:, t]
        sums = sums + y
        if record_paths:
            paths[:, t + 1] = sums / (k + 2)
    return ForwardSample(sums / (n + forward_steps + 1), paths, seeds, state, forward_steps)


def predictive_logpdf_sequence(data) -> np.ndarray:
    """log p_{i-1}(y_i) under the conjugate predictives, i = 1..n."""
    y = np.asarray(data, dtype=float).ravel()
    k = np.arange(len(y))
    prev_sum = np.concatenate([[0.0], np.cumsum(y)[:-1]])
    mean = prev_sum / (k + 1)
    var = 1.0 + 1.0 / (k + 1)
    return -0.5 * np.log(2 * np.pi * var) - 0.5 * (y - mean) ** 2 / var


def copula_mimic_logpdf_sequence(data) -> np.ndarray:
    """The copula recursion configured to reproduce the conjugate predictives.

    With alpha_i = 1, p_0 = N(0, 2) and step bandwidth rho = 1/(i+2) (the
    correlation between two future draws given i observations), each copula
    update maps N(theta_bar_i, 1 + sigma_bar_i^2) exactly to its successor.
    """
    y = np.asarray(data, dtype=float).ravel()
    n = len(y)
    rho = (1.0 / (np.arange(n) + 2.0))[:, None]
    _, preq = fit_kernel(y[None, :, None], rho, np.ones(n), np.zeros(1), np.full(1, np.sqrt(2.0)), np.inf)
    return preq[0, :, 0]
