from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .special import AlphaSchedule, DENSITY_CEILING, check_rho


@dataclass(frozen=True)
class InitialDensity:
    """Initial guess p_0 for the recursion.

    ``standard_normal_product`` is N(0, 1) on every standardized dimension.
    ``user_normal`` takes per-dimension means and sds on the original data
    scale. ``beta`` (regression only) shifts the initial response mean to
    beta^T x on the standardized scale.
    """

    kind: str = "standard_normal_product"
    mean: tuple[float, ...] | None = None
    sd: tuple[float, ...] | None = None
    beta: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("standard_normal_product", "user_normal"):
            raise ValueError(f"unknown initial density kind {self.kind!r}")
        if self.kind == "user_normal":
            if self.mean is None or self.sd is None:
                raise ValueError("user_normal initial density needs mean and sd")
            if len(self.mean) != len(self.sd) or any(not s > 0 for s in self.sd):
                raise ValueError("user_normal: mean/sd length mismatch or non-positive sd")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mean": None if self.mean is None else list(self.mean),
            "sd": None if self.sd is None else list(self.sd),
            "beta": None if self.beta is None else list(self.beta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InitialDensity":
        tup = lambda v: None if v is None else tuple(float(x) for x in v)  # noqa: E731
        return cls(d.get("kind", "standard_normal_product"), tup(d.get("mean")), tup(d.get("sd")), tup(d.get("beta")))


@dataclass(frozen=True)
class CopulaConfig:
    """Hyperparameters of a copula fit.

    ``rho`` holds one bandwidth per (covariate) dimension; a single value is
    broadcast. ``rho_y`` is the response bandwidth used by the regression and
    classification engines.
    """

    rho: tuple[float, ...] = (0.8,)
    alpha: AlphaSchedule = field(default_factory=AlphaSchedule)
    init: InitialDensity = field(default_factory=InitialDensity)
    permutations: int = 10
    seed: int = 0
    rho_y: float | None = None
    standardize: bool = True
    ceiling: float = DENSITY_CEILING

    def __post_init__(self):
        rho = self.rho
        if np.isscalar(rho):
            rho = (float(rho),)
        rho = tuple(float(r) for r in rho)
        object.__setattr__(self, "rho", rho)
        if rho:
            check_rho(rho)
        if self.rho_y is not None:
            check_rho(self.rho_y)
            object.__setattr__(self, "rho_y", float(self.rho_y))
        if int(self.permutations) < 1:
            raise ValueError("permutations must be >= 1")
        object.__setattr__(self, "permutations", int(self.permutations))
        object.__setattr__(self, "seed", int(self.seed))

    def rho_for(self, d: int) -> np.ndarray:
        if len(self.rho) == 1:
            return np.full(d, self.rho[0])
        if len(self.rho) != d:
            raise ValueError(f"config has {len(self.rho)} bandwidths for {d} dimensions")
        return np.asarray(self.rho, dtype=float)

    def with_(self, **kw) -> "CopulaConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "rho": list(self.rho),
            "alpha": self.alpha.to_dict(),
            "init": self.init.to_dict(),
            "permutations": self.permutations,
            "seed": self.seed,
            "rho_y": self.rho_y,
            "standardize": self.standardize,
            "ceiling": self.ceiling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CopulaConfig":
        return cls(
            rho=tuple(d["rho"]),
            alpha=AlphaSchedule.from_dict(d["alpha"]),
            init=InitialDensity.from_dict(d["init"]),
            permutations=d["permutations"],
            seed=d["seed"],
            rho_y=d.get("rho_y"),
            standardize=d.get("standardize", True),
            ceiling=d.get("ceiling", DENSITY_CEILING),
        )
