"""Synthetic populations and presence/background case-control samples.

Population units carry a mixture covariate ``x1`` (two Gaussians at +/-4,
variance 4, weight 0.165 on the upper component), a standard normal noise
covariate ``x2`` and a Bernoulli label drawn through the logistic link.
The estimation side only ever sees ``x1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import inverse_logit

SCENARIOS: dict[str, tuple[float, float, float]] = {
    "i": (0.0, 1.0, 0.0),
    "ii": (0.0, 1.0, 1.0),
    "iii": (1.0, 1.0, 1.0),
}

# Prevalences reported for the single realisation used in the original study.
REPORTED_PREVALENCE = {"i": 0.215, "ii": 0.223, "iii": 0.286}

STUDY_SIZES = (50, 100, 200, 500, 1000, 1500, 2000, 3000)


class InsufficientPresencesError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    beta_true: tuple[float, float, float]
    N: int = 10_000
    mu_a: float = 4.0
    mu_b: float = -4.0
    sigma2: float = 4.0
    p_weight: float = 0.165
    seed: "int | np.random.SeedSequence | None" = None
    name: str = ""

    def __post_init__(self):
        if len(self.beta_true) != 3:
            raise ValueError("beta_true must be (beta0, beta1, beta2)")
        if self.N < 1:
            raise ValueError(f"N must be positive, got {self.N}")
        if self.sigma2 <= 0.0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not 0.0 < self.p_weight < 1.0:
            raise ValueError(f"p_weight must lie in (0, 1), got {self.p_weight}")

    @classmethod
    def named(cls, name: str, **kwargs) -> "ScenarioSpec":
        try:
            beta = SCENARIOS[name]
        except KeyError:
            raise ValueError(f"unknown scenario {name!r}; expected one of {sorted(SCENARIOS)}") from None
        return cls(beta_true=beta, name=name, **kwargs)


@dataclass(frozen=True)
class Population:
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if not (self.x1.shape == self.x2.shape == self.y.shape):
            raise ValueError("population columns must have equal length")

    @property
    def N(self) -> int:
        return int(self.y.size)

    @property
    def pi_true(self) -> float:
        return float(np.mean(self.y))

    @property
    def unit_id(self) -> np.ndarray:
        return np.arange(self.N)


@dataclass(frozen=True)
class SealedTruth:
    """True labels of the background rows, kept apart from anything a fit sees."""

    unit_id: np.ndarray
    y: np.ndarray

    def labels_for(self, unit_ids: np.ndarray) -> np.ndarray:
        lookup = dict(zip(self.unit_id.tolist(), self.y.tolist()))
        try:
            return np.array([lookup[int(u)] for u in unit_ids], dtype=np.int8)
        except KeyError as exc:
            raise ValueError(f"no true label for unit {exc.args[0]}") from None


@dataclass(frozen=True)
class CaseControlSample:
    """Presence rows (``z = 1``) followed by background rows (``z = 0``).

    ``x`` holds covariates without the intercept column; ``truth`` is only
    populated for simulated data and is ignored by the presence-only fits.
    """

    unit_id: np.ndarray
    x: np.ndarray
    z: np.ndarray
    columns: tuple[str, ...] = ("x1",)
    truth: SealedTruth | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.int8))
        object.__setattr__(self, "unit_id", np.asarray(self.unit_id, dtype=np.int64))
        if not (x.shape[0] == self.z.size == self.unit_id.size):
            raise ValueError("unit_id, x and z must have the same number of rows")
        if x.shape[1] != len(self.columns):
            raise ValueError(f"x has {x.shape[1]} columns but {len(self.columns)} names were given")
        if not np.all((self.z == 0) | (self.z == 1)):
            raise ValueError("z must be 0/1")

    @property
    def n_p(self) -> int:
        return int(np.sum(self.z == 1))

    @property
    def n_u(self) -> int:
        return int(np.sum(self.z == 0))

    @property
    def design_matrix(self) -> np.ndarray:
        return np.column_stack([np.ones(self.x.shape[0]), self.x])

    def observed(self) -> "CaseControlSample":
        """Copy without the sealed labels."""
        return replace(self, truth=None)

    def background_labels(self) -> np.ndarray:
        if self.truth is None:
            raise ValueError("sample carries no true labels")
        return self.truth.labels_for(self.unit_id[self.z == 0])


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def generate_population(spec: ScenarioSpec) -> Population:
    rng = _rng(spec.seed)
    N = spec.N
    upper = rng.random(N) < spec.p_weight
    x1 = np.where(upper, spec.mu_a, spec.mu_b) + math.sqrt(spec.sigma2) * rng.standard_normal(N)
    x2 = rng.standard_normal(N)
    b0, b1, b2 = spec.beta_true
    y = (rng.random(N) < inverse_logit(b0 + b1 * x1 + b2 * x2)).astype(np.int8)
    return Population(x1=x1, x2=x2, y=y)


def sample_design(pop: Population, n: int, seed=None) -> CaseControlSample:
    """Draw ``n/5`` presences and ``4n/5`` background units, each without replacement.

    The two draws are independent, so a unit may appear in both strata.
    """
    if n <= 0 or n % 5:
        raise ValueError(f"sample size must be a positive multiple of 5, got {n}")
    n_p, n_u = n // 5, 4 * n // 5
    presences = np.flatnonzero(pop.y == 1)
    if presences.size < n_p:
        raise InsufficientPresencesError(
            f"population has {presences.size} presences, sample needs {n_p}"
        )
    if n_u > pop.N:
        raise ValueError(f"background size {n_u} exceeds population size {pop.N}")
    rng = _rng(seed)
    idx_p = np.sort(rng.choice(presences, size=n_p, replace=False))
    idx_u = np.sort(rng.choice(pop.N, size=n_u, replace=False))
    unit_id = np.concatenate([idx_p, idx_u])
    z = np.concatenate([np.ones(n_p, np.int8), np.zeros(n_u, np.int8)])
    truth = SealedTruth(unit_id=idx_u.copy(), y=pop.y[idx_u].copy())
    return CaseControlSample(unit_id=unit_id, x=pop.x1[unit_id], z=z, truth=truth)


def draw_evaluation_set(pop: Population, size: int = 2000, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Uniform draw of labelled units for scoring classifiers; returns ``(x1, y)``."""
    if not 0 < size <= pop.N:
        raise ValueError(f"evaluation size must be in [1, {pop.N}], got {size}")
    idx = np.sort(_rng(seed).choice(pop.N, size=size, replace=False))
    return pop.x1[idx], pop.y[idx]
