"""Probability core for logistic regression on presence-only data.

Everything here is a pure function of its inputs.  The two-level setup is:
a population whose labels follow ``pi*(x) = inverse_logit(x @ beta)``, and a
sample made of ``n_p`` presences drawn from the presence sub-population
(stratum ``z = 1``) plus ``n_u`` background units drawn from the whole
population (stratum ``z = 0``, label unobserved).

Most sample-level quantities depend on the counts only through the ratio
``r = n_p / n_1u`` (or ``n_p / (pi * n_u)`` when the prevalence is known), so
the stratum probabilities accept either a :class:`SampleCounts` or a bare
float ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class DegenerateCountError(ValueError):
    """Raised when an offset would need ``n_1u = 0`` (log of a division by zero)."""


def _as_output(values: np.ndarray):
    return float(values) if np.ndim(values) == 0 else values


def _check_open_unit(name: str, p) -> None:
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ValueError(f"{name} must lie strictly inside (0, 1), got {p!r}")


# ---------------------------------------------------------------------------
# Link functions
# ---------------------------------------------------------------------------


def logit(p):
    """Log-odds ``log(p / (1 - p))`` for ``p`` in the open unit interval."""
    _check_open_unit("p", p)
    p = np.asarray(p, dtype=float)
    return _as_output(np.log(p) - np.log1p(-p))


def inverse_logit(phi):
    """Overflow-safe logistic function."""
    phi = np.asarray(phi, dtype=float)
    e = np.exp(-np.abs(phi))
    return _as_output(np.where(phi >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e)))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    return _as_output(_softplus(np.asarray(x, dtype=float)))


def predictive_presence_prob(x_beta):
    """Full conditional of an unobserved background label given ``x @ beta``.

    Under the sample-prevalence approximation the case-control distortion
    cancels and the label is Bernoulli with the population probability.
    """
    return inverse_logit(x_beta)


# ---------------------------------------------------------------------------
# Counts and inclusion rates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleCounts:
    """Sample-level table: ``n_p`` presences, ``n_u`` background, ``n_1u`` of them present."""

    n_p: int
    n_u: int
    n_1u: int

    def __post_init__(self):
        if self.n_p < 0:
            raise ValueError(f"n_p must be non-negative, got {self.n_p}")
        if self.n_u < 1:
            raise ValueError(f"n_u must be positive, got {self.n_u}")
        if not 0 <= self.n_1u <= self.n_u:
            raise ValueError(f"n_1u must lie in [0, n_u={self.n_u}], got {self.n_1u}")

    @property
    def n_0u(self) -> int:
        return self.n_u - self.n_1u

    @property
    def ratio(self) -> float:
        """``n_p / n_1u``; the odds inflation applied to presences in the sample."""
        if self.n_1u < 1:
            raise DegenerateCountError("n_1u = 0: clamp to 1 before evaluating the offset")
        return self.n_p / self.n_1u


@dataclass(frozen=True)
class PopulationCounts:
    N: int
    N_1: int

    def __post_init__(self):
        if self.N < 1 or not 0 <= self.N_1 <= self.N:
            raise ValueError(f"need N >= 1 and 0 <= N_1 <= N, got N={self.N}, N_1={self.N_1}")

    @property
    def pi(self) -> float:
        return self.N_1 / self.N


@dataclass(frozen=True)
class InclusionRates:
    rho0: float
    rho1: float

    @property
    def ratio(self) -> float:
        return self.rho1 / self.rho0


def inclusion_identities(pop: PopulationCounts, counts: SampleCounts) -> InclusionRates:
    """Inclusion probabilities of absences and presences under the modified design.

    A presence can enter the sample through either stratum, so its rate is
    computed over the ``2 N_1`` presence rows of the augmented population.
    """
    pi = pop.pi
    if not 0.0 < pi < 1.0:
        raise ValueError(f"population prevalence must be inside (0, 1), got {pi}")
    rho0 = counts.n_0u / ((1.0 - pi) * pop.N)
    rho1 = (counts.n_1u + counts.n_p) / (2.0 * pi * pop.N)
    return InclusionRates(rho0=rho0, rho1=rho1)


def inclusion_ratio(counts: SampleCounts, pi: float) -> float:
    """``rho1 / rho0`` written through the sample counts and the prevalence."""
    _check_open_unit("pi", pi)
    return (counts.n_1u + counts.n_p) / counts.n_0u * (1.0 - pi) / (2.0 * pi)


def marginal_presence_prob(pi_star):
    """``Pr(Y = 1 | x)`` over the population augmented with its presence subset."""
    pi_star = np.asarray(pi_star, dtype=float)
    if np.any((pi_star < 0.0) | (pi_star > 1.0)):
        raise ValueError("pi_star must lie in [0, 1]")
    return _as_output(2.0 * pi_star / (1.0 + pi_star))


def inclusion_weighted_terms(pi_star, rates: InclusionRates):
    """``Pr(Y=y | C=1, x) Pr(C=1 | x)`` for ``y = 0`` and ``y = 1``."""
    pi_star = np.asarray(pi_star, dtype=float)
    absent = (1.0 - pi_star) / (1.0 + pi_star) * rates.rho0
    present = 2.0 * pi_star / (1.0 + pi_star) * rates.rho1
    return _as_output(absent), _as_output(present)


# ---------------------------------------------------------------------------
# Offsets
# ---------------------------------------------------------------------------


def case_control_offset(n1: int, n0: int, pi: float) -> float:
    """Standard case-control shift ``log(n1/n0) - logit(pi)``."""
    if n1 <= 0 or n0 <= 0:
        raise ValueError(f"case and control counts must be positive, got n1={n1}, n0={n0}")
    _check_open_unit("pi", pi)
    return math.log(n1 / n0) - (math.log(pi) - math.log1p(-pi))


def pod_offset_exact(counts: SampleCounts, pi: float) -> float:
    """Exact presence-only shift ``log((n_1u + n_p)/n_0u) - logit(pi)``; needs the hidden ``n_1u``."""
    _check_open_unit("pi", pi)
    if counts.n_0u == 0 or counts.n_1u + counts.n_p == 0:
        raise DegenerateCountError("offset undefined for an empty stratum")
    return math.log((counts.n_1u + counts.n_p) / counts.n_0u) - (math.log(pi) - math.log1p(-pi))


def pod_offset_m2(counts: SampleCounts) -> float:
    """Computable shift with the background sample prevalence: ``log((n_1u + n_p)/n_1u)``."""
    return math.log1p(counts.ratio)


def pod_offset_m1(pi: float, n_u: int, n_p: int) -> float:
    """Known-prevalence shift ``log((pi n_u + n_p)/(pi n_u))``.

    Built from the expected-count approximation of ``rho1 / rho0``, whose
    ``2 pi n_u`` denominator cancels against the doubled presence odds of the
    augmented population.  Some references drop that factor 2 from the
    inclusion ratio; the resulting shift is the same up to ``log 2``.
    """
    _check_open_unit("pi", pi)
    if n_u <= 0 or n_p < 0:
        raise ValueError(f"need n_u > 0 and n_p >= 0, got n_u={n_u}, n_p={n_p}")
    return math.log1p(n_p / (pi * n_u))


def known_prevalence_ratio(pi: float, n_u: int, n_p: int) -> float:
    """Odds inflation ``n_p / (pi n_u)`` used in place of ``n_p / n_1u`` when ``pi`` is known."""
    _check_open_unit("pi", pi)
    return n_p / (pi * n_u)


# ---------------------------------------------------------------------------
# Stratum probabilities and likelihood
# ---------------------------------------------------------------------------

CountsOrRatio = Union[SampleCounts, float]


def _ratio(counts: CountsOrRatio) -> float:
    r = counts.ratio if isinstance(counts, SampleCounts) else float(counts)
    if not (r >= 0.0 and math.isfinite(r)):
        raise DegenerateCountError(f"odds inflation ratio must be finite and >= 0, got {r}")
    return r


def stratum_prob_z1(x_beta, counts: CountsOrRatio):
    """``Pr(Z = 1 | C = 1, x) = r e^{xb} / (1 + (1 + r) e^{xb})``."""
    r = _ratio(counts)
    eta = np.asarray(x_beta, dtype=float)
    e = np.exp(-np.abs(eta))
    # divide through by e^{xb} when xb >= 0
    out = np.where(eta < 0.0, r * e / (1.0 + (1.0 + r) * e), r / (e + 1.0 + r))
    return _as_output(out)


def stratum_prob_z0(x_beta, counts: CountsOrRatio):
    """``Pr(Z = 0 | C = 1, x) = (1 + e^{xb}) / (1 + (1 + r) e^{xb})``."""
    r = _ratio(counts)
    eta = np.asarray(x_beta, dtype=float)
    e = np.exp(-np.abs(eta))
    out = np.where(eta < 0.0, (1.0 + e) / (1.0 + (1.0 + r) * e), (e + 1.0) / (e + 1.0 + r))
    return _as_output(out)


def presence_prob_in_sample(x_beta, counts: CountsOrRatio):
    """``Pr(Y = 1 | C = 1, x)``: the population link shifted by ``log(1 + r)``."""
    r = _ratio(counts)
    return inverse_logit(np.asarray(x_beta, dtype=float) + math.log1p(r))


def stratum_log_likelihood(eta_u: np.ndarray, eta_p: np.ndarray, ratio: float) -> float:
    """Observed log-likelihood from linear predictors of the two strata."""
    c = math.log1p(ratio)
    total = float(np.sum(_softplus(eta_u)) - np.sum(_softplus(eta_u + c)))
    if eta_p.size:
        if ratio == 0.0:
            return -math.inf
        total += eta_p.size * math.log(ratio) + float(np.sum(eta_p) - np.sum(_softplus(eta_p + c)))
    return total


def _split_design(beta, sample):
    beta = np.asarray(beta, dtype=float)
    X = sample.design_matrix
    if X.shape[1] != beta.shape[0]:
        raise ValueError(f"design has {X.shape[1]} columns but beta has {beta.shape[0]} entries")
    z = np.asarray(sample.z)
    eta = X @ beta
    return eta[z == 0], eta[z == 1]


def log_likelihood(beta, sample, counts: CountsOrRatio) -> float:
    """Observed-data log-likelihood of the stratum labels.

    ``sample`` is anything exposing ``design_matrix`` (intercept included) and
    ``z``; ``counts.n_p`` must equal the number of ``z = 1`` rows.
    """
    eta_u, eta_p = _split_design(beta, sample)
    if isinstance(counts, SampleCounts) and (counts.n_p != eta_p.size or counts.n_u != eta_u.size):
        raise ValueError(
            f"counts (n_p={counts.n_p}, n_u={counts.n_u}) disagree with sample "
            f"(n_p={eta_p.size}, n_u={eta_u.size})"
        )
    return stratum_log_likelihood(eta_u, eta_p, _ratio(counts))


def bernoulli_log_likelihood(beta, X: np.ndarray, y: np.ndarray) -> float:
    """Ordinary logistic log-likelihood for fully observed labels."""
    eta = X @ np.asarray(beta, dtype=float)
    return float(np.dot(y, eta) - np.sum(_softplus(eta)))


# ---------------------------------------------------------------------------
# Prior and posterior
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorSpec:
    """Independent Gaussian priors, one per coefficient."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if mean.shape != var.shape:
            raise ValueError("prior mean and variance must have the same length")
        if not np.all(var > 0.0):
            raise ValueError("prior variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @classmethod
    def isotropic(cls, k: int, mean: float = 0.0, variance: float = 25.0) -> "PriorSpec":
        return cls(np.full(k, mean), np.full(k, variance))

    def log_density(self, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != self.mean.shape:
            raise ValueError(f"beta has shape {beta.shape}, prior expects {self.mean.shape}")
        dev = beta - self.mean
        return float(-0.5 * np.sum(LOG_2PI + np.log(self.variance) + dev * dev / self.variance))


def log_posterior(beta, prior: PriorSpec, sample, counts: CountsOrRatio) -> float:
    """Unnormalised log-posterior, Gaussian normalising constants of the prior included."""
    return prior.log_density(beta) + log_likelihood(beta, sample, counts)
