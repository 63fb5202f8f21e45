"""Metropolis-within-Gibbs sampler with data augmentation of background labels.

One iteration:

1. take ``n_1u`` from the current augmented labels (clamped to at least 1),
2. random-walk Metropolis update of ``beta`` against the observed-stratum
   likelihood whose offset is built from that ``n_1u``,
3. redraw every background label from ``Bernoulli(inverse_logit(x_i beta))``.

Three estimators share the loop:

``M0``  labels of the background rows are observed; ordinary logistic
        likelihood on those rows, no augmentation.
``M1``  prevalence known; the offset is fixed at ``log(1 + n_p / (pi n_u))``.
        Labels are still redrawn so a predictive prevalence can be reported.
``M2``  prevalence unknown; the offset follows the augmented ``n_1u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .model import (
    PriorSpec,
    bernoulli_log_likelihood,
    known_prevalence_ratio,
    predictive_presence_prob,
    stratum_log_likelihood,
)

VARIANTS = ("M0", "M1", "M2")


@dataclass(frozen=True)
class EstimatorSpec:
    variant: str = "M2"
    known_pi: float | None = None

    def __post_init__(self):
        variant = self.variant.upper()
        if variant not in VARIANTS:
            raise ValueError(f"unknown estimator {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "variant", variant)
        if variant == "M1":
            if self.known_pi is None or not 0.0 < self.known_pi < 1.0:
                raise ValueError("M1 requires known_pi strictly inside (0, 1)")
        elif self.known_pi is not None:
            raise ValueError(f"{variant} does not take a known prevalence")


@dataclass(frozen=True)
class SamplerConfig:
    burn_in: int = 10_000
    keep: int = 5_000
    proposal_scale: float | tuple[float, ...] = 0.1
    adapt: bool = True
    seed: int = 0
    model: EstimatorSpec = field(default_factory=EstimatorSpec)
    thin: int = 1
    prior_mean: float = 0.0
    prior_variance: float = 25.0
    target_accept: float = 0.3

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.keep < 1:
            raise ValueError(f"keep must be >= 1, got {self.keep}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if np.any(np.asarray(self.proposal_scale, dtype=float) <= 0.0):
            raise ValueError("proposal scales must be positive")
        if self.prior_variance <= 0.0:
            raise ValueError("prior variance must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target acceptance must lie in (0, 1)")

    def prior(self, k: int) -> PriorSpec:
        return PriorSpec.isotropic(k, self.prior_mean, self.prior_variance)

    def scales(self, k: int) -> np.ndarray:
        s = np.asarray(self.proposal_scale, dtype=float)
        if s.ndim == 0:
            return np.full(k, float(s))
        if s.shape != (k,):
            raise ValueError(f"need {k} proposal scales, got {s.size}")
        return s.copy()


class ChainTarget:
    """A sample, an estimator and a prior bound into one evaluable posterior."""

    def __init__(self, sample, estimator: EstimatorSpec, prior: PriorSpec):
        X = sample.design_matrix
        z = np.asarray(sample.z)
        self.X_u = np.ascontiguousarray(X[z == 0])
        self.X_p = np.ascontiguousarray(X[z == 1])
        self.n_u = self.X_u.shape[0]
        self.n_p = self.X_p.shape[0]
        self.k = X.shape[1]
        self.estimator = estimator
        self.prior = prior
        if prior.mean.shape != (self.k,):
            raise ValueError(f"prior has {prior.mean.size} coefficients, design has {self.k}")
        if self.n_u < 1:
            raise ValueError("background sample is empty")
        self.y_obs = None
        self.fixed_ratio = None
        if estimator.variant == "M0":
            self.y_obs = np.asarray(sample.background_labels(), dtype=np.int8)
        elif estimator.variant == "M1":
            self.fixed_ratio = known_prevalence_ratio(estimator.known_pi, self.n_u, self.n_p)

    @property
    def offset_tracks_augmentation(self) -> bool:
        return self.estimator.variant == "M2"

    def ratio(self, n_1u: int) -> float:
        if self.fixed_ratio is not None:
            return self.fixed_ratio
        return self.n_p / max(n_1u, 1)

    def log_likelihood(self, beta: np.ndarray, n_1u: int) -> float:
        if self.y_obs is not None:
            return bernoulli_log_likelihood(beta, self.X_u, self.y_obs)
        return stratum_log_likelihood(self.X_u @ beta, self.X_p @ beta, self.ratio(n_1u))

    def log_posterior(self, beta: np.ndarray, n_1u: int) -> float:
        return self.prior.log_density(beta) + self.log_likelihood(beta, n_1u)


@dataclass(frozen=True)
class ChainState:
    beta: np.ndarray
    y_u: np.ndarray
    n_1u: int
    log_post: float


@dataclass(frozen=True)
class ChainOutput:
    beta_draws: np.ndarray
    n_1u_trace: np.ndarray
    acceptance_rate: float
    n_u: int
    proposal_scale: np.ndarray
    log_post_trace: np.ndarray

    @property
    def pi_hat(self) -> float:
        """Ergodic mean of the augmented presence count over the background size."""
        return float(np.mean(self.n_1u_trace)) / self.n_u

    @property
    def keep(self) -> int:
        return self.beta_draws.shape[0]


@dataclass(frozen=True)
class PosteriorSummary:
    beta_mean: np.ndarray
    beta_sd: np.ndarray
    beta_quantiles: dict[float, np.ndarray]
    pi_hat: float
    acceptance_rate: float
    draws: int

    def to_dict(self) -> dict:
        return {
            "beta_mean": self.beta_mean.tolist(),
            "beta_sd": self.beta_sd.tolist(),
            "beta_quantiles": {str(q): v.tolist() for q, v in self.beta_quantiles.items()},
            "pi_hat": self.pi_hat,
            "acceptance_rate": self.acceptance_rate,
            "draws": self.draws,
        }


def _clamp(n: int) -> int:
    # offset log((n_1u + n_p) / n_1u) is undefined at n_1u = 0
    return max(int(n), 1)


def init_chain(target: ChainTarget, rng: np.random.Generator) -> ChainState:
    beta = target.prior.mean.copy()
    if target.y_obs is not None:
        y_u = target.y_obs.copy()
        n_1u = int(y_u.sum())
    else:
        y_u = (rng.random(target.n_u) < 0.5).astype(np.int8)
        n_1u = _clamp(y_u.sum())
    return ChainState(beta=beta, y_u=y_u, n_1u=n_1u, log_post=target.log_posterior(beta, n_1u))


def mh_update_beta(
    state: ChainState, target: ChainTarget, scale: np.ndarray, rng: np.random.Generator
) -> tuple[ChainState, bool]:
    """Joint Gaussian random-walk step on ``beta``; returns the new state and whether it moved."""
    proposal = state.beta + scale * rng.standard_normal(target.k)
    u = rng.random()
    lp = target.log_posterior(proposal, state.n_1u)
    if not math.isfinite(lp):
        return state, False
    delta = lp - state.log_post
    if delta >= 0.0 or u < math.exp(delta):
        return replace(state, beta=proposal, log_post=lp), True
    return state, False


def gibbs_augment(state: ChainState, target: ChainTarget, rng: np.random.Generator) -> ChainState:
    """Redraw all background labels from their full conditional."""
    p = predictive_presence_prob(target.X_u @ state.beta)
    y_u = (rng.random(target.n_u) < p).astype(np.int8)
    n_1u = _clamp(y_u.sum())
    log_post = state.log_post
    if target.offset_tracks_augmentation and n_1u != state.n_1u:
        log_post = target.log_posterior(state.beta, n_1u)
    return ChainState(beta=state.beta, y_u=y_u, n_1u=n_1u, log_post=log_post)


class _ScaleAdapter:
    """Burn-in tuning of the random-walk scales, applied between blocks and frozen afterwards.

    A Robbins-Monro multiplier steers the block acceptance rate toward the
    target.  From a fifth of the burn-in on, the per-coefficient shape follows
    the running standard deviation of the draws (times 2.38/sqrt(k)).
    """

    def __init__(self, scale: np.ndarray, burn_in: int, target_accept: float):
        self.base = scale.copy()
        self.log_mult = 0.0
        self.target_accept = target_accept
        self.stats_from = burn_in // 10
        self.reshape_from = burn_in // 5 if burn_in >= 200 else None
        self._reshaped = False
        self._blocks = 0
        self._n = 0
        self._mean = np.zeros_like(scale)
        self._m2 = np.zeros_like(scale)

    @property
    def scale(self) -> np.ndarray:
        return math.exp(self.log_mult) * self.base

    def update(self, start: int, accepted: np.ndarray, draws: np.ndarray) -> None:
        """Absorb a block of iterations ``start .. start + len(accepted) - 1``."""
        self._blocks += 1
        self.log_mult += self._blocks**-0.6 * (float(np.mean(accepted)) - self.target_accept)
        skip = max(self.stats_from - start, 0)
        for beta in draws[skip:]:
            self._n += 1
            d = beta - self._mean
            self._mean += d / self._n
            self._m2 += d * (beta - self._mean)
        end = start + len(accepted)
        if self.reshape_from is not None and end >= self.reshape_from and self._n >= 2:
            sd = np.sqrt(self._m2 / (self._n - 1))
            if np.all(np.isfinite(sd)) and np.all(sd > 0.0):
                self.base = 2.38 / math.sqrt(sd.size) * sd
                if not self._reshaped:
                    self.log_mult = 0.0
                    self._reshaped = True


ADAPT_BLOCK = 50
SAMPLE_BLOCK = 250


def build_target(sample, config: SamplerConfig) -> ChainTarget:
    return ChainTarget(sample, config.model, config.prior(sample.design_matrix.shape[1]))


def _kernel_mode(target: ChainTarget) -> int:
    return {"M0": _kernels.MODE_OBSERVED, "M1": _kernels.MODE_FIXED_OFFSET, "M2": _kernels.MODE_AUGMENTED_OFFSET}[
        target.estimator.variant
    ]


def _blocks(burn_in: int, total: int):
    t = 0
    while t < total:
        size = ADAPT_BLOCK if t < burn_in else SAMPLE_BLOCK
        end = min(t + size, burn_in) if t < burn_in else min(t + size, total)
        yield t, end
        t = end


def run_chain(sample, config: SamplerConfig) -> ChainOutput:
    """Run burn-in plus ``keep * thin`` iterations and retain every ``thin``-th draw.

    Random numbers come from ``numpy.random.default_rng(config.seed)`` in a
    fixed order: the initial labels, then per block the proposal normals, the
    acceptance uniforms and (unless labels are observed) the label uniforms.
    """
    target = build_target(sample, config)
    rng = np.random.default_rng(config.seed)
    state = init_chain(target, rng)
    mode = _kernel_mode(target)
    augment = target.y_obs is None
    scale = config.scales(target.k)
    adapter = _ScaleAdapter(scale, config.burn_in, config.target_accept) if config.adapt else None

    beta = state.beta.copy()
    y_u = state.y_u.copy()
    n_1u = state.n_1u
    eta_u, e_u = np.empty(target.n_u), np.empty(target.n_u)
    eta_p, e_p = np.empty(target.n_p), np.empty(target.n_p)
    _kernels.linear_predictor(target.X_u, beta, eta_u, e_u)
    _kernels.linear_predictor(target.X_p, beta, eta_p, e_p)
    y_obs = target.y_obs.astype(np.float64) if target.y_obs is not None else np.zeros(0)
    fixed_ratio = target.fixed_ratio if target.fixed_ratio is not None else 0.0
    log_post = _kernels.log_target(
        mode, eta_u, e_u, eta_p, e_p, y_obs, target.ratio(n_1u), beta, target.prior.mean, target.prior.variance
    )

    total = config.burn_in + config.keep * config.thin
    beta_draws = np.empty((config.keep, target.k))
    n_1u_trace = np.empty(config.keep, dtype=np.int64)
    lp_trace = np.empty(config.keep)
    accepted_after_burn = 0
    no_labels = np.empty((0, target.n_u))

    for start, end in _blocks(config.burn_in, total):
        size = end - start
        burning = start < config.burn_in
        step_scale = adapter.scale if (adapter is not None and burning) else scale
        normals = rng.standard_normal((size, target.k))
        u_accept = rng.random(size)
        u_labels = rng.random((size, target.n_u)) if augment else no_labels
        out_beta = np.empty((size, target.k))
        out_n1u = np.empty(size, dtype=np.int64)
        out_lp = np.empty(size)
        out_acc = np.empty(size, dtype=np.bool_)
        n_1u, log_post = _kernels.run_block(
            mode, target.X_u, target.X_p, y_obs, fixed_ratio, target.prior.mean, target.prior.variance,
            beta, y_u, n_1u, log_post, eta_u, e_u, eta_p, e_p, step_scale,
            normals, u_accept, u_labels, out_beta, out_n1u, out_lp, out_acc,
        )
        if burning:
            if adapter is not None:
                adapter.update(start, out_acc, out_beta)
                if end == config.burn_in:
                    scale = adapter.scale
            continue
        accepted_after_burn += int(out_acc.sum())
        offset = start - config.burn_in
        first = (-offset) % config.thin
        idx = np.arange(first, size, config.thin)
        rows = (offset + idx) // config.thin
        beta_draws[rows] = out_beta[idx]
        n_1u_trace[rows] = out_n1u[idx]
        lp_trace[rows] = out_lp[idx]

    return ChainOutput(
        beta_draws=beta_draws,
        n_1u_trace=n_1u_trace,
        acceptance_rate=accepted_after_burn / (config.keep * config.thin),
        n_u=target.n_u,
        proposal_scale=np.asarray(scale, dtype=float),
        log_post_trace=lp_trace,
    )


def summarize(output: ChainOutput, quantiles: tuple[float, ...] = (0.025, 0.5, 0.975)) -> PosteriorSummary:
    draws = output.beta_draws
    return PosteriorSummary(
        beta_mean=draws.mean(axis=0),
        beta_sd=draws.std(axis=0),
        beta_quantiles={q: np.quantile(draws, q, axis=0) for q in quantiles},
        pi_hat=output.pi_hat,
        acceptance_rate=output.acceptance_rate,
        draws=output.keep,
    )
