from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from pobayes.model import (
    DegenerateCountError,
    InclusionRates,
    PopulationCounts,
    PriorSpec,
    SampleCounts,
    case_control_offset,
    inclusion_identities,
    inclusion_ratio,
    inclusion_weighted_terms,
    inverse_logit,
    known_prevalence_ratio,
    log_likelihood,
    log_posterior,
    logit,
    marginal_presence_prob,
    pod_offset_exact,
    pod_offset_m1,
    pod_offset_m2,
    predictive_presence_prob,
    presence_prob_in_sample,
    stratum_prob_z0,
    stratum_prob_z1,
)


@dataclass
class ToySample:
    """Minimal stand-in exposing what the likelihood needs."""

    design_matrix: np.ndarray
    z: np.ndarray


def toy_sample(rng, n_p, n_u, k=2):
    X = np.column_stack([np.ones(n_p + n_u), rng.normal(size=(n_p + n_u, k - 1))])
    z = np.r_[np.ones(n_p, int), np.zeros(n_u, int)]
    return ToySample(X, z)


# -- link functions ---------------------------------------------------------


def test_logit_examples():
    assert logit(0.5) == 0.0
    assert logit(0.75) == pytest.approx(math.log(3), abs=1e-15)
    for p in (1e-6, 0.3, 1 - 1e-6):
        assert inverse_logit(logit(p)) == pytest.approx(p, abs=1e-12)


def test_logit_rejects_boundary():
    with pytest.raises(ValueError):
        logit(0.0)
    with pytest.raises(ValueError):
        logit(1.0)


def test_inverse_logit_examples():
    assert inverse_logit(0.0) == 0.5
    assert 1 - 1e-15 < inverse_logit(40.0) <= 1.0
    assert inverse_logit(math.log(3)) == pytest.approx(0.75, abs=1e-15)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        out = inverse_logit(np.array([-800.0, 800.0]))
    assert out[0] == 0.0 and out[1] == 1.0


def test_predictive_probability_saturates():
    assert predictive_presence_prob(0.0) == 0.5
    assert 0.0 <= predictive_presence_prob(-40.0) < 1e-15


# -- offsets ------------------------------------------------------------------


def test_case_control_offset_examples():
    assert case_control_offset(100, 400, 0.2) == pytest.approx(0.0, abs=1e-15)
    assert case_control_offset(70, 70, 0.5) == 0.0
    assert case_control_offset(50, 200, 0.1) == pytest.approx(math.log(0.25) - math.log(1 / 9), abs=1e-14)


def test_pod_offset_m2_examples():
    assert pod_offset_m2(SampleCounts(n_p=0, n_u=200, n_1u=50)) == 0.0
    assert pod_offset_m2(SampleCounts(n_p=100, n_u=400, n_1u=100)) == pytest.approx(math.log(2), abs=1e-15)
    assert pod_offset_m2(SampleCounts(n_p=100, n_u=400, n_1u=80)) == pytest.approx(math.log(2.25), abs=1e-15)


def test_pod_offset_m2_degenerate():
    with pytest.raises(DegenerateCountError):
        pod_offset_m2(SampleCounts(n_p=10, n_u=40, n_1u=0))


def test_pod_offset_m1_examples():
    assert pod_offset_m1(0.5, 400, 0) == 0.0
    assert pod_offset_m1(0.25, 400, 100) == pytest.approx(math.log(2), abs=1e-15)
    assert known_prevalence_ratio(0.25, 400, 100) == 1.0


@pytest.mark.parametrize("pi,n_u,n_p", [(0.25, 400, 100), (0.125, 800, 160), (0.5, 2, 7), (0.375, 1600, 400)])
def test_offsets_coincide_when_expected_count_is_integral(pi, n_u, n_p):
    n_1u = pi * n_u
    assert n_1u == int(n_1u)
    assert pod_offset_m2(SampleCounts(n_p, n_u, int(n_1u))) == pod_offset_m1(pi, n_u, n_p)


def test_offsets_close_when_expected_count_is_rounded():
    rng = np.random.default_rng(3)
    for _ in range(200):
        pi = rng.uniform(0.05, 0.95)
        n_u = int(rng.integers(20, 3000))
        n_p = int(rng.integers(0, 800))
        k_exact = pi * n_u
        k = max(round(k_exact), 1)
        bound = abs(math.log((k + n_p) / k) - math.log((k_exact + n_p) / k_exact))
        diff = abs(pod_offset_m2(SampleCounts(n_p, n_u, k)) - pod_offset_m1(pi, n_u, n_p))
        assert diff <= bound + 1e-12


def test_exact_offset_reduces_to_known_form_at_expected_counts():
    # with n_1u = pi n_u and n_0u = (1 - pi) n_u the exact shift is the known-prevalence one
    pi, n_u, n_p = 0.25, 400, 100
    counts = SampleCounts(n_p, n_u, 100)
    assert pod_offset_exact(counts, pi) == pytest.approx(pod_offset_m1(pi, n_u, n_p), abs=1e-14)


# -- stratum probabilities ---------------------------------------------------


def test_stratum_probability_examples():
    counts = SampleCounts(n_p=50, n_u=200, n_1u=50)
    assert stratum_prob_z1(0.0, counts) == pytest.approx(1 / 3, abs=1e-15)
    assert stratum_prob_z1(np.array([-3.0, 0.0, 7.0]), 0.0).tolist() == [0.0, 0.0, 0.0]


@given(
    eta=st.floats(-30, 30),
    n_p=st.integers(0, 5000),
    n_1u=st.integers(1, 5000),
)
def test_stratum_probabilities_normalise(eta, n_p, n_1u):
    r = n_p / n_1u
    total = stratum_prob_z1(eta, r) + stratum_prob_z0(eta, r)
    assert abs(total - 1.0) <= 1e-14


def test_stratum_probabilities_are_finite_at_extremes():
    eta = np.array([-1e4, -40.0, 40.0, 1e4])
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        p1 = stratum_prob_z1(eta, 2.5)
        p0 = stratum_prob_z0(eta, 2.5)
    assert np.all(np.isfinite(p1)) and np.all(np.isfinite(p0))
    assert p1[-1] == pytest.approx(2.5 / 3.5)


def _plain_z1(eta, n_p, n_1u):
    r = Fraction(n_p, n_1u)
    e = Fraction(math.exp(eta))
    return r * e / (1 + (1 + r) * e)


def test_stratum_probability_matches_exact_arithmetic():
    rng = np.random.default_rng(11)
    for _ in range(300):
        eta = float(rng.uniform(-8, 8))
        n_p, n_1u = int(rng.integers(0, 400)), int(rng.integers(1, 400))
        assert stratum_prob_z1(eta, n_p / n_1u) == pytest.approx(float(_plain_z1(eta, n_p, n_1u)), rel=1e-13, abs=1e-300)


# -- the three identities ----------------------------------------------------


def marginal_presence_by_enumeration(n_units: int, n_present: int) -> Fraction:
    """Stack a finite population with a copy of its presences and count labels."""
    rows = [1] * n_present + [0] * (n_units - n_present) + [1] * n_present
    return Fraction(sum(rows), len(rows))


def test_marginal_presence_examples():
    assert marginal_presence_prob(0.0) == 0.0
    assert marginal_presence_prob(1.0) == 1.0
    assert marginal_presence_prob(1 / 3) == pytest.approx(0.5, abs=1e-15)


def test_marginal_presence_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = int(rng.integers(1, 300))
        k = int(rng.integers(0, m + 1))
        exact = marginal_presence_by_enumeration(m, k)
        assert abs(marginal_presence_prob(k / m) - float(exact)) <= 1e-12


def composed_predictive(eta, n_p, n_1u):
    """Predictive label probability rebuilt from in-sample quantities."""
    counts = SampleCounts(n_p=n_p, n_u=n_1u + 1, n_1u=n_1u)
    share = n_1u / (n_p + n_1u)
    return share * presence_prob_in_sample(eta, counts) / stratum_prob_z0(eta, counts)


def test_predictive_probability_by_composition():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        eta = float(rng.uniform(-15, 15))
        n_p, n_1u = int(rng.integers(0, 3000)), int(rng.integers(1, 3000))
        assert abs(composed_predictive(eta, n_p, n_1u) - predictive_presence_prob(eta)) <= 1e-12


def test_inclusion_identity_example():
    rates = inclusion_identities(PopulationCounts(N=10000, N_1=2000), SampleCounts(n_p=100, n_u=400, n_1u=80))
    assert rates.rho0 == pytest.approx(0.04, abs=1e-15)
    assert rates.rho1 == pytest.approx(0.045, abs=1e-15)


def test_inclusion_ratio_identity():
    rng = np.random.default_rng(2)
    for _ in range(500):
        N = int(rng.integers(100, 20000))
        N_1 = int(rng.integers(1, N))
        n_u = int(rng.integers(2, 1000))
        n_1u = int(rng.integers(0, n_u))
        n_p = int(rng.integers(0, 500))
        pop, counts = PopulationCounts(N, N_1), SampleCounts(n_p, n_u, n_1u)
        rates = inclusion_identities(pop, counts)
        assert rates.ratio == pytest.approx(inclusion_ratio(counts, pop.pi), rel=1e-14)


def test_inclusion_weighted_terms_sum():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        pi_star = float(rng.uniform(0, 1))
        rates = InclusionRates(rho0=float(rng.uniform(1e-4, 1)), rho1=float(rng.uniform(1e-4, 1)))
        # independent Bayes: Pr(C=1|x) = sum_y Pr(C=1|Y=y) Pr(Y=y|x) over the stacked population
        p1 = 2 * pi_star / (1 + pi_star)
        p_c = rates.rho0 * (1 - p1) + rates.rho1 * p1
        absent, present = inclusion_weighted_terms(pi_star, rates)
        assert abs((absent + present) - p_c) <= 1e-12
        assert abs(absent + present - ((1 - pi_star) * rates.rho0 + 2 * pi_star * rates.rho1) / (1 + pi_star)) <= 1e-12


def test_in_sample_presence_probability_matches_bayes_rule():
    # Pr(Y=1 | C=1, x) from rho0, rho1 and the stacked-population marginal equals the offset form
    rng = np.random.default_rng(5)
    for _ in range(300):
        N = 10000
        N_1 = int(rng.integers(200, 5000))
        n_u = int(rng.integers(50, 1000))
        n_1u = int(rng.integers(1, n_u))
        n_p = int(rng.integers(1, 500))
        pop, counts = PopulationCounts(N, N_1), SampleCounts(n_p, n_u, n_1u)
        rates = inclusion_identities(pop, counts)
        eta = float(rng.uniform(-6, 6))
        pi_star = float(inverse_logit(eta))
        absent, present = inclusion_weighted_terms(pi_star, rates)
        bayes = present / (absent + present)
        shifted = float(inverse_logit(eta + pod_offset_exact(counts, pop.pi)))
        assert bayes == pytest.approx(shifted, rel=1e-11)


# -- likelihood ---------------------------------------------------------------


def test_single_background_point():
    sample = ToySample(np.array([[1.0, 0.0]]), np.array([0]))
    assert log_likelihood([0.0, 0.0], sample, 1.0) == pytest.approx(math.log(2 / 3), abs=1e-15)


def test_no_presence_stratum_gives_zero():
    rng = np.random.default_rng(6)
    sample = toy_sample(rng, 0, 12)
    assert log_likelihood(rng.normal(size=2), sample, SampleCounts(0, 12, 3)) == 0.0


def brute_force_likelihood(beta, sample, r):
    lik = 1.0
    for row, z in zip(sample.design_matrix, sample.z):
        e = math.exp(float(row @ beta))
        p1 = r * e / (1 + (1 + r) * e)
        lik *= p1 if z == 1 else 1 - p1
    return lik


@pytest.mark.parametrize("n_p,n_u", [(1, 4), (2, 3), (0, 5)])
def test_likelihood_against_brute_force_product(n_p, n_u):
    rng = np.random.default_rng(n_p * 10 + n_u)
    sample = toy_sample(rng, n_p, n_u)
    for _ in range(50):
        beta = rng.normal(scale=2, size=2)
        n_1u = int(rng.integers(1, n_u + 1))
        counts = SampleCounts(n_p, n_u, n_1u)
        expected = brute_force_likelihood(beta, sample, n_p / n_1u)
        assert math.exp(log_likelihood(beta, sample, counts)) == pytest.approx(expected, rel=1e-12)


def test_likelihood_permutation_invariant():
    rng = np.random.default_rng(7)
    sample = toy_sample(rng, 6, 24, k=3)
    beta = rng.normal(size=3)
    perm = rng.permutation(30)
    shuffled = ToySample(sample.design_matrix[perm], sample.z[perm])
    counts = SampleCounts(6, 24, 7)
    assert log_likelihood(beta, shuffled, counts) == pytest.approx(log_likelihood(beta, sample, counts), rel=1e-13)


def test_likelihood_checks_dimensions_and_counts():
    rng = np.random.default_rng(8)
    sample = toy_sample(rng, 2, 8)
    with pytest.raises(ValueError):
        log_likelihood(np.zeros(3), sample, SampleCounts(2, 8, 1))
    with pytest.raises(ValueError):
        log_likelihood(np.zeros(2), sample, SampleCounts(3, 8, 1))
    with pytest.raises(DegenerateCountError):
        log_likelihood(np.zeros(2), sample, SampleCounts(2, 8, 0))


def test_likelihood_finite_for_extreme_predictors():
    sample = ToySample(np.array([[1.0, 500.0], [1.0, -500.0], [1.0, 500.0]]), np.array([1, 0, 0]))
    ll = log_likelihood([0.0, 1.0], sample, 0.5)
    assert math.isfinite(ll)


# -- posterior ----------------------------------------------------------------


def test_flat_prior_limit():
    rng = np.random.default_rng(9)
    sample = toy_sample(rng, 4, 16)
    prior = PriorSpec.isotropic(2, variance=1e12)
    counts = SampleCounts(4, 16, 5)
    a, b = rng.normal(size=2), rng.normal(size=2)
    d_post = log_posterior(a, prior, sample, counts) - log_posterior(b, prior, sample, counts)
    d_lik = log_likelihood(a, sample, counts) - log_likelihood(b, sample, counts)
    assert d_post == pytest.approx(d_lik, abs=1e-9)


def test_prior_mean_with_empty_likelihood():
    # normalising constants are kept, so removing them must leave exactly zero
    k = 3
    prior = PriorSpec.isotropic(k, mean=0.7, variance=25.0)
    sample = toy_sample(np.random.default_rng(0), 0, 4, k=k)
    value = log_posterior(prior.mean, prior, ToySample(sample.design_matrix, sample.z), 0.0)
    constant = -0.5 * k * math.log(2 * math.pi * 25.0)
    assert value - constant == pytest.approx(0.0, abs=1e-13)


def test_posterior_term_by_term_on_ten_points():
    rng = np.random.default_rng(10)
    sample = toy_sample(rng, 3, 7)
    prior = PriorSpec(np.array([0.5, -1.0]), np.array([4.0, 25.0]))
    counts = SampleCounts(3, 7, 2)
    for _ in range(20):
        beta = rng.normal(scale=1.5, size=2)
        expected = math.log(brute_force_likelihood(beta, sample, 1.5))
        expected += float(np.sum(norm.logpdf(beta, loc=prior.mean, scale=np.sqrt(prior.variance))))
        assert log_posterior(beta, prior, sample, counts) == pytest.approx(expected, rel=1e-12)


def test_prior_shape_is_checked():
    with pytest.raises(ValueError):
        PriorSpec.isotropic(2).log_density(np.zeros(3))
    with pytest.raises(ValueError):
        PriorSpec(np.zeros(2), np.array([1.0, 0.0]))


@settings(max_examples=200)
@given(
    eta=st.floats(-50, 50),
    r=st.floats(0.0, 1e3),
)
def test_in_sample_presence_dominates_population_link(eta, r):
    # presences are over-represented in the sample, never under-represented
    assert presence_prob_in_sample(eta, r) >= inverse_logit(eta) - 1e-15
