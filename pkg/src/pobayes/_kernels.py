"""Compiled inner loop of the sampler.

The kernel consumes random numbers drawn outside (one block at a time) so that
the seeded numpy generator stays the single source of randomness.  Per point it
caches ``e = exp(-|x beta|)``; an offset change then costs one log per point.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MODE_OBSERVED = 0  # labels seen, ordinary logistic likelihood
MODE_FIXED_OFFSET = 1  # known prevalence
MODE_AUGMENTED_OFFSET = 2  # offset follows n_1u


@njit(cache=True)
def linear_predictor(X, beta, eta, e):
    n, k = X.shape
    for i in range(n):
        s = 0.0
        for j in range(k):
            s += X[i, j] * beta[j]
        eta[i] = s
        e[i] = math.exp(-abs(s))


@njit(cache=True)
def stratum_loglik(eta_u, e_u, eta_p, e_p, ratio):
    """Observed-stratum log-likelihood; same quantity as ``model.stratum_log_likelihood``."""
    total = 0.0
    opr = 1.0 + ratio
    for i in range(eta_u.size):
        e = e_u[i]
        if eta_u[i] < 0.0:
            total += math.log((1.0 + e) / (1.0 + opr * e))
        else:
            total += math.log((e + 1.0) / (e + opr))
    if eta_p.size > 0:
        if ratio == 0.0:
            return -np.inf
        lr = math.log(ratio)
        for i in range(eta_p.size):
            e = e_p[i]
            if eta_p[i] < 0.0:
                total += lr + math.log(e / (1.0 + opr * e))
            else:
                total += lr - math.log(e + opr)
    return total


@njit(cache=True)
def bernoulli_loglik(eta, e, y):
    total = 0.0
    for i in range(eta.size):
        # y*eta - softplus(eta)
        sp = max(eta[i], 0.0) + math.log1p(e[i])
        total += y[i] * eta[i] - sp
    return total


@njit(cache=True)
def log_prior(beta, mean, var):
    total = 0.0
    for j in range(beta.size):
        d = beta[j] - mean[j]
        total -= 0.5 * (math.log(2.0 * math.pi * var[j]) + d * d / var[j])
    return total


@njit(cache=True)
def log_target(mode, eta_u, e_u, eta_p, e_p, y_obs, ratio, beta, mean, var):
    lp = log_prior(beta, mean, var)
    if mode == MODE_OBSERVED:
        return lp + bernoulli_loglik(eta_u, e_u, y_obs)
    return lp + stratum_loglik(eta_u, e_u, eta_p, e_p, ratio)


@njit(cache=True)
def run_block(
    mode,
    X_u,
    X_p,
    y_obs,
    fixed_ratio,
    prior_mean,
    prior_var,
    beta,
    y_u,
    n_1u,
    log_post,
    eta_u,
    e_u,
    eta_p,
    e_p,
    scale,
    normals,
    u_accept,
    u_labels,
    out_beta,
    out_n1u,
    out_lp,
    out_acc,
):
    """Advance the chain ``normals.shape[0]`` iterations; mutates the state arrays in place.

    Returns the updated ``(n_1u, log_post)``.
    """
    k = beta.size
    n_u = X_u.shape[0]
    n_p = X_p.shape[0]
    prop = np.empty(k)
    peta_u = np.empty(n_u)
    pe_u = np.empty(n_u)
    peta_p = np.empty(n_p)
    pe_p = np.empty(n_p)
    augment = mode != MODE_OBSERVED
    for t in range(normals.shape[0]):
        if mode == MODE_AUGMENTED_OFFSET:
            ratio = n_p / max(n_1u, 1)
        else:
            ratio = fixed_ratio

        for j in range(k):
            prop[j] = beta[j] + scale[j] * normals[t, j]
        linear_predictor(X_u, prop, peta_u, pe_u)
        linear_predictor(X_p, prop, peta_p, pe_p)
        lp = log_target(mode, peta_u, pe_u, peta_p, pe_p, y_obs, ratio, prop, prior_mean, prior_var)
        accepted = False
        if math.isfinite(lp):
            delta = lp - log_post
            if delta >= 0.0 or u_accept[t] < math.exp(delta):
                accepted = True
        if accepted:
            beta[:] = prop
            eta_u[:] = peta_u
            e_u[:] = pe_u
            eta_p[:] = peta_p
            e_p[:] = pe_p
            log_post = lp

        if augment:
            count = 0
            for i in range(n_u):
                e = e_u[i]
                p = 1.0 / (1.0 + e) if eta_u[i] >= 0.0 else e / (1.0 + e)
                if u_labels[t, i] < p:
                    y_u[i] = 1
                    count += 1
                else:
                    y_u[i] = 0
            new_n1u = max(count, 1)
            if mode == MODE_AUGMENTED_OFFSET and new_n1u != n_1u:
                log_post = log_target(
                    mode, eta_u, e_u, eta_p, e_p, y_obs, n_p / new_n1u, beta, prior_mean, prior_var
                )
            n_1u = new_n1u

        out_beta[t, :] = beta
        out_n1u[t] = n_1u
        out_lp[t] = log_post
        out_acc[t] = accepted
    return n_1u, log_post
