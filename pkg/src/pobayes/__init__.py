"""Bayesian logistic regression for presence-only data with MCMC data augmentation."""

__version__ = "0.1.0"
