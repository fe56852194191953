"""Importance-sampling posterior for checking a design on simulated data."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

MIN_ESS = 10.0


@dataclass
class WeightedPosterior:
    theta: np.ndarray  # (L, p) prior draws
    weights: np.ndarray  # (L,) normalised
    y: np.ndarray
    ess: float

    def mean(self):
        return self.weights @ self.theta


def importance_posterior(model, tau, theta_true, n_samples, rng, prior_samples=None):
    """Weight prior draws by the Gaussian likelihood of one dataset simulated at ``theta_true``.

    Draws from ``rng`` in a fixed order: the noise for ``y`` first, then the
    prior sample (unless ``prior_samples`` is given).
    """
    tau = np.asarray(tau, dtype=float)
    theta_true = np.asarray(theta_true, dtype=float)
    y = model.mean(theta_true, tau) + model.sigma * rng.standard_normal(tau.shape)
    theta = model.sample_prior(rng, n_samples) if prior_samples is None else np.atleast_2d(prior_samples)
    resid = y[None, :] - model.mean(theta[:, None, :], tau[None, :])
    loglik = -0.5 * np.sum(resid**2, axis=1) / model.sigma**2
    logw = loglik - logsumexp(loglik)
    w = np.exp(logw)
    w /= w.sum()
    ess = 1.0 / np.sum(w**2)
    if ess < MIN_ESS:
        log.warning("importance weights are degenerate: effective sample size %.2f", ess)
    return WeightedPosterior(theta, w, y, float(ess))
