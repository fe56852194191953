"""Score-function estimates of K for Gaussian-observation models.

Observations are written as ``y = x(theta, tau) + sigma * eps`` so the score is
``u = J^T eps / sigma`` and ``K = -E ||A^T u||^2``. Holding ``eps`` fixed while
differentiating gives unbiased gradients in ``tau`` and ``eta`` without ever
forming the Fisher matrix.
"""

from dataclasses import dataclass

import numpy as np

from .densela import adversary_gradient, cholesky_unit_det
from .models import Design, _pk_jac_and_dt

__all__ = ["ScoreSample", "normal_score", "k_hat_score", "grad_k_hat_score", "batched_k_and_grads_score"]


@dataclass
class ScoreSample:
    epsilon: np.ndarray
    score: np.ndarray


def _require_gaussian(model):
    if not getattr(model, "gaussian", False) or not hasattr(model, "jacobian"):
        raise ValueError(f"score estimator needs a Gaussian model with a Jacobian, not {model.name!r}")


def _jacobians(model, theta, tau, with_dt):
    # theta (K, p), tau (R, n) -> (R, K, n, p)
    return _pk_jac_and_dt(theta[None, :, None, :], tau[:, None, :], model.dose, with_dt)


def normal_score(model, theta, tau, eps):
    """Score ``J(theta, tau)^T eps / sigma`` at ``y = x + sigma * eps``."""
    _require_gaussian(model)
    eps = np.asarray(eps, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if eps.shape[-1] != tau.shape[-1]:
        raise ValueError(f"noise has length {eps.shape[-1]}, design has {tau.shape[-1]} observations")
    jac = model.jacobian(theta, tau)
    return ScoreSample(eps, np.einsum("...n,...np->...p", eps, jac) / model.sigma)


def batched_k_and_grads_score(model, theta, eps, z, eta, constraint, adversarial=True):
    """Score-based analogue of the closed-form batched estimator used by the GDA loop."""
    theta = np.atleast_2d(theta)
    eps = np.atleast_2d(eps)
    if eps.shape[0] != theta.shape[0]:
        raise ValueError("theta and noise batches must be aligned")
    tau = constraint.to_tau(z)
    jac, djac = _jacobians(model, theta, tau, True)
    u = np.einsum("kn,rknp->rkp", eps, jac) / model.sigma
    A = cholesky_unit_det(eta, model.p)
    M = A @ np.swapaxes(A, -1, -2)
    Mu = np.einsum("rij,rkj->rki", M, u)
    n_k = theta.shape[0]
    k = -np.einsum("rkp,rkp->r", u, Mu) / n_k
    # du/dtau_i = eps_i * dJ_i / sigma, only row i of J depends on tau_i
    grad_tau = -2.0 * np.einsum("rkp,kn,rknp->rn", Mu, eps, djac) / (model.sigma * n_k)
    grad_z = grad_tau * constraint.dtau_dz(z)
    if adversarial:
        outer = np.einsum("rki,rkj->rij", u, u) / n_k
        grad_eta = adversary_gradient(outer, eta)
    else:
        grad_eta = np.zeros_like(eta)
    return k, grad_z, grad_eta


def _as_design(design):
    return design if isinstance(design, Design) else Design(design)


def k_hat_score(model, theta_batch, eps_batch, design, A):
    """``-(1/K) sum_k ||A^T u_k||^2`` over aligned parameter and noise batches."""
    _require_gaussian(model)
    theta_batch = np.atleast_2d(theta_batch)
    eps_batch = np.atleast_2d(eps_batch)
    if len(theta_batch) != len(eps_batch):
        raise ValueError("theta and noise batches must be aligned")
    tau = design.tau if isinstance(design, Design) else np.asarray(design, dtype=float)
    u = normal_score(model, theta_batch, tau, eps_batch).score
    return -np.mean(np.sum((u @ np.asarray(A)) ** 2, axis=-1))


def grad_k_hat_score(model, theta_batch, eps_batch, design, eta):
    """Reparameterised gradients ``(d/d coords, d/d eta)`` of the score-based estimate."""
    _require_gaussian(model)
    design = _as_design(design)
    _, gz, geta = batched_k_and_grads_score(
        model, theta_batch, eps_batch, design.coords[None], np.asarray(eta, dtype=float)[None], design.constraint
    )
    return gz[0], geta[0]
