"""Gradient descent ascent on the adversarial objective.

The objective for a design ``tau`` and adversary matrix ``A`` is

    K(tau, A) = -E_theta tr(A^T I(theta; tau) A),

estimated on a batch of prior draws. The experimenter descends on K (which
raises expected information), the adversary ascends on it over unit-determinant
Cholesky factors ``A(eta)``. With ``objective="fig"`` the adversary is frozen at
the identity and the loop reduces to plain stochastic gradient ascent on the
trace of the averaged Fisher matrix.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .densela import adversary_gradient, cholesky_unit_det, n_adversary_params, trace_quadratic_form
from .models import Design

log = logging.getLogger(__name__)

__all__ = [
    "AdamState",
    "adam_step",
    "k_hat",
    "grad_k_hat",
    "j_hat",
    "GdaConfig",
    "GdaTrace",
    "GdaResult",
    "gda_run",
    "optimal_adversary",
    "maximize_adversary",
    "make_streams",
]


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, shape, learning_rate=1e-2, **kwargs):
        return cls(np.zeros(shape), np.zeros(shape), 0, learning_rate, **kwargs)


def adam_step(state, gradient):
    """One Adam update. Returns ``(new_state, increment)``; the caller adds the increment.

    The rule always moves along ``+gradient``: pass a negated gradient to descend.
    """
    g = np.asarray(gradient, dtype=float)
    if g.shape != state.first_moment.shape:
        raise ValueError(f"gradient shape {g.shape} does not match state {state.first_moment.shape}")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    increment = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, first_moment=m, second_moment=v, step_count=t), increment


# ---------------------------------------------------------------------------
# estimators


def _tau_of(design):
    return design.tau if isinstance(design, Design) else np.asarray(design, dtype=float)


def k_hat(model, theta_batch, design, A):
    """Monte Carlo estimate ``-tr(A^T mean_k I(theta_k; tau) A)``."""
    theta_batch = np.atleast_2d(theta_batch)
    if theta_batch.shape[0] < 1:
        raise ValueError("theta batch must be nonempty")
    info = model.mean_fisher(theta_batch, _tau_of(design))
    return -trace_quadratic_form(A, info)


def _batched_k_and_grads(model, theta, z, eta, constraint, adversarial=True):
    """Vectorised K-hat and its gradients for ``R`` designs sharing one theta batch.

    Returns ``(k, grad_z, grad_eta)`` with shapes ``(R,)``, ``(R, n)``, ``(R, q)``.
    """
    p = model.p
    tau = constraint.to_tau(z)
    info = model.mean_fisher(theta, tau)
    d_info = model.mean_fisher_dtau(theta, tau)
    A = cholesky_unit_det(eta, p)
    AAt = A @ np.swapaxes(A, -1, -2)
    k = -trace_quadratic_form(A, info)
    grad_tau = -np.einsum("rnij,rij->rn", d_info, AAt)
    grad_z = grad_tau * constraint.dtau_dz(z)
    grad_eta = adversary_gradient(info, eta) if adversarial else np.zeros_like(eta)
    return k, grad_z, grad_eta


def grad_k_hat(model, theta_batch, design, eta):
    """Gradients of K-hat w.r.t. the design's stored coordinates and ``eta``, on one batch."""
    theta_batch = np.atleast_2d(theta_batch)
    if not isinstance(design, Design):
        design = Design(design)
    _, gz, geta = _batched_k_and_grads(
        model, theta_batch, design.coords[None], np.asarray(eta, dtype=float)[None], design.constraint
    )
    return gz[0], geta[0]


def j_hat(model, theta_fixed, design, kind="adv"):
    """Determinant (``adv``) or trace (``fig``) of the Fisher matrix averaged over a fixed sample."""
    info = model.mean_fisher(np.atleast_2d(theta_fixed), _tau_of(design))
    if kind == "adv":
        return np.linalg.det(info)
    if kind == "fig":
        return np.trace(info, axis1=-2, axis2=-1)
    raise ValueError(f"unknown diagnostic kind {kind!r}")


# ---------------------------------------------------------------------------
# inner maximisation


def optimal_adversary(info):
    """Closed-form maximiser of ``K(tau, .)`` for fixed averaged Fisher matrix ``info``.

    Returns ``(A, eta, value)`` where ``A`` is the Cholesky factor of
    ``det(info)^(1/p) info^-1`` and ``value = -p det(info)^(1/p)``.
    """
    info = np.asarray(info, dtype=float)
    p = info.shape[-1]
    det = np.linalg.det(info)
    if det <= 0:
        raise ValueError("closed-form adversary needs a positive-definite Fisher matrix")
    scale = det ** (1.0 / p)
    A = np.linalg.cholesky(scale * np.linalg.inv(info))
    eta = np.concatenate([np.log(np.diag(A)[: p - 1]), A[np.tril_indices(p, -1)]])
    return A, eta, -p * scale


def maximize_adversary(info, iterations=20000, learning_rate=0.05, eta0=None, decay=1e-3):
    """Adversary-only Adam ascent on ``-tr(A(eta)^T info A(eta))`` for fixed ``info``.

    The learning rate decays as ``lr / (1 + decay * t)`` so the iterate settles.
    Returns ``(eta, value)``.
    """
    info = np.asarray(info, dtype=float)
    p = info.shape[-1]
    eta = np.zeros(n_adversary_params(p)) if eta0 is None else np.array(eta0, dtype=float)
    state = AdamState.zeros(eta.shape, learning_rate)
    for t in range(iterations):
        state = replace(state, learning_rate=learning_rate / (1.0 + decay * t))
        state, inc = adam_step(state, adversary_gradient(info, eta))
        eta = eta + inc
    A = cholesky_unit_det(eta, p)
    return eta, -trace_quadratic_form(A, info)


# ---------------------------------------------------------------------------
# main loop


@dataclass
class GdaConfig:
    objective: str = "adv"
    iterations: int = 1000
    n_samples: int = 1
    replications: int = 1
    lr_design: float = None  # None: use the model's default
    lr_adversary: float = None
    j_samples: int = 0
    j_stride: int = 100
    estimator: str = "closed_form"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.objective not in ("adv", "fig"):
            raise ValueError(f"objective must be 'adv' or 'fig', got {self.objective!r}")
        if self.estimator not in ("closed_form", "score"):
            raise ValueError(f"estimator must be 'closed_form' or 'score', got {self.estimator!r}")
        if min(self.iterations, self.n_samples, self.replications, self.j_stride, self.threads) < 1:
            raise ValueError("iterations, n_samples, replications, j_stride and threads must be >= 1")
        if self.j_samples < 0:
            raise ValueError("j_samples must be non-negative")
        if any(lr is not None and lr <= 0 for lr in (self.lr_design, self.lr_adversary)):
            raise ValueError("learning rates must be positive")

    def learning_rates(self, model):
        default_design, default_adversary = model.default_learning_rates
        return (
            default_design if self.lr_design is None else self.lr_design,
            default_adversary if self.lr_adversary is None else self.lr_adversary,
        )


@dataclass
class GdaTrace:
    """Per-iteration records. ``j_hat`` is NaN on iterations without a diagnostic.

    Design and adversary snapshots are kept every ``j_stride`` iterations and at
    the last iteration.
    """

    k_hat: np.ndarray
    j_hat: np.ndarray
    eta_abs_max: np.ndarray
    snapshot_iters: list = field(default_factory=list)
    snapshot_tau: list = field(default_factory=list)
    snapshot_eta: list = field(default_factory=list)

    def rows(self):
        """Yield ``(iteration, replication, k_hat, j_hat)`` in iteration-major order."""
        n_iter, n_rep = self.k_hat.shape
        for t in range(n_iter):
            for r in range(n_rep):
                yield t, r, self.k_hat[t, r], self.j_hat[t, r]


@dataclass
class GdaResult:
    designs: list
    eta: np.ndarray
    j_final: np.ndarray
    status: list
    trace: GdaTrace
    theta_fixed: np.ndarray

    @property
    def tau(self):
        return np.array([d.tau for d in self.designs])

    @property
    def diverged(self):
        return any(s != "ok" for s in self.status)


def make_streams(seed):
    """Independent generators for initial designs, per-iteration batches, the fixed
    diagnostic sample and Gaussian noise draws."""
    seqs = np.random.SeedSequence(seed).spawn(4)
    return dict(zip(("init", "batch", "fixed", "noise"), (np.random.default_rng(s) for s in seqs)))


def _chunks(n, parts):
    bounds = np.linspace(0, n, min(parts, n) + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def gda_run(model, config, initial=None, constraint=None):
    """Run ``config.replications`` GDA (or SGD for ``fig``) replications in lockstep.

    ``initial`` is an ``(R, n)`` array of feasible designs (``tau`` values); when
    omitted they are drawn uniformly over the feasible region. Every iteration
    draws a single batch of ``n_samples`` prior draws shared by all replications.
    Constraints with a ``project`` method (the box penalty) have the returned
    designs clipped to the feasible region.
    """
    constraint = constraint or model.default_constraint()
    streams = make_streams(config.seed)
    R = config.replications
    if initial is None:
        initial = model.random_designs(streams["init"], R)
    initial = np.atleast_2d(np.asarray(initial, dtype=float))
    if initial.shape != (R, model.n_coords):
        raise ValueError(f"initial designs must have shape {(R, model.n_coords)}, got {initial.shape}")

    adversarial = config.objective == "adv"
    z = constraint.from_tau(initial)
    eta = np.zeros((R, n_adversary_params(model.p)))
    lr_design, lr_adversary = config.learning_rates(model)
    design_opt = AdamState.zeros(z.shape, lr_design)
    adv_opt = AdamState.zeros(eta.shape, lr_adversary)

    theta_fixed = model.sample_prior(streams["fixed"], config.j_samples) if config.j_samples else None
    kind = config.objective

    if config.estimator == "score":
        if not model.gaussian or not hasattr(model, "jacobian"):
            raise ValueError("score estimator needs a Gaussian model with an analytic Jacobian")
        from .scorest import batched_k_and_grads_score

    def evaluate(theta, eps, rows):
        if config.estimator == "score":
            return batched_k_and_grads_score(model, theta, eps, z[rows], eta[rows], constraint, adversarial)
        return _batched_k_and_grads(model, theta, z[rows], eta[rows], constraint, adversarial)

    chunks = _chunks(R, config.threads)
    pool = ThreadPoolExecutor(config.threads) if len(chunks) > 1 else None

    k_trace = np.full((config.iterations, R), np.nan)
    j_trace = np.full((config.iterations, R), np.nan)
    eta_trace = np.zeros((config.iterations, R))
    trace = GdaTrace(k_trace, j_trace, eta_trace)
    alive = np.ones(R, dtype=bool)
    status = ["ok"] * R

    try:
        for t in range(config.iterations):
            theta = model.sample_prior(streams["batch"], config.n_samples)
            eps = None
            if config.estimator == "score":
                eps = streams["noise"].standard_normal((config.n_samples, model.n_coords))
            if pool is None:
                parts = [evaluate(theta, eps, slice(None))]
            else:
                parts = list(pool.map(lambda s: evaluate(theta, eps, s), chunks))
            k, gz, geta = (np.concatenate(x) for x in zip(*parts))

            tau = constraint.to_tau(z)
            if t % config.j_stride == 0 or t == config.iterations - 1:
                if theta_fixed is not None:
                    j_trace[t] = j_hat(model, theta_fixed, tau, kind)
                trace.snapshot_iters.append(t)
                trace.snapshot_tau.append(tau.copy())
                trace.snapshot_eta.append(eta.copy())
            k_trace[t] = k
            eta_trace[t] = np.abs(eta).max(axis=1) if eta.shape[1] else 0.0

            gz = gz + constraint.penalty_grad(tau) * constraint.dtau_dz(z)
            bad = ~(np.all(np.isfinite(gz), axis=1) & np.all(np.isfinite(geta), axis=1) & np.isfinite(k))
            for r in np.flatnonzero(bad & alive):
                status[r] = f"diverged at iteration {t}"
                log.warning("replication %d produced non-finite values at iteration %d", r, t)
            alive &= ~bad
            gz[~alive] = 0.0
            geta[~alive] = 0.0

            design_opt, dz = adam_step(design_opt, -gz)
            z = z + dz * alive[:, None]
            if adversarial:
                adv_opt, deta = adam_step(adv_opt, geta)
                eta = eta + deta * alive[:, None]
    finally:
        if pool is not None:
            pool.shutdown()

    if hasattr(constraint, "project"):
        # Adam can overshoot a penalty wall by up to one step; return feasible designs
        z = constraint.project(z)
    designs = [Design(z[r], constraint) for r in range(R)]
    j_final = np.full(R, np.nan)
    if theta_fixed is not None:
        j_final = j_hat(model, theta_fixed, constraint.to_tau(z), kind)
    return GdaResult(designs, eta, j_final, status, trace, theta_fixed)
