"""Design constraints, the model interface and the three bundled models.

Array conventions used throughout:

* ``theta`` is a ``(K, p)`` batch of parameter draws.
* ``tau`` is an ``(R, n)`` batch of flattened designs (``n`` design coordinates;
  spatial designs store ``x0, y0, x1, y1, ...``).
* ``fisher`` returns ``(R, K, p, p)``; ``mean_fisher`` averages over ``K`` to
  ``(R, p, p)``; ``mean_fisher_dtau`` returns ``(R, n, p, p)`` holding the
  derivative of the averaged matrix with respect to each coordinate.

Single designs / single draws may be passed as 1-d arrays; the batch axes are
then dropped from the result.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .densela import spd_solve

__all__ = [
    "Free",
    "LogitTransformed",
    "BoxPenalty",
    "Design",
    "Model",
    "PoissonModel",
    "PKModel",
    "GeostatModel",
    "MODELS",
    "get_model",
    "fisher_dtau",
    "poisson_fisher",
    "poisson_expected_fisher",
    "pk_mean",
    "pk_jacobian",
    "pk_fisher",
    "geostat_fisher",
    "reparameterized_expected_fisher",
]


# ---------------------------------------------------------------------------
# constraints


@dataclass(frozen=True)
class Free:
    """No constraint: the stored coordinates are the design."""

    name = "free"

    def to_tau(self, z):
        return np.asarray(z, dtype=float)

    def from_tau(self, tau):
        return np.asarray(tau, dtype=float)

    def dtau_dz(self, z):
        return np.ones_like(np.asarray(z, dtype=float))

    def penalty(self, tau):
        return np.zeros(np.shape(tau)[:-1])

    def penalty_grad(self, tau):
        return np.zeros_like(np.asarray(tau, dtype=float))


@dataclass(frozen=True)
class LogitTransformed(Free):
    """Design lives in ``(lower, upper)``; the stored value is the logit of the rescaled design."""

    lower: float = 0.0
    upper: float = 1.0
    name = "logit_transformed"

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("logit bounds need lower < upper")

    def to_tau(self, z):
        return self.lower + (self.upper - self.lower) * expit(z)

    def from_tau(self, tau):
        u = (np.asarray(tau, dtype=float) - self.lower) / (self.upper - self.lower)
        return logit(u)

    def dtau_dz(self, z):
        s = expit(z)
        return (self.upper - self.lower) * s * (1.0 - s)


@dataclass(frozen=True)
class BoxPenalty(Free):
    """Unconstrained coordinates plus an L1 penalty ``weight * distance`` outside the box."""

    lower: float = -0.5
    upper: float = 0.5
    weight: float = 1e3
    name = "box_penalty"

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("box bounds need lower < upper")
        if self.weight <= 0:
            raise ValueError("penalty weight must be positive")

    def penalty(self, tau):
        tau = np.asarray(tau, dtype=float)
        excess = np.maximum(self.lower - tau, 0.0) + np.maximum(tau - self.upper, 0.0)
        return self.weight * excess.sum(axis=-1)

    def penalty_grad(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.weight * ((tau > self.upper).astype(float) - (tau < self.lower))

    def project(self, tau):
        return np.clip(tau, self.lower, self.upper)


def constraint_from_name(name, **kwargs):
    table = {"free": Free, "logit_transformed": LogitTransformed, "box_penalty": BoxPenalty}
    try:
        cls = table[name]
    except KeyError:
        raise ValueError(f"unknown constraint mode {name!r}") from None
    return cls(**kwargs)


@dataclass
class Design:
    """A design in its stored (optimisation) coordinates together with its constraint."""

    coords: np.ndarray
    constraint: Free = field(default_factory=Free)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("design coordinates must be finite")

    @classmethod
    def from_tau(cls, tau, constraint=None):
        constraint = constraint or Free()
        return cls(constraint.from_tau(tau), constraint)

    @property
    def tau(self):
        return self.constraint.to_tau(self.coords)


# ---------------------------------------------------------------------------
# model interface


def _batch(theta, tau, p):
    """Promote inputs to ``(K, p)`` / ``(R, n)`` and report which axes to squeeze."""
    theta = np.asarray(theta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    single_theta = theta.ndim == 1
    single_tau = tau.ndim == 1
    theta = np.atleast_2d(theta)
    tau = np.atleast_2d(tau)
    if theta.shape[-1] != p:
        raise ValueError(f"theta must have {p} components, got shape {theta.shape}")
    return theta, tau, single_theta, single_tau


class Model:
    """Base class. Subclasses supply ``fisher`` and ``mean_fisher_dtau``."""

    name = "model"
    p = 0
    coord_dim = 1
    gaussian = False
    theta_free = False
    additive = False
    default_learning_rates = (1e-2, 1e-2)
    default_cluster_radius = 0.25

    @property
    def n_coords(self):
        raise NotImplementedError

    def default_constraint(self):
        return Free()

    def sample_prior(self, rng, count):
        raise NotImplementedError

    def random_designs(self, rng, count):
        """Uniform draws over the feasible region, shape ``(count, n_coords)``."""
        raise NotImplementedError

    def fisher(self, theta, tau):
        raise NotImplementedError

    def mean_fisher(self, theta, tau):
        theta, tau, _, single_tau = _batch(theta, tau, self.p)
        out = self.fisher(theta, tau).mean(axis=1)
        return out[0] if single_tau else out

    def mean_fisher_dtau(self, theta, tau):
        raise NotImplementedError

    def expected_fisher(self, tau):
        """Exact prior-averaged Fisher information, when available in closed form."""
        raise NotImplementedError(f"{self.name} has no closed-form expected Fisher information")


# ---------------------------------------------------------------------------
# Poisson allocation between two experiments


def _check_positive_theta(theta):
    if np.any(theta <= 0):
        raise ValueError("Poisson rate parameters must be positive")


def poisson_fisher(theta, tau, omega=(2.0, 1.0)):
    """Per-draw Fisher matrix ``diag(tau*w1/theta1, (1-tau)*w2/theta2)``."""
    return PoissonModel(*omega, exact=False).fisher(theta, np.atleast_1d(tau))


def poisson_expected_fisher(tau, omega=(2.0, 1.0)):
    return PoissonModel(*omega).expected_fisher(np.atleast_1d(tau))


@dataclass(frozen=True)
class PoissonModel(Model):
    """Two Poisson counts with means ``tau*theta1*w1`` and ``(1-tau)*theta2*w2``, Gamma(2,1) priors.

    With ``exact=True`` the prior-averaged Fisher matrix is used in closed form
    (``E[1/theta] = 1``), so the objective carries no Monte Carlo noise.
    """

    omega1: float = 2.0
    omega2: float = 1.0
    exact: bool = True
    prior_shape: float = 2.0
    prior_rate: float = 1.0

    name = "poisson"
    p = 2

    def __post_init__(self):
        if not self.omega1 > self.omega2 > 0:
            raise ValueError("Poisson model requires omega1 > omega2 > 0")

    @property
    def n_coords(self):
        return 1

    @property
    def theta_free(self):
        return self.exact

    def default_constraint(self):
        return LogitTransformed(0.0, 1.0)

    def sample_prior(self, rng, count):
        return rng.gamma(self.prior_shape, 1.0 / self.prior_rate, size=(count, 2))

    def random_designs(self, rng, count):
        return rng.uniform(0.0, 1.0, size=(count, 1))

    def _rates(self, tau):
        t = tau[..., 0]
        return np.stack([t * self.omega1, (1.0 - t) * self.omega2], axis=-1)

    def fisher(self, theta, tau):
        theta, tau, single_theta, single_tau = _batch(theta, tau, 2)
        _check_positive_theta(theta)
        diag = self._rates(tau)[:, None, :] / theta[None, :, :]
        out = diag[..., :, None] * np.eye(2)
        if single_theta:
            out = out[:, 0]
        return out[0] if single_tau else out

    def expected_fisher(self, tau):
        tau = np.asarray(tau, dtype=float)
        single = tau.ndim == 1
        tau = np.atleast_2d(tau)
        # E[1/theta] under Gamma(a, b) is b / (a - 1)
        inv_mean = self.prior_rate / (self.prior_shape - 1.0)
        out = (inv_mean * self._rates(tau))[..., :, None] * np.eye(2)
        return out[0] if single else out

    def mean_fisher(self, theta, tau):
        if self.exact:
            return self.expected_fisher(tau)
        return super().mean_fisher(theta, tau)

    def mean_fisher_dtau(self, theta, tau):
        if self.exact:
            tau = np.asarray(tau, dtype=float)
            single_tau = tau.ndim == 1
            tau = np.atleast_2d(tau)
            inv = np.full(2, self.prior_rate / (self.prior_shape - 1.0))
        else:
            theta, tau, _, single_tau = _batch(theta, tau, 2)
            _check_positive_theta(theta)
            inv = (1.0 / theta).mean(axis=0)
        d = np.array([self.omega1, -self.omega2]) * inv
        out = np.broadcast_to(np.diag(d), (tau.shape[0], 1, 2, 2)).copy()
        return out[0] if single_tau else out


# ---------------------------------------------------------------------------
# pharmacokinetic one-compartment model


def _pk_terms(theta, t, dose):
    """Shared pieces of the concentration curve; broadcasting over theta[..., i] and t."""
    th1, th2, th3 = theta[..., 0], theta[..., 1], theta[..., 2]
    if np.any(th1 == th2):
        raise ValueError("PK mean is undefined for theta2 == theta1")
    diff = th2 - th1
    c = dose * th2 / (th3 * diff)
    e1 = np.exp(-th1 * t)
    e2 = np.exp(-th2 * t)
    return th1, th2, th3, diff, c, e1, e2


def pk_mean(theta, t, dose=400.0):
    """Concentration ``D th2 (exp(-th1 t) - exp(-th2 t)) / (th3 (th2 - th1))``."""
    theta = np.asarray(theta, dtype=float)
    t = np.asarray(t, dtype=float)
    *_, c, e1, e2 = _pk_terms(theta, t, dose)
    return c * (e1 - e2)


def _pk_jac_and_dt(theta, t, dose, with_dt):
    th1, th2, th3, diff, c, e1, e2 = _pk_terms(theta, t, dose)
    x = c * (e1 - e2)
    j1 = x / diff - c * t * e1
    j2 = th1 * x / (th2 * (th1 - th2)) + c * t * e2
    j3 = -x / th3
    jac = np.stack([j1, j2, j3], axis=-1)
    if not with_dt:
        return jac, None
    dx = c * (th2 * e2 - th1 * e1)
    dj1 = dx / diff - c * (1.0 - th1 * t) * e1
    dj2 = th1 * dx / (th2 * (th1 - th2)) + c * (1.0 - th2 * t) * e2
    dj3 = -dx / th3
    return jac, np.stack([dj1, dj2, dj3], axis=-1)


def pk_jacobian(theta, tau, dose=400.0):
    """Rows ``d x(theta, tau_i) / d theta`` for each observation time, shape ``(d, 3)``."""
    theta = np.asarray(theta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    jac, _ = _pk_jac_and_dt(theta[..., None, :], tau, dose, with_dt=False)
    return jac


def pk_fisher(theta, tau, dose=400.0, sigma=0.1):
    jac = pk_jacobian(theta, tau, dose)
    return np.swapaxes(jac, -1, -2) @ jac / sigma**2


@dataclass(frozen=True)
class PKModel(Model):
    """Concentration observed with known Gaussian noise at ``n_times`` times in ``[0, t_max]``.

    Priors on the three parameters are independent lognormals; ``prior_var``
    is the variance of ``log theta``.
    """

    n_times: int = 15
    dose: float = 400.0
    sigma: float = 0.1
    t_max: float = 24.0
    prior_median: tuple = (0.1, 1.0, 20.0)
    prior_var: float = 0.05

    name = "pk"
    p = 3
    gaussian = True
    additive = True

    def __post_init__(self):
        if min(self.dose, self.sigma, self.t_max, self.prior_var) <= 0 or self.n_times < 1:
            raise ValueError("PK constants must be strictly positive")

    @property
    def n_coords(self):
        return self.n_times

    def sample_prior(self, rng, count):
        z = rng.standard_normal(size=(count, 3))
        return np.exp(np.log(self.prior_median) + np.sqrt(self.prior_var) * z)

    def random_designs(self, rng, count):
        return rng.uniform(0.0, self.t_max, size=(count, self.n_times))

    def mean(self, theta, tau):
        return pk_mean(theta, tau, self.dose)

    def jacobian(self, theta, tau):
        """``(R, K, d, 3)`` Jacobians for batches of designs and draws."""
        theta, tau, single_theta, single_tau = _batch(theta, tau, 3)
        jac, _ = _pk_jac_and_dt(theta[None, :, None, :], tau[:, None, :], self.dose, False)
        if single_theta:
            jac = jac[:, 0]
        return jac[0] if single_tau else jac

    def fisher(self, theta, tau):
        theta, tau, single_theta, single_tau = _batch(theta, tau, 3)
        jac = self.jacobian(theta, tau)
        out = np.einsum("rkdi,rkdj->rkij", jac, jac) / self.sigma**2
        if single_theta:
            out = out[:, 0]
        return out[0] if single_tau else out

    def mean_fisher(self, theta, tau):
        theta, tau, _, single_tau = _batch(theta, tau, 3)
        jac = self.jacobian(theta, tau)
        out = np.einsum("rkdi,rkdj->rij", jac, jac) / (self.sigma**2 * theta.shape[0])
        return out[0] if single_tau else out

    def mean_fisher_dtau(self, theta, tau):
        theta, tau, _, single_tau = _batch(theta, tau, 3)
        jac, djac = _pk_jac_and_dt(theta[None, :, None, :], tau[:, None, :], self.dose, True)
        half = np.einsum("rkdi,rkdj->rdij", jac, djac) / (self.sigma**2 * theta.shape[0])
        out = half + np.swapaxes(half, -1, -2)
        return out[0] if single_tau else out

    def point_information(self, theta, points):
        """Averaged single-observation Fisher contribution at each time, ``(m, 3, 3)``.

        The design's averaged Fisher matrix is the sum of these over its points.
        """
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        points = np.asarray(points, dtype=float).reshape(-1)
        jac, _ = _pk_jac_and_dt(theta[:, None, :], points[None, :], self.dose, False)
        return np.einsum("kmi,kmj->mij", jac, jac) / (self.sigma**2 * theta.shape[0])


# ---------------------------------------------------------------------------
# geostatistical regression


def _sq_exp(locs, length_scale):
    diff = locs[..., :, None, :] - locs[..., None, :, :]
    return np.exp(-np.sum(diff**2, axis=-1) / length_scale**2), diff


def geostat_fisher(tau, sigma1=1.0, sigma2=3.0, length_scale=0.01):
    """``X^T Sigma(X)^-1 X`` for a ``(d, 2)`` location matrix X (flattened input also accepted)."""
    tau = np.asarray(tau, dtype=float)
    model = GeostatModel(n_points=tau.size // 2, sigma1=sigma1, sigma2=sigma2, length_scale=length_scale)
    return model.fisher_locations(tau.reshape(-1))


@dataclass(frozen=True)
class GeostatModel(Model):
    """Linear trend in two coordinates with squared-exponential plus nugget covariance.

    The Fisher matrix does not involve the trend parameters, so prior draws are
    standard-normal placeholders that are never used.
    """

    n_points: int = 500
    sigma1: float = 1.0
    sigma2: float = 3.0
    length_scale: float = 0.01
    half_width: float = 0.5
    penalty_weight: float = 1e3

    name = "geostat"
    p = 2
    coord_dim = 2
    gaussian = True
    theta_free = True
    # Adam steps must stay well below the covariance length scale for points to pack
    default_learning_rates = (1e-3, 1e-3)
    default_cluster_radius = 0.05

    def __post_init__(self):
        if min(self.sigma1, self.sigma2, self.length_scale, self.half_width) <= 0 or self.n_points < 1:
            raise ValueError("geostat constants must be strictly positive")

    @property
    def n_coords(self):
        return 2 * self.n_points

    def default_constraint(self):
        return BoxPenalty(-self.half_width, self.half_width, self.penalty_weight)

    def sample_prior(self, rng, count):
        return rng.standard_normal(size=(count, 2))

    def random_designs(self, rng, count):
        return rng.uniform(-self.half_width, self.half_width, size=(count, self.n_coords))

    def _locations(self, tau):
        tau = np.atleast_2d(np.asarray(tau, dtype=float))
        if not np.all(np.isfinite(tau)):
            raise ValueError("geostat design coordinates must be finite")
        if tau.shape[-1] % 2:
            raise ValueError("spatial designs need an even number of coordinates")
        return tau.reshape(tau.shape[0], -1, 2)

    def _solve(self, X):
        R, diff = _sq_exp(X, self.length_scale)
        eye = np.eye(X.shape[1])
        cov = self.sigma1**2 * eye + self.sigma2**2 * R
        W = spd_solve(cov, X) if X.shape[0] > 1 else spd_solve(cov[0], X[0])[None]
        return R, diff, W

    def fisher_locations(self, tau):
        tau = np.asarray(tau, dtype=float)
        X = self._locations(tau)
        _, _, W = self._solve(X)
        out = np.swapaxes(X, -1, -2) @ W
        return out[0] if tau.ndim == 1 else out

    def fisher(self, theta, tau):
        theta, tau, single_theta, single_tau = _batch(theta, tau, 2)
        info = self.fisher_locations(tau)
        out = np.broadcast_to(info[:, None], (tau.shape[0], theta.shape[0], 2, 2)).copy()
        if single_theta:
            out = out[:, 0]
        return out[0] if single_tau else out

    def mean_fisher(self, theta, tau):
        return self.fisher_locations(tau)

    def expected_fisher(self, tau):
        return self.fisher_locations(tau)

    def mean_fisher_dtau(self, theta, tau):
        tau = np.asarray(tau, dtype=float)
        single = tau.ndim == 1
        X = self._locations(tau)
        R, diff, W = self._solve(X)
        n_batch, d, _ = X.shape
        # c[b, k, i, j] = d Sigma_ij / d x_ik
        c = (-2.0 * self.sigma2**2 / self.length_scale**2) * np.moveaxis(diff, -1, 1) * R[:, None]
        V = c @ W[:, None]  # (B, 2, d, 2)
        V = np.moveaxis(V, 1, 2)  # (B, d, k, 2)
        out = np.zeros((n_batch, d, 2, 2, 2))
        for k in range(2):
            out[:, :, k, k, :] += W
            out[:, :, k, :, k] += W
        out -= W[:, :, None, :, None] * V[:, :, :, None, :] + V[:, :, :, :, None] * W[:, :, None, None, :]
        out = out.reshape(n_batch, 2 * d, 2, 2)
        return out[0] if single else out


# ---------------------------------------------------------------------------
# helpers


MODELS = {"poisson": PoissonModel, "pk": PKModel, "geostat": GeostatModel}


def get_model(name, **constants):
    """Build a bundled model by name with optional constant overrides."""
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**constants)


def fisher_dtau(model, theta, design):
    """Derivatives of the batch-averaged Fisher matrix w.r.t. the design's stored coordinates."""
    d_tau = model.mean_fisher_dtau(theta, design.tau)
    scale = design.constraint.dtau_dz(design.coords)
    return d_tau * scale[..., None, None]


def reparameterized_expected_fisher(info, B):
    """Averaged Fisher matrix for the linear reparameterisation ``phi = B theta``."""
    B = np.asarray(B, dtype=float)
    try:
        B_inv = np.linalg.inv(B)
    except np.linalg.LinAlgError:
        raise ValueError("reparameterisation matrix B is singular") from None
    if not np.all(np.isfinite(B_inv)) or np.linalg.det(B) == 0:
        raise ValueError("reparameterisation matrix B is singular")
    return np.swapaxes(B_inv, -1, -2) @ np.asarray(info, dtype=float) @ B_inv
