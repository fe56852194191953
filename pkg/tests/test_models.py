import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advdesign.models import (
    BoxPenalty,
    Design,
    Free,
    GeostatModel,
    LogitTransformed,
    PKModel,
    PoissonModel,
    constraint_from_name,
    fisher_dtau,
    geostat_fisher,
    get_model,
    pk_fisher,
    pk_jacobian,
    pk_mean,
    poisson_expected_fisher,
    poisson_fisher,
    reparameterized_expected_fisher,
)

from conftest import central_difference

TAU_GRID = np.linspace(0.0, 1.0, 1001)


def _assert_fisher_valid(info):
    np.testing.assert_allclose(info, np.swapaxes(info, -1, -2), atol=1e-10 * max(1.0, np.abs(info).max()))
    eig = np.linalg.eigvalsh(info)
    assert eig.min() >= -1e-10 * max(1.0, np.abs(eig).max())


# --- constraints and designs -------------------------------------------------


def test_logit_roundtrip_and_derivative():
    c = LogitTransformed()
    tau = np.array([0.1, 0.5, 0.9])
    np.testing.assert_allclose(c.to_tau(c.from_tau(tau)), tau)
    z = c.from_tau(tau)
    np.testing.assert_allclose(c.dtau_dz(z), np.diag(central_difference(c.to_tau, z, 1e-6)), rtol=1e-8)


def test_box_penalty_gradient_points_into_box():
    box = BoxPenalty()
    tau = np.array([-0.7, -0.2, 0.3, 0.51])
    g = box.penalty_grad(tau)
    # a descent step on the penalty moves outside coordinates back toward the box
    assert g[0] < 0 and g[3] > 0 and g[1] == g[2] == 0
    assert box.penalty(tau) == pytest.approx(1e3 * (0.2 + 0.01))


def test_constraint_validation():
    with pytest.raises(ValueError):
        BoxPenalty(lower=1.0, upper=0.0)
    with pytest.raises(ValueError):
        constraint_from_name("sideways")
    assert isinstance(constraint_from_name("free"), Free)


def test_design_rejects_non_finite():
    with pytest.raises(ValueError):
        Design(np.array([1.0, np.nan]))


def test_design_logit_stores_unconstrained_value():
    d = Design.from_tau(np.array([0.5]), LogitTransformed())
    assert d.coords[0] == 0.0 and d.tau[0] == 0.5


def test_get_model_by_name():
    assert get_model("pk", sigma=0.2).sigma == 0.2
    with pytest.raises(ValueError):
        get_model("nonesuch")


# --- priors --------------------------------------------------------------------


def test_poisson_prior_moments(rng):
    theta = PoissonModel().sample_prior(rng, 100_000)
    se = theta[:, 0].std(ddof=1) / np.sqrt(len(theta))
    assert abs(theta[:, 0].mean() - 2.0) < 4 * se
    assert theta[:, 0].var(ddof=1) == pytest.approx(2.0, rel=0.05)
    assert np.all(theta > 0)


def test_pk_prior_median(rng):
    theta = PKModel().sample_prior(rng, 100_000)[:, 0]
    boot = np.random.default_rng(7)
    medians = [np.median(boot.choice(theta, theta.size)) for _ in range(200)]
    assert abs(np.median(theta) - 0.1) < 4 * np.std(medians, ddof=1)


def test_pk_prior_log_variance(rng):
    theta = PKModel().sample_prior(rng, 100_000)
    np.testing.assert_allclose(np.log(theta).var(axis=0), 0.05, rtol=0.03)


def test_sampling_is_deterministic_given_stream():
    a = PKModel().sample_prior(np.random.default_rng(3), 10)
    b = PKModel().sample_prior(np.random.default_rng(3), 10)
    np.testing.assert_array_equal(a, b)


def test_geostat_fisher_ignores_theta(rng):
    model = GeostatModel(n_points=5)
    tau = model.random_designs(rng, 1)[0]
    base = model.mean_fisher(model.sample_prior(rng, 3), tau)
    for count in (1, 7):
        np.testing.assert_array_equal(model.mean_fisher(model.sample_prior(rng, count), tau), base)


# --- Poisson -------------------------------------------------------------------


def test_poisson_fisher_examples():
    np.testing.assert_allclose(poisson_fisher([1.0, 1.0], [0.5]), np.diag([1.0, 0.5]))
    info = poisson_expected_fisher([0.5])
    np.testing.assert_allclose(info, np.diag([1.0, 0.5]))
    assert np.linalg.det(info) == pytest.approx(0.5)
    assert np.trace(poisson_expected_fisher([1.0])) == 2.0


def test_poisson_rejects_bad_inputs():
    with pytest.raises(ValueError):
        poisson_fisher([0.0, 1.0], [0.5])
    with pytest.raises(ValueError):
        PoissonModel(omega1=1.0, omega2=2.0)


def test_poisson_average_converges_to_expected(rng):
    model = PoissonModel(exact=False)
    theta = model.sample_prior(rng, 1_000_000)
    per = model.fisher(theta, np.array([0.3]))  # (K, 2, 2)
    mean = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / np.sqrt(len(theta))
    exact = poisson_expected_fisher([0.3])
    diag = np.diag_indices(2)
    assert np.all(np.abs(mean - exact)[diag] < 4 * se[diag])
    assert np.all(mean[0, 1] == 0) and np.all(mean[1, 0] == 0)


def test_poisson_grid_argmax():
    info = PoissonModel().expected_fisher(TAU_GRID[:, None])
    assert TAU_GRID[np.argmax(np.linalg.det(info))] == 0.5
    assert TAU_GRID[np.argmax(np.trace(info, axis1=1, axis2=2))] == 1.0


def test_poisson_exact_dtau_constant():
    model = PoissonModel()
    for t in (0.0, 0.3, 0.9):
        np.testing.assert_array_equal(model.mean_fisher_dtau(None, np.array([t]))[0], np.diag([2.0, -1.0]))


def test_poisson_dtau_under_logit_chain_rule():
    model = PoissonModel()
    design = Design.from_tau(np.array([0.3]), LogitTransformed())
    got = fisher_dtau(model, None, design)[0]
    expected = np.diag([2.0, -1.0]) * 0.3 * 0.7
    np.testing.assert_allclose(got, expected, rtol=1e-12)


# --- PK --------------------------------------------------------------------------

THETA0 = np.array([0.1, 1.0, 20.0])


def test_pk_mean_examples():
    assert pk_mean(THETA0, 0.0) == 0.0
    assert pk_mean(THETA0, 1.0) == pytest.approx(11.93240, abs=5e-6)
    assert pk_mean(THETA0, 1.0) == pytest.approx(11.932399485878, rel=1e-12)
    assert abs(pk_mean(THETA0, 1e4)) < 1e-300


def test_pk_mean_degenerate_theta_raises():
    with pytest.raises(ValueError):
        pk_mean([1.0, 1.0, 20.0], 2.0)


def test_pk_jacobian_third_column():
    tau = np.linspace(0.5, 24, 15)
    J = pk_jacobian(THETA0, tau)
    np.testing.assert_allclose(J[:, 2], -pk_mean(THETA0, tau) / THETA0[2], rtol=1e-13)


def test_pk_jacobian_zero_time_row():
    J = pk_jacobian(THETA0, np.array([0.0, 2.0]))
    np.testing.assert_array_equal(J[0], 0.0)


def test_pk_jacobian_finite_differences(rng):
    model = PKModel()
    for theta in model.sample_prior(rng, 20):
        tau = rng.uniform(0, 24, 15)
        J = pk_jacobian(theta, tau)
        fd = np.stack(
            [
                (pk_mean(theta + h * e, tau) - pk_mean(theta - h * e, tau)) / (2 * h)
                for e, h in zip(np.eye(3), 1e-6 * theta)
            ],
            axis=1,
        )
        np.testing.assert_allclose(J, fd, rtol=1e-6, atol=1e-6 * np.abs(J).max())


def test_pk_fisher_single_time_rank_one():
    info = pk_fisher(THETA0, np.array([3.0]))
    assert np.linalg.matrix_rank(info, tol=1e-8 * np.abs(info).max()) == 1
    assert abs(np.linalg.det(info)) < 1e-9 * np.abs(info).max() ** 3


def test_pk_fisher_sigma_scaling(rng):
    tau = rng.uniform(0, 24, 15)
    np.testing.assert_allclose(pk_fisher(THETA0, tau, sigma=0.2), pk_fisher(THETA0, tau, sigma=0.1) / 4, rtol=1e-14)


def test_pk_model_matches_function(rng):
    model = PKModel()
    theta = model.sample_prior(rng, 4)
    tau = model.random_designs(rng, 2)
    batched = model.fisher(theta, tau)
    assert batched.shape == (2, 4, 3, 3)
    np.testing.assert_allclose(batched[1, 2], pk_fisher(theta[2], tau[1]), rtol=1e-12)
    np.testing.assert_allclose(model.mean_fisher(theta, tau), batched.mean(axis=1), rtol=1e-12)


def test_pk_point_information_sums_to_fisher(rng):
    model = PKModel()
    theta = model.sample_prior(rng, 6)
    tau = model.random_designs(rng, 1)[0]
    np.testing.assert_allclose(model.point_information(theta, tau).sum(axis=0), model.mean_fisher(theta, tau), rtol=1e-12)


# --- geostat ---------------------------------------------------------------------


def test_geostat_zero_design():
    np.testing.assert_array_equal(geostat_fisher(np.zeros(10)), np.zeros((2, 2)))


def test_geostat_single_point():
    np.testing.assert_allclose(geostat_fisher(np.array([0.5, 0.5])), np.full((2, 2), 0.025), rtol=1e-14)


def test_geostat_two_coincident_points():
    x = np.array([[0.3, -0.2], [0.3, -0.2]])
    sigma = np.array([[10.0, 9.0], [9.0, 10.0]])
    inv = np.array([[10.0, -9.0], [-9.0, 10.0]]) / 19.0
    np.testing.assert_allclose(inv @ sigma, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(geostat_fisher(x.ravel()), x.T @ inv @ x, rtol=1e-10, atol=1e-12)


def test_geostat_rejects_non_finite():
    with pytest.raises(ValueError):
        geostat_fisher(np.array([0.1, np.inf]))


# --- derivatives and reparameterisation -------------------------------------------


def _fd_mean_fisher(model, theta, tau, h):
    return central_difference(lambda t: model.mean_fisher(theta, t), tau, h)


@pytest.mark.parametrize(
    "model,h",
    [(PoissonModel(exact=False), 1e-6), (PKModel(), 1e-6), (GeostatModel(n_points=8, length_scale=0.2), 1e-6)],
    ids=["poisson", "pk", "geostat"],
)
def test_fisher_dtau_finite_differences(model, h):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        theta = model.sample_prior(rng, 3)
        tau = model.random_designs(rng, 1)[0]
        if model.name == "poisson":
            tau = np.clip(tau, 0.05, 0.95)
        got = model.mean_fisher_dtau(theta, tau)
        fd = _fd_mean_fisher(model, theta, tau, h)
        scale = np.abs(fd).max(axis=(-2, -1), keepdims=True) + 1e-300
        worst = max(worst, np.max(np.abs(got - fd) / scale))
    assert worst < 1e-5


def test_geostat_dtau_with_close_points():
    model = GeostatModel(n_points=6, length_scale=0.01)
    tau = np.array([0.40, 0.40, 0.405, 0.402, -0.3, 0.2, -0.3, 0.21, 0.0, 0.0, 0.45, -0.45])
    fd = _fd_mean_fisher(model, None, tau, 1e-7)
    got = model.mean_fisher_dtau(None, tau)
    np.testing.assert_allclose(got, fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["poisson", "pk", "geostat"]), st.integers(0, 2**32 - 1))
def test_fisher_symmetric_psd(name, seed):
    rng = np.random.default_rng(seed)
    model = get_model(name, **({"n_points": 20} if name == "geostat" else {}))
    theta = model.sample_prior(rng, 4)
    tau = model.random_designs(rng, 2)
    for info in model.fisher(theta, tau).reshape(-1, model.p, model.p):
        _assert_fisher_valid(info)


def test_reparameterisation_identity():
    info = np.diag([1.0, 0.5])
    np.testing.assert_array_equal(reparameterized_expected_fisher(info, np.eye(2)), info)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reparameterisation_determinant_scaling(seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((2, 2)) + 1.5 * np.eye(2)
    if abs(np.linalg.det(B)) < 0.1:
        B += 2 * np.eye(2)
    info = poisson_expected_fisher([rng.uniform(0.05, 0.95)])
    ratio = np.linalg.det(reparameterized_expected_fisher(info, B)) / np.linalg.det(info)
    assert ratio == pytest.approx(np.linalg.det(B) ** -2, rel=1e-8)


def test_reparameterised_trace_weights():
    B = np.array([[2.0, 0.3], [0.1, 0.5]])
    binv = np.linalg.inv(B)
    w_prime = np.diag(binv @ binv.T) * np.array([2.0, 1.0])
    for t in (0.2, 0.7):
        info = poisson_expected_fisher([t])
        got = np.trace(reparameterized_expected_fisher(info, B))
        assert got == pytest.approx(t * w_prime[0] + (1 - t) * w_prime[1], rel=1e-12)


def test_singular_reparameterisation_rejected():
    with pytest.raises(ValueError):
        reparameterized_expected_fisher(np.eye(2), np.array([[1.0, 2.0], [2.0, 4.0]]))
