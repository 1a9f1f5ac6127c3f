"""Reduced ODE dynamics: risk identities, drift oracles, integrator behavior."""

import io

import numpy as np
import pytest
from numpy.testing import assert_allclose

from medlab import dynamics_ode as dyn
from medlab import moments
from medlab.errors import (
    IllConditionedInitError,
    IntegrationBlowupError,
    StateInvalidError,
    UnsupportedConfigurationError,
)
from medlab.state import OverlapState, TaskParams, Trajectory


def random_state(rng, p, rho=1.0, spherical=True, unit_a=False, d=64):
    """Overlap state realized by explicit finite-dimensional vectors (so the
    joint covariance is PSD by construction)."""
    W = rng.standard_normal((p, d))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    if not spherical:
        W *= rng.uniform(0.6, 1.4, size=(p, 1))
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    Q = W @ W.T
    if spherical:
        np.fill_diagonal(Q, 1.0)
    m = np.sqrt(rho) * W @ v
    a = np.ones(p) if unit_a else rng.uniform(0.5, 1.5, size=p)
    return OverlapState(a, m, Q, rho)


# ------------------------------------------------------------------------ risk

def test_risk_at_recovery_orthogonal_and_zero_overlap():
    delta = 0.4
    # perfect recovery, p=1
    st = OverlapState(np.ones(1), np.ones(1), np.eye(1))
    assert dyn.population_risk(st, delta) == pytest.approx(delta / 2, abs=1e-14)
    # zero overlap on the sphere, p=1
    st = OverlapState(np.ones(1), np.zeros(1), np.eye(1))
    assert dyn.population_risk(st, delta) == pytest.approx(2 + delta / 2, abs=1e-14)
    # exactly orthogonal students, any width
    for p in (1, 3, 7):
        st = dyn.init_overlaps(100, p, "orthogonal-exact")
        assert dyn.population_risk(st, delta) == pytest.approx(
            1 + 1 / p + delta / 2, abs=1e-14
        )


def test_spherical_p1_risk_profile():
    """On the p=1 sphere the risk is 2(1-m^2) + delta/2."""
    for m in (-0.9, -0.3, 0.0, 0.5, 1.0):
        st = OverlapState(np.ones(1), np.array([m]), np.eye(1))
        assert dyn.population_risk(st, 0.8) == pytest.approx(
            2 * (1 - m * m) + 0.4, abs=1e-13
        )


def naive_expectation(poly, omega, a, gamma, delta):
    total = 0.0
    for (fields, zpow, apow, gpow), coeff in poly.items():
        if zpow % 2 == 1:
            continue
        val = coeff * gamma**gpow * delta ** (zpow // 2)
        val *= moments._double_factorial(zpow - 1)
        for j, e in enumerate(apow):
            val *= a[j] ** e
        total += val * moments.wick_moment(fields, omega)
    return total


@pytest.mark.parametrize("p,rho", [(1, 1.0), (2, 1.0), (3, 1.7), (2, 0.4)])
def test_risk_is_half_mean_squared_error(p, rho):
    """Closed risk formula equals E[err^2]/2 computed from field moments."""
    rng = np.random.default_rng(40 + p)
    delta = 0.35
    for _ in range(5):
        st = random_state(rng, p, rho=rho, spherical=False)
        half_mse = 0.5 * naive_expectation(
            moments.error_square_poly(p), st.omega(), st.a, 0.0, delta
        )
        assert dyn.population_risk(st, delta) == pytest.approx(half_mse, rel=1e-12)


# ----------------------------------------------------------------------- drift

@pytest.mark.parametrize("p", [1, 2, 3, 5])
def test_engine_drift_matches_matrix_form(p):
    """Engine-generated drift agrees with the closed matrix expression for
    unit second layer, on and off the sphere."""
    rng = np.random.default_rng(50 + p)
    params = TaskParams(d=1000, p=p, gamma=0.09, delta=0.45, spherical=False)
    for spherical in (True, False):
        for _ in range(13 if p < 5 else 5):
            st = random_state(rng, p, spherical=spherical, unit_a=True)
            res = dyn.drift(st, params)
            dm, dQ = dyn.matrix_drift_a1(st, params)
            assert_allclose(res.psi, dm, rtol=1e-10, atol=1e-10)
            assert_allclose(res.phi, dQ, rtol=1e-10, atol=1e-10)


def test_matrix_drift_requires_unit_second_layer():
    st = OverlapState(np.array([1.0, 0.9]), np.zeros(2), np.eye(2))
    with pytest.raises(UnsupportedConfigurationError):
        dyn.matrix_drift_a1(st, TaskParams(d=10, p=2, gamma=0.1))


def test_projected_p1_drift_closed_form():
    """dm/dt = m[4(1-6g)(1-m^2) - 2 g D] on the p=1 sphere."""
    rng = np.random.default_rng(60)
    for _ in range(20):
        m0 = rng.uniform(-0.99, 0.99)
        gamma = rng.uniform(0.0, 0.16)
        delta = rng.uniform(0.0, 1.5)
        st = OverlapState(np.ones(1), np.array([m0]), np.eye(1))
        res = dyn.drift(st, TaskParams(d=100, p=1, gamma=gamma, delta=delta))
        dm, dQ = dyn.spherical_project(res.psi, res.phi, st)
        expect = m0 * (4 * (1 - 6 * gamma) * (1 - m0 * m0) - 2 * gamma * delta)
        assert dm[0] == pytest.approx(expect, rel=1e-10, abs=1e-12)
        assert dQ[0, 0] == 0.0


def test_fixed_points_of_projected_flow():
    params = TaskParams(d=100, p=1, gamma=0.1, delta=0.0)
    for m0 in (0.0, 1.0, -1.0):
        st = OverlapState(np.ones(1), np.array([m0]), np.eye(1))
        res = dyn.drift(st, params)
        dm, _ = dyn.spherical_project(res.psi, res.phi, st)
        assert abs(dm[0]) < 1e-12


# ------------------------------------------------------------------ integrator

def closed_p1_solution(m0, gamma, t):
    # solution of dm/dt = c m (1 - m^2) with c = 4(1-6g), noiseless target
    c = 4 * (1 - 6 * gamma)
    e = np.exp(c * t)
    return m0 * e / np.sqrt(1 + m0 * m0 * (e * e - 1))


def test_rk4_matches_closed_solution():
    gamma = 0.05
    st = OverlapState(np.ones(1), np.array([0.05]), np.eye(1))
    traj = dyn.integrate(st, TaskParams(d=100, p=1, gamma=gamma), dt=1e-3, horizon=3.0)
    expect = closed_p1_solution(0.05, gamma, traj.t)
    assert np.max(np.abs(traj.m[:, 0] - expect)) < 1e-10


def test_scheme_convergence_orders():
    gamma, horizon = 0.05, 1.0
    st = OverlapState(np.ones(1), np.array([0.1]), np.eye(1))
    params = TaskParams(d=100, p=1, gamma=gamma)
    truth = closed_p1_solution(0.1, gamma, horizon)
    errs = {}
    for scheme, dts in (("euler", (0.02, 0.01)), ("rk4", (0.2, 0.1))):
        errs[scheme] = [
            abs(dyn.integrate(st, params, dt=dt, horizon=horizon, scheme=scheme).m[-1, 0] - truth)
            for dt in dts
        ]
    assert errs["euler"][0] / errs["euler"][1] == pytest.approx(2.0, rel=0.15)
    assert errs["rk4"][0] / errs["rk4"][1] == pytest.approx(16.0, rel=0.25)


def test_plateau_excess_risk():
    """Long-time excess risk settles at gamma*delta/(1-6*gamma)."""
    for gamma in (0.05, 0.1):
        for delta in (0.5, 1.0):
            st = OverlapState(np.ones(1), np.array([0.3]), np.eye(1))
            traj = dyn.integrate(
                st, TaskParams(d=100, p=1, gamma=gamma, delta=delta),
                dt=1e-3, horizon=14.0,
            )
            excess = traj.risk[-1] - delta / 2
            assert excess == pytest.approx(gamma * delta / (1 - 6 * gamma), rel=1e-6)


def test_zero_overlap_is_invariant():
    st = dyn.init_overlaps(100, 3, "orthogonal-exact")
    traj = dyn.integrate(st, TaskParams(d=100, p=3, gamma=0.1, delta=0.2), dt=1e-2, horizon=1.0)
    assert np.all(traj.m == 0.0)


def test_overlap_grows_monotonically_without_noise():
    st = OverlapState(np.ones(1), np.array([0.01]), np.eye(1))
    traj = dyn.integrate(st, TaskParams(d=100, p=1, gamma=0.1), dt=1e-3, horizon=5.0)
    assert np.all(np.diff(traj.m[:, 0]) > 0)
    assert traj.m[-1, 0] > 0.99


def test_spherical_diagonal_stays_pinned():
    rng = np.random.default_rng(70)
    st = random_state(rng, 3, unit_a=True)
    traj = dyn.integrate(st, TaskParams(d=100, p=3, gamma=0.08, delta=0.3), dt=1e-2, horizon=2.0)
    diags = traj.Q[:, range(3), range(3)]
    assert np.all(diags == 1.0)


def test_recorded_risk_matches_recorded_state():
    rng = np.random.default_rng(71)
    st = random_state(rng, 2, unit_a=True)
    delta = 0.25
    traj = dyn.integrate(st, TaskParams(d=100, p=2, gamma=0.05, delta=delta), dt=1e-2, horizon=1.0)
    for i in range(traj.n_records):
        assert traj.risk[i] == pytest.approx(
            dyn.population_risk(traj.state_at(i), delta), abs=1e-12
        )


def test_second_layer_frozen_unless_trained():
    rng = np.random.default_rng(72)
    st = random_state(rng, 2)
    frozen = dyn.integrate(st, TaskParams(d=100, p=2, gamma=0.05, delta=0.1), dt=1e-2, horizon=0.5)
    assert np.all(frozen.a == frozen.a[0])
    trained = dyn.integrate(
        st, TaskParams(d=100, p=2, gamma=0.05, delta=0.1, train_a=True),
        dt=1e-2, horizon=0.5,
    )
    assert not np.allclose(trained.a[-1], trained.a[0])


def test_unconstrained_blowup_raises_with_step():
    st = OverlapState(np.ones(1), np.array([0.1]), np.eye(1))
    params = TaskParams(d=100, p=1, gamma=8.0, delta=0.0, spherical=False)
    with pytest.raises(IntegrationBlowupError) as err:
        dyn.integrate(st, params, dt=0.05, horizon=50.0)
    assert err.value.step > 0


def test_integrate_validates_arguments():
    st = OverlapState(np.ones(1), np.zeros(1), np.eye(1))
    params = TaskParams(d=100, p=1, gamma=0.1)
    with pytest.raises(StateInvalidError):
        dyn.integrate(st, params, dt=-1e-3, horizon=1.0)
    with pytest.raises(StateInvalidError):
        dyn.integrate(st, params, dt=1e-3, horizon=1.0, scheme="heun")


def test_record_stride_thins_output():
    st = OverlapState(np.ones(1), np.array([0.1]), np.eye(1))
    params = TaskParams(d=100, p=1, gamma=0.1)
    traj = dyn.integrate(st, params, dt=1e-3, horizon=1.0, record_stride=100)
    assert traj.n_records == 11
    assert traj.t[1] == pytest.approx(0.1)


# ------------------------------------------------------------- initialization

def test_init_overlaps_modes():
    st = dyn.init_overlaps(50, 4, "orthogonal-exact")
    assert np.all(st.m == 0.0) and np.all(st.Q == np.eye(4)) and np.all(st.a == 1.0)

    st = dyn.init_overlaps(500, 3, "spherical-uniform", seed=11)
    assert_allclose(np.diag(st.Q), 1.0, atol=1e-12)
    assert np.all(np.abs(st.m) < 0.3)

    st = dyn.init_overlaps(500, 3, "gaussian-unconstrained", seed=11)
    assert not np.allclose(np.diag(st.Q), 1.0, atol=1e-3)  # diag fluctuates ~1/sqrt(d)
    assert_allclose(np.diag(st.Q), 1.0, atol=0.3)


def test_init_overlaps_teacher_overlap_scale():
    """sqrt(d) * m_j has unit variance under random initialization."""
    d, n = 400, 3000
    vals = np.array([
        dyn.init_overlaps(d, 1, "spherical-uniform", seed=s).m[0] for s in range(n)
    ])
    assert np.sqrt(d) * vals.std() == pytest.approx(1.0, abs=0.06)
    assert abs(np.sqrt(d) * vals.mean()) < 0.06


def test_init_overlaps_is_deterministic_and_guards_dimension():
    a = dyn.init_overlaps(100, 2, "spherical-uniform", seed=3)
    b = dyn.init_overlaps(100, 2, "spherical-uniform", seed=3)
    assert np.all(a.m == b.m) and np.all(a.Q == b.Q)
    with pytest.raises(IllConditionedInitError):
        dyn.init_overlaps(3, 5, "spherical-uniform")
    with pytest.raises(StateInvalidError):
        dyn.init_overlaps(100, 2, "haar-orthogonal")


# ------------------------------------------------------------------ trajectory

def test_trajectory_csv_roundtrip_is_exact():
    rng = np.random.default_rng(80)
    st = random_state(rng, 2, unit_a=True)
    traj = dyn.integrate(
        st, TaskParams(d=100, p=2, gamma=0.07, delta=0.15), dt=1e-2, horizon=0.3
    )
    buf = io.StringIO(traj.to_csv_string())
    back = Trajectory.from_csv(buf)
    assert np.array_equal(back.t, traj.t)
    assert np.array_equal(back.risk, traj.risk)
    assert np.array_equal(back.m, traj.m)
    assert np.array_equal(back.Q, traj.Q)
    assert np.array_equal(back.a, traj.a)
    assert back.meta["scheme"] == "rk4"


def test_trajectory_csv_header_names(tmp_path):
    st = OverlapState(np.ones(2), np.zeros(2), np.eye(2))
    traj = dyn.integrate(st, TaskParams(d=100, p=2, gamma=0.05), dt=0.1, horizon=0.2)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    header = [
        line for line in path.read_text().splitlines() if not line.startswith("#")
    ][0]
    assert header == "t,risk,m_1,m_2,Q_11,Q_12,Q_22,a_1,a_2"
