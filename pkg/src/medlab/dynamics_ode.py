"""Deterministic reduced dynamics of the sufficient statistics.

In the large-dimension limit the overlaps evolve by their expected per-sample
increments in rescaled time t = (steps)·γ/(pd).  The drift of every overlap is
an expectation of a fixed field polynomial and is assembled through the moment
engine; a closed matrix form for unit second layer is kept as an independent
cross-check.
"""

from __future__ import annotations

import numpy as np

from . import moments
from .errors import (
    IllConditionedInitError,
    IntegrationBlowupError,
    StateInvalidError,
    UnsupportedConfigurationError,
)
from .state import OverlapState, TaskParams, Trajectory, TrajectoryBuilder


def population_risk(state, delta):
    """Expected half squared residual as a closed function of the overlaps.

    (3ρ²+Δ)/2 − (1/p)Σ_j a_j(ρ Q_jj + 2 m_j²)
             + (1/2p²)Σ_jl a_j a_l (Q_jj Q_ll + 2 Q_jl²).
    """
    a, m, Q, rho = state.a, state.m, state.Q, state.rho
    p = state.p
    diag = np.diag(Q)
    first = np.dot(a, rho * diag + 2.0 * m * m) / p
    second = (np.outer(a, a) * (np.outer(diag, diag) + 2.0 * Q * Q)).sum() / (
        2.0 * p * p
    )
    return (3.0 * rho * rho + delta) / 2.0 - first + second


class DriftResult:
    """Drift of (a, m, Q) before any spherical projection."""

    __slots__ = ("a_dot", "psi", "phi")

    def __init__(self, a_dot, psi, phi):
        self.a_dot = a_dot
        self.psi = psi
        self.phi = phi


def drift(state, params):
    """Expected per-unit-time increments of the sufficient statistics.

    Returns the second-layer drift, the teacher-overlap drift Ψ, and the
    symmetric student-overlap drift Φ (including the learning-rate correction
    from the squared update).  The joint field covariance must be PSD.
    """
    p = state.p
    omega = state.omega()  # raises StateInvalidError when not PSD
    out = moments.drift_poly_set(p).evaluate(
        omega, state.a, params.gamma, params.delta
    )
    a_dot = out[:p]
    psi = out[p : 2 * p]
    phi = np.empty((p, p))
    k = 2 * p
    for j in range(p):
        for l in range(j, p):
            phi[j, l] = out[k]
            phi[l, j] = out[k]
            k += 1
    return DriftResult(a_dot, psi, phi)


def matrix_drift_a1(state, params):
    """Closed matrix form of the overlap drift for unit second layer.

    Independent of the moment engine; used as a cross-implementation oracle.
    """
    if not np.allclose(state.a, 1.0, atol=0.0, rtol=0.0):
        raise UnsupportedConfigurationError(
            "matrix drift is derived for a unit second layer"
        )
    p = state.p
    m = state.m
    Q = state.Q
    rho = state.rho
    gamma, delta = params.gamma, params.delta
    trQ = np.trace(Q)
    trQ2 = float((Q * Q).sum())
    mm = np.outer(m, m)
    m2 = float(m @ m)
    Q2 = Q @ Q
    dm = 2.0 * (rho - trQ / p) * m + 4.0 * (rho * m - Q @ m / p)
    dQ = 4.0 * (rho - trQ / p) * Q + 8.0 * (mm - Q2 / p)
    corr = 3.0 * rho * rho * Q + 12.0 * rho * mm
    corr += ((trQ * trQ + 2.0 * trQ2) * Q + 4.0 * trQ * Q2 + 8.0 * Q @ Q2) / (p * p)
    corr -= (
        2.0
        / p
        * (
            (rho * trQ + 2.0 * m2) * Q
            + 2.0 * trQ * mm
            + 2.0 * rho * Q2
            + 4.0 * (mm @ Q + Q @ mm)
        )
    )
    corr += delta * Q
    dQ = dQ + (4.0 * gamma / p) * corr
    return dm, 0.5 * (dQ + dQ.T)


def spherical_project(psi, phi, state):
    """Project the raw drift onto the fixed-norm constraint.

    dm_j = Ψ_j − (m_j/2)Φ_jj;  dQ_jl = Φ_jl − (Q_jl/2)(Φ_jj + Φ_ll); the
    diagonal drift vanishes identically.
    """
    diag = np.diag(phi)
    dm = psi - 0.5 * state.m * diag
    dQ = phi - 0.5 * state.Q * (diag[:, None] + diag[None, :])
    np.fill_diagonal(dQ, 0.0)
    return dm, dQ


def _field(state, params):
    """Time derivative of (a, m, Q) in the requested geometry."""
    res = drift(state, params)
    if params.spherical:
        dm, dQ = spherical_project(res.psi, res.phi, state)
    else:
        dm, dQ = res.psi, res.phi
    da = res.a_dot if params.train_a else np.zeros_like(state.a)
    return da, dm, dQ


def integrate(
    initial,
    params,
    dt=1e-3,
    horizon=10.0,
    scheme="rk4",
    record_stride=None,
    max_records=100_000,
):
    """Integrate the reduced ODEs and record (t, state, risk) along the way.

    Spherical mode re-pins the student diagonal to one after every step so
    rounding cannot accumulate into the constraint.  Records every step unless
    a stride is given; the default stride keeps at most ``max_records`` points.
    """
    if dt <= 0 or horizon <= 0:
        raise StateInvalidError("dt and horizon must be positive")
    if scheme not in ("euler", "rk4"):
        raise StateInvalidError(f"unknown scheme: {scheme}")
    n_steps = int(round(horizon / dt))
    if record_stride is None:
        record_stride = max(1, int(np.ceil(n_steps / max_records)))
    state = initial.copy().validate()
    builder = TrajectoryBuilder(
        state.p,
        rho=state.rho,
        meta={"dt": dt, "scheme": scheme, "source": "ode"},
    )
    builder.append(0.0, population_risk(state, params.delta), state.m, state.Q, state.a)
    for step in range(1, n_steps + 1):
        try:
            if scheme == "euler":
                da, dm, dQ = _field(state, params)
                state.a = state.a + dt * da
                state.m = state.m + dt * dm
                state.Q = state.Q + dt * dQ
            else:
                k1 = _field(state, params)
                s2 = OverlapState(
                    state.a + 0.5 * dt * k1[0],
                    state.m + 0.5 * dt * k1[1],
                    state.Q + 0.5 * dt * k1[2],
                    state.rho,
                )
                k2 = _field(s2, params)
                s3 = OverlapState(
                    state.a + 0.5 * dt * k2[0],
                    state.m + 0.5 * dt * k2[1],
                    state.Q + 0.5 * dt * k2[2],
                    state.rho,
                )
                k3 = _field(s3, params)
                s4 = OverlapState(
                    state.a + dt * k3[0],
                    state.m + dt * k3[1],
                    state.Q + dt * k3[2],
                    state.rho,
                )
                k4 = _field(s4, params)
                state.a = state.a + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
                state.m = state.m + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
                state.Q = state.Q + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        except StateInvalidError as exc:
            raise IntegrationBlowupError(step, f"invalid state at step {step}: {exc}")
        if params.spherical:
            np.fill_diagonal(state.Q, 1.0)
            if np.any(np.abs(state.m) > 1.0 + 1e-8):
                raise IntegrationBlowupError(
                    step, f"overlap left the sphere at step {step}"
                )
        if not (np.all(np.isfinite(state.m)) and np.all(np.isfinite(state.Q))):
            raise IntegrationBlowupError(step, f"non-finite state at step {step}")
        if step % record_stride == 0 or step == n_steps:
            builder.append(
                step * dt,
                population_risk(state, params.delta),
                state.m,
                state.Q,
                state.a,
            )
    return builder.build()


def init_overlaps(d, p, mode="spherical-uniform", seed=0):
    """Measure the overlaps of an explicit random initialization in dimension d.

    gaussian-unconstrained: standard normal weight entries; spherical-uniform:
    rows renormalized to the radius-√d sphere; orthogonal-exact: the idealized
    zero-overlap state used by the linearized theory.  The teacher direction
    is drawn uniformly on the radius-√d sphere from the same stream.
    """
    if d <= p:
        raise IllConditionedInitError(f"need d > p, got d={d}, p={p}")
    if mode == "orthogonal-exact":
        return OverlapState(np.ones(p), np.zeros(p), np.eye(p), 1.0)
    if mode not in ("gaussian-unconstrained", "spherical-uniform"):
        raise StateInvalidError(f"unknown init mode: {mode}")
    rng = np.random.Generator(np.random.SFC64(np.random.SeedSequence(seed)))
    wstar = rng.standard_normal(d)
    wstar *= np.sqrt(d) / np.linalg.norm(wstar)
    W = rng.standard_normal((p, d))
    if mode == "spherical-uniform":
        W *= np.sqrt(d) / np.linalg.norm(W, axis=1, keepdims=True)
    m = W @ wstar / d
    Q = W @ W.T / d
    if mode == "spherical-uniform":
        np.fill_diagonal(Q, 1.0)
    return OverlapState(np.ones(p), m, Q, 1.0)
