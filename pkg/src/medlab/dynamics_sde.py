"""First-order stochastic correction to the reduced dynamics.

The sufficient statistics receive, on top of their deterministic drift, a
Gaussian kick with covariance given by the per-sample increment covariance
and an overall sqrt(gamma/(p d)) amplitude.  The covariance of the stacked
increments (M_1..M_p, Q_11..Q_pp) is assembled from the same moment engine as
the drift; its symmetric square root drives Euler-Maruyama steps, with the
noise rows projected onto the sphere when the norms are constrained.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import moments
from .dynamics_ode import drift as ode_drift
from .dynamics_ode import population_risk, spherical_project
from .errors import (
    StateInvalidError,
    StepRejectedError,
    UnsupportedConfigurationError,
)
from .state import OverlapState, TrajectoryBuilder, _upper_pairs

_P_CAP = 8
_CLAMP_WARN_FRACTION = 1e-6


@dataclass
class DiffusionCoeffs:
    """Covariance of the stacked overlap increments and its PSD square root.

    Stacking order: the p teacher-overlap increments, then the p*p student
    entries row-major (symmetric pairs carry identical rows).
    """

    cov: np.ndarray
    root: np.ndarray


def _stack_index_map(p):
    """Map stacked index (size p + p^2) -> unique-variable index."""
    n_u = p + p * (p + 1) // 2
    upper = {pair: k for k, pair in enumerate(_upper_pairs(p))}
    idx = np.empty(p + p * p, dtype=np.intp)
    for j in range(p):
        idx[j] = j
    for i in range(p):
        for j in range(p):
            idx[p + i * p + j] = p + upper[(min(i, j), max(i, j))]
    return idx, n_u


def _check_sde_support(state, params):
    if state.p > _P_CAP:
        raise UnsupportedConfigurationError(
            f"diffusion covariance is limited to p <= {_P_CAP}, got p={state.p}"
        )
    if not np.allclose(state.a, 1.0, rtol=0.0, atol=1e-12):
        raise UnsupportedConfigurationError(
            "the stochastic correction is derived for a fixed unit second layer"
        )
    if params.train_a:
        raise UnsupportedConfigurationError(
            "the stochastic correction does not support training the second layer"
        )


def diffusion_covariance(state, params):
    """Exact covariance of the per-sample overlap increments at this state."""
    _check_sde_support(state, params)
    p = state.p
    out = moments.covariance_poly_set(p).evaluate(
        state.omega(), state.a, params.gamma, params.delta
    )
    idx, n_u = _stack_index_map(p)
    mean = out[:n_u]
    second = np.empty((n_u, n_u))
    k = n_u
    for i in range(n_u):
        for j in range(i, n_u):
            second[i, j] = out[k]
            second[j, i] = out[k]
            k += 1
    cov_u = second - np.outer(mean, mean)
    cov = cov_u[np.ix_(idx, idx)]
    eigval, eigvec = np.linalg.eigh(cov)
    trace = float(np.trace(cov))
    if eigval[0] < -1e-9 * max(1.0, trace):
        raise StateInvalidError(
            f"increment covariance has a negative eigenvalue {eigval[0]}"
        )
    clamped = np.clip(eigval, 0.0, None)
    lost = float(np.sum(clamped - eigval))
    if lost > _CLAMP_WARN_FRACTION * max(trace, 1e-300):
        warnings.warn(
            f"clamped negative covariance mass {lost:g} (trace {trace:g})",
            stacklevel=2,
        )
    root = (eigvec * np.sqrt(clamped)) @ eigvec.T
    return DiffusionCoeffs(cov, root)


def em_step(state, coeffs, drift, dt, noise, params):
    """One Euler-Maruyama update of (m, Q); second layer stays fixed.

    With a zero noise vector this reduces exactly to the deterministic Euler
    step, including the spherical projection and diagonal re-pinning.
    """
    if dt <= 0:
        raise StateInvalidError("dt must be positive")
    p = state.p
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (p + p * p,):
        raise StateInvalidError(
            f"noise must have length p + p^2 = {p + p * p}, got {noise.shape}"
        )
    root = coeffs.root
    if params.spherical:
        dm, dQ = spherical_project(drift.psi, drift.phi, state)
        # project the noise rows the same way the drift is projected
        diag_rows = root[[p + j * p + j for j in range(p)]]
        m_rows = root[:p] - 0.5 * state.m[:, None] * diag_rows
        q_rows = np.empty((p * p, root.shape[1]))
        for i in range(p):
            for j in range(p):
                q_rows[i * p + j] = root[p + i * p + j] - 0.5 * state.Q[i, j] * (
                    diag_rows[i] + diag_rows[j]
                )
    else:
        dm, dQ = drift.psi, drift.phi
        m_rows = root[:p]
        q_rows = root[p:]
    pref = np.sqrt(params.gamma / (params.p * params.d) * dt)
    m_new = state.m + dt * dm + pref * (m_rows @ noise)
    q_kick = (q_rows @ noise).reshape(p, p)
    Q_new = state.Q + dt * dQ + pref * 0.5 * (q_kick + q_kick.T)
    if params.spherical:
        np.fill_diagonal(Q_new, 1.0)
    new = OverlapState(state.a.copy(), m_new, Q_new, state.rho)
    try:
        new.validate(tol=1e-9)
    except StateInvalidError as exc:
        raise StepRejectedError(f"step produced an invalid state: {exc}")
    return new


def integrate_sde(initial, params, dt=None, horizon=1.0, seed=0,
                  record_stride=None, max_records=100_000):
    """Euler-Maruyama path of the corrected overlap process.

    dt defaults to gamma/(p d), one SGD sample per step.  A rejected step is
    retried with halved dt and fresh noise, starting again from the base dt at
    every new step; after three halvings within one step the rejection
    propagates.  Deterministic given the seed.
    """
    if dt is None:
        dt = params.dt_sgd
    if dt <= 0 or horizon <= 0:
        raise StateInvalidError("dt and horizon must be positive")
    state = initial.copy().validate()
    _check_sde_support(state, params)
    n_steps = max(1, int(round(horizon / dt)))
    if record_stride is None:
        record_stride = max(1, int(np.ceil(n_steps / max_records)))
    rng = np.random.Generator(np.random.SFC64(np.random.SeedSequence(seed)))
    p = state.p
    builder = TrajectoryBuilder(
        p, rho=state.rho, meta={"seed": seed, "dt": dt, "source": "sde"}
    )
    builder.append(0.0, population_risk(state, params.delta), state.m, state.Q, state.a)
    t = 0.0
    steps_done = 0
    while t < horizon - 1e-12 * horizon:
        coeffs = diffusion_covariance(state, params)
        drift = ode_drift(state, params)
        halvings = 0
        dt_cur = dt
        while True:
            step_dt = min(dt_cur, horizon - t)
            noise = rng.standard_normal(p + p * p)
            try:
                state = em_step(state, coeffs, drift, step_dt, noise, params)
                break
            except StepRejectedError:
                if halvings >= 3:
                    raise
                halvings += 1
                dt_cur /= 2.0
        t += step_dt
        steps_done += 1
        if steps_done % record_stride == 0 or t >= horizon - 1e-12 * horizon:
            builder.append(
                t, population_risk(state, params.delta), state.m, state.Q, state.a
            )
    return builder.build()


# --------------------------------------------------------- p=1 spherical paths
#
# On the p=1 sphere the constrained process is one-dimensional: the projected
# noise row has effective variance v^T Sigma v with v = e_M - (m/2) e_Q, a
# polynomial in m.  The ensemble integrator below fits that polynomial once
# (exactly: it has degree <= 8) from the engine covariance and then advances
# all paths with a single normal draw per path-step.

_VEFF_CACHE = {}


def _effective_variance_poly(gamma, delta):
    key = (float(gamma), float(delta))
    if key not in _VEFF_CACHE:
        nodes = np.cos(np.linspace(0.0, np.pi, 9))
        params = _FitParams(gamma=gamma, delta=delta)
        vals = []
        for m in nodes:
            st = OverlapState(np.ones(1), np.array([m]), np.eye(1), 1.0)
            cov = diffusion_covariance(st, params).cov
            vals.append(cov[0, 0] - m * cov[0, 1] + 0.25 * m * m * cov[1, 1])
        V = np.vander(nodes, 9, increasing=True)
        _VEFF_CACHE[key] = np.linalg.solve(V, np.array(vals))
    return _VEFF_CACHE[key]


@dataclass
class _FitParams:
    gamma: float
    delta: float
    p: int = 1
    d: int = 1
    spherical: bool = True
    train_a: bool = False


@dataclass
class SDEEnsembleResult:
    t: np.ndarray
    m: np.ndarray     # (n_paths, n_records)
    risk: np.ndarray  # (n_paths, n_records)

    @property
    def n_paths(self):
        return self.m.shape[0]

    @property
    def risk_mean(self):
        return self.risk.mean(axis=0)

    @property
    def risk_se(self):
        return self.risk.std(axis=0, ddof=1) / np.sqrt(self.n_paths)


def sde_ensemble_p1(params, m0, horizon, n_paths, dt=None, seed=0,
                    record_stride=None, max_records=2_000):
    """Vectorized ensemble of p=1 spherical paths from a common start."""
    if params.p != 1 or not params.spherical:
        raise UnsupportedConfigurationError(
            "the vectorized ensemble handles the p=1 spherical case only"
        )
    if dt is None:
        dt = params.dt_sgd
    n_steps = max(1, int(round(horizon / dt)))
    if record_stride is None:
        record_stride = max(1, int(np.ceil(n_steps / max_records)))
    gamma, delta = params.gamma, params.delta
    veff = _effective_variance_poly(gamma, delta)
    rng = np.random.Generator(np.random.SFC64(np.random.SeedSequence(seed)))
    pref = np.sqrt(gamma / params.d * dt)
    m = np.full(n_paths, float(m0))
    rec_t = [0.0]
    rec_m = [m.copy()]
    drift_c = 4.0 * (1.0 - 6.0 * gamma)
    for step in range(1, n_steps + 1):
        var = np.clip(np.polynomial.polynomial.polyval(m, veff), 0.0, None)
        m = (
            m
            + dt * m * (drift_c * (1.0 - m * m) - 2.0 * gamma * delta)
            + pref * np.sqrt(var) * rng.standard_normal(n_paths)
        )
        np.clip(m, -1.0, 1.0, out=m)
        if step % record_stride == 0 or step == n_steps:
            rec_t.append(step * dt)
            rec_m.append(m.copy())
    t = np.array(rec_t)
    mm = np.stack(rec_m, axis=1)
    risk = 2.0 * (1.0 - mm * mm) + delta / 2.0
    return SDEEnsembleResult(t, mm, risk)
