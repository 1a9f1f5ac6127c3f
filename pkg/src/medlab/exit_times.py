"""Escape times from the mediocrity plateau: formulas, Monte Carlo, roots.

Near the uninformed initialization the overlap dynamics linearize; the time
at which the excess risk first drops by a relative factor T then has closed
annealed/quenched expressions in terms of the linearized rates, a hypergeometric
correction when the p=1 stochasticity is kept, and a numeric counterpart
obtained by locating the threshold crossing on any simulated trajectory.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import (
    DegenerateDiffusionError,
    IllConditionedInitError,
    NoCrossingError,
    PrecisionError,
    StateInvalidError,
    UnstableRateError,
)
from .state import TaskParams

_HYP2F2_MAX_TERMS = 10_000


def _generator(seed):
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.SFC64(seed))


# ----------------------------------------------------------------- linearized

@dataclass
class LinearizedRates:
    """Growth/decay rates of the overlap statistics near zero overlap.

    omega_m drives the teacher overlaps (growing), omega_q the off-diagonal
    student overlaps (shrinking); mu and sigma2 are the drift and noise
    variance of the scalar Ornstein-Uhlenbeck picture at p=1, m=0.
    """

    omega_m: float
    omega_q: float
    mu: float
    sigma2: float


def linearized_rates(params):
    p, gamma, delta = params.p, params.gamma, params.delta
    omega_m = 4.0 * (1.0 - (gamma / p) * (1.0 + 1.0 / p + 4.0 / p**2 + delta / 2.0))
    omega_q = (8.0 / p) * (1.0 - 8.0 * gamma / p**2)
    mu = 4.0 * (1.0 - 6.0 * gamma) - 2.0 * gamma * delta
    sigma2 = (gamma / (p * params.d)) * (48.0 + 4.0 * delta)
    return LinearizedRates(omega_m, omega_q, mu, sigma2)


@dataclass
class ExitTimeQuery:
    """A single exit-time request against the linearized theory."""

    T: float
    params: TaskParams
    mode: str = "annealed"
    mc_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.T < 1.0:
            raise StateInvalidError(f"threshold T must lie in (0, 1), got {self.T}")
        if self.mode not in ("annealed", "quenched"):
            raise StateInvalidError(f"unknown exit-time mode: {self.mode!r}")


# ------------------------------------------------------------- trajectory root

def exit_time_numeric(traj, T, delta):
    """First time the excess risk drops to (1-T) times its initial value.

    The crossing is located on the linear interpolant between recorded points,
    so the resolution is bounded by the recording stride.
    """
    if not 0.0 < T < 1.0:
        raise StateInvalidError(f"threshold T must lie in (0, 1), got {T}")
    excess = np.asarray(traj.risk, dtype=float) - delta / 2.0
    if excess[0] <= 0.0:
        raise StateInvalidError("initial excess risk must be positive")
    target = (1.0 - T) * excess[0]
    below = np.nonzero(excess <= target)[0]
    if below.size == 0:
        raise NoCrossingError(excess[-1] / excess[0])
    k = below[0]
    if k == 0:
        return float(traj.t[0])
    t0, t1 = traj.t[k - 1], traj.t[k]
    e0, e1 = excess[k - 1], excess[k]
    return float(t0 + (target - e0) * (t1 - t0) / (e1 - e0))


# ------------------------------------------------------------------ p=1 closed

def _p1_rate(gamma, delta):
    return 8.0 * (1.0 - 6.0 * gamma) - 4.0 * gamma * delta


def annealed_exit_time_p1(T, d, gamma, delta):
    """Exit time for the average initial overlap, m0^2 = 1/d."""
    if not 0.0 < T < 1.0:
        raise StateInvalidError(f"threshold T must lie in (0, 1), got {T}")
    rate = _p1_rate(gamma, delta)
    if rate <= 0.0:
        raise UnstableRateError(
            f"linearized escape rate {rate} is non-positive at gamma={gamma}"
        )
    return math.log(T * d + (1.0 - T)) / rate


def quenched_exit_time_p1(T, d, gamma, delta, mc_samples=100_000, seed=0):
    """Exit time averaged over the chi-square law of the initial overlap.

    Returns (mean, standard error) of log(T d / mu0 + 1 - T) / rate with
    mu0 = g^2, g standard normal.
    """
    if not 0.0 < T < 1.0:
        raise StateInvalidError(f"threshold T must lie in (0, 1), got {T}")
    if mc_samples < 1_000:
        raise StateInvalidError("mc_samples must be at least 1000")
    rate = _p1_rate(gamma, delta)
    if rate <= 0.0:
        raise UnstableRateError(
            f"linearized escape rate {rate} is non-positive at gamma={gamma}"
        )
    mu0 = _generator(seed).standard_normal(mc_samples) ** 2
    samples = np.log(T * d / mu0 + (1.0 - T)) / rate
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(mc_samples))


# --------------------------------------------------------------- general width

def _overlap_draws(d, p, n, rng):
    """Joint law of (mu0, tau0) for p+1 independent uniform directions.

    Sampled through the Bartlett factorization of the Gram matrix of p+1
    standard Gaussian d-vectors (chi distributed diagonal, standard normal
    below), which reproduces every pairwise inner product of the normalized
    vectors without touching d-dimensional storage.
    """
    k = p + 1
    L = np.zeros((n, k, k))
    rows, cols = np.tril_indices(k, -1)
    L[:, rows, cols] = rng.standard_normal((n, rows.size))
    for i in range(k):
        L[:, i, i] = np.sqrt(rng.chisquare(d - i, size=n))
    G = L @ np.swapaxes(L, 1, 2)
    norms = np.sqrt(np.diagonal(G, axis1=1, axis2=2))
    overlap = G / (norms[:, :, None] * norms[:, None, :])
    # index p is the teacher direction v; 0..p-1 are the students
    mu0 = d * np.sum(overlap[:, :p, p] ** 2, axis=1)
    iu, ju = np.triu_indices(p, 1)
    tau0 = 2.0 * d * np.sum(overlap[:, iu, ju] ** 2, axis=1)
    return mu0, tau0


def sample_Pdp(d, p, seed=0):
    """One draw of (mu0, tau0): rescaled squared overlaps of p+1 random
    directions (teacher-student overlaps and off-diagonal student overlaps)."""
    if d <= p:
        raise IllConditionedInitError(f"need d > p, got d={d}, p={p}")
    mu0, tau0 = _overlap_draws(d, p, 1, _generator(seed))
    return float(mu0[0]), float(tau0[0])


def exit_time_from_overlaps(T, params, mu0, tau0):
    """Linearized-theory exit time at explicit initial overlaps (mu0, tau0)."""
    rates = linearized_rates(params)
    if rates.omega_m <= 0.0:
        raise UnstableRateError(
            f"omega_m = {rates.omega_m} is non-positive at gamma={params.gamma}"
        )
    p, d = params.p, params.d
    arg = (T * p * (p + 1) * d + (2.0 * mu0 * p - tau0) * (1.0 - T)) / (
        2.0 * mu0 * p
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(arg) / (2.0 * rates.omega_m)
    return out


def exit_time_general_p(query):
    """Annealed or quenched exit time at arbitrary width.

    Annealed returns (value, None); quenched returns the Monte Carlo
    (mean, standard error) over the initial-overlap law, rejecting (and
    warning about) degenerate draws whose log argument is non-positive.
    """
    params = query.params
    rates = linearized_rates(params)
    if rates.omega_m <= 0.0:
        raise UnstableRateError(
            f"omega_m = {rates.omega_m} is non-positive at gamma={params.gamma}"
        )
    if rates.omega_q <= 0.0:
        warnings.warn(
            f"omega_q = {rates.omega_q:g} is non-positive: the off-diagonal "
            "overlaps do not decay and the linearized formula is outside its "
            "derivation regime",
            stacklevel=2,
        )
    T, p, d = query.T, params.p, params.d
    if query.mode == "annealed":
        value = math.log((T * (p + 1) * d + (p + 1) * (1.0 - T)) / (2.0 * p)) / (
            2.0 * rates.omega_m
        )
        return value, None
    if query.mc_samples < 1_000:
        raise StateInvalidError("mc_samples must be at least 1000")
    if d <= p:
        raise IllConditionedInitError(f"need d > p, got d={d}, p={p}")
    mu0, tau0 = _overlap_draws(d, p, query.mc_samples, _generator(query.seed))
    samples = exit_time_from_overlaps(T, params, mu0, tau0)
    good = np.isfinite(samples)
    n_bad = int(query.mc_samples - good.sum())
    if n_bad:
        warnings.warn(
            f"rejected {n_bad} degenerate quenched draws with non-positive "
            "log argument",
            stacklevel=2,
        )
    samples = samples[good]
    return (
        float(samples.mean()),
        float(samples.std(ddof=1) / np.sqrt(samples.size)),
    )


def linearized_excess_risk(t, params, mu0, tau0):
    """Excess risk of the linearized overlap dynamics at initial overlaps
    (mu0, tau0): the orthogonal-network plateau 1 + 1/p plus one decaying and
    one exponentially growing correction of order 1/d."""
    rates = linearized_rates(params)
    t = np.asarray(t, dtype=float)
    p, d = params.p, params.d
    return (
        1.0
        + 1.0 / p
        + (tau0 / (d * p**2)) * np.exp(-2.0 * rates.omega_q * t)
        - (2.0 * mu0 / (d * p)) * np.exp(2.0 * rates.omega_m * t)
    )


# ----------------------------------------------------------------- optimal lr

def gamma_opt(p, delta):
    """Learning rate minimizing the number of samples to exit the plateau."""
    if p < 1 or delta < 0:
        raise StateInvalidError("need p >= 1 and delta >= 0")
    return p**3 / (8.0 + 2.0 * p + (2.0 + delta) * p**2)


def min_steps_and_gain(p, d, delta, T):
    """Annealed minimum sample count at gamma_opt, and the limiting speedup
    of infinite width over p = 1 (a factor (12+delta)/(2+delta))."""
    if not 0.0 < T < 1.0:
        raise StateInvalidError(f"threshold T must lie in (0, 1), got {T}")
    if p < 1 or delta < 0:
        raise StateInvalidError("need p >= 1 and delta >= 0")
    s_min = (
        d
        * (8.0 + 2.0 * p + (2.0 + delta) * p**2)
        * math.log((T * (p + 1) * d + (p + 1) * (1.0 - T)) / (2.0 * p))
        / (4.0 * p**2)
    )
    return s_min, (12.0 + delta) / (2.0 + delta)


# -------------------------------------------------------------- hypergeometric

def hyp2f2(z, tol=1e-12):
    """The (1,1;3/2,2) generalized hypergeometric series at real z.

    Summed term by term in arbitrary precision (the terms near n = |z| exceed
    the final value by ~e^|z| for negative z, so float64 cancels
    catastrophically); truncates when the next term falls below tol times the
    partial sum.
    """
    if tol <= 0.0:
        raise StateInvalidError("tol must be positive")
    if z == 0.0:
        return 1.0
    dps = max(15, int(0.4343 * abs(z) + 25))
    with mpmath.workdps(dps):
        zz = mpmath.mpf(z)
        term = mpmath.mpf(1)
        total = mpmath.mpf(1)
        for n in range(_HYP2F2_MAX_TERMS):
            term = term * zz * (n + 1) / ((n + 1.5) * (n + 2))
            if abs(term) < tol * abs(total):
                return float(total + term)
            total += term
    raise PrecisionError(
        f"hypergeometric series did not converge within {_HYP2F2_MAX_TERMS} "
        f"terms at z={z}"
    )


def sde_exit_time_p1(T, d, gamma, delta):
    """Mean first exit of the stochastically corrected p=1 overlap from
    (-sqrt(T), sqrt(T)), starting at exactly zero overlap."""
    if not 0.0 < T < 1.0:
        raise StateInvalidError(f"threshold T must lie in (0, 1), got {T}")
    if T > 0.1:
        warnings.warn(
            f"T={T} is outside the small-threshold regime where the "
            "linearized diffusion approximates the dynamics",
            stacklevel=2,
        )
    rates = linearized_rates(TaskParams(d=d, p=1, gamma=gamma, delta=delta))
    if rates.sigma2 == 0.0:
        raise DegenerateDiffusionError(
            "zero diffusion at gamma=0: the deterministic dynamics never "
            "leave the zero-overlap fixed point"
        )
    return (T / rates.sigma2) * hyp2f2(-rates.mu * T / rates.sigma2)


def ou_mean_exit_time_mc(T, d, gamma, delta, n_paths=10_000, dt=1e-4, seed=0):
    """Euler-Maruyama oracle for sde_exit_time_p1: simulate
    dm = mu m dt + sigma db from m=0 and average the first time |m| reaches
    sqrt(T).  Returns (mean, standard error)."""
    if not 0.0 < T < 1.0:
        raise StateInvalidError(f"threshold T must lie in (0, 1), got {T}")
    rates = linearized_rates(TaskParams(d=d, p=1, gamma=gamma, delta=delta))
    if rates.sigma2 == 0.0:
        raise DegenerateDiffusionError("zero diffusion at gamma=0")
    rng = _generator(seed)
    sig_dt = math.sqrt(rates.sigma2 * dt)
    barrier = math.sqrt(T)
    m = np.zeros(n_paths)
    exit_time = np.empty(n_paths)
    alive = np.arange(n_paths)
    step = 0
    max_steps = int(5e7 / max(n_paths, 1)) + 10**6
    while alive.size:
        step += 1
        if step > max_steps:
            raise PrecisionError(
                f"{alive.size} OU paths still inside after {step - 1} steps"
            )
        m = m * (1.0 + rates.mu * dt) + sig_dt * rng.standard_normal(alive.size)
        out = np.abs(m) >= barrier
        if out.any():
            exit_time[alive[out]] = step * dt
            keep = ~out
            m = m[keep]
            alive = alive[keep]
    return (
        float(exit_time.mean()),
        float(exit_time.std(ddof=1) / np.sqrt(n_paths)),
    )
