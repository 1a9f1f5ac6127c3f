"""Explicit d-dimensional one-pass SGD for the noisy quadratic teacher.

This is the ground-truth simulator the reduced descriptions are checked
against: fresh Gaussian inputs at every step, optional per-step projection of
every student row back onto the radius-sqrt(d) sphere, and sufficient
statistics measured directly from the weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics_ode import population_risk
from .errors import DivergenceError, IllConditionedInitError, StateInvalidError
from .state import OverlapState, Trajectory, TrajectoryBuilder

# noise is drawn in blocks of at most this many values (keeps memory flat
# and makes trajectories independent of the record stride)
_BLOCK_VALUES = 8_388_608

_ERR_CAP = {np.dtype(np.float64): 1e100, np.dtype(np.float32): 1e18}


@dataclass
class TeacherModel:
    """Target direction on the radius-sqrt(d) sphere plus label noise level."""

    wstar: np.ndarray
    delta: float = 0.0

    def __post_init__(self):
        self.wstar = np.asarray(self.wstar, dtype=np.float64)
        d = self.wstar.shape[0]
        norm2 = float(self.wstar @ self.wstar)
        if abs(norm2 / d - 1.0) > 1e-8:
            raise StateInvalidError(
                f"teacher norm^2 must equal the dimension: got {norm2} at d={d}"
            )
        if self.delta < 0:
            raise StateInvalidError("noise level cannot be negative")

    @property
    def d(self):
        return self.wstar.shape[0]


@dataclass
class StudentNetwork:
    W: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W))
        self.a = np.atleast_1d(np.asarray(self.a, dtype=self.W.dtype))

    @property
    def p(self):
        return self.W.shape[0]

    @property
    def d(self):
        return self.W.shape[1]

    def validate_spherical(self, tol=1e-8):
        norms = np.einsum("jd,jd->j", self.W, self.W) / self.d
        if np.any(np.abs(norms - 1.0) > tol):
            raise StateInvalidError(f"student rows left the sphere: norms^2/d={norms}")
        return self

    def copy(self):
        return StudentNetwork(self.W.copy(), self.a.copy())


@dataclass
class Sample:
    x: np.ndarray
    y: float


def _resolve_seed(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _generator(seed):
    return np.random.Generator(np.random.SFC64(_resolve_seed(seed)))


def make_teacher(d, delta=0.0, seed=0):
    rng = _generator(seed)
    w = rng.standard_normal(d)
    w *= np.sqrt(d) / np.linalg.norm(w)
    return TeacherModel(w, delta)


def teacher_label(teacher, x, z=0.0):
    """Noisy quadratic label y = (w*^T x)^2 + sqrt(delta) z."""
    lam = float(teacher.wstar @ x)
    return lam * lam + np.sqrt(teacher.delta) * z


def sample_batch(teacher, n, seed=0):
    """Stream of n fresh samples; x ~ N(0, I_d/d), label from the teacher.

    Draws d+1 normals per sample (input + label noise) so the stream layout
    matches the block-drawing simulator exactly.
    """
    if n < 1:
        raise StateInvalidError("need at least one sample")
    rng = _generator(seed)
    d = teacher.d
    inv_sqrt_d = 1.0 / np.sqrt(d)
    for _ in range(n):
        row = rng.standard_normal(d + 1)
        x = row[:d] * inv_sqrt_d
        yield Sample(x, teacher_label(teacher, x, row[d]))


def sgd_step(net, sample, params, teacher=None):
    """One functional SGD update on a single sample.

    The first layer takes learning rate gamma on the full gradient (which
    carries 1/p); the second layer, when trained, takes gamma/d.  In
    spherical mode every row is projected back to norm^2 = d after the step.
    """
    W, a = net.W.astype(np.float64), net.a.astype(np.float64)
    p, d = W.shape
    lam = W @ sample.x
    err = float(a @ (lam * lam)) / p - sample.y
    coef = -(2.0 * params.gamma / p) * err * a * lam
    W = W + coef[:, None] * sample.x[None, :]
    if params.spherical:
        W *= np.sqrt(d) / np.linalg.norm(W, axis=1, keepdims=True)
    if params.train_a:
        a = a - (params.gamma / (p * d)) * err * lam * lam
    return StudentNetwork(W, a)


def measure_overlaps(net, teacher):
    """Sufficient statistics of an explicit network: m = Ww*/d, Q = WW^T/d."""
    W = net.W.astype(np.float64)
    d = net.d
    m = W @ teacher.wstar / d
    Q = W @ W.T / d
    rho = float(teacher.wstar @ teacher.wstar) / d
    return OverlapState(net.a.astype(np.float64).copy(), m, Q, rho)


def init_network(d, p, mode="spherical-uniform", seed=0, a_init="ones"):
    """Explicit random initialization; same modes as the overlap-level one."""
    if d <= p:
        raise IllConditionedInitError(f"need d > p, got d={d}, p={p}")
    rng = _generator(seed)
    if mode == "orthogonal-exact":
        G = rng.standard_normal((d, p))
        basis, _ = np.linalg.qr(np.column_stack([rng.standard_normal(d), G]))
        W = np.sqrt(d) * basis[:, 1 : p + 1].T
    elif mode == "gaussian-unconstrained":
        W = rng.standard_normal((p, d))
    elif mode == "spherical-uniform":
        W = rng.standard_normal((p, d))
        W *= np.sqrt(d) / np.linalg.norm(W, axis=1, keepdims=True)
    else:
        raise StateInvalidError(f"unknown init mode: {mode}")
    if a_init == "ones":
        a = np.ones(p)
    elif a_init == "bernoulli":
        a = rng.integers(0, 2, size=p).astype(np.float64)
    else:
        raise StateInvalidError(f"unknown second-layer init: {a_init}")
    return StudentNetwork(W, a)


def run_sgd(teacher, net0, params, n_steps, record_stride=None, seed=0,
            dtype=np.float64, max_records=100_000):
    """Simulate projected one-pass SGD and record measured overlaps.

    Time is rescaled as t = step * gamma/(p d).  The noise stream is drawn in
    fixed-size blocks, so a trajectory is bit-identical for any record stride
    given (seed, dtype).  Weight blowup raises a divergence error naming the
    1-based step of the offending sample.
    """
    if n_steps < 0:
        raise StateInvalidError("n_steps cannot be negative")
    d, p = teacher.d, net0.p
    if params.d != d or params.p != p:
        raise StateInvalidError(
            f"params ({params.d}, {params.p}) disagree with models ({d}, {p})"
        )
    dtype = np.dtype(dtype)
    # private copies: the kernel mutates these in place
    W = np.array(net0.W, dtype=dtype, order="C")
    a = np.array(net0.a, dtype=dtype, order="C")
    wstar = np.ascontiguousarray(teacher.wstar, dtype=dtype)
    if record_stride is None:
        record_stride = max(1, int(np.ceil(n_steps / max_records)))
    ty = dtype.type
    kernel_args = (
        ty(2.0 * params.gamma / p),
        ty(params.gamma / (p * d)),
        ty(np.sqrt(params.delta)),
        ty(1.0 / np.sqrt(d)),
        ty(_ERR_CAP[dtype]),
        params.spherical,
        params.train_a,
    )
    dt = params.dt_sgd
    builder = TrajectoryBuilder(
        p,
        rho=float(wstar @ wstar) / d,
        meta={"seed": seed, "dt": dt, "source": "sgd", "dtype": str(dtype)},
    )

    def record(step):
        # A member on its way to blowup can overflow the risk evaluation at a
        # stride boundary; the kernel raises right after, so keep it quiet.
        with np.errstate(over="ignore", invalid="ignore"):
            st = measure_overlaps(StudentNetwork(W, a), teacher)
            risk = population_risk(st, params.delta)
        builder.append(step * dt, risk, st.m, st.Q, st.a)

    record(0)
    rng = _generator(seed)
    cap = max(1, _BLOCK_VALUES // (d + 1))
    block, pos = None, 0
    done = 0
    next_record = record_stride
    while done < n_steps:
        upto = min(next_record, n_steps)
        while done < upto:
            if block is None or pos == block.shape[0]:
                block = rng.standard_normal((cap, d + 1), dtype=dtype)
                pos = 0
            take = min(upto - done, block.shape[0] - pos)
            ret = _kernels.sgd_block(W, a, wstar, block[pos : pos + take], *kernel_args)
            if ret >= 0:
                raise DivergenceError(
                    done + int(ret) + 1,
                    f"residual overflow at step {done + int(ret) + 1}",
                )
            pos += take
            done += take
        record(done)
        next_record += record_stride
    return builder.build()


@dataclass
class EnsembleResult:
    """Per-member records reduced in seed order."""

    t: np.ndarray
    risk: np.ndarray      # (n_members, n_records)
    max_abs_m: np.ndarray  # (n_members, n_records)

    @property
    def n_members(self):
        return self.risk.shape[0]

    @property
    def risk_mean(self):
        return self.risk.mean(axis=0)

    @property
    def risk_se(self):
        return self.risk.std(axis=0, ddof=1) / np.sqrt(self.n_members)


def _ensemble_member(args):
    (i, seed, params, n_steps, record_stride, dtype, init_mode, a_init,
     shared_init) = args
    init_key = (1_000_000,) if shared_init else (i, 0)
    init_ss = np.random.SeedSequence(seed, spawn_key=init_key)
    teacher = make_teacher(params.d, params.delta, init_ss)
    net = init_network(
        params.d, params.p, init_mode,
        np.random.SeedSequence(seed, spawn_key=init_key + (1,)), a_init,
    )
    traj = run_sgd(
        teacher, net, params, n_steps, record_stride,
        seed=np.random.SeedSequence(seed, spawn_key=(i, 1)), dtype=dtype,
    )
    return i, traj.t, traj.risk, np.max(np.abs(traj.m), axis=1)


def sgd_ensemble(params, n_steps, n_members, record_stride=None, seed=0,
                 dtype=np.float64, init_mode="spherical-uniform",
                 a_init="ones", shared_init=False, workers=1):
    """Independent SGD runs reduced deterministically in seed order.

    Each member draws its own teacher, initialization and data noise from
    seed-sequence spawn keys; with shared_init all members start from one
    common (teacher, network) draw and differ only in the data.
    """
    jobs = [
        (i, seed, params, n_steps, record_stride, dtype, init_mode, a_init,
         shared_init)
        for i in range(n_members)
    ]
    results = {}
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, t, risk, maxm in pool.map(_ensemble_member, jobs):
                results[i] = (t, risk, maxm)
    else:
        for job in jobs:
            i, t, risk, maxm = _ensemble_member(job)
            results[i] = (t, risk, maxm)
    t = results[0][0]
    risk = np.stack([results[i][1] for i in range(n_members)])
    maxm = np.stack([results[i][2] for i in range(n_members)])
    return EnsembleResult(t, risk, maxm)


# ------------------------------------------------------------------ checkpoint
# Layout (little-endian): magic b"MLCK", u32 version=1, u32 d, u32 p,
# u32 flags (bit 0: rows are on the sphere), then W as p*d float64 row-major,
# then a as p float64.

_CKPT_MAGIC = b"MLCK"
_CKPT_HEADER = struct.Struct("<4sIIII")


def save_checkpoint(path, net, spherical=False):
    with open(path, "wb") as fh:
        fh.write(
            _CKPT_HEADER.pack(_CKPT_MAGIC, 1, net.d, net.p, 1 if spherical else 0)
        )
        fh.write(np.ascontiguousarray(net.W, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(net.a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (StudentNetwork, spherical flag)."""
    with open(path, "rb") as fh:
        magic, version, d, p, flags = _CKPT_HEADER.unpack(fh.read(_CKPT_HEADER.size))
        if magic != _CKPT_MAGIC:
            raise StateInvalidError(f"not a checkpoint file: magic={magic!r}")
        if version != 1:
            raise StateInvalidError(f"unsupported checkpoint version {version}")
        W = np.frombuffer(fh.read(8 * p * d), dtype="<f8").reshape(p, d).copy()
        a = np.frombuffer(fh.read(8 * p), dtype="<f8").copy()
    return StudentNetwork(W, a), bool(flags & 1)
