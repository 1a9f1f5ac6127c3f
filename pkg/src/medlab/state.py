"""Shared state types: sufficient statistics, task parameters, trajectories."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import StateInvalidError
from .moments import OmegaMatrix


@dataclass
class OverlapState:
    """Sufficient statistics driving the reduced dynamics.

    a: second-layer weights (p,); m: teacher overlaps (p,); Q: student overlap
    matrix (p, p); rho: teacher norm² over dimension (fixed along any run).
    """

    a: np.ndarray
    m: np.ndarray
    Q: np.ndarray
    rho: float = 1.0

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.m = np.atleast_1d(np.asarray(self.m, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.rho = float(self.rho)

    @property
    def p(self):
        return self.m.shape[0]

    def validate(self, tol=1e-10):
        p = self.p
        if self.a.shape != (p,) or self.Q.shape != (p, p):
            raise StateInvalidError("inconsistent overlap shapes")
        if not np.allclose(self.Q, self.Q.T, atol=tol, rtol=0.0):
            raise StateInvalidError("student overlap matrix must be symmetric")
        lam_min = float(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))[0])
        if lam_min < -tol:
            raise StateInvalidError(
                f"student overlap matrix not PSD (min eigenvalue {lam_min:.3e})"
            )
        bound = np.sqrt(np.clip(np.diag(self.Q) * self.rho, 0.0, None)) + tol
        if np.any(np.abs(self.m) > bound):
            raise StateInvalidError("teacher overlaps violate Cauchy-Schwarz")
        return self

    def omega(self):
        """Joint covariance of the student and teacher fields."""
        p = self.p
        w = np.empty((p + 1, p + 1))
        w[:p, :p] = 0.5 * (self.Q + self.Q.T)
        w[:p, p] = self.m
        w[p, :p] = self.m
        w[p, p] = self.rho
        return OmegaMatrix(w)

    def copy(self):
        return OverlapState(self.a.copy(), self.m.copy(), self.Q.copy(), self.rho)

    def is_spherical(self, tol=1e-8):
        return bool(
            np.allclose(np.diag(self.Q), 1.0, atol=tol) and abs(self.rho - 1.0) <= tol
        )


@dataclass
class TaskParams:
    """Problem configuration shared by every dynamics tier."""

    d: int
    p: int
    gamma: float
    delta: float = 0.0
    spherical: bool = True
    train_a: bool = False

    def __post_init__(self):
        self.d = int(self.d)
        self.p = int(self.p)
        self.gamma = float(self.gamma)
        self.delta = float(self.delta)
        if self.d < 1 or self.p < 1:
            raise StateInvalidError("d and p must be positive")
        if self.gamma < 0.0:
            raise StateInvalidError("learning rate must be non-negative")
        if self.delta < 0.0:
            raise StateInvalidError("label noise variance must be non-negative")

    @property
    def dt_sgd(self):
        """Rescaled time advanced by one sample."""
        return self.gamma / (self.p * self.d)


def _upper_pairs(p):
    return [(i, j) for i in range(p) for j in range(i, p)]


@dataclass
class Trajectory:
    """Time-indexed record of (t, state, risk) from any dynamics tier."""

    t: np.ndarray
    risk: np.ndarray
    m: np.ndarray  # (n, p)
    Q: np.ndarray  # (n, p, p)
    a: np.ndarray  # (n, p)
    rho: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def n_records(self):
        return self.t.shape[0]

    @property
    def p(self):
        return self.m.shape[1]

    def state_at(self, i):
        return OverlapState(self.a[i], self.m[i], self.Q[i], self.rho)

    def final_state(self):
        return self.state_at(self.n_records - 1)

    def to_csv(self, path_or_buf):
        """Write the record table with a mandatory header, floats at 17 significant digits.

        Metadata (seed, dt, scheme, ...) goes into leading '# key=value'
        comment lines so a file round-trips completely.
        """
        close = False
        if isinstance(path_or_buf, (str, bytes, os.PathLike)):
            buf = open(path_or_buf, "w")
            close = True
        else:
            buf = path_or_buf
        try:
            for key in sorted(self.meta):
                buf.write(f"# {key}={self.meta[key]}\n")
            buf.write(f"# rho={self.rho!r}\n")
            p = self.p
            cols = ["t", "risk"]
            cols += [f"m_{j + 1}" for j in range(p)]
            cols += [f"Q_{i + 1}{j + 1}" for i, j in _upper_pairs(p)]
            cols += [f"a_{j + 1}" for j in range(p)]
            buf.write(",".join(cols) + "\n")
            pairs = _upper_pairs(p)
            for i in range(self.n_records):
                row = [self.t[i], self.risk[i]]
                row += list(self.m[i])
                row += [self.Q[i, a_, b_] for a_, b_ in pairs]
                row += list(self.a[i])
                buf.write(",".join(f"{x:.17g}" for x in row) + "\n")
        finally:
            if close:
                buf.close()

    @classmethod
    def from_csv(cls, path_or_buf):
        close = False
        if isinstance(path_or_buf, (str, bytes, os.PathLike)):
            buf = open(path_or_buf)
            close = True
        else:
            buf = path_or_buf
        try:
            meta = {}
            line = buf.readline()
            while line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    meta[key.strip()] = val.strip()
                line = buf.readline()
            header = line.strip().split(",")
            p = sum(1 for c in header if c.startswith("m_"))
            data = np.loadtxt(buf, delimiter=",", ndmin=2)
        finally:
            if close:
                buf.close()
        rho = float(meta.pop("rho", 1.0))
        n = data.shape[0]
        t = data[:, 0]
        risk = data[:, 1]
        m = data[:, 2 : 2 + p]
        nq = p * (p + 1) // 2
        qflat = data[:, 2 + p : 2 + p + nq]
        a = data[:, 2 + p + nq :]
        Q = np.empty((n, p, p))
        for k, (i, j) in enumerate(_upper_pairs(p)):
            Q[:, i, j] = qflat[:, k]
            Q[:, j, i] = qflat[:, k]
        return cls(t=t, risk=risk, m=m, Q=Q, a=a, rho=rho, meta=meta)

    def to_csv_string(self):
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


class TrajectoryBuilder:
    """Accumulates records; single writer by construction."""

    def __init__(self, p, rho=1.0, meta=None):
        self.p = p
        self.rho = rho
        self.meta = dict(meta or {})
        self._t = []
        self._risk = []
        self._m = []
        self._Q = []
        self._a = []

    def append(self, t, risk, m, Q, a):
        self._t.append(float(t))
        self._risk.append(float(risk))
        self._m.append(np.array(m, dtype=float))
        self._Q.append(np.array(Q, dtype=float))
        self._a.append(np.array(a, dtype=float))

    def build(self):
        return Trajectory(
            t=np.array(self._t),
            risk=np.array(self._risk),
            m=np.array(self._m),
            Q=np.array(self._Q),
            a=np.array(self._a),
            rho=self.rho,
            meta=self.meta,
        )


def replace_params(params, **kw):
    return replace(params, **kw)
