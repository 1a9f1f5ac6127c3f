"""Gaussian moments of preactivation polynomials.

Everything downstream (deterministic drifts, diffusion covariances, the
population risk) reduces to mixed moments of a centered Gaussian vector of
"fields": the p student preactivations plus the teacher preactivation as the
last coordinate.  Moments are evaluated by summing over perfect pairings of
the index multiset, with products of covariance entries per pairing.

Field indices are 0-based rows of the covariance matrix; the teacher field is
the last index.  All functions here are pure; the structural pairing cache is
shared and safe under the GIL, the value memo is per call.
"""

from __future__ import annotations

import math
import warnings
from functools import lru_cache

import numpy as np

from .errors import StateInvalidError, UnsupportedOrderError

# Degree cap: the diffusion covariance of the overlap increments needs moments
# up to twelfth order and nothing in the package needs more.
MAX_DEGREE = 12

PSD_TOL = 1e-10


class OmegaMatrix:
    """Joint covariance of the student fields (rows 0..p-1) and the teacher field (last row).

    Symmetric and PSD to tolerance; tiny negative eigenvalues (from measured,
    noisy overlap matrices) are clipped with a warning, harder violations
    raise.  ``rho`` is the teacher variance, the bottom-right entry.
    """

    def __init__(self, entries, psd_tol=PSD_TOL):
        arr = np.array(entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
            raise StateInvalidError("covariance must be square, at least 2x2")
        if not np.allclose(arr, arr.T, atol=1e-10, rtol=0.0):
            raise StateInvalidError("covariance must be symmetric")
        arr = 0.5 * (arr + arr.T)
        lam_min = float(np.linalg.eigvalsh(arr)[0])
        if lam_min < -psd_tol:
            raise StateInvalidError(
                f"covariance not positive semi-definite (min eigenvalue {lam_min:.3e})"
            )
        if lam_min < 0.0:
            warnings.warn(
                f"clipping slightly negative covariance eigenvalue {lam_min:.3e}",
                stacklevel=2,
            )
            vals, vecs = np.linalg.eigh(arr)
            arr = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
            arr = 0.5 * (arr + arr.T)
        self.entries = arr

    @property
    def size(self):
        return self.entries.shape[0]

    @property
    def rho(self):
        return float(self.entries[-1, -1])

    def __getitem__(self, key):
        return self.entries[key]


def wick_moment(idx, omega):
    """Moment of the field monomial with index multiset ``idx`` under ``omega``.

    Sum over perfect matchings of the multiset of products of covariance
    entries over matched pairs; exactly 0 for odd degree.  The recursion pairs
    the first remaining index against every later one and memoizes on the
    residual sorted tuple, so repeated sub-multisets are evaluated once.
    """
    idx = tuple(sorted(idx))
    n = len(idx)
    if n > MAX_DEGREE:
        raise UnsupportedOrderError(
            f"moment degree {n} exceeds the supported maximum {MAX_DEGREE}"
        )
    if n % 2 == 1:
        return 0.0
    if n == 0:
        return 1.0
    w = omega.entries if isinstance(omega, OmegaMatrix) else np.asarray(omega, float)
    memo = {}

    def rec(rest):
        if not rest:
            return 1.0
        got = memo.get(rest)
        if got is not None:
            return got
        first = rest[0]
        tail = rest[1:]
        total = 0.0
        for k in range(len(tail)):
            total += w[first, tail[k]] * rec(tail[:k] + tail[k + 1 :])
        memo[rest] = total
        return total

    return rec(idx)


def sixth_moment_closed(alpha, beta, gamma, delta, omega):
    """Closed six-term form of E[λ_α λ_β λ_γ² λ_δ²].

    Must agree with ``wick_moment`` on the multiset {α, β, γ, γ, δ, δ}.
    """
    w = omega.entries if isinstance(omega, OmegaMatrix) else np.asarray(omega, float)
    a, b, g, d = alpha, beta, gamma, delta
    return (
        w[a, b] * w[g, g] * w[d, d]
        + 2.0 * w[a, b] * w[g, d] ** 2
        + 2.0 * w[a, g] * w[b, g] * w[d, d]
        + 4.0 * w[a, g] * w[b, d] * w[g, d]
        + 4.0 * w[a, d] * w[b, g] * w[g, d]
        + 2.0 * w[a, d] * w[b, d] * w[g, g]
    )


def displacement_moment(poly, omega):
    """Expectation of a polynomial of the fields, given as [(coefficient, index-multiset), ...].

    Plain linearity over ``wick_moment``; an empty term list is 0.  Noise
    contributions must be folded into the coefficients by the caller (the
    label noise is independent of every field).
    """
    total = 0.0
    for coeff, idx in poly:
        total += coeff * wick_moment(idx, omega)
    return total


# ---------------------------------------------------------------------------
# Structural pairing expansion and compiled polynomial sets.
#
# The drift and diffusion coefficients are expectations of fixed polynomials
# in the fields, the label noise, the second-layer weights, and the learning
# rate.  The field structure is independent of the numbers, so the pairing
# combinatorics are expanded once per polynomial shape and compiled into flat
# coefficient/exponent tables that evaluate in microseconds.
#
# A "field poly" maps (fields, zpow, apow, gpow) -> coefficient, where
#   fields: sorted tuple of field indices (the monomial in the fields),
#   zpow:   power of the noise unit sqrt(Δ)·z,
#   apow:   tuple of exponents of the p second-layer weights,
#   gpow:   power of the learning rate.
# An "omega poly" maps (wexp, apow, gpow, dpow) -> coefficient, with wexp the
# exponent tuple over the upper triangle of the covariance and dpow the power
# of the noise variance coming from folding z.
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _pairing_polynomial(fields):
    """All perfect pairings of a sorted index tuple, as {pair-exponents: count}.

    Keys are sorted tuples of (i, j) pairs with i <= j; values count how many
    matchings produce that covariance monomial.
    """
    n = len(fields)
    if n % 2 == 1:
        return {}
    if n == 0:
        return {(): 1}
    out = {}
    first = fields[0]
    tail = fields[1:]
    for k in range(len(tail)):
        j = tail[k]
        pair = (first, j) if first <= j else (j, first)
        for pairs, count in _pairing_polynomial(tail[:k] + tail[k + 1 :]).items():
            key = tuple(sorted(pairs + (pair,)))
            out[key] = out.get(key, 0) + count
    return out


def _double_factorial(n):
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def _poly_mul(pa, pb):
    out = {}
    for (fa, za, aa, ga), ca in pa.items():
        for (fb, zb, ab, gb), cb in pb.items():
            key = (
                tuple(sorted(fa + fb)),
                za + zb,
                tuple(x + y for x, y in zip(aa, ab)),
                ga + gb,
            )
            out[key] = out.get(key, 0.0) + ca * cb
    return {k: v for k, v in out.items() if v != 0.0}


def _poly_add(pa, pb, scale=1.0):
    out = dict(pa)
    for k, v in pb.items():
        out[k] = out.get(k, 0.0) + scale * v
    return {k: v for k, v in out.items() if v != 0.0}


def _poly_scale(pa, c):
    return {k: c * v for k, v in pa.items()}


def _field(p, j):
    return {((j,), 0, (0,) * p, 0): 1.0}


def _with_a(poly, j, p):
    """Multiply by the j-th second-layer weight."""
    out = {}
    for (f, z, ap, g), c in poly.items():
        ap2 = list(ap)
        ap2[j] += 1
        out[(f, z, tuple(ap2), g)] = c
    return out


def _with_gamma(poly):
    return {(f, z, ap, g + 1): c for (f, z, ap, g), c in poly.items()}


def error_field_poly(p):
    """The per-sample residual: network output minus label, as a field poly."""
    poly = {}
    for j in range(p):
        ap = [0] * p
        ap[j] = 1
        poly[((j, j), 0, tuple(ap), 0)] = 1.0 / p
    poly[((p, p), 0, (0,) * p, 0)] = -1.0
    poly[((), 1, (0,) * p, 0)] = -1.0  # the noise unit sqrt(Δ)·z
    return poly


def teacher_overlap_increment_poly(p, j):
    """Per-unit-time increment of m_j: -2 a_j · residual · λ_j · λ_teacher."""
    err = error_field_poly(p)
    poly = _poly_mul(_poly_mul(err, _field(p, j)), _field(p, p))
    return _poly_scale(_with_a(poly, j, p), -2.0)


def student_overlap_increment_poly(p, j, l):
    """Per-unit-time increment of Q_jl.

    First-order part -2(a_j + a_l)·residual·λ_j λ_l plus the learning-rate
    correction (4γ/p)·a_j a_l·residual²·λ_j λ_l (the squared-update term, with
    the input norm replaced by its mean).
    """
    err = error_field_poly(p)
    base = _poly_mul(_poly_mul(err, _field(p, j)), _field(p, l))
    first = _poly_add(_with_a(base, j, p), _with_a(base, l, p))
    sq = _poly_mul(_poly_mul(_poly_mul(err, err), _field(p, j)), _field(p, l))
    sq = _with_a(_with_a(sq, j, p), l, p)
    return _poly_add(_poly_scale(first, -2.0), _with_gamma(sq), scale=4.0 / p)


def second_layer_increment_poly(p, j):
    """Per-unit-time increment of a_j: -residual·λ_j²."""
    err = error_field_poly(p)
    poly = _poly_mul(_poly_mul(err, _field(p, j)), _field(p, j))
    return _poly_scale(poly, -1.0)


def error_square_poly(p):
    err = error_field_poly(p)
    return _poly_mul(err, err)


def _upper_index(p1):
    """Map (i, j) with i <= j into the flat upper triangle of a p1 x p1 matrix."""
    idx = {}
    k = 0
    for i in range(p1):
        for j in range(i, p1):
            idx[(i, j)] = k
            k += 1
    return idx


def expectation_poly(field_poly, p):
    """Fold fields (pairings) and noise (even powers) into an omega poly."""
    upper = _upper_index(p + 1)
    nw = len(upper)
    out = {}
    for (fields, zpow, apow, gpow), coeff in field_poly.items():
        if len(fields) > MAX_DEGREE:
            raise UnsupportedOrderError(
                f"assembled monomial degree {len(fields)} exceeds {MAX_DEGREE}"
            )
        if zpow % 2 == 1:
            continue
        zfold = coeff * _double_factorial(zpow - 1)
        dpow = zpow // 2
        for pairs, count in _pairing_polynomial(fields).items():
            wexp = [0] * nw
            for pair in pairs:
                wexp[upper[pair]] += 1
            key = (tuple(wexp), apow, gpow, dpow)
            out[key] = out.get(key, 0.0) + zfold * count
    return {k: v for k, v in out.items() if v != 0.0}


class CompiledPolySet:
    """Several omega polys compiled to flat tables for fast batched evaluation.

    Variables are ordered: upper triangle of the covariance (row-major), the p
    second-layer weights, the learning rate, the noise variance.
    """

    def __init__(self, p, omega_polys):
        self.p = p
        nw = len(_upper_index(p + 1))
        self.n_outputs = len(omega_polys)
        coeffs = []
        out_idx = []
        var_idx = []
        exp_val = []
        starts = []
        for out, poly in enumerate(omega_polys):
            for (wexp, apow, gpow, dpow), c in sorted(poly.items()):
                starts.append(len(var_idx))
                coeffs.append(c)
                out_idx.append(out)
                wrote = False
                for k, e in enumerate(wexp):
                    if e:
                        var_idx.append(k)
                        exp_val.append(e)
                        wrote = True
                for k, e in enumerate(apow):
                    if e:
                        var_idx.append(nw + k)
                        exp_val.append(e)
                        wrote = True
                if gpow:
                    var_idx.append(nw + p)
                    exp_val.append(gpow)
                    wrote = True
                if dpow:
                    var_idx.append(nw + p + 1)
                    exp_val.append(dpow)
                    wrote = True
                if not wrote:  # constant term; keep reduceat segments non-empty
                    var_idx.append(0)
                    exp_val.append(0)
        self.coeffs = np.array(coeffs)
        self.out_idx = np.array(out_idx, dtype=np.intp)
        self.var_idx = np.array(var_idx, dtype=np.intp)
        self.exp_val = np.array(exp_val, dtype=np.intp)
        self.starts = np.array(starts, dtype=np.intp)
        self.n_vars = nw + p + 2
        self.max_exp = int(self.exp_val.max(initial=0))

    def evaluate(self, omega, a, gamma, delta):
        """Evaluate every output at the (p+1)x(p+1) covariance ``omega`` and parameters."""
        w = omega.entries if isinstance(omega, OmegaMatrix) else np.asarray(omega, float)
        p1 = self.p + 1
        v = np.empty(self.n_vars)
        k = 0
        for i in range(p1):
            for j in range(i, p1):
                v[k] = w[i, j]
                k += 1
        v[k : k + self.p] = a
        v[k + self.p] = gamma
        v[k + self.p + 1] = delta
        # overflow may occur on diverging states; the integrators detect the
        # resulting non-finite values, so no point warning here
        with np.errstate(over="ignore", invalid="ignore"):
            table = np.ones((self.n_vars, self.max_exp + 1))
            for e in range(1, self.max_exp + 1):
                table[:, e] = table[:, e - 1] * v
            factors = table[self.var_idx, self.exp_val]
            prods = np.multiply.reduceat(factors, self.starts)
            out = np.zeros(self.n_outputs)
            np.add.at(out, self.out_idx, self.coeffs * prods)
        return out


_DRIFT_CACHE = {}
_COV_CACHE = {}


def drift_poly_set(p):
    """Compiled expectations driving the reduced ODEs at width p.

    Output layout: p second-layer drifts, then p teacher-overlap drifts, then
    the upper triangle (row-major) of the student-overlap drift.
    """
    got = _DRIFT_CACHE.get(p)
    if got is not None:
        return got
    polys = [expectation_poly(second_layer_increment_poly(p, j), p) for j in range(p)]
    polys += [expectation_poly(teacher_overlap_increment_poly(p, j), p) for j in range(p)]
    for j in range(p):
        for l in range(j, p):
            polys.append(expectation_poly(student_overlap_increment_poly(p, j, l), p))
    compiled = CompiledPolySet(p, polys)
    _DRIFT_CACHE[p] = compiled
    return compiled


def covariance_poly_set(p):
    """Compiled first and second moments of the stacked overlap increments.

    The stacked unique variables are the p teacher-overlap increments followed
    by the upper triangle of the student-overlap increments (second layer
    fixed at its value).  Outputs: the means of the unique variables, then raw
    second moments E[A_i A_k] for i <= k.
    """
    got = _COV_CACHE.get(p)
    if got is not None:
        return got
    increments = [teacher_overlap_increment_poly(p, j) for j in range(p)]
    for j in range(p):
        for l in range(j, p):
            increments.append(student_overlap_increment_poly(p, j, l))
    polys = [expectation_poly(q, p) for q in increments]
    n = len(increments)
    for i in range(n):
        for k in range(i, n):
            polys.append(expectation_poly(_poly_mul(increments[i], increments[k]), p))
    compiled = CompiledPolySet(p, polys)
    _COV_CACHE[p] = compiled
    return compiled
