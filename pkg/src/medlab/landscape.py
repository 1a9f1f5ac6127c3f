"""Closed-form population-risk geometry for a single student direction.

Everything here is a function of the overlap coordinates (m, q, rho) only;
explicit weight vectors never appear.  Hessian spectra come from the
identity-plus-low-rank structure on span{w, w_star}, so multiplicities are
reported symbolically ("d-2", "d-1", ...) and hold in every dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InternalConsistencyError, StateInvalidError

_COLLINEAR_TOL = 1e-10
_SIGN_TOL = 1e-12


@dataclass(frozen=True)
class GeometryPoint:
    """A point of the single-direction overlap space."""

    m: float
    q: float
    rho: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        if self.rho <= 0:
            raise StateInvalidError("teacher norm rho must be positive")
        if self.q < 0:
            raise StateInvalidError("student norm q cannot be negative")
        if self.delta < 0:
            raise StateInvalidError("noise level cannot be negative")
        if self.m * self.m > self.q * self.rho + 1e-10:
            raise StateInvalidError(
                f"overlap bound violated: m^2={self.m**2} > q*rho={self.q * self.rho}"
            )


@dataclass(frozen=True)
class SpectrumLine:
    """One eigenvalue of a structured Hessian, with symbolic multiplicity."""

    eigenvalue: float
    multiplicity: str
    role: str


@dataclass(frozen=True)
class CriticalPoint:
    location: GeometryPoint
    kind: str  # maximum | strict-saddle | minimum
    risk: float
    spectrum: tuple[SpectrumLine, ...]
    geometry: str = "euclidean"
    grad_norm2: float = 0.0


def risk_euclidean(pt):
    """Population risk of an unconstrained student: Δ/2 + 3ρ² + 3q² − 4m² − 2ρq."""
    return (
        pt.delta / 2
        + 3 * pt.rho**2
        + 3 * pt.q**2
        - 4 * pt.m**2
        - 2 * pt.rho * pt.q
    )


def risk_spherical(m, delta=0.0):
    """Population risk on the sphere (both norms fixed): Δ/2 + 2(1 − m²)."""
    return delta / 2 + 2 * (1 - m * m)


def overlap_gradient(pt):
    """Gradient of the unconstrained risk in overlap coordinates (∂m, ∂q)."""
    return -8.0 * pt.m, 6.0 * pt.q - 2.0 * pt.rho


def _merge_lines(lines):
    """Collapse repeated eigenvalues, adding multiplicities symbolically.

    A multiplicity is tracked as (#d, #const) so "d-2" + "1" + "1" = "d".
    """
    merged = []
    for eig, mult, role in lines:
        for i, (e0, m0, r0) in enumerate(merged):
            if abs(eig - e0) <= _SIGN_TOL * max(1.0, abs(e0)):
                merged[i] = (e0, (m0[0] + mult[0], m0[1] + mult[1]), r0)
                break
        else:
            merged.append((eig, mult, role))
    out = []
    for eig, (dc, cc), role in merged:
        if dc == 0:
            text = str(cc)
        elif cc == 0:
            text = "d"
        elif cc < 0:
            text = f"d{cc}"
        else:
            text = f"d+{cc}"
        out.append(SpectrumLine(float(eig), text, role))
    return tuple(out)


def euclidean_gradient_spectrum(pt):
    """Squared gradient norm per dimension and the full Hessian spectrum.

    The gradient is −2((ρ−3q)w + 2m w⋆), so ‖∇R‖²/d closes over the overlaps.
    The Hessian acts as −2(ρ−3q) on the orthogonal complement of
    span{w, w⋆} plus a low-rank correction on the span, built from the
    unit directions of w and w⋆.
    """
    m, q, rho = pt.m, pt.q, pt.rho
    grad2 = 4 * ((rho - 3 * q) ** 2 * q + 4 * m * m * rho + 4 * m * m * (rho - 3 * q))
    bulk = -2 * (rho - 3 * q)
    if q <= _COLLINEAR_TOL:
        # student direction degenerates: only the teacher rank-one term is left
        lines = [
            (bulk, (1, -1), "orthogonal complement"),
            (bulk - 2.0, (0, 1), "teacher direction"),
        ]
        return grad2, _merge_lines(lines)
    c2 = m * m / (q * rho)
    if c2 >= 1.0 - _COLLINEAR_TOL:
        # w and w_star collinear: the span is one-dimensional
        lines = [
            (bulk, (1, -1), "orthogonal complement"),
            (bulk + 4.0, (0, 1), "aligned direction"),
        ]
        return grad2, _merge_lines(lines)
    c = m / np.sqrt(q * rho)
    s = np.sqrt(1.0 - c * c)
    block = bulk * np.eye(2) + 2.0 * np.array(
        [[3.0 - c * c, -c * s], [-c * s, -s * s]]
    )
    lam = np.linalg.eigvalsh(block)
    lines = [
        (bulk, (1, -2), "orthogonal complement"),
        (lam[0], (0, 1), "span{w, w_star}"),
        (lam[1], (0, 1), "span{w, w_star}"),
    ]
    return grad2, _merge_lines(lines)


def spherical_gradient_hessian(m, delta=0.0):
    """Constrained gradient and Hessian spectrum on the fixed-norm sphere.

    The gradient is 4m(mw − w⋆), reported as coefficients on (w, w⋆);
    the Hessian eigenvalues are 4m² on everything orthogonal to the teacher
    component and 4(2m² − 1) along it.
    """
    if abs(m) > 1.0:
        raise StateInvalidError(f"spherical overlap must satisfy |m| <= 1, got {m}")
    coeffs = (4.0 * m * m, -4.0 * m)
    lines = [
        (4.0 * m * m, (1, -1), "tangent bulk"),
        (4.0 * (2.0 * m * m - 1.0), (0, 1), "teacher direction"),
    ]
    return coeffs, _merge_lines(lines)


def _derive_kind(spectrum):
    """Read the critical-point kind off the spectrum signs."""
    negs = [l for l in spectrum if l.eigenvalue < -_SIGN_TOL]
    poss = [l for l in spectrum if l.eigenvalue > _SIGN_TOL]
    zeros = [l for l in spectrum if abs(l.eigenvalue) <= _SIGN_TOL]
    if negs and not poss and not zeros:
        return "maximum"
    if poss and not negs and not zeros:
        return "minimum"
    if zeros and len(negs) == 1 and negs[0].multiplicity == "1":
        return "strict-saddle"
    raise InternalConsistencyError(
        f"spectrum does not determine a supported kind: {spectrum}"
    )


def _spherical_grad_norm2(m):
    # |c_w w + c_s w_star|^2 / d with q = rho = 1
    c_w, c_s = 4.0 * m * m, -4.0 * m
    return c_w * c_w + c_s * c_s + 2.0 * c_w * c_s * m


def classify_critical_points(rho, delta=0.0):
    """Enumerate the closed-form critical points with verified kinds.

    Locations are the known closed forms; each kind is re-derived from the
    corresponding Hessian spectrum, and a disagreement with the expected
    nature raises an internal-consistency error rather than being papered
    over.  The unconstrained set lives at general rho; the fixed-norm set has
    both norms pinned to one.
    """
    if rho <= 0:
        raise StateInvalidError("teacher norm rho must be positive")
    expected = [
        (GeometryPoint(0.0, 0.0, rho, delta), "maximum"),
        (GeometryPoint(0.0, rho / 3.0, rho, delta), "strict-saddle"),
        (GeometryPoint(rho, rho, rho, delta), "minimum"),
        (GeometryPoint(-rho, rho, rho, delta), "minimum"),
    ]
    points = []
    for loc, kind in expected:
        grad2, spectrum = euclidean_gradient_spectrum(loc)
        derived = _derive_kind(spectrum)
        if derived != kind:
            raise InternalConsistencyError(
                f"point (m={loc.m}, q={loc.q}) expected {kind}, spectrum says {derived}"
            )
        points.append(
            CriticalPoint(loc, derived, risk_euclidean(loc), spectrum, "euclidean", grad2)
        )
    for m, kind in ((0.0, "strict-saddle"), (1.0, "minimum"), (-1.0, "minimum")):
        _, spectrum = spherical_gradient_hessian(m, delta)
        derived = _derive_kind(spectrum)
        if derived != kind:
            raise InternalConsistencyError(
                f"spherical point m={m} expected {kind}, spectrum says {derived}"
            )
        points.append(
            CriticalPoint(
                GeometryPoint(m, 1.0, 1.0, delta),
                derived,
                risk_spherical(m, delta),
                spectrum,
                "spherical",
                _spherical_grad_norm2(m),
            )
        )
    return points


def critical_point_report(rho, delta=0.0):
    """JSON-serializable version of classify_critical_points."""
    report = []
    for cp in classify_critical_points(rho, delta):
        report.append(
            {
                "location": {
                    "m": cp.location.m,
                    "q": cp.location.q,
                    "rho": cp.location.rho,
                    "delta": cp.location.delta,
                },
                "geometry": cp.geometry,
                "kind": cp.kind,
                "risk": cp.risk,
                "grad_norm2": cp.grad_norm2,
                "spectrum": [
                    {
                        "eigenvalue": line.eigenvalue,
                        "multiplicity": line.multiplicity,
                        "role": line.role,
                    }
                    for line in cp.spectrum
                ],
            }
        )
    return {"rho": rho, "delta": delta, "critical_points": report}


def unconstrained_ode_field_p1(m, q, rho, gamma):
    """Noiseless single-direction flow without the norm constraint.

    dm/dt = 6m(ρ−q);
    dq/dt = 4(q(ρ−3q) + 2m²) + 12γ(q(ρ² + 5q² − 2ρq) + 4m²(ρ − 2q)).
    """
    dm = 6.0 * m * (rho - q)
    dq = 4.0 * (q * (rho - 3.0 * q) + 2.0 * m * m) + 12.0 * gamma * (
        q * (rho * rho + 5.0 * q * q - 2.0 * rho * q) + 4.0 * m * m * (rho - 2.0 * q)
    )
    return dm, dq
