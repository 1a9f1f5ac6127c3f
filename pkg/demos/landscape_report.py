"""Print the closed-form critical points of the population risk.

Covers both geometries: the unconstrained student (general teacher norm) and
the norm-constrained student.  Each row shows the location, the nature
derived from the Hessian spectrum, the risk, and the structured spectrum.
"""

from medlab.landscape import classify_critical_points


def main():
    rho, delta = 1.0, 0.2
    print(f"teacher square norm rho = {rho}, label noise delta = {delta}\n")
    for pt in classify_critical_points(rho, delta):
        loc = pt.location
        lines = ", ".join(
            f"{ln.eigenvalue + 0.0:+.3g} (x{ln.multiplicity})"
            for ln in pt.spectrum
        )
        print(f"[{pt.geometry:>9}] m = {loc.m:+.3f}, q = {loc.q:.3f}: "
              f"{pt.kind:<13} risk = {pt.risk:.4f}")
        print(f"{'':>12}spectrum: {lines}")
        print(f"{'':>12}|grad|^2 = {pt.grad_norm2:.2e}\n")


if __name__ == "__main__":
    main()
