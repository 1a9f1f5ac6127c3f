"""Show the Gaussian pairing engine reproducing classic moment identities.

Draws a random correlated field covariance, prints a handful of closed-form
moments next to the pairing-sum values, and cross-checks one of them against
a large Monte Carlo sample.
"""

import numpy as np

from medlab.moments import OmegaMatrix, sixth_moment_closed, wick_moment


def main():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3))
    om = OmegaMatrix(A @ A.T / 3)
    w = om.entries
    print("covariance:")
    print(np.array_str(w, precision=4))

    rows = [
        ("E[l0 l1]", wick_moment((0, 1), om), w[0, 1]),
        ("E[l0^2 l1^2]", wick_moment((0, 0, 1, 1), om),
         w[0, 0] * w[1, 1] + 2 * w[0, 1] ** 2),
        ("E[l0 l1 l2^2]", wick_moment((0, 1, 2, 2), om),
         w[0, 1] * w[2, 2] + 2 * w[0, 2] * w[1, 2]),
        ("E[l0 l1 l2^2 l0^2]", wick_moment((0, 1, 2, 2, 0, 0), om),
         sixth_moment_closed(0, 1, 2, 0, om)),
    ]
    print(f"\n{'moment':>20} {'pairing sum':>14} {'closed form':>14}")
    for name, paired, closed in rows:
        print(f"{name:>20} {paired:14.8f} {closed:14.8f}")

    n = 2_000_000
    lam = rng.multivariate_normal(np.zeros(3), w, size=n)
    mc = float(np.mean(lam[:, 0] ** 2 * lam[:, 1] ** 2))
    se = float(np.std(lam[:, 0] ** 2 * lam[:, 1] ** 2, ddof=1) / np.sqrt(n))
    print(f"\nMonte Carlo E[l0^2 l1^2] with {n:.0e} draws: "
          f"{mc:.6f} +- {se:.6f}")
    print(f"pairing sum:                              "
          f"{wick_moment((0, 0, 1, 1), om):.6f}")


if __name__ == "__main__":
    main()
