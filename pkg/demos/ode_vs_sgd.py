"""Overlay a small SGD ensemble on the deterministic overlap dynamics.

Runs ten single-neuron simulations at d = 1500 from one shared start,
integrates the reduced equations from the measured initial overlaps, and
prints the two risk curves side by side at a few times.  Writes the full
curves to ode_vs_sgd.csv for plotting.
"""

import csv

import numpy as np

from medlab.dynamics_ode import integrate
from medlab.sgd_sim import init_network, make_teacher, measure_overlaps, run_sgd
from medlab.state import TaskParams


def main():
    d, gamma, delta, horizon = 1500, 0.1, 0.1, 4.5
    params = TaskParams(d=d, p=1, gamma=gamma, delta=delta)
    teacher = make_teacher(d, delta, seed=0)
    # Seed 2 gives an initial overlap of typical magnitude (|m0|*sqrt(d) ~ 1.4).
    # An anomalously small draw escapes mostly through noise-seeded growth,
    # which the deterministic curve does not model.
    net0 = init_network(d, 1, seed=2)
    state0 = measure_overlaps(net0, teacher)
    print(f"shared start: m = {state0.m[0]:+.4f} (of order 1/sqrt(d))")

    n_steps = int(round(horizon / params.dt_sgd))
    stride = max(1, n_steps // 400)
    risks = []
    for i in range(10):
        traj = run_sgd(teacher, net0, params, n_steps, record_stride=stride,
                       seed=100 + i)
        risks.append(traj.risk)
    t = traj.t
    mean = np.mean(risks, axis=0)
    spread = np.std(risks, axis=0, ddof=1)

    ode = integrate(state0, params, dt=1e-3, horizon=horizon)
    ode_on = np.interp(t, ode.t, ode.risk)

    print(f"\n{'t':>6} {'sgd mean':>10} {'spread':>8} {'ode':>10}")
    for k in np.linspace(0, len(t) - 1, 10).astype(int):
        print(f"{t[k]:6.2f} {mean[k]:10.4f} {spread[k]:8.4f} {ode_on[k]:10.4f}")
    plateau = gamma * delta / (1 - 6 * gamma)
    print(f"\npredicted plateau risk: {delta / 2 + plateau:.4f}")

    with open("ode_vs_sgd.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "sgd_mean", "sgd_spread", "ode"])
        for row in zip(t, mean, spread, ode_on):
            writer.writerow([f"{v:.8g}" for v in row])
    print("wrote ode_vs_sgd.csv")


if __name__ == "__main__":
    main()
