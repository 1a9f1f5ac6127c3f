"""Fluctuation band of the corrected diffusion around the deterministic curve.

Runs 200 single-neuron diffusion paths at d = 1500, prints the ensemble band
next to the deterministic risk, and reports how the escape time shifts.
Writes sde_band.csv with plot-ready columns.
"""

import csv

import numpy as np

from medlab.dynamics_ode import integrate
from medlab.dynamics_sde import sde_ensemble_p1
from medlab.exit_times import exit_time_numeric
from medlab.state import TaskParams, Trajectory


def risk_only(t, risk):
    n = len(t)
    return Trajectory(t=np.asarray(t), risk=np.asarray(risk),
                      m=np.zeros((n, 1)), Q=np.ones((n, 1)), a=np.ones((n, 1)))


def main():
    d, gamma, delta, horizon = 1500, 0.1, 0.1, 4.5
    params = TaskParams(d=d, p=1, gamma=gamma, delta=delta)
    m0 = 1.0 / np.sqrt(d)

    ens = sde_ensemble_p1(params, m0=m0, horizon=horizon, n_paths=200, seed=3)
    ode = integrate(
        initial=_p1_state(m0), params=params, dt=1e-3, horizon=horizon)
    ode_on = np.interp(ens.t, ode.t, ode.risk)
    spread = ens.risk.std(axis=0, ddof=1)

    print(f"{'t':>6} {'ode':>9} {'sde mean':>9} {'path spread':>12}")
    for k in np.linspace(0, len(ens.t) - 1, 10).astype(int):
        print(f"{ens.t[k]:6.2f} {ode_on[k]:9.4f} "
              f"{ens.risk_mean[k]:9.4f} {spread[k]:12.4f}")

    T = 0.5
    t_ode = exit_time_numeric(risk_only(ode.t, ode.risk), T, delta)
    t_sde = exit_time_numeric(risk_only(ens.t, ens.risk_mean), T, delta)
    print(f"\nhalf-drop escape time: ode {t_ode:.3f}, diffusion {t_sde:.3f}")

    with open("sde_band.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "ode_risk", "sde_mean", "sde_spread"])
        for row in zip(ens.t, ode_on, ens.risk_mean, spread):
            writer.writerow([f"{v:.8g}" for v in row])
    print("wrote sde_band.csv")


def _p1_state(m0):
    from medlab.state import OverlapState

    return OverlapState(np.ones(1), np.array([m0]), np.ones((1, 1)), 1.0)


if __name__ == "__main__":
    main()
