"""Escape-time formulas against measured simulations across widths.

Reproduces a small measured-vs-analytical table at d = 1000 with gamma/p
held fixed, then prints the optimal learning rate and the limiting sample
budget per width.
"""

import numpy as np

from medlab.exit_times import (
    ExitTimeQuery,
    exit_time_general_p,
    exit_time_numeric,
    gamma_opt,
    min_steps_and_gain,
)
from medlab.sgd_sim import sgd_ensemble
from medlab.state import TaskParams, Trajectory


def risk_only(t, risk):
    n = len(t)
    return Trajectory(t=np.asarray(t), risk=np.asarray(risk),
                      m=np.zeros((n, 1)), Q=np.ones((n, 1)), a=np.ones((n, 1)))


def main():
    d, T, rate_over_p, n_members = 1000, 0.3, 0.05, 12
    horizons = {1: 3.5, 2: 2.5, 4: 2.0}
    print(f"d = {d}, threshold T = {T}, gamma/p = {rate_over_p}, "
          f"{n_members} seeds per width")
    print(f"\n{'p':>3} {'measured':>9} {'s.e.':>7} {'annealed':>9} "
          f"{'quenched':>9}")
    for p in (1, 2, 4):
        params = TaskParams(d=d, p=p, gamma=rate_over_p * p, delta=0.0)
        n_steps = int(round(horizons[p] / params.dt_sgd))
        ens = sgd_ensemble(params, n_steps=n_steps, n_members=n_members,
                           record_stride=max(1, n_steps // 1000), seed=4)
        times = [exit_time_numeric(risk_only(ens.t, row), T, 0.0)
                 for row in ens.risk]
        annealed, _ = exit_time_general_p(
            ExitTimeQuery(T=T, params=params, mode="annealed"))
        quenched, _ = exit_time_general_p(
            ExitTimeQuery(T=T, params=params, mode="quenched",
                          mc_samples=50_000, seed=1))
        se = np.std(times, ddof=1) / np.sqrt(len(times))
        print(f"{p:>3} {np.mean(times):9.3f} {se:7.3f} {annealed:9.3f} "
              f"{quenched:9.3f}")

    delta = 0.0
    print(f"\noptimal rates at delta = {delta} (samples in units of d log d):")
    print(f"{'p':>3} {'gamma_opt':>10} {'min samples':>14}")
    for p in (1, 2, 4, 16):
        s_min, _ = min_steps_and_gain(p, d, delta, T)
        print(f"{p:>3} {gamma_opt(p, delta):10.4f} {s_min:14.0f}")
    _, gain = min_steps_and_gain(1, d, delta, T)
    print(f"limiting wide-over-narrow speedup: {gain:.2f}")


if __name__ == "__main__":
    main()
