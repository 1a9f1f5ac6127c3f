"""Does training the second layer change when a neuron first aligns?

Runs two paired ensembles (same initial weights and the same data stream) at
moderate width, one with the second layer frozen at one and one with it
trained jointly, and compares the growth of the best teacher alignment.
The two curves land on top of each other: early on the second layer barely
moves, so escape from the uninformed regime is first-layer business.
"""

import csv

import numpy as np

from medlab import TaskParams, sgd_ensemble


def crossing(t, series, threshold):
    idx = np.argmax(series >= threshold)
    if series[idx] < threshold:
        return np.nan
    if idx == 0:
        return t[0]
    t0, t1 = t[idx - 1], t[idx]
    s0, s1 = series[idx - 1], series[idx]
    return t0 + (threshold - s0) * (t1 - t0) / (s1 - s0)


def main():
    d, p, gamma, threshold = 800, 20, 1.0, 0.3
    n_steps = round(2.5 * p * d / gamma)
    stride = max(1, n_steps // 400)

    arms = {}
    for label, train_a in (("fixed", False), ("trained", True)):
        params = TaskParams(d=d, p=p, gamma=gamma, delta=0.0, train_a=train_a)
        arms[label] = sgd_ensemble(params, n_steps, n_members=8,
                                   record_stride=stride, seed=12)

    t = arms["fixed"].t
    curves = {label: ens.max_abs_m.mean(axis=0) for label, ens in arms.items()}

    print(f"d = {d}, p = {p}, gamma = {gamma}, 8 paired members\n")
    print(f"{'t':>6} {'max|m| fixed':>14} {'max|m| trained':>15}")
    for i in np.linspace(0, len(t) - 1, 12, dtype=int):
        print(f"{t[i]:6.2f} {curves['fixed'][i]:14.4f} {curves['trained'][i]:15.4f}")

    print()
    for label in arms:
        times = [crossing(t, row, threshold) for row in arms[label].max_abs_m]
        times = np.asarray(times)
        print(f"{label:>8}: crossing of max|m| = {threshold} at "
              f"t = {np.nanmean(times):.3f} "
              f"+/- {np.nanstd(times, ddof=1) / np.sqrt(len(times)):.3f}")

    with open("second_layer.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "maxm_fixed", "maxm_trained"])
        for i in range(len(t)):
            writer.writerow([t[i], curves["fixed"][i], curves["trained"][i]])
    print("\nwrote second_layer.csv")


if __name__ == "__main__":
    main()
