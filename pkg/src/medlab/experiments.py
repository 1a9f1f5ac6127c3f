"""Reproducible experiment runs: flat configs, CSV/JSON artifacts, manifests.

An :class:`ExperimentConfig` is a flat bag of scalars that serializes to a
``key = value`` text file and back without loss.  ``run_experiment`` executes
one configured run, writes plot-ready CSVs plus a ``summary.json``, and leaves
behind a ``manifest.txt`` that is itself a valid config file: feeding it back
through the CLI reproduces the run bit-for-bit.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .dynamics_ode import init_overlaps, integrate, population_risk
from .dynamics_sde import integrate_sde, sde_ensemble_p1
from .errors import ConfigError, DivergenceError, IntegrationBlowupError, NoCrossingError
from .exit_times import (
    ExitTimeQuery,
    annealed_exit_time_p1,
    exit_time_general_p,
    exit_time_numeric,
    gamma_opt,
    min_steps_and_gain,
    quenched_exit_time_p1,
)
from .landscape import critical_point_report
from .sgd_sim import sgd_ensemble
from .state import TaskParams, Trajectory

EXPERIMENT_KINDS = (
    "sgd",
    "ode",
    "sde",
    "exit-table",
    "width-sweep",
    "second-layer-compare",
    "landscape",
)

_INIT_MODES = ("spherical-uniform", "orthogonal-exact", "gaussian-unconstrained")


def _fmt(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse_bool(raw, key):
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(key, f"expected a boolean, got {raw!r}")


def _parse_typed(raw, kind, key):
    """Coerce one raw string to the declared field type."""
    if kind.startswith("opt_"):
        if raw.lower() in ("none", ""):
            return None
        kind = kind[4:]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return _parse_bool(raw, key)
    except ValueError:
        raise ConfigError(key, f"expected {kind}, got {raw!r}") from None
    return raw


# Declared field types drive both parsing and round-trip formatting.
_FIELD_TYPES = {
    "kind": "str",
    "d": "int",
    "p": "int",
    "gamma": "float",
    "delta": "float",
    "spherical": "bool",
    "train_a": "bool",
    "rho": "float",
    "dt": "opt_float",
    "horizon": "float",
    "T": "float",
    "m_threshold": "float",
    "n_members": "int",
    "widths": "str",
    "mc_samples": "int",
    "init_mode": "str",
    "a_init": "str",
    "dtype": "str",
    "seed": "int",
    "stride": "opt_int",
    "workers": "int",
    "out": "str",
}


@dataclass
class ExperimentConfig:
    """Flat, text-serializable description of one experiment run.

    ``gamma`` is the per-network learning rate except for the width sweeps
    (``exit-table`` and ``width-sweep``), where it is the fixed ratio
    ``gamma / p`` applied across every width in ``widths``.
    """

    kind: str = "sgd"
    d: int = 2000
    p: int = 1
    gamma: float = 0.1
    delta: float = 0.0
    spherical: bool = True
    train_a: bool = False
    rho: float = 1.0
    dt: float | None = None
    horizon: float = 4.0
    T: float = 0.3
    m_threshold: float = 0.3
    n_members: int = 8
    widths: str = "1,2,4,8"
    mc_samples: int = 100_000
    init_mode: str = "spherical-uniform"
    a_init: str = "ones"
    dtype: str = "float64"
    seed: int = 0
    stride: int | None = None
    workers: int = 1
    out: str = "."

    def to_text(self):
        lines = [f"{f.name} = {_fmt(getattr(self, f.name))}"
                 for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(
                    f"line {lineno}",
                    f"line {lineno} is not 'key = value': {stripped!r}",
                )
            key, raw = stripped.split("=", 1)
            key, raw = key.strip(), raw.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(key, f"unknown config key {key!r}")
            values[key] = _parse_typed(raw, _FIELD_TYPES[key], key)
        return cls(**values)

    def to_file(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())

    def with_overrides(self, pairs):
        """New config with ``key=value`` strings applied on top of this one."""
        values = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(pair, f"override is not key=value: {pair!r}")
            key, raw = pair.split("=", 1)
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(key, f"unknown config key {key!r}")
            values[key] = _parse_typed(raw.strip(), _FIELD_TYPES[key], key)
        return ExperimentConfig(**values)

    def validate(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(
                "kind",
                f"unknown kind {self.kind!r}; expected one of {EXPERIMENT_KINDS}",
            )
        positive = {"d": self.d, "p": self.p, "n_members": self.n_members,
                    "workers": self.workers, "mc_samples": self.mc_samples}
        for name, value in positive.items():
            if value < 1:
                raise ConfigError(name, f"{name} must be >= 1, got {value}")
        if self.d <= self.p:
            raise ConfigError("d", f"need d > p, got d={self.d}, p={self.p}")
        if self.gamma < 0:
            raise ConfigError("gamma", "gamma cannot be negative")
        if self.delta < 0:
            raise ConfigError("delta", "delta cannot be negative")
        if self.rho <= 0:
            raise ConfigError("rho", "rho must be positive")
        if self.horizon <= 0:
            raise ConfigError("horizon", "horizon must be positive")
        if not 0.0 < self.T < 1.0:
            raise ConfigError("T", "T must lie strictly between 0 and 1")
        if not 0.0 < self.m_threshold < 1.0:
            raise ConfigError("m_threshold", "m_threshold must lie strictly in (0, 1)")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt", "dt must be positive when set")
        if self.stride is not None and self.stride < 1:
            raise ConfigError("stride", "stride must be >= 1 when set")
        if self.init_mode not in _INIT_MODES:
            raise ConfigError("init_mode", f"unknown init_mode {self.init_mode!r}")
        if self.a_init not in ("ones", "pm-ones"):
            raise ConfigError("a_init", f"unknown a_init {self.a_init!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype", f"dtype must be float64 or float32, got " f"{self.dtype!r}")
        self.parsed_widths()
        if self.kind in ("exit-table", "width-sweep") and self.mc_samples < 1000:
            raise ConfigError("mc_samples", "mc_samples must be >= 1000 for quenched averages")
        return self

    def parsed_widths(self):
        try:
            widths = [int(tok) for tok in self.widths.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError("widths", f"widths must be comma-separated integers, got " f"{self.widths!r}") from None
        if not widths or any(w < 1 for w in widths):
            raise ConfigError("widths", "widths must be positive integers")
        return widths

    def task_params(self, p=None, gamma=None):
        return TaskParams(
            d=self.d,
            p=self.p if p is None else p,
            gamma=self.gamma if gamma is None else gamma,
            delta=self.delta,
            spherical=self.spherical,
            train_a=self.train_a,
        )

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def max_correlation_diagnostic(traj):
    """Strongest teacher-student alignment, max_j |m_j|, at each record.

    Order one over root d at a random start; approaches one for the aligned
    neuron once a trajectory has escaped the plateau.
    """
    m = np.asarray(traj.m, dtype=np.float64)
    if m.ndim != 2:
        raise ConfigError("m", "trajectory overlaps must be 2-d (records, p)")
    return np.max(np.abs(m), axis=1)


def _crossing_time(t, series, threshold):
    """First time a rising series reaches ``threshold``, linearly interpolated."""
    above = np.nonzero(series >= threshold)[0]
    if above.size == 0:
        raise NoCrossingError(
            float(series[-1] / threshold),
            f"series never reached {threshold} (final value {series[-1]:.4g})",
        )
    k = int(above[0])
    if k == 0:
        return float(t[0])
    t0, t1 = t[k - 1], t[k]
    y0, y1 = series[k - 1], series[k]
    return float(t0 + (threshold - y0) * (t1 - t0) / (y1 - y0))


def _write_csv(path, header, columns):
    rows = np.column_stack(columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def _sgd_steps_and_stride(config, gamma=None, p=None):
    params = config.task_params(p=p, gamma=gamma)
    n_steps = int(round(config.horizon / params.dt_sgd))
    stride = config.stride
    if stride is None:
        stride = max(1, n_steps // 2000)
    return params, n_steps, stride


def _risk_trajectory(t, risk):
    """Minimal risk-only trajectory for threshold crossings."""
    n = len(t)
    return Trajectory(
        t=np.asarray(t),
        risk=np.asarray(risk),
        m=np.zeros((n, 1)),
        Q=np.ones((n, 1)),
        a=np.ones((n, 1)),
    )


def _run_sgd(config, out):
    params, n_steps, stride = _sgd_steps_and_stride(config)
    result = sgd_ensemble(
        params,
        n_steps=n_steps,
        n_members=config.n_members,
        record_stride=stride,
        seed=config.seed,
        dtype=config.np_dtype,
        init_mode=config.init_mode,
        a_init=config.a_init,
        workers=config.workers,
    )
    n = result.n_members
    maxm_se = result.max_abs_m.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else \
        np.zeros_like(result.t)
    risk_se = result.risk_se if n > 1 else np.zeros_like(result.t)
    _write_csv(
        os.path.join(out, "ensemble.csv"),
        ["t", "risk_mean", "risk_se", "maxm_mean", "maxm_se"],
        [result.t, result.risk_mean, risk_se,
         result.max_abs_m.mean(axis=0), maxm_se],
    )
    return {
        "n_members": n,
        "n_steps": n_steps,
        "final_risk_mean": float(result.risk_mean[-1]),
        "final_risk_se": float(risk_se[-1]),
        "final_maxm_mean": float(result.max_abs_m.mean(axis=0)[-1]),
    }


def _run_ode(config, out):
    initial = init_overlaps(config.d, config.p, mode=config.init_mode,
                            seed=config.seed)
    dt = 1e-3 if config.dt is None else config.dt
    traj = integrate(initial, config.task_params(), dt=dt,
                     horizon=config.horizon, record_stride=config.stride)
    traj.to_csv(os.path.join(out, "trajectory.csv"))
    summary = {"final_risk": float(traj.risk[-1]), "dt": dt}
    try:
        summary["t_ext"] = exit_time_numeric(traj, config.T, config.delta)
    except NoCrossingError as err:
        summary["t_ext"] = None
        summary["t_ext_note"] = str(err)
    return summary


def _run_sde(config, out):
    dt = config.task_params().dt_sgd if config.dt is None else config.dt
    initial = init_overlaps(config.d, config.p, mode=config.init_mode,
                            seed=config.seed)
    params = config.task_params()
    if config.p == 1 and config.spherical and not config.train_a:
        ens = sde_ensemble_p1(params, m0=float(initial.m[0]),
                              horizon=config.horizon, n_paths=config.n_members,
                              dt=dt, seed=config.seed,
                              record_stride=config.stride)
        t, risk = ens.t, ens.risk
    else:
        risks = []
        t = None
        for i in range(config.n_members):
            traj = integrate_sde(initial, params, dt=dt, horizon=config.horizon,
                                 seed=(config.seed, i),
                                 record_stride=config.stride)
            t, risks = traj.t, risks + [traj.risk]
        risk = np.vstack(risks)
    ode = integrate(initial, params, dt=min(dt, 1e-3), horizon=config.horizon)
    ode_risk = np.interp(t, ode.t, ode.risk)
    n = risk.shape[0]
    risk_se = risk.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else \
        np.zeros_like(t)
    _write_csv(
        os.path.join(out, "ensemble.csv"),
        ["t", "risk_mean", "risk_se", "ode_risk"],
        [t, risk.mean(axis=0), risk_se, ode_risk],
    )
    return {
        "n_paths": n,
        "dt": dt,
        "final_risk_mean": float(risk.mean(axis=0)[-1]),
        "final_risk_se": float(risk_se[-1]),
        "final_ode_risk": float(ode_risk[-1]),
    }


def _exit_record(mode, p, config, gamma, t_ext, se=None, source="formula",
                 warnings=()):
    return {
        "mode": mode,
        "p": p,
        "d": config.d,
        "gamma": gamma,
        "delta": config.delta,
        "T": config.T,
        "t_ext": t_ext,
        "se": se,
        "source": source,
        "warnings": list(warnings),
    }


def _run_exit_table(config, out):
    """Measured vs analytical escape times across widths at fixed gamma/p."""
    records = []
    rows = []
    for p in config.parsed_widths():
        gamma_p = config.gamma * p
        params, n_steps, stride = _sgd_steps_and_stride(config, gamma=gamma_p,
                                                        p=p)
        result = sgd_ensemble(
            params, n_steps=n_steps, n_members=config.n_members,
            record_stride=stride, seed=config.seed, dtype=config.np_dtype,
            init_mode=config.init_mode, a_init=config.a_init,
            workers=config.workers,
        )
        measured = np.array([
            exit_time_numeric(_risk_trajectory(result.t, member), config.T,
                              config.delta)
            for member in result.risk
        ])
        t_meas = float(measured.mean())
        se_meas = float(measured.std(ddof=1) / np.sqrt(len(measured))) \
            if len(measured) > 1 else 0.0
        t_ann, _ = exit_time_general_p(
            ExitTimeQuery(T=config.T, params=params, mode="annealed"))
        t_qu, se_qu = exit_time_general_p(
            ExitTimeQuery(T=config.T, params=params, mode="quenched",
                          mc_samples=config.mc_samples, seed=config.seed))
        records.append(_exit_record("measured", p, config, gamma_p, t_meas,
                                    se=se_meas, source="numeric"))
        records.append(_exit_record("annealed", p, config, gamma_p, t_ann))
        records.append(_exit_record("quenched", p, config, gamma_p, t_qu,
                                    se=se_qu))
        rows.append([p, gamma_p, t_meas, se_meas, t_ann, t_qu, se_qu,
                     t_meas / t_ann, t_meas / t_qu])
    header = ["p", "gamma", "t_measured", "t_measured_se", "t_annealed",
              "t_quenched", "t_quenched_se", "ratio_annealed",
              "ratio_quenched"]
    _write_csv(os.path.join(out, "exit_table.csv"), header,
               list(np.array(rows).T))
    return {"records": records,
            "rows": [dict(zip(header, row)) for row in rows]}


def _run_width_sweep(config, out):
    """Formula-level escape times, optimal rates and step counts per width."""
    rows = []
    for p in config.parsed_widths():
        gamma_p = config.gamma * p
        params = config.task_params(p=p, gamma=gamma_p)
        t_ann, _ = exit_time_general_p(
            ExitTimeQuery(T=config.T, params=params, mode="annealed"))
        t_qu, se_qu = exit_time_general_p(
            ExitTimeQuery(T=config.T, params=params, mode="quenched",
                          mc_samples=config.mc_samples, seed=config.seed))
        g_opt = gamma_opt(p, config.delta)
        s_min, gain = min_steps_and_gain(p, config.d, config.delta, config.T)
        rows.append([p, gamma_p, t_ann, t_qu, se_qu, g_opt, s_min, gain])
    header = ["p", "gamma", "t_annealed", "t_quenched", "t_quenched_se",
              "gamma_opt", "s_min", "gain_limit"]
    _write_csv(os.path.join(out, "width_sweep.csv"), header,
               list(np.array(rows).T))
    return {"rows": [dict(zip(header, row)) for row in rows]}


def _run_second_layer_compare(config, out):
    """Fixed vs trained second layer, paired member-by-member.

    Both arms reuse the same base seed, so member i sees the same teacher,
    initialization and data stream in each arm; only the update rule differs.
    """
    params, n_steps, stride = _sgd_steps_and_stride(config)
    arms = {}
    for label, train_a in (("fixed", False), ("trained", True)):
        arm_params = TaskParams(d=config.d, p=config.p, gamma=config.gamma,
                                delta=config.delta, spherical=config.spherical,
                                train_a=train_a)
        arms[label] = sgd_ensemble(
            arm_params, n_steps=n_steps, n_members=config.n_members,
            record_stride=stride, seed=config.seed, dtype=config.np_dtype,
            init_mode=config.init_mode, a_init=config.a_init,
            workers=config.workers,
        )
    fixed, trained = arms["fixed"], arms["trained"]
    n = config.n_members

    def _stats(ens):
        mean = ens.max_abs_m.mean(axis=0)
        se = ens.max_abs_m.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else \
            np.zeros_like(ens.t)
        times = np.array([_crossing_time(ens.t, member, config.m_threshold)
                          for member in ens.max_abs_m])
        return mean, se, times

    f_mean, f_se, f_times = _stats(fixed)
    t_mean, t_se, t_times = _stats(trained)
    _write_csv(
        os.path.join(out, "second_layer.csv"),
        ["t", "maxm_fixed_mean", "maxm_fixed_se", "maxm_trained_mean",
         "maxm_trained_se"],
        [fixed.t, f_mean, f_se, t_mean, t_se],
    )

    def _mean_se(x):
        se = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
        return float(x.mean()), se

    f_cross, f_cross_se = _mean_se(f_times)
    t_cross, t_cross_se = _mean_se(t_times)
    return {
        "threshold": config.m_threshold,
        "n_members": n,
        "crossing_fixed_mean": f_cross,
        "crossing_fixed_se": f_cross_se,
        "crossing_trained_mean": t_cross,
        "crossing_trained_se": t_cross_se,
        "crossing_difference": t_cross - f_cross,
        "difference_se": float(np.hypot(f_cross_se, t_cross_se)),
    }


def _run_landscape(config, out):
    report = critical_point_report(config.rho, config.delta)
    with open(os.path.join(out, "landscape.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return {"rho": config.rho, "delta": config.delta,
            "n_critical_points": len(report), "report": report}


_RUNNERS = {
    "sgd": _run_sgd,
    "ode": _run_ode,
    "sde": _run_sde,
    "exit-table": _run_exit_table,
    "width-sweep": _run_width_sweep,
    "second-layer-compare": _run_second_layer_compare,
    "landscape": _run_landscape,
}


_ARTIFACT_NAMES = (
    "summary.json",
    "manifest.txt",
    "ensemble.csv",
    "trajectory.csv",
    "exit_table.csv",
    "width_sweep.csv",
    "second_layer.csv",
    "landscape.json",
)


def _clear_artifacts(out):
    """Remove artifacts a previous run left in ``out`` (and nothing else)."""
    for name in _ARTIFACT_NAMES:
        path = os.path.join(out, name)
        if os.path.exists(path):
            os.remove(path)


def _write_manifest(config, out, status):
    path = os.path.join(out, "manifest.txt")
    with open(path, "w") as fh:
        fh.write(f"# medlab {__version__} run manifest; also a valid config\n")
        fh.write(f"# status = {status}\n")
        fh.write(config.to_text())


def run_experiment(config):
    """Execute one configured run and write its artifacts under ``config.out``.

    Writes the kind's CSVs, a ``summary.json`` and a ``manifest.txt`` that can
    be passed back as a config file to reproduce the run exactly.  On numeric
    divergence the manifest flags the partial run and the error propagates.
    """
    config.validate()
    out = config.out
    os.makedirs(out, exist_ok=True)
    _clear_artifacts(out)
    try:
        summary = _RUNNERS[config.kind](config, out)
    except (DivergenceError, IntegrationBlowupError) as err:
        _write_manifest(config, out, f"diverged: {err}")
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump({"kind": config.kind, "status": "diverged",
                       "error": str(err)}, fh, indent=2, sort_keys=True)
        raise
    summary = {"kind": config.kind, "status": "ok", "version": __version__,
               **summary}
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    _write_manifest(config, out, "ok")
    return summary


def run_selftest(verbose=True):
    """Fast end-to-end battery over every layer; returns True when all pass."""
    checks = []

    def record(name, passed):
        checks.append((name, passed))
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'}  {name}")

    from .moments import OmegaMatrix, wick_moment  # keeps startup lean

    omega = OmegaMatrix(np.array([[1.0, 0.3], [0.3, 1.0]]))
    record("gaussian moments: fourth moment obeys the pairing identity",
           abs(wick_moment((0, 0, 1, 1), omega) - (1.0 + 2 * 0.3**2)) < 1e-12)

    params = TaskParams(d=1000, p=1, gamma=0.05, delta=0.5)
    traj = integrate(init_overlaps(1000, 1, seed=3), params, dt=1e-3,
                     horizon=8.0)
    plateau = params.gamma * params.delta / (1 - 6 * params.gamma)
    record("ode plateau: excess risk matches gamma*delta/(1-6*gamma)",
           abs((traj.risk[-1] - params.delta / 2) / plateau - 1) < 1e-3)

    t_ann = annealed_exit_time_p1(0.3, 1e6, 0.05, 0.5)
    record("exit time: annealed p=1 value is finite and positive",
           np.isfinite(t_ann) and t_ann > 0)
    t_qu, se = quenched_exit_time_p1(0.3, 1e6, 0.05, 0.5, mc_samples=20_000)
    record("exit time: quenched average exceeds annealed",
           t_qu - t_ann > 3 * se)

    small = TaskParams(d=200, p=2, gamma=0.2, delta=0.1)
    ens_a = sgd_ensemble(small, n_steps=400, n_members=2, seed=11)
    ens_b = sgd_ensemble(small, n_steps=400, n_members=2, seed=11, workers=2)
    record("sgd: two workers reproduce the serial ensemble bit-for-bit",
           np.array_equal(ens_a.risk, ens_b.risk))

    report = critical_point_report(1.0, 0.0)
    record("landscape: three critical families at unit teacher overlap",
           len(report) == 3)

    return all(passed for _, passed in checks)
