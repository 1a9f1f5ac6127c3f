"""Command-line front end: one subcommand per experiment kind.

Configuration is resolved in layers: dataclass defaults, then ``--config``
file, then repeated ``--set key=value`` overrides, then the explicit
``--out/--seed/--workers`` flags.  ``MEDLAB_WORKERS`` supplies the worker
count when no flag is given.  Exit codes: 0 success, 2 bad configuration,
3 numeric divergence, 4 no threshold crossing.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .errors import (
    ConfigError,
    DivergenceError,
    IntegrationBlowupError,
    MedlabError,
    NoCrossingError,
)
from .experiments import ExperimentConfig, run_experiment, run_selftest

# Subcommand name -> experiment kind.
_SUBCOMMANDS = {
    "sgd": "sgd",
    "ode": "ode",
    "sde": "sde",
    "exit-time": "exit-table",
    "width-sweep": "width-sweep",
    "second-layer": "second-layer-compare",
    "landscape": "landscape",
}

_HELP = {
    "sgd": "simulate a projected one-pass SGD ensemble",
    "ode": "integrate the reduced deterministic dynamics",
    "sde": "integrate the first-order corrected stochastic dynamics",
    "exit-time": "measured vs analytical escape times across widths",
    "width-sweep": "formula-level escape times and optimal rates per width",
    "second-layer": "compare fixed against trained second-layer weights",
    "landscape": "classify the critical points of the population risk",
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="medlab",
        description="Experiments on quadratic networks learning a "
        "single quadratic direction.",
        epilog="Config keys (defaults): "
        + ", ".join(f"{f.name}={getattr(ExperimentConfig(), f.name)}"
                    for f in dataclasses.fields(ExperimentConfig)),
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        sub = subparsers.add_parser(name, help=_HELP[name])
        sub.add_argument("--config", metavar="PATH",
                         help="key = value config file (e.g. a manifest.txt)")
        sub.add_argument("--set", dest="overrides", action="append",
                         default=[], metavar="KEY=VALUE",
                         help="override one config key (repeatable)")
        sub.add_argument("--out", metavar="DIR", help="output directory")
        sub.add_argument("--seed", type=int, help="base seed")
        sub.add_argument("--workers", type=int,
                         help="ensemble workers (default: MEDLAB_WORKERS or "
                         "the config value)")
    subparsers.add_parser("selftest",
                          help="run a fast end-to-end check of every layer")
    return parser


def _explicit_keys(text):
    keys = set()
    for line in text.splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("#") and "=" in stripped:
            keys.add(stripped.split("=", 1)[0].strip())
    return keys


def _build_config(kind, args):
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as err:
            raise ConfigError("config", f"cannot read {args.config}: {err}")
        config = ExperimentConfig.from_text(text)
        if "kind" not in _explicit_keys(text):
            config = dataclasses.replace(config, kind=kind)
    else:
        config = ExperimentConfig(kind=kind)
    if args.overrides:
        config = config.with_overrides(args.overrides)
    if config.kind != kind:
        raise ConfigError(
            "kind",
            f"subcommand selects kind {kind!r} but the configuration says "
            f"{config.kind!r}",
        )
    updates = {}
    if args.out is not None:
        updates["out"] = args.out
    if args.seed is not None:
        updates["seed"] = args.seed
    workers = args.workers
    if workers is None and "MEDLAB_WORKERS" in os.environ:
        raw = os.environ["MEDLAB_WORKERS"]
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError("workers",
                              f"MEDLAB_WORKERS is not an integer: {raw!r}")
    if workers is not None:
        updates["workers"] = workers
    return dataclasses.replace(config, **updates) if updates else config


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "selftest":
        return 0 if run_selftest() else 1
    try:
        config = _build_config(_SUBCOMMANDS[args.command], args)
        run_experiment(config)
    except ConfigError as err:
        print(f"config error [{err.field}]: {err}", file=sys.stderr)
        return 2
    except (DivergenceError, IntegrationBlowupError) as err:
        print(f"numeric divergence: {err}", file=sys.stderr)
        return 3
    except NoCrossingError as err:
        print(f"no threshold crossing: {err}", file=sys.stderr)
        return 4
    except MedlabError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {os.path.join(config.out, 'summary.json')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
