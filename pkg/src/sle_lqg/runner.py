"""Command-line runner for the experiment registry.

Usage::

    sle-lqg --list [--json]
    sle-lqg --experiment qv_check --set kappa=2 --set z=1+1i --output out/
    sle-lqg --config run.ini --workers 4
    sle-lqg run exp=params_table "kappa_list=[2,8/3,4,6,8]"

A config file is INI text.  The optional ``[run]`` section holds
``master_seed``, ``workers`` and ``output``; every other section is one
experiment (``experiment = <name>``, defaulting to the section title) with its
parameters as keys.  Values accept fractions (``8/3``), complex numbers
(``1+1i``) and bracketed lists.

Exit status: 0 all gating checks passed, 1 a gating check failed (reports
are still written), 2 usage or configuration error (nothing written), 3 I/O
failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import platform
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from fractions import Fraction

import numpy as np
import scipy

from . import __version__
from .errors import ConfigError, SleLqgError
from .experiments import REGISTRY
from .martingales import write_records_csv

__all__ = ["main", "run", "parse_value", "RunContext", "ExperimentConfig", "load_config", "list_experiments"]

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


@dataclass(frozen=True)
class RunContext:
    name: str
    master_seed: int
    workers: int


@dataclass(frozen=True)
class ExperimentConfig:
    label: str
    experiment: str
    params: dict


def _split_list(text):
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
            continue
        depth += ch == "["
        depth -= ch == "]"
        cur += ch
    if cur.strip():
        parts.append(cur)
    return parts


def parse_value(text: str):
    """Parse a config literal: list, bool, none, fraction, int, float, complex or bare string."""
    s = text.strip()
    if s.startswith("[") and s.endswith("]"):
        return [parse_value(p) for p in _split_list(s[1:-1])]
    low = s.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "false"):
        return low == "true"
    if "/" in s:
        try:
            return float(Fraction(s))
        except (ValueError, ZeroDivisionError):
            pass
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    if s[-1:] in ("i", "j") and any(c.isdigit() for c in s):
        try:
            return complex(s[:-1] + "j" if s[-2:-1] not in "+-" else s[:-1] + "1j")
        except ValueError:
            pass
    return s


def _coerce(key, value, default):
    """Cast ``value`` to the type implied by the registry default."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a bracketed list")
        if default:
            return [_coerce(key, v, default[0]) for v in value]
        return value
    if isinstance(default, complex):
        if isinstance(value, (int, float, complex)) and not isinstance(value, bool):
            return complex(value)
        raise ConfigError(f"{key} must be a number such as 1+1i")
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{key} must be a real number")
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
        return value
    return value


def resolve(label, experiment, overrides) -> ExperimentConfig:
    if experiment not in REGISTRY:
        raise ConfigError(f"unknown experiment {experiment!r}; see --list")
    defaults = REGISTRY[experiment].defaults
    params = dict(defaults)
    for key, raw in overrides.items():
        if key not in defaults:
            raise ConfigError(f"{experiment} has no field {key!r}; fields: {sorted(defaults)}")
        value = parse_value(raw) if isinstance(raw, str) else raw
        params[key] = _coerce(key, value, defaults[key])
    return ExperimentConfig(label, experiment, params)


def _read_config(path):
    """``(run_options, [(label, experiment, raw_items)])`` from an INI file."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    run_opts = dict(cp["run"]) if cp.has_section("run") else {}
    exps = []
    for sec in cp.sections():
        if sec == "run":
            continue
        items = dict(cp[sec])
        exps.append((sec, items.pop("experiment", sec), items))
    if not exps:
        raise ConfigError("config defines no experiments")
    return run_opts, exps


def load_config(path):
    """Return ``(run_options, [ExperimentConfig])`` from an INI file."""
    run_opts, raw = _read_config(path)
    return run_opts, [resolve(label, name, items) for label, name, items in raw]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def config_hash(master_seed, configs) -> str:
    blob = json.dumps({"master_seed": master_seed,
                       "experiments": [[c.label, c.experiment, _jsonable(c.params)] for c in configs]},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_csv(path, rows):
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(keys)
        for r in rows:
            out.writerow([json.dumps(_jsonable(r.get(k)), sort_keys=True)
                          if isinstance(r.get(k), (list, dict, tuple, complex)) else _jsonable(r.get(k))
                          for k in keys])


def run(configs, output_dir, master_seed: int = 0, workers: int = 1, timestamp: str = None):
    """Run experiments and write ``report.json``, ``manifest.json`` and CSVs.

    Returns ``(exit_status, report)``.  Library errors raised while an
    experiment runs abort the whole run before anything is written.
    """
    results = []
    for c in configs:
        exp = REGISTRY[c.experiment]
        outcome = exp.func(dict(c.params), RunContext(c.label, int(master_seed), int(workers)))
        results.append((c, exp, outcome))

    chash = config_hash(master_seed, configs)
    report = {
        "tool": "sle_lqg",
        "version": __version__,
        "timestamp": timestamp or datetime.now(timezone.utc).isoformat(),
        "config_hash": chash,
        "master_seed": int(master_seed),
        "experiments": [
            dict(label=c.label, experiment=c.experiment, module=exp.module, verifies=exp.verifies,
                 params=_jsonable(c.params), **_jsonable(o.as_dict()))
            for c, exp, o in results
        ],
    }
    report["passed"] = all(e["passed"] for e in report["experiments"])
    manifest = {
        "config_hash": chash,
        "version": __version__,
        "master_seed": int(master_seed),
        "config": [{"label": c.label, "experiment": c.experiment, "params": _jsonable(c.params)} for c in configs],
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "files": ["report.json", "aggregate.csv"] + [f"{c.label}.csv" for c in configs],
    }
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(output_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for c, _, o in results:
        _write_csv(os.path.join(output_dir, f"{c.label}.csv"), o.rows)
    mc = [dict(r, name=r.get("name", c.label)) for c, _, o in results for r in o.records if "mean" in r]
    write_records_csv(mc, os.path.join(output_dir, "aggregate.csv"))
    return (EXIT_OK if report["passed"] else EXIT_FAILED), report


def list_experiments(as_json=False, stream=None) -> None:
    stream = stream or sys.stdout
    entries = [REGISTRY[k].listing() for k in sorted(REGISTRY)]
    if as_json:
        json.dump(entries, stream, indent=2, sort_keys=True)
        stream.write("\n")
        return
    for e in entries:
        stream.write(f"{e['name']:<20} [{e['module']}] fields: {', '.join(e['fields'])}\n"
                     f"{'':<20} verifies: {e['verifies']}\n")


def _parser():
    p = argparse.ArgumentParser(prog="sle-lqg", description="Run SLE / LQG numerical experiments.")
    p.add_argument("tokens", nargs="*", help="optional 'run' followed by exp=NAME and key=value pairs")
    p.add_argument("--config", help="INI file with a [run] section and one section per experiment")
    p.add_argument("--experiment", help="run one registered experiment")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="parameter override (repeatable); LABEL.KEY=VALUE targets one config section")
    p.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    p.add_argument("--output", help="output directory (default: results)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--list", action="store_true", help="list registered experiments")
    p.add_argument("--json", action="store_true", help="with --list, print the registry as JSON")
    return p


def _pairs(items):
    out = {}
    for it in items:
        if "=" not in it:
            raise ConfigError(f"expected KEY=VALUE, got {it!r}")
        k, v = it.split("=", 1)
        out[k.strip()] = v
    return out


def _build(args):
    tokens = list(args.tokens)
    if tokens and tokens[0] == "run":
        tokens = tokens[1:]
    extra = _pairs(tokens)
    experiment = args.experiment or extra.pop("exp", None) or extra.pop("experiment", None)
    sets = _pairs(args.set)
    sets.update(extra)
    run_opts = {}
    common = {k: v for k, v in sets.items() if "." not in k}
    if args.config:
        run_opts, raw = _read_config(args.config)
        if experiment:
            raw = [r for r in raw if experiment in (r[0], r[1])]
            if not raw:
                raise ConfigError(f"config has no section for {experiment!r}")
        configs = []
        for label, name, items in raw:
            mine = {k.split(".", 1)[1]: v for k, v in sets.items() if k.startswith(label + ".")}
            configs.append(resolve(label, name, {**items, **common, **mine}))
    elif experiment:
        configs = [resolve(experiment, experiment, common)]
    else:
        raise ConfigError("nothing to run: give --config, --experiment or --list")
    try:
        seed = args.seed if args.seed is not None else int(run_opts.get("master_seed", 0))
        workers = args.workers if args.workers is not None else int(run_opts.get("workers", 1))
    except ValueError:
        raise ConfigError("master_seed and workers must be integers") from None
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    output = args.output or run_opts.get("output", "results")
    return configs, output, seed, workers


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.list:
        list_experiments(args.json)
        return EXIT_OK
    try:
        configs, output, seed, workers = _build(args)
    except ConfigError as exc:
        print(f"sle-lqg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        status, report = run(configs, output, seed, workers)
    except OSError as exc:
        print(f"sle-lqg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SleLqgError as exc:
        print(f"sle-lqg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for e in report["experiments"]:
        for c in e["checks"]:
            mark = "PASS" if c["passed"] else ("FAIL" if c["gating"] else "note")
            print(f"{mark} {e['label']}: {c['label']}")
    print(f"report written to {os.path.join(output, 'report.json')}")
    return status


if __name__ == "__main__":
    sys.exit(main())
