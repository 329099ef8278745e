"""Command-line entry point: ``vfx <subcommand> [--config PATH] [--out DIR] [--seed N] [--workers N]``.

Exit status is 0 when every asserted check passes, 1 when a check fails and
2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import platform
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import experiments

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
TOP_LEVEL_KEYS = ("defaults_version", "seed")
VERIFY_ALL = "verify-all"
# simulate produces trajectories but asserts nothing beyond finiteness
VERIFY_CHECKS = [name for name in experiments.RUNNERS if name != "simulate"]


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending key path."""


def load_defaults():
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    text = resources.files("vfx").joinpath("defaults.toml").read_text()
    return tomllib.loads(text)


def read_config_file(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from exc


def _type_name(value):
    return {bool: "boolean", int: "integer", float: "number", str: "string", list: "list", dict: "table"}.get(type(value), type(value).__name__)


def _coerce(default, value, path):
    """Check ``value`` against the type of ``default`` and return the resolved value."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected boolean, got {_type_name(value)}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {_type_name(value)}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {_type_name(value)}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {_type_name(value)}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected list, got {_type_name(value)}")
        if not default:
            return list(value)
        # heterogeneous defaults such as (m, n_max, lam) rows are matched position by position
        template = default[0]
        item = _coerce_row if isinstance(template, list) else _coerce
        return [item(template, v, f"{path}[{i}]") for i, v in enumerate(value)]
    raise ConfigError(f"{path}: unsupported default type {_type_name(default)}")


def _coerce_row(template, value, path):
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected list, got {_type_name(value)}")
    if template and all(not isinstance(t, list) for t in template) and len(value) != len(template):
        raise ConfigError(f"{path}: expected {len(template)} entries, got {len(value)}")
    out = []
    for i, v in enumerate(value):
        t = template[min(i, len(template) - 1)]
        out.append(_coerce_row(t, v, f"{path}[{i}]") if isinstance(t, list) else _coerce(t, v, f"{path}[{i}]"))
    return out


def resolve_config(user, subcommand, defaults=None):
    """Merge a user config over the defaults for ``subcommand``; unknown keys are errors."""
    defaults = load_defaults() if defaults is None else defaults
    user = user or {}
    if not isinstance(user, dict):
        raise ConfigError(f"<root>: expected table, got {_type_name(user)}")
    tables = [n for n in defaults if isinstance(defaults[n], dict)]
    for key, value in user.items():
        if key in TOP_LEVEL_KEYS:
            continue
        if key not in tables:
            raise ConfigError(f"{key}: unknown key (valid: {', '.join(TOP_LEVEL_KEYS + tuple(tables))})")
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected table, got {_type_name(value)}")
        for sub in value:
            if sub not in defaults[key]:
                raise ConfigError(f"{key}.{sub}: unknown key (valid: {', '.join(defaults[key])})")
    resolved = {k: _coerce(defaults[k], user.get(k, defaults[k]), k) for k in TOP_LEVEL_KEYS}
    if resolved["defaults_version"] != defaults["defaults_version"]:
        raise ConfigError(f"defaults_version: config targets version {resolved['defaults_version']}, installed defaults are {defaults['defaults_version']}")
    names = VERIFY_CHECKS if subcommand == VERIFY_ALL else [subcommand]
    for name in names:
        given = user.get(name, {})
        resolved[name] = {k: _coerce(d, given.get(k, d), f"{name}.{k}") for k, d in defaults[name].items()}
    return resolved


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def csv_bytes(header, rows):
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    for row in rows:
        out.writerow([_cell(x) for x in row])
    return buf.getvalue().encode()


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _dump_json(path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def versions():
    import scipy

    try:
        from importlib.metadata import version

        package = version("artifact")
    except Exception:
        package = "unknown"
    return {
        "package": package,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def write_outcome(out_dir, outcome):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in outcome.tables.items():
        (out_dir / f"{name}.csv").write_bytes(csv_bytes(header, rows))
    for name, data in outcome.files.items():
        (out_dir / name).write_bytes(data)
    _dump_json(out_dir / "report.json", outcome.report)


def run_subcommand(name, resolved, workers):
    seed = resolved["seed"]
    if name != VERIFY_ALL:
        return {name: experiments.RUNNERS[name](resolved[name], seed, workers)}
    outcomes = {}
    for check in VERIFY_CHECKS:
        start = time.perf_counter()
        outcome = experiments.RUNNERS[check](resolved[check], seed, workers)
        outcome.report["seconds"] = round(time.perf_counter() - start, 3)
        outcomes[check] = outcome
    return outcomes


def describe(name, stream=None):
    stream = stream or sys.stdout
    if name not in experiments.DESCRIPTIONS and name != VERIFY_ALL:
        valid = ", ".join(list(experiments.DESCRIPTIONS) + [VERIFY_ALL])
        raise ConfigError(f"unknown subcommand {name!r}; valid names: {valid}")
    if name == VERIFY_ALL:
        print("verify-all: runs every check below with its defaults and writes a consolidated ledger.", file=stream)
        for check in VERIFY_CHECKS:
            print(f"  {check}: {experiments.DESCRIPTIONS[check]}", file=stream)
        return
    defaults = load_defaults()
    print(f"{name}: {experiments.DESCRIPTIONS[name]}", file=stream)
    print("config keys:", file=stream)
    for key, value in defaults[name].items():
        print(f"  {name}.{key} = {json.dumps(value)}", file=stream)


def build_parser():
    parser = argparse.ArgumentParser(prog="vfx", description="Galerkin vorticity and chaos-expansion experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(experiments.RUNNERS) + [VERIFY_ALL]:
        help_text = experiments.DESCRIPTIONS.get(name, "Run every check and write a consolidated ledger.")
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML or JSON file overriding the defaults")
        p.add_argument("--out", help="output directory (default: vfx-runs/<subcommand>)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--workers", type=int, help="worker processes (env VFX_WORKERS otherwise)")
    d = sub.add_parser("describe", help="Show what a subcommand checks and its config keys.")
    d.add_argument("subcommand")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        if args.command == "describe":
            describe(args.subcommand)
            return EXIT_PASS
        user = read_config_file(args.config) if args.config else {}
        if args.seed is not None:
            user = {**user, "seed": args.seed}
        resolved = resolve_config(user, args.command)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"vfx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    workers = args.workers
    if workers is None and os.environ.get("VFX_WORKERS"):
        workers = int(os.environ["VFX_WORKERS"])
    out = Path(args.out or Path("vfx-runs") / args.command)
    try:
        outcomes = run_subcommand(args.command, resolved, workers)
    except (ValueError, KeyError) as exc:
        print(f"vfx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "config.json", resolved)
    _dump_json(out / "versions.json", versions())
    if args.command == VERIFY_ALL:
        for check, outcome in outcomes.items():
            write_outcome(out / check, outcome)
        reports = {c: (experiments.DESCRIPTIONS[c], o.report) for c, o in outcomes.items()}
        from .verify import verify_report

        summary = verify_report(reports, expected=VERIFY_CHECKS)
        summary["seconds"] = {c: o.report.get("seconds") for c, o in outcomes.items()}
        _dump_json(out / "report.json", summary)
        for row in summary["ledger"]:
            print(f"{row['status'].upper():7s} {row['check']}")
        passed = summary["status"] == "pass"
    else:
        outcome = outcomes[args.command]
        write_outcome(out, outcome)
        passed = outcome.passed
        print(f"{'PASS' if passed else 'FAIL'} {args.command} -> {out}")
    return EXIT_PASS if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
