"""Command-line front end.

Subcommands map one-to-one onto library operations: solve, find-boundary,
converge, check-conditions, simulate, constants, plus validate for checking
a previously emitted JSON document.  Parameters come from built-in defaults,
then an optional flat JSON config file, then explicit flags, in that order.
Results go to stdout or --out as a JSON document (or plot-ready CSV with
--format csv).  Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .boundary import BracketingError, convergence_study, find_boundary
from .fem import SingularSystemError, assemble, constants, solve
from .model import ModelParams
from .verify import check_conditions, default_dt, simulate_stopped_value

PARAM_KEYS = ("mu", "sigma", "lam", "a", "gamma", "jmax")
DEFAULTS = {
    "mu": 8.0, "sigma": 0.2, "lam": 10.0, "a": -0.1,
    "gamma": 0.02, "jmax": 0.05,
    "n": 2000, "tol_b": 1e-6,
    "paths": 10000, "seed": 1, "x0": [0.0],
    "format": "json",
}
CONFIG_KEYS = set(DEFAULTS) | {"b", "ns", "dt", "out"}
COMMANDS = ("solve", "find-boundary", "converge", "check-conditions",
            "simulate", "constants")


class ConfigError(Exception):
    pass


def _nine(x: float) -> float:
    """Round to 9 significant digits so float repr is stable across runs."""
    return float(f"{float(x):.9g}")


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def _parse_ns(text) -> list:
    if isinstance(text, list):
        items = text
    else:
        items = [t for t in str(text).split(",") if t.strip()]
    try:
        ns = [int(t) for t in items]
    except (TypeError, ValueError):
        raise ConfigError(f"ns must be a comma-separated list of integers, got {text!r}")
    if not ns:
        raise ConfigError("ns must not be empty")
    return ns


def _parse_x0(text) -> list:
    if isinstance(text, list):
        items = text
    else:
        items = [t for t in str(text).split(",") if t.strip()]
    try:
        xs = [float(t) for t in items]
    except (TypeError, ValueError):
        raise ConfigError(f"x0 must be a comma-separated list of numbers, got {text!r}")
    if not xs:
        raise ConfigError("x0 must not be empty")
    return xs


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairstop",
        description="Free-boundary solver for optimally closing a pair trade",
    )
    sub = parser.add_subparsers(dest="command")
    sub.required = True

    def add_common(p):
        p.add_argument("--mu", type=float, default=None)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--a", type=float, default=None)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--jmax", type=float, default=None)
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--b", type=float, default=None)
        p.add_argument("--ns", type=str, default=None)
        p.add_argument("--tol-b", dest="tol_b", type=float, default=None)
        p.add_argument("--x0", type=str, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--format", choices=("json", "csv"), default=None)

    for name in COMMANDS:
        add_common(sub.add_parser(name))
    vp = sub.add_parser("validate")
    vp.add_argument("document", type=str)
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update({"b": None, "ns": None, "dt": None, "out": None})
    if args.config is not None:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {args.config} is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config: document must be a flat JSON object")
        for key, value in loaded.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"config: unknown key {key!r}")
            cfg[key] = value
    for key in CONFIG_KEYS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            cfg[key] = flag_value
    if cfg["format"] not in ("json", "csv"):
        raise ConfigError(f"format must be json or csv, got {cfg['format']!r}")
    cfg["ns"] = _parse_ns(cfg["ns"]) if cfg["ns"] is not None else None
    cfg["x0"] = _parse_x0(cfg["x0"])
    return cfg


def _params(cfg: dict) -> ModelParams:
    try:
        return ModelParams(**{k: float(cfg[k]) for k in PARAM_KEYS})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))


def _require_b(cfg: dict, command: str) -> float:
    if cfg["b"] is None:
        raise ConfigError(f"b is required for {command}")
    return float(cfg["b"])


def _require_n(cfg: dict) -> int:
    n = int(cfg["n"])
    if n < 2:
        raise ConfigError(f"n must be at least 2, got {n}")
    return n


def _threads() -> int:
    raw = os.environ.get("PAIRSTOP_THREADS")
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"PAIRSTOP_THREADS must be an integer, got {raw!r}")


def _metadata(cfg: dict, **extra) -> dict:
    meta = {
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "parameters": {k: _nine(cfg[k]) for k in PARAM_KEYS},
    }
    meta.update(extra)
    return meta


def _run_solve(cfg: dict):
    params = _params(cfg)
    b = _require_b(cfg, "solve")
    n = _require_n(cfg)
    sol = solve(assemble(params, b, n))
    nodes = sol.mesh.nodes
    result = {
        "b": _nine(b),
        "min_v": _nine(float(np.min(sol.coeffs))),
        "max_v": _nine(float(np.max(sol.coeffs))),
        "f_at_b": _nine(sol.derivative_at_b()),
        "residual_max": _nine(sol.diagnostics["residual_max"]),
    }
    doc = {
        "command": "solve",
        "metadata": _metadata(cfg, n=n, b=_nine(b)),
        "result": result,
    }
    rows = [("x", "v")] + [(_nine(x), _nine(v))
                           for x, v in zip(nodes, sol.coeffs)]
    return doc, rows


def _run_find_boundary(cfg: dict):
    params = _params(cfg)
    n = _require_n(cfg)
    res = find_boundary(params, n, tol_b=float(cfg["tol_b"]))
    result = {
        "b_n": _nine(res.b_n),
        "f_at_root": _nine(res.f_at_root),
        "iterations": res.iterations,
        "bracket": [_nine(res.bracket[0]), _nine(res.bracket[1])],
    }
    doc = {
        "command": "find-boundary",
        "metadata": _metadata(cfg, n=n, tol_b=_nine(cfg["tol_b"])),
        "result": result,
    }
    rows = [("b_n", "f_at_root", "iterations", "n"),
            (_nine(res.b_n), _nine(res.f_at_root), res.iterations, n)]
    return doc, rows


def _run_converge(cfg: dict):
    params = _params(cfg)
    ns = cfg["ns"] if cfg["ns"] is not None else [2000, 4000, 6000, 8000]
    report = convergence_study(params, ns, tol_b=float(cfg["tol_b"]))
    table = []
    for row in report.rows:
        table.append({
            "n": row.n,
            "b_n": _nine(row.b_n),
            "delta": None if row.delta is None else _nine(row.delta),
        })
    doc = {
        "command": "converge",
        "metadata": _metadata(cfg, ns=list(ns), tol_b=_nine(cfg["tol_b"])),
        "result": {
            "rows": table,
            "monotone_decreasing": report.monotone_decreasing,
        },
    }
    rows = [("n", "b_n", "delta")]
    for entry in table:
        rows.append((entry["n"], entry["b_n"],
                     "" if entry["delta"] is None else entry["delta"]))
    return doc, rows


def _run_check_conditions(cfg: dict):
    params = _params(cfg)
    n = _require_n(cfg)
    res = find_boundary(params, n, tol_b=float(cfg["tol_b"]))
    report = check_conditions(res.solution)
    result = {
        "b_n": _nine(res.b_n),
        "condition_a_holds": report.condition_a_holds,
        "worst_margin": _nine(report.worst_margin),
        "condition_b_holds": report.condition_b_holds,
        "min_v": _nine(report.min_v),
    }
    doc = {
        "command": "check-conditions",
        "metadata": _metadata(cfg, n=n, tol_b=_nine(cfg["tol_b"])),
        "result": result,
    }
    rows = [("x", "lhs", "rhs")] + [
        (_nine(x), _nine(lhs), _nine(rhs))
        for x, lhs, rhs in report.margin_curve
    ]
    return doc, rows


def _run_simulate(cfg: dict):
    params = _params(cfg)
    b = _require_b(cfg, "simulate")
    paths = int(cfg["paths"])
    seed = int(cfg["seed"])
    dt = float(cfg["dt"]) if cfg["dt"] is not None else default_dt(params, b)
    threads = _threads()
    estimates = []
    for x0 in cfg["x0"]:
        est = simulate_stopped_value(params, b, float(x0), paths, dt, seed,
                                     threads=threads)
        estimates.append({
            "x0": _nine(est.x0),
            "mean": _nine(est.mean),
            "std_err": _nine(est.std_err),
            "min_value": _nine(est.min_value),
            "max_value": _nine(est.max_value),
        })
    doc = {
        "command": "simulate",
        "metadata": _metadata(cfg, b=_nine(b), n_paths=paths, seed=seed,
                              dt=_nine(dt)),
        "result": {"estimates": estimates},
    }
    rows = [("x0", "mean", "std_err", "min_value", "max_value")]
    for est in estimates:
        rows.append((est["x0"], est["mean"], est["std_err"],
                     est["min_value"], est["max_value"]))
    return doc, rows


def _run_constants(cfg: dict):
    params = _params(cfg)
    b = _require_b(cfg, "constants")
    ec = constants(params, b)
    names = ("c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "c9", "c10",
             "c11", "gamma_hat", "h0", "f_l2")
    values = {name: _nine(getattr(ec, name)) for name in names}
    doc = {
        "command": "constants",
        "metadata": _metadata(cfg, b=_nine(b)),
        "result": {"constants": values},
    }
    rows = [("name", "value")] + [(name, values[name]) for name in names]
    return doc, rows


_RESULT_FIELDS = {
    "solve": ("b", "min_v", "max_v", "f_at_b", "residual_max"),
    "find-boundary": ("b_n", "f_at_root", "iterations", "bracket"),
    "converge": ("rows", "monotone_decreasing"),
    "check-conditions": ("b_n", "condition_a_holds", "worst_margin",
                         "condition_b_holds", "min_v"),
    "simulate": ("estimates",),
    "constants": ("constants",),
}


def validate_document(doc) -> None:
    """Raise ConfigError unless doc looks like an emitted result document."""
    if not isinstance(doc, dict):
        raise ConfigError("document: not a JSON object")
    for key in ("command", "metadata", "result"):
        if key not in doc:
            raise ConfigError(f"document: missing key {key!r}")
    command = doc["command"]
    if command not in _RESULT_FIELDS:
        raise ConfigError(f"document: unknown command {command!r}")
    meta = doc["metadata"]
    if not isinstance(meta, dict):
        raise ConfigError("document: metadata must be an object")
    for key in ("version", "timestamp", "parameters"):
        if key not in meta:
            raise ConfigError(f"document: metadata missing {key!r}")
    pars = meta["parameters"]
    if not isinstance(pars, dict):
        raise ConfigError("document: metadata.parameters must be an object")
    for key in PARAM_KEYS:
        if key not in pars:
            raise ConfigError(f"document: parameters missing {key!r}")
        if not isinstance(pars[key], (int, float)) or not math.isfinite(pars[key]):
            raise ConfigError(f"document: parameters.{key} must be finite")
    result = doc["result"]
    if not isinstance(result, dict):
        raise ConfigError("document: result must be an object")
    for field in _RESULT_FIELDS[command]:
        if field not in result:
            raise ConfigError(f"document: result missing {field!r}")


def _emit(doc: dict, rows, cfg: dict) -> None:
    if cfg["format"] == "csv":
        text = "\n".join(",".join(_fmt(cell) for cell in row)
                         for row in rows) + "\n"
    else:
        text = json.dumps(doc, indent=2) + "\n"
    if cfg["out"]:
        with open(cfg["out"], "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


_RUNNERS = {
    "solve": _run_solve,
    "find-boundary": _run_find_boundary,
    "converge": _run_converge,
    "check-conditions": _run_check_conditions,
    "simulate": _run_simulate,
    "constants": _run_constants,
}


_VALUE_FLAGS = {
    "--mu", "--sigma", "--lambda", "--a", "--gamma", "--jmax", "--n", "--b",
    "--ns", "--tol-b", "--x0", "--paths", "--dt", "--seed", "--config",
    "--out", "--format",
}


def _normalize_argv(argv):
    """Join flag/value pairs whose value starts with a minus sign.

    argparse mistakes "-0.05,0,0.03" for an option string, so negative
    numbers and lists of them must arrive in --flag=value form.
    """
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if (tok in _VALUE_FLAGS and i + 1 < len(argv)
                and re.match(r"^-[\d.]", argv[i + 1])):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def run(argv=None) -> int:
    parser = _build_parser()
    if argv is None:
        argv = sys.argv[1:]
    args = parser.parse_args(_normalize_argv(list(argv)))
    try:
        if args.command == "validate":
            try:
                with open(args.document) as fh:
                    doc = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"document: cannot read {args.document}: {exc}")
            except json.JSONDecodeError as exc:
                raise ConfigError(f"document: not valid JSON: {exc}")
            validate_document(doc)
            return 0
        cfg = _merge_config(args)
        doc, rows = _RUNNERS[args.command](cfg)
        _emit(doc, rows, cfg)
        return 0
    except (ConfigError, ValueError) as exc:
        # library validation errors name the offending field already
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BracketingError, SingularSystemError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
