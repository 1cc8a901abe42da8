"""Command-line front end.

Every subcommand resolves its configuration from built-in defaults, then a
``key = value`` config file (``--config`` or ``$SHORTFALL_CONFIG``), then
command-line flags, and echoes the resolved configuration into its output.

Exit codes: 0 success, 2 configuration error, 3 grid escape.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

import numba
import numpy as np

from . import dp, embed
from .model import Frictions, InvalidParameterError, MarketParams, calibrate
from .payoff import PayoffSpec

FORMAT_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_GRID = 0, 2, 3
CONFIG_ENV = "SHORTFALL_CONFIG"

log = logging.getLogger("shortfall")


class ConfigError(ValueError):
    pass


def _float_list(text: str) -> List[float]:
    return [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


def _int_list(text: str) -> List[int]:
    return [int(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


# key -> (parser, default); keys double as flag names with '_' -> '-'
SCHEMA: Dict[str, tuple] = {
    "S0": (float, 1.0),
    "sigma": (float, 0.2),
    "kappa": (float, 0.0),
    "T": (float, 1.0),
    "payoff": (str, "call"),
    "strike": (float, 1.0),
    "cap": (float, None),
    "amount": (float, 0.0),
    "lambda": (float, 0.0),
    "mu": (float, 0.0),
    "x": (float, None),
    "x_frac": (float, 0.5),
    "n": (int, 8),
    "n_list": (_int_list, [8, 16, 32, 64]),
    "x_list": (_float_list, None),
    "x_points": (int, 200),
    "grid_u": (int, dp.GridSpec.n_u),
    "grid_v": (int, dp.GridSpec.n_v),
    "u_max": (float, None),
    "w_candidates": (int, dp.GridSpec.w_candidates),
    "seed": (int, None),
    "paths": (int, 2000),
    "fine_steps": (int, None),
    "steps_per_move": (int, 200),
    "oracle_grid": (int, 201),
    "threads": (int, None),
    "format": (str, "json"),
    "out": (str, "-"),
    "dump": (str, None),
    "wealth_path": (str, None),
    "wealth_csv": (str, None),
}

_HELP = {
    "payoff": "call | put | capped-call | lookback-max | russian | constant",
    "amount": "cash amount of the constant payoff",
    "x": "initial capital (default: x_frac times the zero-capital risk)",
    "x_frac": "initial capital as a fraction of the Snell value when --x is absent",
    "n_list": "comma-separated step counts (converge, simulate)",
    "x_list": "comma-separated capitals (frontier)",
    "x_points": "frontier samples on [0, 1.2 Snell] when --x-list is absent",
    "fine_steps": "simulation grid steps over [0, T_sim] (default steps_per_move * n)",
    "steps_per_move": "fine steps per lattice step when --fine-steps is absent",
    "oracle_grid": "transfer grid size of the brute-force oracle",
    "threads": "cap on engine threads",
    "format": "json | csv",
    "out": "output file, '-' for stdout",
    "u_max": "truncate every wealth axis here (optimal states beyond it exit with code 3)",
    "dump": "risk: also write all value and policy grids to this .npz file",
    "wealth_path": "risk: follow the optimal strategy along this sign string, e.g. '+-+'",
    "wealth_csv": "risk: write the followed path as CSV rows (k, V, v, w) to this file",
}


def read_config_file(path: str) -> Dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out: Dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve(args: argparse.Namespace) -> Dict[str, Any]:
    """Defaults < config file < flags."""
    cfg = {k: default for k, (_, default) in SCHEMA.items()}
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        for key, text in read_config_file(path).items():
            try:
                cfg[key] = SCHEMA[key][0](text)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {text!r}") from None
    for key in SCHEMA:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    cfg["config_file"] = path
    if cfg["format"] not in ("json", "csv"):
        raise ConfigError(f"unknown format {cfg['format']!r}")
    return cfg


# --------------------------------------------------------------------------
# building blocks from the resolved config
# --------------------------------------------------------------------------


def _market(cfg) -> MarketParams:
    return MarketParams(cfg["S0"], cfg["sigma"], cfg["kappa"], cfg["T"])


def _frictions(cfg) -> Frictions:
    return Frictions(cfg["lambda"], cfg["mu"])


def _payoff(cfg) -> PayoffSpec:
    kind = cfg["payoff"]
    if kind == "capped-call" and cfg["cap"] is None:
        raise ConfigError("capped-call needs --cap")
    cap = cfg["cap"] if kind == "capped-call" else float("inf")
    return PayoffSpec(kind=kind, strike=cfg["strike"], cap=cap, amount=cfg["amount"])


def _grid(cfg) -> dp.GridSpec:
    return dp.GridSpec(
        n_u=cfg["grid_u"], n_v=cfg["grid_v"], w_candidates=cfg["w_candidates"], u_max=cfg["u_max"]
    )


def _capital(cfg, snell: float) -> float:
    return cfg["x"] if cfg["x"] is not None else cfg["x_frac"] * snell


def _sim(cfg, n: int) -> embed.SimConfig:
    if cfg["seed"] is None:
        raise ConfigError("simulate needs an explicit --seed")
    steps = cfg["fine_steps"] if cfg["fine_steps"] is not None else cfg["steps_per_move"] * n
    return embed.SimConfig(fine_steps=steps, paths=cfg["paths"], seed=cfg["seed"])


# --------------------------------------------------------------------------
# commands; each returns (json document, csv header, csv rows)
# --------------------------------------------------------------------------


def cmd_risk(cfg):
    """Shortfall risk R_n(x) with its optimal first transfer."""
    params, fr, pay = _market(cfg), _frictions(cfg), _payoff(cfg)
    spec = calibrate(params, cfg["n"])
    sol = dp.solve(spec, params, pay, fr, _grid(cfg))
    x = _capital(cfg, sol.snell)
    report = dp.shortfall_risk(spec, params, pay, fr, x, solution=sol)
    if cfg["dump"]:
        dp.export_grids(sol, cfg["dump"])
    doc = report.to_dict()
    if cfg["wealth_path"] is not None:
        doc["wealth_path"] = _wealth_path(sol, x, cfg["wealth_path"], cfg["wealth_csv"])
    header = ["n", "x", "R_n", "snell", "w0", "max_refine_residual"]
    rows = [[spec.n, x, report.value, report.snell, report.w0, doc["diagnostics"]["max_refine_residual"]]]
    return doc, header, rows


def _signs(text: str) -> List[int]:
    table = {"+": 1, "u": 1, "U": 1, "-": -1, "d": -1, "D": -1}
    try:
        return [table[c] for c in text.replace(",", "").replace(" ", "")]
    except KeyError:
        raise ConfigError(f"wealth_path must be a string of + and -, got {text!r}") from None


def _wealth_path(sol, x: float, text: str, target: Optional[str]) -> List[dict]:
    strat = dp.extract_strategy(sol, x, _signs(text))
    rows = []
    for k in range(len(strat.wealth)):
        w = float(strat.transfers[k]) if k < len(strat.transfers) else math.nan
        rows.append({"k": k, "V": float(strat.wealth[k]), "v": float(strat.positions[k]), "w": w})
    if target:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["k", "V", "v", "w"])
            for r in rows:
                writer.writerow([r["k"], repr(r["V"]), repr(r["v"]), "" if math.isnan(r["w"]) else repr(r["w"])])
    return rows


def cmd_snell(cfg):
    """Zero-capital companion: optimal stopping value of the payoff."""
    params, pay = _market(cfg), _payoff(cfg)
    spec = calibrate(params, cfg["n"])
    value = dp.snell_value(pay, spec, params)
    return {"n": spec.n, "snell": value}, ["n", "snell"], [[spec.n, value]]


def cmd_converge(cfg):
    """R_n along an ascending list of step counts."""
    params, fr, pay, grid = _market(cfg), _frictions(cfg), _payoff(cfg), _grid(cfg)
    n_list = list(cfg["n_list"])
    if n_list != sorted(n_list) or not n_list:
        raise ConfigError("n_list must be non-empty and ascending")
    if cfg["x"] is None:
        x = cfg["x_frac"] * dp.snell_value(pay, calibrate(params, n_list[-1]), params)
    else:
        x = cfg["x"]
    rows = []
    prev = None
    for n in n_list:
        spec = calibrate(params, n)
        report = dp.shortfall_risk(spec, params, pay, fr, x, grid)
        diff = math.nan if prev is None else abs(report.value - prev)
        rows.append([n, report.value, report.diagnostics["max_refine_residual"], diff])
        prev = report.value
        log.info("n=%d R_n=%.10g", n, report.value)
    header = ["n", "R_n", "grid_residual", "abs_diff_prev"]
    doc = {"x": x, "rows": [dict(zip(header, r)) for r in rows]}
    return doc, header, rows


def cmd_frontier(cfg):
    """Risk curve x -> R_n(x) with estimated breakpoints."""
    params, fr, pay = _market(cfg), _frictions(cfg), _payoff(cfg)
    spec = calibrate(params, cfg["n"])
    sol = dp.solve(spec, params, pay, fr, _grid(cfg))
    if cfg["x_list"] is not None:
        xs = np.asarray(cfg["x_list"], dtype=float)
    else:
        top = 1.2 * sol.snell
        if pay.kind == "capped-call":
            top = max(top, float(sol.lattice[0].ceiling[0]))
        xs = np.linspace(0.0, top, cfg["x_points"])
    curve = dp.risk_curve(sol, xs)
    rows = [[float(x), float(r), int(x in set(curve.breakpoints.tolist()))] for x, r in zip(curve.x, curve.R)]
    doc = {
        "x": curve.x.tolist(),
        "R": curve.R.tolist(),
        "breakpoints": curve.breakpoints.tolist(),
        "lipschitz": curve.lipschitz,
    }
    return doc, ["x", "R_n", "breakpoint"], rows


def cmd_simulate(cfg):
    """Embedding diagnostics and the Monte Carlo shortfall bracket."""
    params, fr, pay = _market(cfg), _frictions(cfg), _payoff(cfg)
    n_list = list(cfg["n_list"])
    base = _sim(cfg, max(n_list))
    if cfg["fine_steps"] is None:
        diag = embed.convergence_diagnostics(params, n_list, base, pay, steps_per_move=cfg["steps_per_move"])
    else:
        diag = embed.convergence_diagnostics(params, n_list, base, pay)
    rows = [list(e.row()) for e in diag.estimates]
    n = cfg["n"]
    spec = calibrate(params, n)
    sol = dp.solve(spec, params, pay, fr, _grid(cfg))
    x = _capital(cfg, sol.snell)
    br = embed.shortfall_bracket(sol, x, _sim(cfg, n))
    for name, est, se in (
        ("bracket_lower", br.lower, br.lower_se),
        ("bracket_upper_proxy", br.upper_proxy, br.payoff_gap_se),
        ("R_n", br.R_n, 0.0),
        ("lift_violations", float(br.lift_violations), 0.0),
    ):
        rows.append([n, name, est, se, br.n_effective])
    doc = {
        "diagnostics": [dict(zip(("n", "estimator", "estimate", "std_error", "N_effective"), r))
                        for r in rows[: len(diag.estimates)]],
        "incomplete": {str(k): v for k, v in diag.incomplete.items()},
        "fine_steps": {str(k): v for k, v in diag.fine_steps.items()},
        "bracket": {
            "n": br.n, "x": br.x, "R_n": br.R_n, "lower": br.lower, "lower_se": br.lower_se,
            "lower_rule": br.lower_rule, "payoff_gap": br.payoff_gap, "payoff_gap_se": br.payoff_gap_se,
            "upper_proxy": br.upper_proxy, "upper_proxy_heuristic": br.heuristic,
            "n_effective": br.n_effective, "incomplete": br.incomplete,
            "fine_steps": br.fine_steps, "lift_violations": br.lift_violations,
        },
    }
    return doc, ["n", "estimator", "estimate", "std_error", "N_effective"], rows


def cmd_oracle(cfg):
    """DP value next to the brute-force oracle (n <= 3)."""
    n = cfg["n"]
    if n > dp.ORACLE_MAX_STEPS:
        raise ConfigError(f"oracle runs only for n <= {dp.ORACLE_MAX_STEPS}, got n={n}")
    params, fr, pay = _market(cfg), _frictions(cfg), _payoff(cfg)
    spec = calibrate(params, n)
    sol = dp.solve(spec, params, pay, fr, _grid(cfg))
    x = _capital(cfg, sol.snell)
    value = dp.shortfall_risk(spec, params, pay, fr, x, solution=sol).value
    oracle = dp.oracle_bruteforce(spec, params, pay, fr, x, cfg["oracle_grid"])
    gap = abs(value - oracle)
    rel = gap / (1.0 + oracle)
    doc = {"n": n, "x": x, "dp": value, "oracle": oracle, "abs_gap": gap, "rel_gap": rel}
    return doc, list(doc), [list(doc.values())]


COMMANDS: Dict[str, Callable] = {
    "risk": cmd_risk,
    "converge": cmd_converge,
    "frontier": cmd_frontier,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "snell": cmd_snell,
}


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def render(command: str, cfg: Dict[str, Any], doc, header, rows) -> str:
    echo = {k: cfg[k] for k in sorted(cfg)}
    if cfg["format"] == "json":
        full = {"format_version": FORMAT_VERSION, "command": command, "config": echo, "result": doc}
        return json.dumps(_jsonable(full), indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    buf.write(f"# format_version={FORMAT_VERSION}\n# command={command}\n")
    for k, v in echo.items():
        buf.write(f"# {k}={json.dumps(_jsonable(v))}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"key = value config file (default ${CONFIG_ENV})")
    for key, (kind, _) in SCHEMA.items():
        flag = "--" + key.replace("_", "-")
        dest = key
        common.add_argument(flag, dest=dest, type=kind, default=None, help=_HELP.get(key))
    common.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    parser = argparse.ArgumentParser(
        prog="shortfall",
        description="Minimal shortfall risk of American options under proportional transaction costs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip().splitlines()[0])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve(args)
        if cfg["threads"] is not None:
            numba.set_num_threads(max(1, min(cfg["threads"], numba.config.NUMBA_NUM_THREADS)))
        doc, header, rows = COMMANDS[args.command](cfg)
    except (ConfigError, InvalidParameterError, dp.TreeTooLargeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except dp.GridEscapeError as exc:
        print(f"grid escape: {exc}", file=sys.stderr)
        return EXIT_GRID
    text = render(args.command, cfg, doc, header, rows)
    if cfg["out"] == "-":
        sys.stdout.write(text)
    else:
        with open(cfg["out"], "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
