"""
Command line entry points.

Each command builds its inputs from a RunConfig, runs one library pipeline
and returns a report dict plus an exit code: 0 pass, 1 verification failed,
2 invalid input (any CurvconeError or I/O error).
"""

import argparse
import csv
import json
import logging
import os
import time
from typing import Callable, Optional, Sequence

import numpy as np

from src.bending import bending_pipeline
from src.conditions import margin, orbit_average, parse_condition, parse_operator
from src.conformal import FlatteningFactor, formula_oracle, verify_conformal
from src.config import COMMANDS, FORMATS, RunConfig, build_config
from src.curvop import bianchi_project, from_riemann, to_riemann
from src.errors import CurvconeError, InputError
from src.geometry import RotSymModel, chart_curvature_operator_fd, stereographic_sphere
from src.observability import flush_langfuse, trace_command
from src.submersion import berger_oracle, find_t_star, hopf_data, product_data, torus_data
from src.utils import get_timestamp
from src.version import LAST_UPDATED, RECENT_FIXES, VERSION

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INPUT = 2


def _condition(config: RunConfig):
    c = parse_condition(config.condition, tolerance=config.tol)
    return c.with_minimizer(seed=config.seed, threads=config.threads)


def _envelope(config: RunConfig, verdict: str, rows: list, min_margin: Optional[float], body: dict) -> dict:
    """Common report fields around a command-specific body."""
    return {
        "version": VERSION,
        "generated_at": get_timestamp(),
        "command": config.command,
        "config": config.to_dict(),
        "provenance": {"seed": config.seed, "grid": config.grid},
        "samples": rows,
        "summary": {"min_margin": min_margin, "verdict": verdict},
        "verdict": verdict,
        "result": body,
    }


def _exit_code(verdict: str) -> int:
    return EXIT_PASS if verdict == "pass" else EXIT_FAIL


def _min_margin(rows: list, key: str = "margin_scaled") -> Optional[float]:
    values = [row[key] for row in rows if row.get(key) is not None]
    return float(min(values)) if values else None


@trace_command("check")
def run_check(config: RunConfig) -> tuple[dict, int]:
    """margin of one operator against one condition."""
    if not config.operator:
        raise InputError("check needs an operator, e.g. --operator model:d=3,r=1,n=5")
    op = parse_operator(config.operator)
    c = _condition(config)
    value = margin(c, op)
    verdict = c.verdict(value)
    rows = [{"operator": config.operator, "condition": c.name, "margin": value, "verdict": verdict}]
    logger.info(f"check {config.operator} against {c.name}: margin {value:.6g} ({verdict})")
    return _envelope(config, verdict, rows, value, {"margin": value}), _exit_code(verdict)


@trace_command("bend")
def run_bend(config: RunConfig) -> tuple[dict, int]:
    m = RotSymModel(config.model, config.n, a=config.a, k=config.k)
    report = bending_pipeline(m, _condition(config), config.rbar, r_target=config.r_target,
                              target_fraction=config.target_fraction, nodes=config.grid or 17,
                              oracle_samples=config.oracle_samples, seed=config.seed, threads=config.threads)
    body = report.to_dict()
    rows = body.pop("samples")
    return _envelope(config, report.verdict, rows, report.min_margin, body), _exit_code(report.verdict)


@trace_command("conformal")
def run_conformal(config: RunConfig) -> tuple[dict, int]:
    ff = FlatteningFactor(config.chart, config.n, a=config.a)
    report = verify_conformal(ff, _condition(config), gamma=config.gamma, gamma_fraction=config.gamma_fraction,
                              grid=config.grid or 33, directions=config.directions,
                              oracle_samples=config.oracle_samples, seed=config.seed, threads=config.threads)
    body = report.to_dict()
    rows = body.pop("samples")
    return _envelope(config, report.verdict, rows, report.min_margin, body), _exit_code(report.verdict)


def submersion_data(config: RunConfig):
    if config.data == "hopf":
        return hopf_data()
    if config.data == "product":
        return product_data(config.fiber_curvature, config.base_curvature, config.fiber_dim, config.n)
    return torus_data(config.fiber_dim, config.n, config.base_curvature)


@trace_command("rescale")
def run_rescale(config: RunConfig) -> tuple[dict, int]:
    report = find_t_star(submersion_data(config), _condition(config), grid=config.tgrid,
                         strict=config.strict, threads=config.threads)
    body = report.to_dict()
    rows = body.pop("samples")
    return _envelope(config, report.verdict, rows, _min_margin(rows, "margin"), body), _exit_code(report.verdict)


@trace_command("average")
def run_average(config: RunConfig) -> tuple[dict, int]:
    """Orbit average of an operator supported on Λ²ℝᵈ, fitted to model_operator(d+1, 1, n)."""
    op = parse_operator(config.operator or f"model:d={config.d},r=1,n={config.n}")
    result = orbit_average(op, config.d, config.samples, seed=config.seed)
    verdict = "pass" if result.residual <= config.residual_tol else "fail"
    rows = [{"d": config.d, "samples": config.samples, "lambda": result.lam, "residual": result.residual}]
    body = {"lambda": result.lam, "residual": result.residual, "residual_tol": config.residual_tol,
            "average": result.S.to_json()}
    return _envelope(config, verdict, rows, None, body), _exit_code(verdict)


def oracle_suite(seed: int = 0, fixtures: int = 4) -> list:
    """Fast cross-validation of the closed forms against independent computations."""
    rng = np.random.default_rng(seed)
    rows = []

    sym = rng.standard_normal((10, 10))
    op = bianchi_project(sym + sym.T)
    rows.append(("riemann_round_trip", float(np.max(np.abs(from_riemann(to_riemann(op)).mat - op.mat))), 1e-12))

    chart = stereographic_sphere(4)
    x = rng.uniform(-0.5, 0.5, 4)
    rows.append(("sphere_chart_fd", float(np.max(np.abs(chart_curvature_operator_fd(chart, x).mat - np.eye(6)))),
                 1e-6))

    rows.append(("berger_canonical_variation", max(berger_oracle(t) for t in (1.0, 0.5, 0.25)), 1e-6))
    rows.append(("conformal_change_formulas", formula_oracle(fixtures=fixtures, seed=seed), 1e-5))

    out = []
    for name, deviation, tol in rows:
        verdict = "pass" if deviation <= tol else "fail"
        logger.info(f"oracle {name}: deviation {deviation:.3e} (tolerance {tol:g}) {verdict}")
        out.append({"name": name, "deviation": deviation, "tolerance": tol, "verdict": verdict})
    return out


@trace_command("oracle")
def run_oracle(config: RunConfig) -> tuple[dict, int]:
    rows = oracle_suite(seed=config.seed, fixtures=max(config.oracle_samples, 1) * 2)
    verdict = "pass" if all(row["verdict"] == "pass" for row in rows) else "fail"
    body = {"worst": max(rows, key=lambda row: row["deviation"] / row["tolerance"])["name"]}
    return _envelope(config, verdict, rows, None, body), _exit_code(verdict)


HANDLERS: dict[str, Callable[[RunConfig], tuple[dict, int]]] = {
    "check": run_check,
    "bend": run_bend,
    "conformal": run_conformal,
    "rescale": run_rescale,
    "average": run_average,
    "oracle": run_oracle,
}


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def write_report(report: dict, out: str, fmt: str = "json") -> list[str]:
    """Write the JSON report (sorted keys) and, for csv, the sample rows next to it."""
    directory = os.path.dirname(out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)
    written = [out]
    if fmt == "csv":
        path = os.path.splitext(out)[0] + ".csv"
        rows = report.get("samples") or []
        columns = sorted({key for row in rows for key in row})
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns)
            writer.writeheader()
            writer.writerows(rows)
        written.append(path)
    logger.info(f"Report written to {', '.join(written)}")
    return written


def _error_report(config: RunConfig, error: Exception) -> dict:
    return {"version": VERSION, "generated_at": get_timestamp(), "command": config.command,
            "config": config.to_dict(), "error": f"{type(error).__name__}: {error}", "verdict": "error"}


def run(config: RunConfig) -> tuple[dict, int]:
    """
    Dispatch one command, write its report when an output path is set.

    Examples:
        check --condition scal --operator model:d=3,r=1,n=5 → margin 3, exit 0
        check --condition nonsense ... → exit 2
    """
    started = time.perf_counter()
    try:
        report, code = HANDLERS[config.command](config)
    except CurvconeError as e:
        logger.error(f"{config.command} rejected its input: {e}")
        report = _error_report(config, e)
        code = EXIT_INPUT
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        logger.error(f"{config.command} failed numerically: {type(e).__name__}: {e}")
        report = _error_report(config, e)
        code = EXIT_INPUT
    if "summary" in report:
        report["summary"]["runtime_s"] = time.perf_counter() - started
    if config.out:
        try:
            write_report(report, config.out, config.format)
        except OSError as e:
            logger.error(f"Failed to write report {config.out}: {e}")
            code = EXIT_INPUT
    flush_langfuse()
    return report, code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvcone", description="Curvature cone constructions and checks.",
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version",
                        version=f"curvcone {VERSION} ({LAST_UPDATED})\n" + "\n".join(f"  - {fix}" for fix in RECENT_FIXES))
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value file")
    parser.add_argument("--out", help="JSON report path")
    parser.add_argument("--format", choices=FORMATS)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--grid", type=int)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--threads", type=int, help="worker threads (default $CURVCONE_THREADS or 1)")
    parser.add_argument("--condition", help='e.g. "scal" or "spectral:epsilon=0.5"')
    parser.add_argument("--operator", help='e.g. "model:d=3,r=1,n=5"')
    parser.add_argument("--model", help="bend: flat-point, sphere-point, hyperbolic-point, sphere-subsphere")
    parser.add_argument("--chart", help="conformal: sphere or flat")
    parser.add_argument("--data", help="rescale: hopf, product or torus")
    parser.add_argument("--n", type=int)
    parser.add_argument("--a", type=float)
    parser.add_argument("--k", type=int)
    parser.add_argument("--d", type=int)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--rbar", type=float)
    parser.add_argument("--rtarget", dest="r_target", type=float)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--gamma-fraction", dest="gamma_fraction", type=float)
    parser.add_argument("--tgrid", help="comma separated t values")
    parser.add_argument("--oracle-samples", dest="oracle_samples", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {key: value for key, value in vars(args).items() if key not in ("command", "config")}
    try:
        config = build_config(args.command, args.config, flags)
    except CurvconeError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_INPUT
    _, code = run(config)
    return code
