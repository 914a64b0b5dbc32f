"""
CLI interface for qgpatch.

Each command builds the surface pair from a run configuration, runs one experiment, prints
a JSON summary on standard output and writes its tables as CSV files into the output
directory. Exit status is 0 when every check of the command passes, 1 when a numerical
check fails and 2 on configuration errors.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from rich.logging import RichHandler

from qgpatch.bifurcation import NotBracketed, find_omega_m, is_degenerate, omega_sequence
from qgpatch.config import PRESETS, ConfigError, RunConfig
from qgpatch.kernels import (
    KernelContext, alpha1, alpha2, ellipsoid_interior_stream, nu_closed_form, sphere_stream, window_closed_form,
)
from qgpatch.nonlinear import (
    DEFAULT_S_VALUES, FD_STEP, PerturbationTooLarge, SurfacePerturbation, body_stream, linearization_check,
    residual_check,
)
from qgpatch.profiles import HypothesisViolation, ProfileFormatError
from qgpatch.spectral import eigen_sweep, omega_grid

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

DEFAULT_M = 5
DEFAULT_SWEEP_MODES = tuple(range(2, 13))
DEFAULT_OMEGA_POINTS = 11
DEFAULT_SEQUENCE = (1, 12)
WINDOW_TOLERANCE = 1e-6
NU_TOLERANCE = 1e-6
STREAM_TOLERANCE = 1e-8
IDENTITY_TOLERANCE = 1e-12

GEOMETRY_FLAGS = ("preset", "a", "d1", "d2", "gamma", "outer_csv", "inner_csv")
NUMERICS_FLAGS = ("N", "grading", "N_theta", "tol", "window_samples")
COMMAND_FLAGS = ("omegas", "omega_points", "omega", "m", "s_values", "step", "directions", "seed")

NU_SOURCES_HEADER = ("phi[rad]", "g1[angular velocity induced on the outer surface]",
                     "g2[angular velocity induced on the inner surface]")
EIGENFUNCTION_HEADER = ("phi[rad]", "h1[top eigenvector of T^m_Omega_m; unit weighted norm]",
                        "h2[top eigenvector of T^m_Omega_m; unit weighted norm]")
RESIDUAL_HEADER = ("s[amplitude of the kernel direction]", "sup_norm_Ftilde[max|F~(Omega_m, s f_m)| on both surfaces]")
CLOSED_FORM_HEADER = ("check", "numeric", "closed_form", "abs_error[|numeric - closed_form|]",
                      "tolerance[absolute]", "passed")


def setup_logging(verbose: bool):
    """Configures logging level based on verbosity; records go to standard error."""
    log_level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=log_level, format="%(message)s", datefmt="[%X]",
                        handlers=[RichHandler(console=Console(stderr=True), show_path=False)])


def _mode_span(text: str) -> Tuple[int, int]:
    """Parses a mode ``n`` or an inclusive range ``a:b``."""
    try:
        if ":" in text:
            first, last = (int(part) for part in text.split(":", 1))
        else:
            first = last = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is neither a mode nor a range a:b") from None
    return first, last


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration with geometry, numerics and command blocks.")
    common.add_argument("-o", "--output",
                        help="Directory for CSV artifacts (default: current directory).")
    common.add_argument("-j", "--jobs", type=int,
                        help="Worker threads (default: $QGPATCH_THREADS or 4). Use 1 to disable concurrency.")
    common.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging for debugging.")
    geometry = common.add_argument_group("geometry")
    geometry.add_argument("--preset", choices=PRESETS, help="Surface pair (default: ellipsoid-sphere).")
    geometry.add_argument("--a", type=float, help="Equatorial semi-axis of the outer ellipsoid.")
    geometry.add_argument("--d1", type=float, help="Vertical semi-axis of the outer surface.")
    geometry.add_argument("--d2", type=float, help="Vertical semi-axis of the inner surface.")
    geometry.add_argument("--gamma", type=float, help="Exponent of the scaled-ellipsoid family.")
    geometry.add_argument("--outer-csv", dest="outer_csv", help="Outer profile samples (phi,r).")
    geometry.add_argument("--inner-csv", dest="inner_csv", help="Inner profile samples (phi,r).")
    numerics = common.add_argument_group("numerics")
    numerics.add_argument("--N", dest="N", type=int, help="Latitude nodes (default: 160).")
    numerics.add_argument("--grading", type=float, help="Pole grading exponent (default: 2).")
    numerics.add_argument("--n-theta", dest="N_theta", type=int, help="Longitudes (default: 8 x largest mode).")
    numerics.add_argument("--tol", type=float, help="Root-finding tolerance (default: 1e-10).")
    numerics.add_argument("--window-samples", dest="window_samples", type=int,
                          help="Latitudes scanned for the Omega window (default: 1024).")
    return common


def parse_arguments(argv: List[str] = None) -> argparse.Namespace:
    """Parses command-line arguments and returns the parsed namespace."""
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="qgpatch",
        description="Spectral and bifurcation experiments for doubly connected rotating QG patches."
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")
    commands.add_parser("check-hypotheses", parents=[common],
                        help="Grid estimates of the separation, chord and symmetry constants.")
    commands.add_parser("omega-window", parents=[common], help="Admissible angular velocities.")
    sweep = commands.add_parser("eigen-sweep", parents=[common], help="Largest eigenvalue over modes and Omega.")
    sweep.add_argument("--modes", type=_mode_span, nargs="+", help="Modes n or ranges a:b (default: 2:12).")
    sweep.add_argument("--omegas", type=float, nargs="+", help="Explicit angular velocities.")
    sweep.add_argument("--omega-points", dest="omega_points", type=int,
                       help=f"Evenly spaced Omega values below Omega_bar_1 (default: {DEFAULT_OMEGA_POINTS}).")
    single = commands.add_parser("find-bifurcation", parents=[common], help="Omega_m with lambda_m(Omega_m) = 1.")
    single.add_argument("--m", type=int, help=f"Symmetry mode (default: {DEFAULT_M}).")
    sequence = commands.add_parser("omega-sequence", parents=[common], help="Omega_m over a range of modes.")
    sequence.add_argument("--m", dest="m_span", type=_mode_span,
                          help=f"Mode range a:b (default: {DEFAULT_SEQUENCE[0]}:{DEFAULT_SEQUENCE[1]}).")
    residual = commands.add_parser("residual-check", parents=[common],
                                   help="Order of F~(Omega_m, s f*_m) as s goes to zero.")
    residual.add_argument("--m", type=int, help=f"Symmetry mode (default: {DEFAULT_M}).")
    residual.add_argument("--s", dest="s_values", type=float, nargs="+",
                          help="Amplitudes; a single value s expands to s, s/2, s/4.")
    linear = commands.add_parser("linearization-check", parents=[common],
                                 help="Finite differences of F~ against the analytic linearization.")
    linear.add_argument("--omega", type=float, help="Angular velocity (default: window midpoint).")
    linear.add_argument("--m", type=int, help=f"Base mode; default modes are m and 2m (default m: {DEFAULT_M}).")
    linear.add_argument("--modes", type=_mode_span, nargs="+", help="Modes n or ranges a:b to check.")
    linear.add_argument("--directions", type=int, help="Random directions per mode (default: 3).")
    linear.add_argument("--seed", type=int, help="Seed of the random directions (default: 0).")
    linear.add_argument("--step", type=float, help=f"Finite-difference step (default: {FD_STEP:g}).")
    commands.add_parser("validate-closed-form", parents=[common],
                        help="Compare numerics with the ellipsoid/sphere closed forms.")
    return parser.parse_args(argv)


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Configuration file (or defaults) overridden by command-line flags, validated once more."""
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    for name in GEOMETRY_FLAGS:
        if getattr(args, name, None) is not None:
            setattr(config.geometry, name, getattr(args, name))
    for name in NUMERICS_FLAGS:
        if getattr(args, name, None) is not None:
            setattr(config.numerics, name, getattr(args, name))
    if args.jobs is not None:
        config.numerics.threads = args.jobs
    for name in COMMAND_FLAGS:
        if getattr(args, name, None) is not None:
            config.command[name] = getattr(args, name)
    if getattr(args, "modes", None):
        config.command["modes"] = [n for first, last in args.modes for n in range(first, last + 1)]
    if getattr(args, "m_span", None) is not None:
        config.command["m_min"], config.command["m_max"] = args.m_span
    return RunConfig.from_dict(config.to_dict())


def _context(config: RunConfig) -> KernelContext:
    ctx = config.build_context()
    ctx.window(config.numerics.window_samples)
    return ctx


def _write_rows(path: str, header: Sequence[str], rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    logger.info("Wrote %s", path)


def command_check_hypotheses(config: RunConfig, output_dir: str) -> Dict[str, Any]:  # pylint: disable=unused-argument
    pair = config.geometry.build(config.numerics.hypothesis_grid)
    summary = asdict(pair.validated)
    if not pair.validated.passed:
        summary["reason"] = "; ".join(pair.validated.reasons)
    return summary


def command_omega_window(config: RunConfig, output_dir: str) -> Dict[str, Any]:
    ctx = _context(config)
    window = ctx.window()
    summary: Dict[str, Any] = window.to_dict()
    summary["spectral_condition"] = window.spectral_condition
    if ctx.config.is_ellipsoid_sphere():
        summary["closed_form"] = window_closed_form(ctx.config.outer.semi_axis, ctx.config.d1, ctx.config.d2).to_dict()
    nodes = ctx.grid.nodes
    path = os.path.join(output_dir, "nu_sources.csv")
    _write_rows(path, NU_SOURCES_HEADER, zip(nodes, ctx.g_nodes(1), ctx.g_nodes(2)))
    summary["csv"] = path
    summary["passed"] = window.spectral_condition
    if not window.spectral_condition:
        summary["reason"] = "spectral gap Omega_bar_1 - Omega_bar_2 is not positive"
    return summary


def command_eigen_sweep(config: RunConfig, output_dir: str) -> Dict[str, Any]:
    ctx = _context(config)
    window = ctx.window()
    modes = config.command.get("modes") or list(DEFAULT_SWEEP_MODES)
    points = config.command.get("omega_points", DEFAULT_OMEGA_POINTS)
    omegas = config.command.get("omegas") or omega_grid(window, points)
    report = eigen_sweep(modes, omegas, ctx, jobs=config.numerics.threads)
    path = os.path.join(output_dir, "eigen_sweep.csv")
    report.to_csv(path)
    summary = report.to_dict()
    summary["csv"] = path
    summary["passed"] = all(report.decreasing_in_n.values()) and all(report.increasing_in_omega.values())
    if not summary["passed"]:
        summary["reason"] = "lambda is not monotone along a sweep line"
    return summary


def _bifurcation_point(config: RunConfig, ctx: KernelContext):
    m = config.command.get("m", DEFAULT_M)
    try:
        return find_omega_m(m, ctx, config.numerics.tol), None
    except NotBracketed as exc:
        return None, {"m": m, "deficit": exc.deficit, "below_threshold": exc.below_threshold,
                      "passed": False, "reason": str(exc)}


def command_find_bifurcation(config: RunConfig, output_dir: str) -> Dict[str, Any]:
    ctx = _context(config)
    point, failure = _bifurcation_point(config, ctx)
    if failure is not None:
        return failure
    path = os.path.join(output_dir, f"eigenfunction_m{point.m}.csv")
    _write_rows(path, EIGENFUNCTION_HEADER, zip(ctx.grid.nodes, point.eigenpair.h1, point.eigenpair.h2))
    summary = point.to_dict()
    summary["csv"] = path
    reasons = []
    if not point.converged:
        reasons.append(f"residual {point.residual:.3e} above tolerance")
    if point.kernel_margin <= 0.0:
        reasons.append("lambda_2m(Omega_m) >= 1: kernel is not one-dimensional")
    if is_degenerate(point.transversality_q):
        reasons.append("transversality quantity is degenerate")
    summary["passed"] = not reasons
    if reasons:
        summary["reason"] = "; ".join(reasons)
    return summary


def command_omega_sequence(config: RunConfig, output_dir: str) -> Dict[str, Any]:
    ctx = _context(config)
    m_min = config.command.get("m_min", DEFAULT_SEQUENCE[0])
    m_max = config.command.get("m_max", DEFAULT_SEQUENCE[1])
    if m_max < m_min:
        raise ConfigError(f"m_max={m_max} is below m_min={m_min}")
    report = omega_sequence(m_min, m_max, ctx, config.numerics.tol, jobs=config.numerics.threads)
    path = os.path.join(output_dir, "omega_sequence.csv")
    report.to_csv(path)
    summary = report.to_dict()
    summary["csv"] = path
    summary["passed"] = bool(report.points) and report.strictly_increasing and report.approaches_top
    if not summary["passed"]:
        summary["reason"] = "no bracketed mode" if not report.points else "sequence is not increasing towards Omega_bar_1"
    return summary


def command_residual_check(config: RunConfig, output_dir: str) -> Dict[str, Any]:
    ctx = _context(config)
    s_values = list(config.command.get("s_values") or DEFAULT_S_VALUES)
    if len(s_values) == 1:
        s_values = [s_values[0], s_values[0] / 2.0, s_values[0] / 4.0]
    point, failure = _bifurcation_point(config, ctx)
    if failure is not None:
        return failure
    try:
        report = residual_check(point, ctx, s_values, n_theta=config.numerics.N_theta, jobs=config.numerics.threads)
    except PerturbationTooLarge as exc:
        return {"m": point.m, "Omega_m": point.omega_m, "passed": False, "reason": str(exc)}
    path = os.path.join(output_dir, "residual_check.csv")
    _write_rows(path, RESIDUAL_HEADER, zip(report.s_values, report.sup_norms))
    summary = report.to_dict()
    summary["csv"] = path
    if not report.passed:
        summary["reason"] = f"fitted order {report.fitted_order:.3f} below 1.8"
    return summary


def command_linearization_check(config: RunConfig, output_dir: str) -> Dict[str, Any]:
    ctx = _context(config)
    m = config.command.get("m", DEFAULT_M)
    omega = config.command.get("omega", ctx.window().midpoint)
    modes = config.command.get("modes") or [m, 2 * m]
    report = linearization_check(omega, ctx, modes, directions=config.command.get("directions", 3),
                                 s=config.command.get("step", FD_STEP), seed=config.command.get("seed", 0),
                                 richardson=True, n_theta=config.numerics.N_theta, jobs=config.numerics.threads)
    path = os.path.join(output_dir, "linearization_check.csv")
    report.to_csv(path)
    summary = report.to_dict()
    summary["modes"] = list(modes)
    summary["csv"] = path
    if not report.passed:
        summary["reason"] = "finite differences disagree with the linearization"
    return summary


def command_validate_closed_form(config: RunConfig, output_dir: str) -> Dict[str, Any]:
    if config.geometry.preset == "tabulated":
        raise ConfigError("validate-closed-form needs the ellipsoid-sphere or scaled-ellipsoid preset")
    ctx = _context(config)
    a, d1, d2 = ctx.config.outer.semi_axis, ctx.config.d1, ctx.config.d2
    checks: List[Tuple[str, float, float, float]] = []
    window, closed = ctx.window(), window_closed_form(a, d1, d2)
    checks.append(("Omega_bar_1", window.omega_bar_1, closed.omega_bar_1, WINDOW_TOLERANCE))
    checks.append(("Omega_bar_2", window.omega_bar_2, closed.omega_bar_2, WINDOW_TOLERANCE))
    nodes = ctx.grid.nodes
    for i in (1, 2):
        numeric = ctx.nu_nodes(i, closed.midpoint)
        expected = nu_closed_form(i, closed.midpoint, nodes, a, d1, d2)
        k = int(np.argmax(np.abs(numeric - expected)))
        checks.append((f"nu_{i}", float(numeric[k]), float(expected[k]), NU_TOLERANCE))
    checks.append(("4*alpha1+2*alpha2", 4.0 * alpha1(a, d1) + 2.0 * alpha2(a, d1), 1.0, IDENTITY_TOLERANCE))
    zero = SurfacePerturbation.zero(1)
    for R, z in ((0.3 * d2, 0.2 * d2), (0.5 * d2, -0.6 * d2), (1.1 * d2, 0.5 * d2)):
        checks.append((f"sphere_stream({R:g},{z:g})", body_stream(2, (R, 0.0, z), zero, ctx),
                       float(sphere_stream(R, z, d2)), STREAM_TOLERANCE))
    for R, z in ((0.2 * a, 0.3 * d1), (0.5 * a, -0.2 * d1), (0.0, 0.7 * d1)):
        checks.append((f"ellipsoid_stream({R:g},{z:g})", body_stream(1, (R, 0.0, z), zero, ctx),
                       float(ellipsoid_interior_stream(R, z, a, d1)), STREAM_TOLERANCE))
    rows = [(name, value, expected, abs(value - expected), tol, str(abs(value - expected) <= tol).lower())
            for name, value, expected, tol in checks]
    path = os.path.join(output_dir, "closed_form.csv")
    _write_rows(path, CLOSED_FORM_HEADER, rows)
    failed = [row[0] for row in rows if row[5] != "true"]
    summary: Dict[str, Any] = {
        "checks": {row[0]: {"numeric": row[1], "closed_form": row[2], "abs_error": row[3]} for row in rows},
        "csv": path,
        "passed": not failed,
    }
    if failed:
        summary["reason"] = "closed-form mismatch: " + ", ".join(failed)
    return summary


COMMANDS: Dict[str, Callable[[RunConfig, str], Dict[str, Any]]] = {
    "check-hypotheses": command_check_hypotheses,
    "omega-window": command_omega_window,
    "eigen-sweep": command_eigen_sweep,
    "find-bifurcation": command_find_bifurcation,
    "omega-sequence": command_omega_sequence,
    "residual-check": command_residual_check,
    "linearization-check": command_linearization_check,
    "validate-closed-form": command_validate_closed_form,
}


def run(command: str, config: RunConfig, output_dir: Optional[str] = None) -> Tuple[int, Dict[str, Any]]:
    """
    Runs one command.

    :param command: One of COMMANDS.
    :param config: Validated run configuration.
    :param output_dir: Directory for CSV artifacts; created if missing.
    :return: (exit status, JSON summary).
    :raises ConfigError: for unknown commands or unusable configurations.
    :raises HypothesisViolation: if the geometry breaks the standing assumptions.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    output_dir = os.path.abspath(output_dir or os.getcwd())
    os.makedirs(output_dir, exist_ok=True)
    logger.info("Running %s", command)
    summary = {"command": command, **COMMANDS[command](config, output_dir)}
    status = EXIT_OK if summary["passed"] else EXIT_FAILED
    if status != EXIT_OK:
        logger.warning("%s failed: %s", command, summary.get("reason", "see summary"))
    return status, summary


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def main(argv: List[str] = None) -> int:
    """Main function for handling CLI execution."""
    args = parse_arguments(argv)
    setup_logging(args.verbose)
    try:
        config = load_run_config(args)
        status, summary = run(args.command, config, args.output)
    except (ConfigError, HypothesisViolation, ProfileFormatError) as exc:
        logger.error("Configuration error: %s", exc)
        print(json.dumps({"command": args.command, "passed": False, "error": str(exc)}, indent=2))
        return EXIT_CONFIG
    except Exception as exc:  # pylint: disable=broad-except
        logger.error("Command %s failed: %s", args.command, exc)
        print(json.dumps({"command": args.command, "passed": False, "error": str(exc)}, indent=2))
        return EXIT_FAILED
    print(json.dumps(summary, indent=2, default=_json_default))
    return status


if __name__ == "__main__":
    sys.exit(main())
