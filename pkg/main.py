"""cprstab - Stability, throughput and simulation toolkit for coded Poisson receivers
Command-line entry point"""
import argparse
import json
import logging
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from app.config import settings
from app.debug_utils import DebugInfo, DebugTimer, setup_enhanced_logging
from app.models import Criterion, CriterionKind, EpsilonSpec, StartPoint, Tolerances, Verdict
from app.services.error_handler import (
    EXIT_OK,
    ConfigError,
    NonConvergenceError,
    create_error_response,
    exit_code_for,
    log_detailed_error,
)
from app.services.evolution import SystemConfig, de_fixed_point, throughput, trace_rows
from app.services.montecarlo import run_trials, sweep_trials
from app.services.regions import (
    Axis,
    GridSpec,
    convexity_probe,
    extract_boundary,
    map_region,
    sweep,
    throughput_surface,
)
from app.services.stability import (
    check_assumptions,
    classify_load,
    epsilon_stable,
    irsa_threshold,
    percolation_threshold_1d,
)
from app.storage import OutputLayout, RunManifest, resolve_config

logger = logging.getLogger("cprstab")

SUBCOMMANDS = ("threshold", "region", "throughput", "simulate", "de-trace", "classify", "sweep")


def _floats(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got '{text}'") from exc


def _per_axis(values: List[float], K: int, name: str) -> List[float]:
    if len(values) == 1:
        return values * K
    if len(values) != K:
        raise ConfigError(f"--{name} needs 1 or {K} values, got {len(values)}")
    return values


def resolve_load(g: Optional[str], direction: Optional[str], K: int) -> np.ndarray:
    """A full K-vector via --g, or a scalar --g along --direction; anything else is ambiguous"""
    g_vals = _floats(g)
    d_vals = _floats(direction)
    if g_vals is None:
        raise ConfigError("--g is required")
    if d_vals is not None:
        if len(g_vals) != 1:
            raise ConfigError("--direction takes a scalar --g; give either a full vector or a scalar with a direction")
        if len(d_vals) != K:
            raise ConfigError(f"--direction needs {K} entries, got {len(d_vals)}")
        return g_vals[0] * np.asarray(d_vals)
    if len(g_vals) == K:
        return np.asarray(g_vals)
    if len(g_vals) == 1:
        raise ConfigError(f"a scalar --g needs --direction when the system has {K} classes")
    raise ConfigError(f"--g needs {K} entries, got {len(g_vals)}")


def resolve_direction(direction: Optional[str], K: int) -> np.ndarray:
    if direction is None:
        if K == 1:
            return np.ones(1)
        raise ConfigError(f"--direction is required for a system with {K} classes")
    values = _floats(direction)
    if len(values) != K:
        raise ConfigError(f"--direction needs {K} entries, got {len(values)}")
    return np.asarray(values)


def resolve_multipliers(text: str) -> np.ndarray:
    """'lo:hi:step' or a comma list"""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"multipliers range must be lo:hi:step, got '{text}'")
        lo, hi, step = (float(p) for p in parts)
        return Axis(lo, hi, step).values()
    return np.asarray(_floats(text))


def resolve_criterion(name: str, eps: Optional[str], K: int) -> Criterion:
    kind = CriterionKind(name)
    if kind == CriterionKind.EPSILON_STABLE:
        if eps is None:
            raise ConfigError("--criterion epsilon needs --eps")
        return Criterion(kind, EpsilonSpec(tuple(_per_axis(_floats(eps), K, "eps"))))
    if eps is not None:
        raise ConfigError("--eps only applies to --criterion epsilon")
    return Criterion(kind)


def resolve_grid(args: argparse.Namespace, K: int) -> GridSpec:
    lo = _per_axis(_floats(args.lo), K, "lo")
    hi = _per_axis(_floats(args.hi), K, "hi")
    step = _per_axis(_floats(args.step) if args.step else [settings.region_coarse_step], K, "step")
    return GridSpec(tuple(Axis(a, b, s) for a, b, s in zip(lo, hi, step)))


def build_tolerances(args: argparse.Namespace) -> Tolerances:
    overrides: Dict[str, Any] = {"strict_weak": bool(getattr(args, "strict_weak", False))}
    if getattr(args, "max_iter", None):
        overrides["max_iter"] = args.max_iter
    return Tolerances.reference(**overrides) if args.reference else Tolerances(**overrides)


def _strict_check(args: argparse.Namespace, indeterminate: int, where: str) -> None:
    if args.strict and indeterminate:
        raise NonConvergenceError(f"{indeterminate} indeterminate verdict(s) in {where}")


def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_classify(
    config: SystemConfig,
    args: argparse.Namespace,
    tols: Tolerances,
    layout: OutputLayout,
    manifest: RunManifest,
) -> None:
    G = resolve_load(args.g, args.direction, config.K)
    result = classify_load(config, G, tols)
    payload: Dict[str, Any] = {"G": G.tolist(), **result.to_dict()}
    if args.eps is not None:
        eps = EpsilonSpec(tuple(_per_axis(_floats(args.eps), config.K, "eps")))
        flag, bound = epsilon_stable(config, G, eps, tols)
        payload["epsilon"] = {"eps": list(eps.eps), "stable": flag, "guaranteed_success": bound.tolist()}
    if args.assumptions:
        payload["assumptions"] = check_assumptions(config).to_dict()
    layout.write_json(manifest, "classify.json", payload)
    _emit(payload)
    _strict_check(args, int(result.verdict == Verdict.INDETERMINATE), "classify")


def cmd_threshold(
    config: SystemConfig,
    args: argparse.Namespace,
    tols: Tolerances,
    layout: OutputLayout,
    manifest: RunManifest,
) -> None:
    direction = resolve_direction(args.direction, config.K)
    criterion = resolve_criterion(args.criterion, args.eps, config.K)
    bracket = _floats(args.bracket)
    if len(bracket) != 2:
        raise ConfigError("--bracket needs lo,hi")
    tol = args.tol if args.tol is not None else settings.threshold_tol
    value = percolation_threshold_1d(config, direction, (bracket[0], bracket[1]), criterion, tols, tol=tol)
    payload: Dict[str, Any] = {
        "direction": direction.tolist(),
        "criterion": criterion.to_dict(),
        "threshold": value,
        "tol": tol,
    }
    if args.analytic:
        payload["analytic_bound"] = [irsa_threshold(d) for d in config.effective_dists]
    layout.write_json(manifest, "threshold.json", payload)
    _emit(payload)


def cmd_region(
    config: SystemConfig,
    args: argparse.Namespace,
    tols: Tolerances,
    layout: OutputLayout,
    manifest: RunManifest,
) -> None:
    grid = resolve_grid(args, config.K)
    criterion = resolve_criterion(args.criterion, args.eps, config.K)
    region = map_region(config, grid, criterion, tols, workers=args.workers)
    layout.write_csv(manifest, "region.csv", region.csv_header(), region.csv_rows())
    payload = region.to_dict()
    if config.K == 2:
        layout.write_polylines(manifest, "boundary.csv", extract_boundary(region))
        convex, witnesses = convexity_probe(region)
        payload["convexity"] = {"convex": convex, "witnesses": witnesses}
    layout.write_json(manifest, "region.json", payload)
    _emit({"cells": int(region.grid.num_cells), "satisfied": int(region.satisfied.sum()), "shape": list(region.shape)})
    _strict_check(args, int(np.sum(region.verdicts == Verdict.INDETERMINATE.value)), "region map")


def cmd_throughput(
    config: SystemConfig,
    args: argparse.Namespace,
    tols: Tolerances,
    layout: OutputLayout,
    manifest: RunManifest,
) -> None:
    if args.g is not None:
        G = resolve_load(args.g, args.direction, config.K)
        per_class, total = throughput(
            config, G, tol=tols.tol, max_iter=tols.max_iter, reference_rounding=tols.reference_rounding
        )
        payload = {"G": G.tolist(), "theta": per_class.tolist(), "theta_total": total}
        layout.write_json(manifest, "throughput.json", payload)
        _emit(payload)
        return
    if args.hi is None:
        raise ConfigError("throughput needs --g for one point or --lo/--hi/--step for a surface")
    surface = throughput_surface(config, resolve_grid(args, config.K), tols, workers=args.workers)
    layout.write_csv(manifest, "throughput.csv", surface.csv_header(), surface.csv_rows())
    best = int(np.argmax(surface.total_throughput)) if surface.grid.num_cells else None
    summary: Dict[str, Any] = {"cells": int(surface.grid.num_cells)}
    if best is not None:
        summary["max_theta_total"] = float(surface.total_throughput[best])
        summary["argmax_G"] = surface.loads[best].tolist()
    _emit(summary)


def cmd_simulate(
    config: SystemConfig,
    args: argparse.Namespace,
    tols: Tolerances,
    layout: OutputLayout,
    manifest: RunManifest,
) -> None:
    if args.multipliers:
        direction = resolve_direction(args.direction, config.K)
        rows = sweep_trials(
            config,
            direction,
            resolve_multipliers(args.multipliers),
            args.T,
            args.trials,
            max_iter=args.sim_max_iter,
            seed=args.seed,
            workers=args.workers,
            tols=tols,
        )
        K = config.K
        header = (
            ["t"]
            + [f"G{k + 1}" for k in range(K)]
            + [f"mean{k + 1}" for k in range(K)]
            + [f"stderr{k + 1}" for k in range(K)]
            + [f"analytic{k + 1}" for k in range(K)]
        )
        csv_rows = [[r["t"], *r["G"], *r["mean"], *r["stderr"], *r["analytic"]] for r in rows]
        layout.write_csv(manifest, "simulate_sweep.csv", header, csv_rows)
        _emit({"points": len(rows)})
        return
    G = resolve_load(args.g, args.direction, config.K)
    outcome = run_trials(
        config, G, args.T, args.trials, max_iter=args.sim_max_iter, seed=args.seed, workers=args.workers
    )
    payload = {"G": G.tolist(), **outcome.to_dict()}
    layout.write_json(manifest, "simulate.json", payload)
    _emit(payload)


def cmd_de_trace(
    config: SystemConfig,
    args: argparse.Namespace,
    tols: Tolerances,
    layout: OutputLayout,
    manifest: RunManifest,
) -> None:
    G = resolve_load(args.g, args.direction, config.K)
    result = de_fixed_point(config, G, StartPoint(args.start), tol=tols.tol, max_iter=tols.max_iter, keep_trace=True)
    K = config.K
    header = ["iteration"] + [f"q{k + 1}" for k in range(K)] + [f"P{k + 1}" for k in range(K)]
    layout.write_csv(manifest, "de_trace.csv", header, trace_rows(config, G, result, tols.reference_rounding))
    _emit(result.to_dict())
    if args.strict and not result.converged:
        raise NonConvergenceError(f"fixed point from {args.start} did not converge in {result.iterations} iterations")


def cmd_sweep(
    config: SystemConfig,
    args: argparse.Namespace,
    tols: Tolerances,
    layout: OutputLayout,
    manifest: RunManifest,
) -> None:
    direction = resolve_direction(args.direction, config.K)
    rows = sweep(config, direction, resolve_multipliers(args.multipliers), tols)
    K = config.K
    header = (
        ["t"]
        + [f"G{k + 1}" for k in range(K)]
        + ["verdict"]
        + [f"P{k + 1}" for k in range(K)]
        + [f"failure{k + 1}" for k in range(K)]
        + [f"theta{k + 1}" for k in range(K)]
        + ["theta_total"]
    )
    csv_rows = [
        [r["t"], *r["G"], r["verdict"], *r["success"], *r["failure"], *r["theta"], r["theta_total"]] for r in rows
    ]
    layout.write_csv(manifest, "sweep.csv", header, csv_rows)
    _emit({"points": len(rows)})
    _strict_check(args, sum(r["verdict"] == Verdict.INDETERMINATE.value for r in rows), "sweep")


COMMANDS: Dict[str, Callable[..., None]] = {
    "classify": cmd_classify,
    "threshold": cmd_threshold,
    "region": cmd_region,
    "throughput": cmd_throughput,
    "simulate": cmd_simulate,
    "de-trace": cmd_de_trace,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_argument_group("configuration")
    source.add_argument("--config", help="system configuration JSON file")
    source.add_argument("--preset", help="bundled configuration name")
    common.add_argument("--out", help="output directory (default: CPRSTAB_OUTPUT_DIR or ./output)")
    common.add_argument("--workers", type=int, default=None, help="worker processes, 0 = one per core")
    common.add_argument("--strict", action="store_true", help="exit 3 when a verdict is indeterminate")
    common.add_argument("--reference", action="store_true", help="500-iteration cap and 0.99999 rounding")
    common.add_argument("--max-iter", dest="max_iter", type=int, default=None, help="fixed-point iteration cap")
    common.add_argument("--log-level", dest="log_level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(
        prog="cprstab",
        description="Stability regions, thresholds and simulation for coded Poisson receivers",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("classify", parents=[common], help="classify one offered load")
    p.add_argument("--g", required=True, help="load vector, or a scalar with --direction")
    p.add_argument("--direction")
    p.add_argument("--eps", help="also test epsilon-stability")
    p.add_argument("--strict-weak", dest="strict_weak", action="store_true", help="check uniqueness along the ray")
    p.add_argument("--assumptions", action="store_true", help="report receiver and routing assumptions")

    p = sub.add_parser("threshold", parents=[common], help="percolation threshold along a direction")
    p.add_argument("--direction")
    p.add_argument("--criterion", choices=[k.value for k in CriterionKind], default=CriterionKind.STABLE.value)
    p.add_argument("--eps")
    p.add_argument("--bracket", default="0,2", help="lo,hi multipliers")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--strict-weak", dest="strict_weak", action="store_true")
    p.add_argument("--analytic", action="store_true", help="add the single-class IRSA bound per class")

    for name, help_text in (
        ("region", "map a stability region"),
        ("throughput", "throughput at a point or over a grid"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--lo", default="0")
        p.add_argument("--hi", default="1" if name == "region" else None)
        p.add_argument("--step", default=None, help=f"grid step (default {settings.region_coarse_step})")
        if name == "region":
            p.add_argument("--criterion", choices=[k.value for k in CriterionKind], default=CriterionKind.STABLE.value)
            p.add_argument("--eps")
            p.add_argument("--strict-weak", dest="strict_weak", action="store_true")
        else:
            p.add_argument("--g")
            p.add_argument("--direction")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo peeling on finite graphs")
    p.add_argument("--g")
    p.add_argument("--direction")
    p.add_argument("--multipliers", help="sweep t·direction: lo:hi:step or a comma list")
    p.add_argument("--T", type=int, default=10_000, help="number of receivers")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sim-max-iter", dest="sim_max_iter", type=int, default=None)

    p = sub.add_parser("de-trace", parents=[common], help="density-evolution iterates as CSV")
    p.add_argument("--g", required=True)
    p.add_argument("--direction")
    p.add_argument("--start", choices=[s.value for s in StartPoint], default=StartPoint.ALL_ONES.value)

    p = sub.add_parser("sweep", parents=[common], help="success and throughput along a load ray")
    p.add_argument("--direction")
    p.add_argument("--multipliers", required=True, help="lo:hi:step or a comma list")

    return parser


def _manifest_parameters(args: argparse.Namespace) -> Dict[str, Any]:
    skip = {"config", "preset", "out", "log_level", "subcommand"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}


def run(subcommand: str, args: argparse.Namespace) -> int:
    """Dispatch one subcommand; returns the process exit status"""
    try:
        if subcommand not in COMMANDS:
            raise ConfigError(f"unknown subcommand '{subcommand}'; choose one of {', '.join(SUBCOMMANDS)}")
        config = resolve_config(args.config, args.preset)
        tols = build_tolerances(args)
        layout = OutputLayout(args.out)
        manifest = RunManifest.create(
            config,
            subcommand,
            parameters=_manifest_parameters(args),
            tolerances=tols.to_dict(),
            seed=getattr(args, "seed", None),
            config_path=args.config,
        )
        with DebugTimer(f"{subcommand} on {config.name}"):
            COMMANDS[subcommand](config, args, tols, layout, manifest)
        return EXIT_OK
    except Exception as exc:
        error = create_error_response(exc, {"subcommand": subcommand})
        log_detailed_error(error, logger)
        return exit_code_for(exc)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_enhanced_logging(
        log_level=args.log_level or ("DEBUG" if settings.debug else settings.log_level),
        log_dir=settings.log_dir or None,
    )
    if settings.debug:
        logger.debug(f"system: {DebugInfo.get_system_info()}")
        logger.debug(f"environment: {DebugInfo.get_environment_info()}")
    return run(args.subcommand, args)


if __name__ == "__main__":
    sys.exit(main())
