"""Command-line runner: ``eqflux {solve,estimate,adapt,sweep,mesh-info} --config run.ini``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .adapt import ConvergenceHistory, HistoryRow, _error, adapt_solve
from .estimator import (GUARANTEE_EQUILIBRATED, GUARANTEE_NONE, GUARANTEE_PENALIZED,
                        MissingConstants, ZeroError, effectivity, estimate)
from .fem import EmptySystem, NoConvergence, dofmap, project_data, solve
from .flux import MissingPatch, SingularPrimalBlock
from .io import (SWEEP_COLUMNS, ConfigError, RunConfig, export_vtk, load_config,
                 write_history_csv, write_indicators_csv, write_report, write_table_csv)
from .mesh import MeshError, facet_census
from .problems import IllPosedProblem, MissingExactSolution, ProblemNotFound, get_problem

log = logging.getLogger("eqflux")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2
NUMERICAL_ERRORS = (NoConvergence, EmptySystem, SingularPrimalBlock, MissingPatch, MeshError,
                    MissingConstants, ZeroError, np.linalg.LinAlgError,
                    FloatingPointError)

GUARANTEE_TEXT = {
    GUARANTEE_EQUILIBRATED: "equilibrated flux: the estimator bounds the energy error of the Galerkin solution",
    GUARANTEE_PENALIZED: "penalized reconstruction: the estimator bounds the energy error of any conforming "
                         "approximation, Galerkin orthogonality not required",
    GUARANTEE_NONE: "none: the equilibration residual exceeds the tolerance and no bound is certified",
}


def _spec(cfg: RunConfig, **override):
    params = cfg.problem_kwargs()
    params.update(override)
    spec = get_problem(cfg.problem, **params)
    changes = {k: v for k, v in (("kappa0", cfg.kappa0), ("zeta0", cfg.zeta0)) if v is not None}
    return dataclasses.replace(spec, **changes) if changes else spec


def _mode(cfg, spec):
    return cfg.mode or spec.mode


def _report_lines(cfg, spec, mesh, report=None, extra=None) -> dict:
    lines = {"problem": spec.name,
             "parameters": ", ".join(f"{k}={v}" for k, v in sorted(spec.params.items())),
             "vertices": mesh.n_vertices,
             "elements": mesh.n_elements,
             "ndof": dofmap(mesh).ndof}
    if report is not None:
        lines.update({
            "mode": report.mode,
            "estimator": f"{report.total:.16e}",
            "oscillation": f"{report.osc_total:.16e}",
            "prefactor": f"{report.prefactor:.16e}",
            "error": "" if report.error is None else f"{report.error:.16e}",
            "effectivity": "" if report.ieff is None else f"{report.ieff:.16e}",
            "equilibration residual": f"{report.equilibration.max_residual:.3e}",
            "guarantee": GUARANTEE_TEXT[report.guarantee],
        })
    else:
        lines["guarantee"] = "none: no estimator was computed"
    lines.update(extra or {})
    return lines


def _estimate_once(cfg, spec, mesh):
    data = project_data(mesh, spec.f, spec.g_neumann)
    u_h = solve(mesh, spec, rel_tol=cfg.rel_tol)
    report = estimate(u_h, data, _mode(cfg, spec), spec.constants())
    err = _error(spec, u_h, cfg.error)
    report.error = err
    report.ieff = effectivity(report, err) if err else None
    return u_h, report


def _vtk(cfg, out, step, mesh, u_h=None, report=None):
    if not cfg.vtk:
        return
    point = {"u_h": u_h.values} if u_h is not None else {}
    cell = {"kappa": mesh.kappa}
    if report is not None:
        cell["eta"] = report.eta
        cell["osc"] = report.osc
    export_vtk(mesh, out / f"mesh_step_{step}.vtk", point, cell)


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    spec = _spec(cfg)
    mesh = spec.initial_mesh()
    u_h = solve(mesh, spec, rel_tol=cfg.rel_tol)
    _vtk(cfg, out, 0, mesh, u_h)
    write_report(out / "report.txt", _report_lines(cfg, spec, mesh))
    return EXIT_OK


def cmd_estimate(cfg: RunConfig, out: Path) -> int:
    spec = _spec(cfg)
    mesh = spec.initial_mesh()
    t0 = time.perf_counter()
    u_h, report = _estimate_once(cfg, spec, mesh)
    seconds = 0.0 if cfg.deterministic else time.perf_counter() - t0
    hist = ConvergenceHistory()
    hist.append(HistoryRow(0, dofmap(mesh).ndof, mesh.n_elements, report.total, report.osc_total,
                           report.error, report.ieff, seconds))
    write_history_csv(hist, out / "history.csv")
    write_indicators_csv(report, mesh, out / "indicators.csv")
    _vtk(cfg, out, 0, mesh, u_h, report)
    write_report(out / "report.txt", _report_lines(cfg, spec, mesh, report))
    return EXIT_OK


def cmd_adapt(cfg: RunConfig, out: Path) -> int:
    spec = _spec(cfg)

    def on_step(step, mesh, u_h, report):
        log.info("step %d: %d elements, eta = %.4e", step, mesh.n_elements, report.total)
        _vtk(cfg, out, step, mesh, u_h, report)

    result = adapt_solve(spec, cfg.tol, theta=cfg.theta, max_steps=cfg.max_steps, mode=cfg.mode,
                         error=cfg.error, deterministic=cfg.deterministic, max_ndof=cfg.max_ndof,
                         on_step=on_step)
    if result.stop_reason == "step_limit":
        log.warning("tolerance %.3e not reached: stopped at step %d with eta = %.4e",
                    cfg.tol, len(result.history) - 1, result.report.total)
    write_history_csv(result.history, out / "history.csv")
    write_indicators_csv(result.report, result.mesh, out / "indicators.csv")
    write_report(out / "report.txt", _report_lines(cfg, spec, result.mesh, result.report,
                                                   {"steps": len(result.history) - 1,
                                                    "stop reason": result.stop_reason}))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    kappas = cfg.sweep_kappa or [cfg.params.get("kappa", 1.0)]
    levels = cfg.sweep_levels or [None]
    level_key = "segments" if cfg.problem == "example1" else "n"
    rows, guarantees = [], set()
    for level in levels:
        for kappa in kappas:
            override = {"kappa": kappa}
            if level is not None:
                override["boundary_segments" if level_key == "segments" else "n"] = level
            spec = _spec(cfg, **override)
            mesh = spec.initial_mesh()
            _, report = _estimate_once(cfg, spec, mesh)
            guarantees.add(report.guarantee)
            log.info("%s=%s kappa=%.3e ieff=%s", level_key, level, kappa, report.ieff)
            row = (kappa, report.total, report.error, report.ieff)
            rows.append(row if len(levels) == 1 else (level,) + row)
    columns = SWEEP_COLUMNS if len(levels) == 1 else (level_key,) + SWEEP_COLUMNS
    write_table_csv(columns, rows, out / "history.csv")
    weakest = (GUARANTEE_NONE if GUARANTEE_NONE in guarantees else
               GUARANTEE_PENALIZED if GUARANTEE_PENALIZED in guarantees else GUARANTEE_EQUILIBRATED)
    write_report(out / "report.txt", {"problem": cfg.problem, "runs": len(rows),
                                      "guarantee": GUARANTEE_TEXT[weakest]})
    return EXIT_OK


def cmd_mesh_info(cfg: RunConfig, out: Path) -> int:
    spec = _spec(cfg)
    mesh = spec.initial_mesh()
    census = facet_census(mesh)
    lines = _report_lines(cfg, spec, mesh)
    lines.update({f"facets {k}": v for k, v in census.items()})
    lines["min angle (deg)"] = f"{np.degrees(mesh.min_angles.min()):.6f}"
    lines["zero-kappa elements"] = int(np.count_nonzero(mesh.kappa == 0))
    write_report(out / "report.txt", lines)
    for k, v in lines.items():
        print(f"{k}: {v}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "estimate": cmd_estimate, "adapt": cmd_adapt,
            "sweep": cmd_sweep, "mesh-info": cmd_mesh_info}


def run(command: str, cfg: RunConfig) -> int:
    """Execute one subcommand; returns the process exit status."""
    if command not in COMMANDS:
        log.error("unknown command %r", command)
        return EXIT_CONFIG
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("cannot create output directory %s: %s", cfg.out, exc.strerror)
        return EXIT_CONFIG
    try:
        return COMMANDS[command](cfg, cfg.out)
    except (ProblemNotFound, MissingExactSolution, IllPosedProblem) as exc:
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # remaining parameter-range checks raised by the problem factories
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("i/o: %s", exc)
        return EXIT_CONFIG


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="eqflux", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="INI run configuration")
    parser.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
    parser.add_argument("--deterministic", action="store_true",
                        help="zero the timing column so CSV output is reproducible")
    parser.add_argument("-q", "--quiet", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    if args.out is not None:
        cfg.out = args.out
    if args.deterministic:
        cfg.deterministic = True
    return run(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
