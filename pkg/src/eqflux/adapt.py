"""Dörfler marking and the adaptive SOLVE-ESTIMATE-STOP-MARK-REFINE loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .estimator import EstimateReport, effectivity, estimate
from .fem import P1Solution, dofmap, project_data, solve
from .mesh import Mesh


class StepLimitReached(RuntimeError):
    """Raised on request when the loop ends without meeting the tolerance."""

    def __init__(self, result: "AdaptResult"):
        super().__init__(f"tolerance not met after {len(result.history.rows) - 1} refinements")
        self.result = result


def dorfler_mark(eta, theta: float) -> np.ndarray:
    """Smallest set of elements carrying a fraction ``theta`` of sum eta_K^2.

    Elements are taken by decreasing indicator, ties by increasing index.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    eta = np.asarray(eta, dtype=float)
    if theta == 0.0 or eta.size == 0:
        return np.zeros(0, dtype=np.int64)
    if theta == 1.0:
        # rounding in the running sum could stop short of the tiny tail
        return np.flatnonzero(eta > 0).astype(np.int64)
    order = np.lexsort((np.arange(eta.size), -eta))
    cum = np.cumsum(eta[order] ** 2)
    total = cum[-1]
    if total <= 0:
        return np.zeros(0, dtype=np.int64)
    k = int(np.searchsorted(cum, theta * total, side="left")) + 1
    return np.sort(order[:min(k, eta.size)])


@dataclass
class HistoryRow:
    step: int
    ndof: int
    elements: int
    eta: float
    osc: float
    error: float | None = None
    ieff: float | None = None
    seconds: float = 0.0


@dataclass
class ConvergenceHistory:
    rows: list = field(default_factory=list)

    def append(self, row: HistoryRow) -> None:
        if self.rows and row.ndof <= self.rows[-1].ndof:
            raise ValueError("ndof must increase strictly between steps")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.rows],
                        dtype=float)

    def __len__(self):
        return len(self.rows)


def loglog_slope(ndof, values) -> float:
    """Least-squares slope of log(values) against log(ndof)."""
    x = np.log(np.asarray(ndof, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class AdaptResult:
    history: ConvergenceHistory
    mesh: Mesh
    u_h: P1Solution
    report: EstimateReport
    stop_reason: str
    meshes: list = field(default_factory=list)
    reports: list = field(default_factory=list)


def _error(spec, u_h, error):
    if error == "none":
        return None
    if error == "reference":
        from .problems import reference_error
        return reference_error(u_h, spec)
    if spec.exact is None:
        if error == "exact":
            from .problems import MissingExactSolution
            raise MissingExactSolution(f"{spec.name} has no exact solution")
        return None
    from .problems import exact_error
    return exact_error(u_h, spec)


def adapt_solve(spec, tol: float, theta: float = 0.5, max_steps: int = 30, mode: str | None = None,
                error: str = "auto", deterministic: bool = False, keep: bool = False,
                raise_on_limit: bool = False, max_ndof: int | None = None,
                on_step=None) -> AdaptResult:
    """Run the adaptive loop on ``spec`` until the estimator drops below ``tol``.

    ``error`` selects the error column: ``"auto"`` (exact when available),
    ``"exact"``, ``"reference"`` or ``"none"``.  ``max_steps`` bounds the
    number of refinements.  The stopping total includes oscillation; marking
    uses the indicators alone.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    mode = mode or spec.mode
    history = ConvergenceHistory()
    mesh = spec.initial_mesh()
    meshes, reports = [], []
    step = 0
    while True:
        t0 = time.perf_counter()
        data = project_data(mesh, spec.f, spec.g_neumann)
        u_h = solve(mesh, spec)
        report = estimate(u_h, data, mode, spec.constants())
        seconds = 0.0 if deterministic else time.perf_counter() - t0
        err = _error(spec, u_h, error)
        ieff = effectivity(report, err) if err else None
        report.error, report.ieff = err, ieff
        history.append(HistoryRow(step, dofmap(mesh).ndof, mesh.n_elements, report.total,
                                  report.osc_total, err, ieff, seconds))
        if keep:
            meshes.append(mesh)
            reports.append(report)
        if on_step is not None:
            on_step(step, mesh, u_h, report)
        if report.total <= tol:
            reason = "tolerance"
            break
        if step >= max_steps or (max_ndof is not None and dofmap(mesh).ndof >= max_ndof):
            reason = "step_limit"
            break
        marked = dorfler_mark(report.eta, theta)
        if len(marked) == 0:
            reason = "no_marked_elements"
            break
        mesh = spec.refine(mesh, marked)
        step += 1
    result = AdaptResult(history, mesh, u_h, report, reason, meshes, reports)
    if reason == "step_limit" and raise_on_limit:
        raise StepLimitReached(result)
    return result
