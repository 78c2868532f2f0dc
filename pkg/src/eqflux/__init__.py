"""Guaranteed a posteriori error bounds for reaction-diffusion problems via patchwise flux equilibration."""
from .adapt import AdaptResult, ConvergenceHistory, HistoryRow, adapt_solve, dorfler_mark, loglog_slope
from .estimator import Constants, EstimateReport, effectivity, equilibration_residual, estimate
from .fem import P1Solution, project_data, solve
from .flux import reconstruct_flux
from .mesh import Mesh, bisect, build_mesh, node_patch, rectangle_mesh, sector_mesh
from .problems import ProblemSpec, exact_error, get_problem
from .special import bessel_i_scaled

__all__ = [
    "AdaptResult", "ConvergenceHistory", "HistoryRow", "adapt_solve", "dorfler_mark", "loglog_slope",
    "Constants", "EstimateReport", "effectivity", "equilibration_residual", "estimate",
    "P1Solution", "project_data", "solve", "reconstruct_flux",
    "Mesh", "bisect", "build_mesh", "node_patch", "rectangle_mesh", "sector_mesh",
    "ProblemSpec", "exact_error", "get_problem", "bessel_i_scaled",
]
