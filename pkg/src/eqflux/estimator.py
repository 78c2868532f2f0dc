"""Error indicators, oscillation, global estimators and equilibration checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import DataProjection, P1Solution
from .mesh import ElementMetrics, Mesh

DIM = 2
BOUND_FACTOR = (DIM + 2) * (DIM + 1)
EQUILIBRATION_TOL = 1e-9

GUARANTEE_EQUILIBRATED = "guaranteed upper bound: equilibrated flux (requires Galerkin u_h)"
GUARANTEE_PENALIZED = "guaranteed upper bound: penalized estimator (any conforming u_h)"
GUARANTEE_NONE = "no guarantee: equilibration residual gate failed"


class ZeroKappaTraceConstant(ValueError):
    pass


class MissingConstants(ValueError):
    pass


class ZeroError(ZeroDivisionError):
    pass


def trace_constants_sq(h, area, length, kappa):
    """Squared trace constants (C_T^2, Cbar_T^2), vectorised; C_T^2 is nan where kappa = 0."""
    h, area, length, kappa = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                                   for v in (h, area, length, kappa)))
    c = length / (DIM * area)
    pos = kappa > 0
    kinv = np.where(pos, 1.0 / np.where(pos, kappa, 1.0), np.inf)
    ct = np.where(pos, c * kinv * np.sqrt((2 * h) ** 2 + (DIM * kinv) ** 2), np.nan)
    mbar = np.minimum(h / np.pi, kinv)
    cbar = c * mbar * (2 * h + DIM * mbar)
    return ct, cbar


@dataclass(frozen=True)
class TraceConstants:
    c_t: float
    c_bar: float
    m: float
    m_bar: float


def trace_constants(metrics: ElementMetrics, kappa: float, facet: int,
                    require_ct: bool = True) -> TraceConstants:
    """Trace constants of local facet ``facet`` of an element."""
    if require_ct and kappa <= 0:
        raise ZeroKappaTraceConstant("C_T is undefined for kappa = 0")
    ct2, cb2 = trace_constants_sq(metrics.h, metrics.area, metrics.facet_lengths[facet], kappa)
    m = min(metrics.h, 1 / kappa) if kappa > 0 else metrics.h
    mbar = min(metrics.h / np.pi, 1 / kappa) if kappa > 0 else metrics.h / np.pi
    return TraceConstants(float(np.sqrt(ct2)), float(np.sqrt(cb2)), m, mbar)


def _osc_weight(mesh: Mesh) -> np.ndarray:
    k = mesh.kappa
    inv = np.where(k > 0, 1.0 / np.where(k > 0, k, 1.0), np.inf)
    return np.minimum(mesh.diameters / np.pi, inv)


def _neumann_geometry(mesh: Mesh, edges):
    K = mesh.edge_elements[edges, 0]
    loc = np.argmax(mesh.element_edges[K] == np.asarray(edges)[:, None], axis=1)
    return K, mesh.local_edge_lengths[K, loc]


def oscillation(mesh: Mesh, data: DataProjection) -> np.ndarray:
    """osc_K for every element."""
    osc = _osc_weight(mesh) * data.f_osc
    ne = data.neumann_edges
    if len(ne):
        K, L = _neumann_geometry(mesh, ne)
        ct2, cb2 = trace_constants_sq(mesh.diameters[K], mesh.areas[K], L, mesh.kappa[K])
        w = np.sqrt(np.where(np.isnan(ct2), cb2, np.minimum(ct2, cb2)))
        np.add.at(osc, K, w * data.g_osc)
    return osc


def oscillation_element(mesh: Mesh, data: DataProjection, K: int) -> float:
    return float(oscillation(mesh, data)[K])


def _affine_edge_norm(v) -> np.ndarray:
    """||p||_gamma / sqrt(|gamma|) for affine p with endpoint values v[..., 0:2]."""
    a, b = v[..., 0], v[..., 1]
    return np.sqrt(np.maximum((a * a + a * b + b * b) / 3.0, 0.0))


@dataclass
class IndicatorParts:
    eps: np.ndarray          # ||tau - grad u_h||_K
    r: np.ndarray            # ||Pi f - kappa^2 u_h + div tau||_K
    neumann_sq: np.ndarray   # sum_gamma ||R_N||_gamma^2 per element
    neumann_weighted: np.ndarray  # sum_gamma C_T ||R_N||_gamma (kappa > 0 elements)
    facet_residual: np.ndarray    # ||R_N||_gamma per Neumann facet


def indicator_parts(flux, u_h: P1Solution, data: DataProjection) -> IndicatorParts:
    mesh = u_h.mesh
    basis = flux.basis
    w = basis.qweights
    diff = flux.qvalues - u_h.gradients[:, None, :]
    eps = np.sqrt(np.sum(w * np.sum(diff * diff, axis=-1), axis=1))
    lam = basis.rule.points
    p = data.f_proj - (mesh.kappa ** 2)[:, None] * u_h.element_values
    res = p @ lam.T + flux.qdiv
    r = np.sqrt(np.sum(w * res * res, axis=1))
    nsq = np.zeros(mesh.n_elements)
    nw = np.zeros(mesh.n_elements)
    ne = data.neumann_edges
    fres = np.zeros(len(ne))
    if len(ne):
        R = data.g_proj - flux.normal_trace(ne)
        fres = _affine_edge_norm(R) * np.sqrt(mesh.edge_lengths[ne])
        K, L = _neumann_geometry(mesh, ne)
        ct2, _ = trace_constants_sq(mesh.diameters[K], mesh.areas[K], L, mesh.kappa[K])
        np.add.at(nsq, K, fres ** 2)
        np.add.at(nw, K, np.where(np.isnan(ct2), 0.0, np.sqrt(np.nan_to_num(ct2)) * fres))
    return IndicatorParts(eps, r, nsq, nw, fres)


def element_indicators(parts: IndicatorParts, mesh: Mesh, mode: str = "constrained",
                       kappa0: float | None = None, zeta0: float | None = None) -> np.ndarray:
    """eta_K (constrained) or the modified eta_K (penalized) for all elements."""
    k = mesh.kappa
    pos = k > 0
    kk = np.where(pos, k, 1.0)
    eta = np.where(pos, np.sqrt(parts.eps ** 2 + (parts.r / kk) ** 2) + parts.neumann_weighted,
                   parts.eps)
    if mode == "penalized":
        zero = ~pos
        mod = np.sqrt(parts.eps ** 2 + (parts.r / kappa0) ** 2 + parts.neumann_sq / zeta0 ** 2)
        eta = np.where(zero, mod, eta)
    return eta


@dataclass(frozen=True)
class ElementIndicator:
    eps_norm: float
    r_norm: float
    neumann_terms: np.ndarray
    eta: float
    osc: float


def _single(K, flux, u_h, data, mode, kappa0, zeta0) -> ElementIndicator:
    mesh = u_h.mesh
    parts = indicator_parts(flux, u_h, data)
    eta = element_indicators(parts, mesh, mode, kappa0, zeta0)[K]
    ne = data.neumann_edges
    own = mesh.edge_elements[ne, 0] == K if len(ne) else np.zeros(0, bool)
    return ElementIndicator(float(parts.eps[K]), float(parts.r[K]), parts.facet_residual[own],
                            float(eta), float(oscillation(mesh, data)[K]))


def indicator_element(K: int, flux, u_h: P1Solution, data: DataProjection) -> ElementIndicator:
    return _single(K, flux, u_h, data, "constrained", None, None)


def indicator_modified(K: int, flux, u_h: P1Solution, data: DataProjection,
                       kappa0: float, zeta0: float) -> ElementIndicator:
    return _single(K, flux, u_h, data, "penalized", kappa0, zeta0)


@dataclass
class Constants:
    c_f: float | None = None
    c_t: float | None = None
    kappa0: float | None = None
    zeta0: float | None = None


@dataclass
class EstimateReport:
    eta: np.ndarray
    osc: np.ndarray
    total: float
    mode: str
    constants: Constants
    prefactor: float = 1.0
    guarantee: str = ""
    parts: IndicatorParts | None = None
    functionals: np.ndarray | None = None
    flux: object = None
    equilibration: "EquilibrationReport | None" = None
    error: float | None = None
    ieff: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def osc_total(self) -> float:
        return float(np.sqrt(np.sum(self.osc ** 2)))


def estimate_total(eta, osc, mode: str = "constrained", constants: Constants | None = None,
                   needs_constants: bool = False) -> EstimateReport:
    """Aggregate indicators: sum (eta_K + osc_K)^2, scaled in penalized mode."""
    eta = np.asarray(eta, dtype=float)
    osc = np.asarray(osc, dtype=float)
    constants = constants or Constants()
    s = float(np.sum((eta + osc) ** 2))
    pref = 1.0
    if mode == "penalized":
        cf, ct = constants.c_f, constants.c_t
        if needs_constants and (cf is None or ct is None):
            raise MissingConstants("penalized estimate on a mesh with kappa = 0 needs C_F and C_T")
        k0 = constants.kappa0 or 0.0
        z0 = constants.zeta0 or 0.0
        pref = 1.0 + (k0 * (cf or 0.0)) ** 2 + (z0 * (ct or 0.0)) ** 2
    elif mode != "constrained":
        raise ValueError(f"unknown mode {mode!r}")
    return EstimateReport(eta, osc, float(np.sqrt(pref * s)), mode, constants, pref)


@dataclass
class EquilibrationReport:
    element_residual: np.ndarray  # on kappa = 0 elements, 0 elsewhere
    facet_residual: np.ndarray    # on Neumann facets of kappa = 0 elements, 0 elsewhere
    scale: float
    tol: float = EQUILIBRATION_TOL

    @property
    def max_residual(self) -> float:
        vals = np.concatenate([self.element_residual, self.facet_residual, [0.0]])
        return float(np.max(vals))

    @property
    def equilibrated(self) -> bool:
        return self.max_residual <= self.tol * self.scale


def equilibration_residual(flux, u_h: P1Solution, data: DataProjection,
                           tol: float = EQUILIBRATION_TOL) -> EquilibrationReport:
    mesh = u_h.mesh
    parts = indicator_parts(flux, u_h, data)
    zero = mesh.kappa <= 0
    elem = np.where(zero, parts.r, 0.0)
    w = flux.basis.qweights
    lam = flux.basis.rule.points
    f_norm = np.sqrt(np.sum(w * (data.f_proj @ lam.T) ** 2, axis=1))
    div_norm = np.sqrt(np.sum(w * flux.qdiv ** 2, axis=1))
    ku = (mesh.kappa ** 2)[:, None] * u_h.element_values
    ku_norm = np.sqrt(np.sum(w * (ku @ lam.T) ** 2, axis=1))
    scale = max(float(np.max(f_norm, initial=0)), float(np.max(div_norm, initial=0)),
                float(np.max(ku_norm, initial=0)))
    ne = data.neumann_edges
    fac = np.zeros(len(ne))
    if len(ne):
        K = mesh.edge_elements[ne, 0]
        fac = np.where(zero[K], parts.facet_residual, 0.0)
        L = np.sqrt(mesh.edge_lengths[ne])
        gn = _affine_edge_norm(data.g_proj) * L
        tn = _affine_edge_norm(flux.normal_trace(ne)) * L
        scale = max(scale, float(np.max(gn)), float(np.max(tn)))
    return EquilibrationReport(elem, fac, max(scale, np.finfo(float).tiny), tol)


def effectivity(report: EstimateReport, error: float) -> float:
    if not error > 0:
        raise ZeroError("effectivity needs a positive error")
    return report.total / error


def estimate(u_h: P1Solution, data: DataProjection, mode: str = "constrained",
             constants: Constants | None = None, context=None) -> EstimateReport:
    """Reconstruct the flux, evaluate all indicators and aggregate them."""
    from .flux import DEFAULT_PENALTY, reconstruct_flux

    constants = constants or Constants()
    k0 = constants.kappa0 if constants.kappa0 is not None else DEFAULT_PENALTY
    z0 = constants.zeta0 if constants.zeta0 is not None else DEFAULT_PENALTY
    constants = Constants(constants.c_f, constants.c_t, k0, z0)
    mesh = u_h.mesh
    rec = reconstruct_flux(u_h, data, mode, k0, z0, context=context)
    parts = indicator_parts(rec.flux, u_h, data)
    eta = element_indicators(parts, mesh, mode, k0, z0)
    osc = oscillation(mesh, data)
    has_zero = bool(np.any(mesh.kappa <= 0))
    report = estimate_total(eta, osc, mode, constants, needs_constants=has_zero)
    report.parts = parts
    report.functionals = rec.functionals
    report.flux = rec.flux
    eq = equilibration_residual(rec.flux, u_h, data)
    report.equilibration = eq
    if mode == "penalized":
        report.guarantee = GUARANTEE_PENALIZED
    else:
        report.guarantee = GUARANTEE_EQUILIBRATED if eq.equilibrated else GUARANTEE_NONE
    return report


def functional_bound_ratio(report: EstimateReport, mesh: Mesh) -> np.ndarray:
    """eta_K^2 / (12 sum_{n in K} E_n) per element (nan where the sum vanishes)."""
    s = report.functionals[mesh.elements].sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, report.eta ** 2 / (BOUND_FACTOR * s),
                        np.where(report.eta > 0, np.inf, np.nan))
