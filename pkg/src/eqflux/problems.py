"""Problem catalog: data, meshes, exact solutions and error evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.integrate import quad

from . import mesh as meshmod
from .estimator import Constants
from .fem import (DifferenceField, FunctionField, P1Solution, element_energy_sq, global_matrix,
                  solve)
from .flux import DEFAULT_PENALTY
from .mesh import Mesh, prolongate, uniform_refine
from .quadrature import gauss_segment, quadrature_rule
from .special import bessel_ratio_with_derivative

EXACT_REL_TOL = 1e-10


class ProblemNotFound(KeyError):
    pass


class MissingExactSolution(ValueError):
    pass


class IllPosedProblem(ValueError):
    pass


@dataclass(frozen=True)
class ExactSolution:
    u: Callable
    grad: Callable
    energy_sq: float | None = None  # |||u|||^2 on the computational domain, when known
    both: Callable | None = None

    def field(self) -> FunctionField:
        return FunctionField(self.u, self.grad, self.both)


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    mesh_factory: Callable[[], Mesh]
    f: Callable
    g_neumann: Callable | None = None
    kappa_rule: Callable | None = None
    exact: ExactSolution | None = None
    c_f: float | None = None
    c_t: float | None = None
    kappa0: float = DEFAULT_PENALTY
    zeta0: float = DEFAULT_PENALTY
    boundary_projection: Callable | None = None
    mode: str = "constrained"
    params: dict = field(default_factory=dict)
    dirichlet_value: float = 0.0

    def initial_mesh(self) -> Mesh:
        mesh = self.mesh_factory()
        if self.kappa_rule is not None:
            mesh = mesh.with_kappa(self.kappa_rule)
        return self._well_posed(mesh)

    def refine(self, mesh: Mesh, marked) -> Mesh:
        return self._well_posed(meshmod.bisect(mesh, marked, self.kappa_rule, self.boundary_projection))

    def _well_posed(self, mesh: Mesh) -> Mesh:
        # centroid sampling can lose every positive coefficient under refinement
        if len(mesh.dirichlet_nodes) == 0 and np.max(mesh.kappa) <= 0:
            raise IllPosedProblem(f"{self.name}: no Dirichlet boundary and kappa vanishes on every element")
        return mesh

    def constants(self) -> Constants:
        return Constants(self.c_f, self.c_t, self.kappa0, self.zeta0)


def _labels_by(rule):
    def labels(mids):
        return [rule(x, y) for x, y in np.asarray(mids)]
    return labels


# smooth manufactured problem -----------------------------------------------

def sinsin_spec(kappa: float = 1.0, n: int = 4) -> ProblemSpec:
    """(0,1)^2, homogeneous Dirichlet, u = sin(pi x) sin(pi y)."""
    pi = np.pi
    k2 = kappa * kappa

    def u(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def grad(x, y):
        return np.stack([pi * np.cos(pi * x) * np.sin(pi * y),
                         pi * np.sin(pi * x) * np.cos(pi * y)], axis=-1)

    return ProblemSpec(
        name="sinsin",
        mesh_factory=lambda: meshmod.rectangle_mesh(n, n, kappa=kappa),
        f=lambda x, y: (2 * pi * pi + k2) * u(x, y),
        exact=ExactSolution(u, grad, (2 * pi * pi + k2) / 4.0),
        params={"kappa": kappa, "n": n},
    )


# boundary layer problem ----------------------------------------------------

def _layer_parts(kappa: float, x):
    """(1 - cosh(kx)/cosh(k), -k sinh(kx)/cosh(k)) without overflow or cancellation."""
    x = np.asarray(x, dtype=float)
    if kappa < 50:
        u = 2 * np.sinh(0.5 * kappa * (1 + x)) * np.sinh(0.5 * kappa * (1 - x)) / np.cosh(kappa)
        du = -kappa * np.sinh(kappa * x) / np.cosh(kappa)
        return u, du
    ax = np.abs(x)
    e = np.exp(kappa * (ax - 1.0)) / (1.0 + np.exp(-2 * kappa))
    ratio = e * (1.0 + np.exp(-2 * kappa * ax))
    sh = e * (1.0 - np.exp(-2 * kappa * ax))
    return 1.0 - ratio, -kappa * np.sign(x) * sh


def layer_problem_spec(kappa: float, n: int = 16) -> ProblemSpec:
    """(-1,1)^2 with Dirichlet at x = +-1, zero Neumann at y = +-1, f = kappa^2."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")

    def u(x, y):
        return _layer_parts(kappa, x)[0] + 0.0 * y

    def grad(x, y):
        du = _layer_parts(kappa, x)[1]
        return np.stack([du, np.zeros_like(du + y)], axis=-1)

    # |||u|||^2 = (f, u) = 2 kappa^2 int_{-1}^{1} u dx
    brk = [1 - 5 / kappa] if kappa > 5 else None
    integral = 2 * quad(lambda s: _layer_parts(kappa, s)[0], 0.0, 1.0, epsabs=0,
                        epsrel=1e-13, limit=200, points=brk)[0]
    labels = _labels_by(lambda x, y: "dirichlet" if abs(abs(x) - 1) < 1e-12 else "neumann")
    return ProblemSpec(
        name="layer",
        mesh_factory=lambda: meshmod.rectangle_mesh(n, n, -1, 1, -1, 1, labels=labels, kappa=kappa),
        f=lambda x, y: np.full(np.broadcast(x, y).shape, kappa * kappa),
        g_neumann=lambda x, y: np.zeros(np.broadcast(x, y).shape),
        exact=ExactSolution(u, grad, 2 * kappa * kappa * integral),
        params={"kappa": kappa, "n": n},
    )


# reentrant corner (sector) --------------------------------------------------

ALPHA = 2.0 / 3.0
SERIES_KAPPA = 30.0


def _polar(x, y):
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)
    phi = np.where(phi < 0.5 * np.pi, phi + 2 * np.pi, phi)
    return r, phi


@lru_cache(maxsize=64)
def _bessel_series_coefficients(alpha: float, kappa: float) -> np.ndarray:
    """c_m = t^m / (m! Gamma(m + alpha + 1)), t = (kappa/2)^2, truncated at 1e-18 relative."""
    t = 0.25 * kappa * kappa
    terms = [math.exp(-math.lgamma(alpha + 1))]
    m = 0
    while True:
        m += 1
        terms.append(terms[-1] * t / (m * (m + alpha)))
        if m > 3 and terms[-1] < 1e-18 * sum(terms):
            return np.array(terms)


def _sector_radial(kappa: float, r):
    """(g(r), g'(r), g(r)/r) with g(r) = r^a - I_a(kappa r)/I_a(kappa)."""
    r = np.asarray(r, dtype=float)
    safe = np.where(r > 0, r, 1.0)
    if kappa <= SERIES_KAPPA:
        # r^a - ratio = r^a sum_{m>=1} c_m (1 - r^2m) / sum_{m>=0} c_m
        c = _bessel_series_coefficients(ALPHA, kappa)
        den = c.sum()
        num = np.zeros_like(r)
        dnum = np.zeros_like(r)
        r2 = r * r
        pw = np.ones_like(r)
        for mm in range(1, len(c)):
            pw_prev = pw
            pw = pw * r2
            num += c[mm] * (1.0 - pw)
            dnum -= 2 * mm * c[mm] * pw_prev * r  # d/dr (1 - r^2m) = -2m r^(2m-1)
        ra = np.where(r > 0, safe ** ALPHA, 0.0)
        g = ra * num / den
        g_over_r = np.where(r > 0, safe ** (ALPHA - 1) * num / den, 0.0)
        dg = np.where(r > 0, ALPHA * safe ** (ALPHA - 1) * num / den + ra * dnum / den, 0.0)
        return g, dg, g_over_r
    ratio, dratio = bessel_ratio_with_derivative(ALPHA, kappa, r)
    ra = np.where(r > 0, safe ** ALPHA, 0.0)
    g = ra - ratio
    dg = np.where(r > 0, ALPHA * safe ** (ALPHA - 1) - dratio, 0.0)
    g_over_r = np.where(r > 0, g / safe, 0.0)
    return g, dg, g_over_r


def example1_spec(kappa: float, boundary_segments: int = 64) -> ProblemSpec:
    """Reentrant-corner sector with Bessel-type exact solution, all-Dirichlet."""
    if boundary_segments < 8:
        raise ValueError("boundary_segments must be at least 8")
    if not kappa > 0:
        raise ValueError("kappa must be positive")

    def u(x, y):
        r, phi = _polar(x, y)
        return _sector_radial(kappa, r)[0] * np.sin(ALPHA * phi - np.pi / 3)

    def both(x, y):
        r, phi = _polar(x, y)
        g, dg, gr = _sector_radial(kappa, r)
        s = np.sin(ALPHA * phi - np.pi / 3)
        c = np.cos(ALPHA * phi - np.pi / 3)
        ur = dg * s
        ut = gr * ALPHA * c
        cp, sp = np.cos(phi), np.sin(phi)
        return g * s, np.stack([ur * cp - ut * sp, ur * sp + ut * cp], axis=-1)

    def grad(x, y):
        return both(x, y)[1]

    def f(x, y):
        r, phi = _polar(x, y)
        return kappa * kappa * r ** ALPHA * np.sin(ALPHA * phi - np.pi / 3)

    return ProblemSpec(
        name="example1",
        mesh_factory=lambda: meshmod.sector_mesh(boundary_segments, kappa=kappa),
        f=f,
        exact=ExactSolution(u, grad, both=both),
        boundary_projection=meshmod.project_to_unit_arc,
        params={"kappa": kappa, "segments": boundary_segments},
    )


# disc problem ---------------------------------------------------------------

EXAMPLE2_CF = float(np.sqrt(2.0) / np.pi)
EXAMPLE2_CT = float(np.sqrt(np.sqrt(2.0) / np.tanh(np.sqrt(2.0) / 2)))


def example2_spec(kappa: float = 100.0, n: int = 4, outside: float = 0.0) -> ProblemSpec:
    """Square (-1,1)^2, all-Neumann with g = 0, f = kappa^2 on the disc r <= 1/2.

    The coefficient is kappa inside the disc and ``outside`` elsewhere,
    sampled at element centroids.  With the default ``outside = 0`` the
    elements off the disc form the zero-coefficient set.  Meshes with
    ``n < 4`` have no element whose children keep their centroid in the
    disc, so refinement can leave a pure Neumann problem with no reaction.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if outside < 0:
        raise ValueError("outside must be non-negative")

    def disc(x, y):
        return np.hypot(x, y) <= 0.5

    def kappa_rule(c):
        return np.where(disc(c[:, 0], c[:, 1]), kappa, outside)

    return ProblemSpec(
        name="example2",
        mesh_factory=lambda: meshmod.rectangle_mesh(n, n, -1, 1, -1, 1, labels="neumann"),
        f=lambda x, y: np.where(disc(x, y), kappa * kappa, 0.0),
        g_neumann=lambda x, y: np.zeros(np.broadcast(x, y).shape),
        kappa_rule=kappa_rule,
        c_f=EXAMPLE2_CF,
        c_t=EXAMPLE2_CT,
        mode="penalized",
        params={"kappa": kappa, "n": n, "outside": outside},
    )


# mixed coefficient problem ----------------------------------------------------

def half_zero_spec(kappa: float = 10.0, n: int = 8) -> ProblemSpec:
    """(-1,1)^2 with kappa = 0 on x < 0 and kappa on x > 0; Dirichlet on x = 1 only."""
    if n % 2:
        raise ValueError("n must be even so that the coefficient jump follows mesh lines")
    labels = _labels_by(lambda x, y: "dirichlet" if abs(x - 1) < 1e-12 else "neumann")
    return ProblemSpec(
        name="halfzero",
        mesh_factory=lambda: meshmod.rectangle_mesh(n, n, -1, 1, -1, 1, labels=labels),
        f=lambda x, y: np.exp(x + y) + 1.0,
        g_neumann=lambda x, y: np.cos(np.pi * y) + x * x,
        kappa_rule=lambda c: np.where(c[:, 0] < 0, 0.0, kappa),
        c_f=None,
        c_t=None,
        params={"kappa": kappa, "n": n},
    )


REGISTRY = {
    "sinsin": sinsin_spec,
    "layer": layer_problem_spec,
    "example1": example1_spec,
    "example2": example2_spec,
    "halfzero": half_zero_spec,
}


def get_problem(name: str, **params) -> ProblemSpec:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ProblemNotFound(f"unknown problem {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**params)


# errors ---------------------------------------------------------------------

def _energy_identity_error(u_h: P1Solution, spec: ProblemSpec) -> float:
    """|||u - u_h|||^2 = |||u|||^2 - 2 (f, u_h) - 2 (g, u_h)_N + |||u_h|||^2 for u_h vanishing on the Dirichlet part."""
    mesh = u_h.mesh
    rule = quadrature_rule(10)
    xy = rule.physical(mesh.coords)
    fv = np.broadcast_to(spec.f(xy[..., 0], xy[..., 1]), xy.shape[:2])
    uh = u_h.element_values @ rule.points.T
    load = float(np.sum(fv * uh * rule.weights * mesh.areas[:, None]))
    ne = mesh.neumann_edges
    if len(ne) and spec.g_neumann is not None:
        s, w = gauss_segment(10)
        a = mesh.vertices[mesh.edges[ne, 0]]
        b = mesh.vertices[mesh.edges[ne, 1]]
        pts = a[:, None] * (1 - s)[None, :, None] + b[:, None] * s[None, :, None]
        gv = np.broadcast_to(spec.g_neumann(pts[..., 0], pts[..., 1]), pts.shape[:2])
        uv = u_h.values[mesh.edges[ne, 0]][:, None] * (1 - s) + u_h.values[mesh.edges[ne, 1]][:, None] * s
        load += float(np.sum(gv * uv * w * mesh.edge_lengths[ne][:, None]))
    uu = float(u_h.values @ (global_matrix(mesh) @ u_h.values))
    err2 = spec.exact.energy_sq - 2 * load + uu
    return float(np.sqrt(max(err2, 0.0)))


def exact_error(u_h: P1Solution, spec: ProblemSpec, rel_tol: float = EXACT_REL_TOL,
                method: str = "auto", max_depth: int = 40, degree: int = 10) -> float:
    """Energy norm of u - u_h.

    ``method="quadrature"`` integrates the error density adaptively;
    ``method="identity"`` uses the energy identity and needs ``exact.energy_sq``.
    ``"auto"`` prefers the identity when the exact energy is known and
    ``u_h`` vanishes on the Dirichlet boundary.
    """
    if spec.exact is None:
        raise MissingExactSolution(f"{spec.name} has no exact solution")
    mesh = u_h.mesh
    on_dirichlet = u_h.values[mesh.dirichlet_nodes]
    identity_ok = spec.exact.energy_sq is not None and np.all(on_dirichlet == 0)
    if method == "identity" or (method == "auto" and identity_ok):
        if not identity_ok:
            raise ValueError("energy identity needs exact.energy_sq and u_h = 0 on the Dirichlet part")
        return _energy_identity_error(u_h, spec)
    uh_sq = float(u_h.values @ (global_matrix(mesh) @ u_h.values))
    e2 = element_energy_sq(DifferenceField(spec.exact.field(), u_h), mesh, degree=degree,
                           rel_tol=rel_tol, abs_tol=1e-24 * (uh_sq + 1.0), max_depth=max_depth)
    return float(np.sqrt(np.sum(e2)))


@dataclass
class ReferenceSolution:
    mesh: Mesh
    solution: P1Solution


def reference_solution(spec: ProblemSpec, mesh: Mesh, sweeps: int = 2) -> ReferenceSolution:
    """P1 solution on ``sweeps`` uniform bisection sweeps of ``mesh``; the coefficient is inherited."""
    fine = mesh
    for _ in range(sweeps):
        fine = uniform_refine(fine, None, spec.boundary_projection)
    return ReferenceSolution(fine, solve(fine, spec))


def reference_error(u_h: P1Solution, spec: ProblemSpec, sweeps: int = 2,
                    reference: ReferenceSolution | None = None) -> float:
    """|||u_ref - u_h||| with u_h prolongated to the reference mesh."""
    ref = reference or reference_solution(spec, u_h.mesh, sweeps)
    coarse = P1Solution(ref.mesh, prolongate(u_h.values, ref.mesh))
    diff = ref.solution.values - coarse.values
    return float(np.sqrt(max(diff @ (global_matrix(ref.mesh) @ diff), 0.0)))
