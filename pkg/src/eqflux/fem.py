"""Conforming P1 finite elements for -div grad u + kappa^2 u = f."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, NEUMANN
from .quadrature import gauss_segment, integrate_adaptive_batch, quadrature_rule

# exact P1 mass pattern on a triangle, times the area
P1_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0
# exact P1 mass pattern on a segment, times the length
EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


class EmptySystem(RuntimeError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class DofMap:
    node_to_dof: np.ndarray  # -1 for constrained nodes
    free: np.ndarray
    constrained: np.ndarray

    @property
    def ndof(self) -> int:
        return len(self.free)


def dofmap(mesh: Mesh) -> DofMap:
    constrained = mesh.dirichlet_nodes
    mask = np.ones(mesh.n_vertices, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)
    node_to_dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
    node_to_dof[free] = np.arange(len(free))
    return DofMap(node_to_dof, free, constrained)


class P1Solution:
    """Continuous piecewise affine field given by nodal values."""

    def __init__(self, mesh: Mesh, values):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (mesh.n_vertices,):
            raise ValueError("one nodal value per mesh vertex required")

    @cached_property
    def element_values(self) -> np.ndarray:
        return self.values[self.mesh.elements]

    @cached_property
    def gradients(self) -> np.ndarray:
        return np.einsum("mi,mid->md", self.element_values, self.mesh.barycentric_gradients)

    def value(self, elem, bary, xy=None):
        return np.einsum("ni,ni->n", self.element_values[elem], bary)

    def gradient(self, elem, bary=None, xy=None):
        return self.gradients[elem]

    def kappa(self, elem):
        return self.mesh.kappa[elem]


@dataclass
class DataProjection:
    """Moments and L2 projections of the data f and g_N, computed once per mesh.

    ``f_proj[K]`` holds nodal values of the affine projection on element K;
    ``g_proj[i]`` holds endpoint values (in sorted vertex order) of the
    projection on the i-th Neumann facet ``neumann_edges[i]``.
    """
    f_moments: np.ndarray
    f_proj: np.ndarray
    f_osc: np.ndarray
    neumann_edges: np.ndarray
    g_moments: np.ndarray
    g_proj: np.ndarray
    g_osc: np.ndarray


def project_data(mesh: Mesh, f, g=None, degree: int = 10) -> DataProjection:
    rule = quadrature_rule(degree)
    xy = rule.physical(mesh.coords)  # (M, q, 2)
    fv = np.asarray(f(xy[..., 0], xy[..., 1]), dtype=float)
    fv = np.broadcast_to(fv, xy.shape[:2])
    areas = mesh.areas
    f_mom = np.einsum("mq,q,qi->mi", fv, rule.weights, rule.points) * areas[:, None]
    f_proj = np.linalg.solve(P1_MASS, f_mom.T).T / areas[:, None]
    fp_q = f_proj @ rule.points.T
    f_osc = np.sqrt(np.maximum((fv - fp_q) ** 2 @ rule.weights * areas, 0.0))

    ne = mesh.neumann_edges
    if len(ne) and g is None:
        raise ValueError("problem has Neumann facets but no g_N")
    s, w = gauss_segment(degree)
    a = mesh.vertices[mesh.edges[ne, 0]]
    b = mesh.vertices[mesh.edges[ne, 1]]
    pts = a[:, None, :] * (1 - s)[None, :, None] + b[:, None, :] * s[None, :, None]
    if len(ne):
        gv = np.broadcast_to(np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:2])
    else:
        gv = np.zeros(pts.shape[:2])
    L = mesh.edge_lengths[ne]
    lam = np.stack([1 - s, s], axis=1)
    g_mom = np.einsum("eq,q,qi->ei", gv, w, lam) * L[:, None]
    g_proj = np.linalg.solve(EDGE_MASS, g_mom.T).T / np.where(L > 0, L, 1.0)[:, None]
    g_osc = np.sqrt(np.maximum((gv - g_proj @ lam.T) ** 2 @ w * L, 0.0))
    return DataProjection(f_mom, f_proj, f_osc, ne, g_mom, g_proj, g_osc)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    mesh: Mesh | None = None
    dofs: DofMap | None = None
    data: DataProjection | None = None


def element_matrices(mesh: Mesh) -> np.ndarray:
    """Local matrices of the bilinear form, shape (M, 3, 3)."""
    G = mesh.barycentric_gradients
    A = mesh.areas
    stiff = np.einsum("mid,mjd->mij", G, G) * A[:, None, None]
    mass = P1_MASS[None] * A[:, None, None]
    return stiff + (mesh.kappa ** 2)[:, None, None] * mass


def global_matrix(mesh: Mesh) -> sp.csr_matrix:
    loc = element_matrices(mesh)
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def global_load(mesh: Mesh, data: DataProjection) -> np.ndarray:
    F = np.zeros(mesh.n_vertices)
    np.add.at(F, mesh.elements.ravel(), data.f_moments.ravel())
    if len(data.neumann_edges):
        np.add.at(F, mesh.edges[data.neumann_edges].ravel(), data.g_moments.ravel())
    return F


def assemble(mesh: Mesh, problem, data: DataProjection | None = None) -> tuple[SparseSystem, DofMap]:
    """Assemble the Galerkin system over the free (non-Dirichlet) nodes.

    The load uses the same degree-10 moments that define the projections of
    f and g_N, so the discrete data seen by the solver and by the estimator
    coincide exactly.
    """
    if getattr(problem, "dirichlet_value", 0.0) != 0.0:
        raise ValueError("only homogeneous Dirichlet data are supported")
    if data is None:
        data = project_data(mesh, problem.f, problem.g_neumann)
    dm = dofmap(mesh)
    if dm.ndof == 0:
        raise EmptySystem("all nodes are Dirichlet-constrained")
    A = global_matrix(mesh)[dm.free][:, dm.free].tocsr()
    F = global_load(mesh, data)[dm.free]
    return SparseSystem(A, F, mesh, dm, data), dm


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float


def pcg(A, b, rel_tol: float = 1e-12, max_iter: int | None = None, x0=None) -> CGResult:
    """Conjugate gradients with a Jacobi preconditioner.

    Stops when the residual 2-norm falls below ``rel_tol`` times the initial one.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    max_iter = 10 * n + 100 if max_iter is None else max_iter
    diag = A.diagonal() if sp.issparse(A) else np.diag(np.atleast_2d(A))
    Minv = 1.0 / diag
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    r0 = np.linalg.norm(r)
    if r0 == 0.0:
        return CGResult(x, 0, 0.0)
    z = Minv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r)
        if res <= rel_tol * r0:
            return CGResult(x, it, res)
        z = Minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NoConvergence(f"CG did not converge in {max_iter} iterations "
                        f"(residual {res:.3e}, initial {r0:.3e})", res)


def solve_cg(system: SparseSystem, rel_tol: float = 1e-12, max_iter: int | None = None) -> P1Solution:
    res = pcg(system.matrix, system.rhs, rel_tol, max_iter)
    # one step of residual correction tightens Galerkin orthogonality
    r = system.rhs - system.matrix @ res.x
    if np.linalg.norm(r) > 0:
        res.x += pcg(system.matrix, r, 1e-6, max_iter).x
    values = np.zeros(system.mesh.n_vertices)
    values[system.dofs.free] = res.x
    return P1Solution(system.mesh, values)


def solve(mesh: Mesh, problem, rel_tol: float = 1e-12) -> P1Solution:
    system, _ = assemble(mesh, problem)
    return solve_cg(system, rel_tol)


def galerkin_residual(u_h: P1Solution, problem, data: DataProjection | None = None) -> float:
    """max over free hat functions of |F(theta_i) - B(u_h, theta_i)|."""
    mesh = u_h.mesh
    if data is None:
        data = project_data(mesh, problem.f, problem.g_neumann)
    r = global_load(mesh, data) - global_matrix(mesh) @ u_h.values
    free = dofmap(mesh).free
    return float(np.max(np.abs(r[free]))) if len(free) else 0.0


# projections ------------------------------------------------------------

def project_affine_element(f, vertices, degree: int = 10) -> np.ndarray:
    """L2(K) projection of ``f(x, y)`` onto affine functions: (a, b, c) for a + bx + cy."""
    P = np.asarray(vertices, dtype=float)
    rule = quadrature_rule(degree)
    xy = rule.points @ P
    d1, d2 = P[1] - P[0], P[2] - P[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    basis = np.column_stack([np.ones(len(xy)), xy[:, 0], xy[:, 1]])
    fv = np.broadcast_to(np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float), (len(xy),))
    mass = basis.T @ (rule.weights[:, None] * basis) * area
    rhs = basis.T @ (rule.weights * fv) * area
    return np.linalg.solve(mass, rhs)


def project_affine_facet(g, a, b, degree: int = 10) -> np.ndarray:
    """L2 projection of ``g(s)`` (s = arclength from ``a``) onto P1: (c0, c1) for c0 + c1 s."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    L = float(np.linalg.norm(b - a))
    t, w = gauss_segment(degree)
    s = t * L
    basis = np.column_stack([np.ones(len(s)), s])
    gv = np.broadcast_to(np.asarray(g(s), dtype=float), (len(s),))
    mass = basis.T @ (w[:, None] * basis) * L
    rhs = basis.T @ (w * gv) * L
    return np.linalg.solve(mass, rhs)


# energy norms -----------------------------------------------------------

def value_and_gradient(field, elem, bary, xy):
    both = getattr(field, "value_and_gradient", None)
    if both is not None:
        return both(elem, bary, xy)
    return field.value(elem, bary, xy), field.gradient(elem, bary, xy)


class FunctionField:
    """Field given by callables ``u(x, y)`` and ``grad(x, y) -> (n, 2)``.

    ``both(x, y) -> (u, grad)`` may be supplied when the two share work.
    """

    def __init__(self, u, grad, both=None):
        self._u, self._grad, self._both = u, grad, both

    def value(self, elem, bary, xy):
        return self._u(xy[:, 0], xy[:, 1])

    def gradient(self, elem, bary, xy):
        return self._grad(xy[:, 0], xy[:, 1])

    def value_and_gradient(self, elem, bary, xy):
        if self._both is not None:
            return self._both(xy[:, 0], xy[:, 1])
        return self.value(elem, bary, xy), self.gradient(elem, bary, xy)


class DifferenceField:
    def __init__(self, a, b):
        self.a, self.b = a, b

    def value(self, elem, bary, xy):
        return self.a.value(elem, bary, xy) - self.b.value(elem, bary, xy)

    def gradient(self, elem, bary, xy):
        return self.a.gradient(elem, bary, xy) - self.b.gradient(elem, bary, xy)

    def value_and_gradient(self, elem, bary, xy):
        va, ga = value_and_gradient(self.a, elem, bary, xy)
        vb, gb = value_and_gradient(self.b, elem, bary, xy)
        return va - vb, ga - gb


def energy_density(field, kappa):
    def func(elem, bary, xy):
        v, g = value_and_gradient(field, elem, bary, xy)
        g = np.broadcast_to(g, (len(elem), 2))
        return np.sum(g * g, axis=1) + kappa[elem] ** 2 * v * v
    return func


def element_energy_sq(field, mesh: Mesh, kappa=None, degree: int = 10,
                      rel_tol: float | None = None, abs_tol: float = 0.0,
                      max_depth: int = 20) -> np.ndarray:
    """Per-element squared energy norms; adaptive when ``rel_tol`` is given."""
    kappa = mesh.kappa if kappa is None else np.broadcast_to(np.asarray(kappa, float), (mesh.n_elements,))
    func = energy_density(field, kappa)
    if rel_tol is not None:
        return integrate_adaptive_batch(func, mesh.coords, rel_tol, abs_tol, degree, max_depth)
    rule = quadrature_rule(degree)
    nq = len(rule.weights)
    elem = np.repeat(np.arange(mesh.n_elements), nq)
    bary = np.tile(rule.points, (mesh.n_elements, 1))
    xy = rule.physical(mesh.coords).reshape(-1, 2)
    vals = func(elem, bary, xy).reshape(mesh.n_elements, nq)
    return vals @ rule.weights * mesh.areas


def energy_norm(field, mesh: Mesh, kappa=None, degree: int = 10, rel_tol: float | None = None) -> float:
    return float(np.sqrt(np.sum(element_energy_sq(field, mesh, kappa, degree, rel_tol))))
