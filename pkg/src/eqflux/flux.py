"""Patchwise flux reconstruction in RT1.

For every mesh node ``n`` a local flux ``tau_n`` on the patch of elements
around ``n`` minimises

    ||tau_n - theta_n grad u_h||^2
      + ||kappa^-1 [Pi(theta_n (Pi f - kappa^2 u_h)) - grad theta_n . grad u_h + div tau_n]||^2
      + ||C_T [Pi_N(theta_n Pi_N g_N) - tau_n . nu]||^2

over RT1 fields with zero normal trace on the patch facets away from ``n``.
In constrained mode the residual terms on kappa = 0 elements and their
Neumann facets are imposed exactly; in penalized mode they are weighted by
kappa0^-2 and zeta0^-2 instead.  The global flux is the sum of the ``tau_n``.

Every weighted residual term is affine, so it is written through its
moments ``m = R x - d`` as ``m^T S^-1 m`` with ``S`` a scaled P1 mass
matrix.  The patch problem is then solved as the symmetric saddle point
system ``[[M, C^T, R^T], [C, 0, 0], [R, 0, -S]]``, which stays well
conditioned even when the weights ``S^-1`` are huge penalties.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .estimator import trace_constants_sq
from .fem import EDGE_MASS, P1_MASS, DataProjection, P1Solution
from .mesh import Mesh, Patch, node_patch
from .rt import RT1Basis, RT1Element, edge_trace_values

DEFAULT_PENALTY = float(np.sqrt(np.finfo(float).eps))


class SingularPrimalBlock(np.linalg.LinAlgError):
    pass


class MissingPatch(KeyError):
    pass


def _triple_p1() -> np.ndarray:
    """int_K lambda_a lambda_k lambda_j / |K|."""
    T = np.empty((3, 3, 3))
    for a in range(3):
        for k in range(3):
            for j in range(3):
                distinct = len({a, k, j})
                T[a, k, j] = {1: 1 / 10, 2: 1 / 30, 3: 1 / 60}[distinct]
    return T


def _triple_edge() -> np.ndarray:
    """int_e lambda_k lambda_l lambda_j / |e|."""
    T = np.empty((2, 2, 2))
    for k in range(2):
        for l in range(2):
            for j in range(2):
                T[k, l, j] = 1 / 4 if k == l == j else 1 / 12
    return T


TRIPLE_P1 = _triple_p1()
TRIPLE_EDGE = _triple_edge()


@dataclass(frozen=True)
class PatchFluxSpace:
    patch: Patch
    local_dofs: np.ndarray  # (k, 8) patch dof per element-local dof, -1 if zeroed
    edge_dofs: dict
    n_free: int


def build_patch_space(mesh: Mesh, patch: Patch) -> PatchFluxSpace:
    removed = set(patch.ext_facets_no_node.tolist())
    edge_dofs = {}
    nxt = 0
    local = np.full((len(patch.elements), 8), -1, dtype=np.int64)
    for r, K in enumerate(patch.elements):
        for i in range(3):
            e = int(mesh.element_edges[K, i])
            if e in removed:
                continue
            if e not in edge_dofs:
                edge_dofs[e] = (nxt, nxt + 1)
                nxt += 2
            local[r, 2 * i:2 * i + 2] = edge_dofs[e]
    for r in range(len(patch.elements)):
        local[r, 6:] = (nxt, nxt + 1)
        nxt += 2
    return PatchFluxSpace(patch, local, edge_dofs, nxt)


class FluxContext:
    """Element data shared by all patch problems for one discrete solution."""

    def __init__(self, u_h: P1Solution, data: DataProjection, basis: RT1Basis | None = None):
        mesh = u_h.mesh
        self.mesh = mesh
        self.u_h = u_h
        self.data = data
        self.basis = RT1Basis(mesh) if basis is None else basis
        grad = u_h.gradients
        A = mesh.areas
        G = mesh.barycentric_gradients
        # int_K lambda_a grad u_h . phi_i
        self.lin_mass = np.einsum("maid,md->mai", self.basis.vec_p1, grad)
        self.const_mass = A / 6.0 * np.sum(grad * grad, axis=1)
        # moments of Pi(lambda_a p) - grad lambda_a . grad u_h against lambda_j
        p = data.f_proj - (mesh.kappa ** 2)[:, None] * u_h.element_values
        self.source_moments = (np.einsum("akj,mk->maj", TRIPLE_P1, p) * A[:, None, None]
                               - np.einsum("mad,md->ma", G, grad)[:, :, None] * (A / 3.0)[:, None, None])
        ne = data.neumann_edges
        L = mesh.edge_lengths[ne]
        # moments of theta_n Pi_N g against lambda_j for theta_n = lambda_k
        self.neumann_moments = np.einsum("klj,el->ekj", TRIPLE_EDGE, data.g_proj) * L[:, None, None]
        self.neumann_index = {int(e): i for i, e in enumerate(ne)}
        K = mesh.edge_elements[ne, 0]
        loc = np.argmax(mesh.element_edges[K] == ne[:, None], axis=1)
        self.neumann_element = K
        self.ct_sq, _ = trace_constants_sq(mesh.diameters[K], mesh.areas[K],
                                        mesh.local_edge_lengths[K, loc], mesh.kappa[K])

    @cached_property
    def spaces(self) -> list[PatchFluxSpace]:
        return [build_patch_space(self.mesh, node_patch(self.mesh, n))
                for n in range(self.mesh.n_vertices)]


@dataclass
class PatchSystem:
    """Quadratic functional x^T mass x - 2 load^T x + const + (R x - d)^T S^-1 (R x - d)
    with hard constraints C x = e."""
    context: FluxContext
    space: PatchFluxSpace
    mode: str
    mass: np.ndarray
    load: np.ndarray
    const: float
    soft_rows: np.ndarray
    soft_rhs: np.ndarray
    soft_cov: np.ndarray
    hard_rows: np.ndarray
    hard_rhs: np.ndarray

    @property
    def node(self) -> int:
        return self.space.patch.node_id

    @cached_property
    def soft_weight(self) -> np.ndarray:
        return np.linalg.inv(self.soft_cov) if len(self.soft_cov) else self.soft_cov

    @property
    def matrix(self) -> np.ndarray:
        """Dense symmetric matrix of the functional."""
        R = self.soft_rows
        return self.mass + R.T @ self.soft_weight @ R

    @property
    def linear(self) -> np.ndarray:
        return self.load + self.soft_rows.T @ (self.soft_weight @ self.soft_rhs)

    def element_coefficients(self, x) -> np.ndarray:
        xe = np.append(x, 0.0)
        idx = np.where(self.space.local_dofs < 0, len(x), self.space.local_dofs)
        return xe[idx]

    def functional(self, x) -> float:
        """E_n (or its penalized variant) evaluated by exact quadrature."""
        ctx = self.context
        basis = ctx.basis
        elems = self.space.patch.elements
        a = _local_vertex(ctx.mesh, elems, self.node)
        coefs = self.element_coefficients(x)
        tau = np.einsum("kqjd,kj->kqd", basis.qvalues[elems], coefs)
        lam = basis.rule.points[:, a].T  # (k, q)
        target = lam[:, :, None] * ctx.u_h.gradients[elems][:, None, :]
        val = float(np.sum(basis.qweights[elems] * np.sum((tau - target) ** 2, axis=-1)))
        if len(self.soft_rows):
            m = self.soft_rows @ x - self.soft_rhs
            val += float(m @ np.linalg.solve(self.soft_cov, m))
        return val

    def constraint_residual(self, x) -> float:
        if not len(self.hard_rows):
            return 0.0
        return float(np.max(np.abs(self.hard_rows @ x - self.hard_rhs)))


def _local_vertex(mesh: Mesh, elems, n) -> np.ndarray:
    return np.argmax(mesh.elements[elems] == n, axis=1)


def _assemble(ctx: FluxContext, space: PatchFluxSpace, penalized: bool,
              kappa0: float, zeta0: float) -> PatchSystem:
    mesh, basis = ctx.mesh, ctx.basis
    patch = space.patch
    n = patch.node_id
    elems = patch.elements
    nd = space.n_free
    idx = np.where(space.local_dofs < 0, nd, space.local_dofs)
    a = _local_vertex(mesh, elems, n)

    A = np.zeros((nd + 1, nd + 1))
    np.add.at(A, (idx[:, :, None], idx[:, None, :]), basis.mass[elems])
    b = np.zeros(nd + 1)
    np.add.at(b, idx, ctx.lin_mass[elems, a])
    const = float(np.sum(ctx.const_mass[elems]))

    soft_rows, soft_rhs, soft_cov = [], [], []
    hard_rows, hard_rhs = [], []
    for r, K in enumerate(elems):
        row = np.zeros((3, nd + 1))
        np.add.at(row.T, idx[r], basis.div_p1[K])
        rhs = -ctx.source_moments[K, a[r]]
        kap = mesh.kappa[K]
        if kap > 0 or penalized:
            kt = kap if kap > 0 else kappa0
            soft_rows.append(row[:, :nd])
            soft_rhs.append(rhs)
            soft_cov.append(kt * kt * mesh.areas[K] * P1_MASS)
        else:
            hard_rows.append(row[:, :nd])
            hard_rhs.append(rhs)
    for e in patch.neumann_facets:
        i = ctx.neumann_index[int(e)]
        k = 0 if mesh.edges[e, 0] == n else 1
        d0, d1 = space.edge_dofs[int(e)]
        row = np.zeros((2, nd))
        row[0, d0] = row[1, d1] = 1.0
        rhs = ctx.neumann_moments[i, k]
        Mg = mesh.edge_lengths[e] * EDGE_MASS
        kap = mesh.kappa[ctx.neumann_element[i]]
        if kap > 0 or penalized:
            weight = ctx.ct_sq[i] if kap > 0 else zeta0 ** -2
            soft_rows.append(row)
            soft_rhs.append(rhs)
            soft_cov.append(Mg / weight)
        else:
            hard_rows.append(row)
            hard_rhs.append(rhs)

    def stack(rows, rhs):
        if not rows:
            return np.zeros((0, nd)), np.zeros(0)
        return np.vstack(rows), np.concatenate(rhs)

    R, d = stack(soft_rows, soft_rhs)
    C, e = stack(hard_rows, hard_rhs)
    S = sla.block_diag(*soft_cov) if soft_cov else np.zeros((0, 0))
    return PatchSystem(ctx, space, "penalized" if penalized else "constrained",
                       A[:nd, :nd], b[:nd], const, R, d, S, C, e)


def assemble_patch_constrained(ctx: FluxContext, node: int) -> PatchSystem:
    return _assemble(ctx, ctx.spaces[node], False, 0.0, 0.0)


def assemble_patch_penalized(ctx: FluxContext, node: int, kappa0: float = DEFAULT_PENALTY,
                             zeta0: float = DEFAULT_PENALTY) -> PatchSystem:
    if kappa0 <= 0 or zeta0 <= 0:
        raise ValueError("kappa0 and zeta0 must be positive")
    return _assemble(ctx, ctx.spaces[node], True, kappa0, zeta0)


def _independent_rows(C, e, rtol=1e-10):
    """Replace possibly dependent constraint rows by an orthogonal row basis."""
    U, s, Vt = np.linalg.svd(C, full_matrices=False)
    r = int(np.sum(s > rtol * s[0])) if len(s) and s[0] > 0 else 0
    return s[:r, None] * Vt[:r], U[:, :r].T @ e


def _whitened_soft_rows(R, d, S):
    """Rewrite (Rx - d)^T S^-1 (Rx - d) as sum_i s_i^2 (v_i . x - c_i)^2 plus a constant.

    Returns orthonormal rows v_i, targets c_i and the diagonal covariance
    1/s_i^2.  Directions with s_i at rounding level only shift the constant,
    so dropping them keeps the saddle matrix nonsingular even when the
    penalty covariance is close to machine precision.
    """
    if not len(R):
        return R, d, S
    L = np.linalg.cholesky(S)
    B = sla.solve_triangular(L, R, lower=True)
    t = sla.solve_triangular(L, d, lower=True)
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    keep = s > max(B.shape) * np.finfo(float).eps * s[0] if len(s) and s[0] > 0 else np.zeros(len(s), bool)
    s = s[keep]
    return Vt[keep], (U[:, keep].T @ t) / s, np.diag(1.0 / s ** 2)


def solve_patch(system: PatchSystem) -> np.ndarray:
    """Minimise the patch functional; returns the patch dof vector."""
    M = system.mass
    nd = len(M)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise SingularPrimalBlock(f"patch mass block of node {system.node} is not definite") from None
    C, e = system.hard_rows, system.hard_rhs
    if len(C):
        U = np.linalg.svd(C, compute_uv=False)
        if len(U) < len(C) or U[-1] <= 1e-10 * U[0]:
            C, e = _independent_rows(C, e)
    R, d, S = _whitened_soft_rows(system.soft_rows, system.soft_rhs, system.soft_cov)
    nh, ns = len(C), len(R)
    K = np.zeros((nd + nh + ns, nd + nh + ns))
    K[:nd, :nd] = M
    K[nd:nd + nh, :nd] = C
    K[:nd, nd:nd + nh] = C.T
    K[nd + nh:, :nd] = R
    K[:nd, nd + nh:] = R.T
    K[nd + nh:, nd + nh:] = -S
    rhs = np.concatenate([system.load, e, d])
    with warnings.catch_warnings():
        # tiny penalty blocks make the saddle matrix look ill-conditioned
        # although the primal part is well determined
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        sol = sla.solve(K, rhs, assume_a="sym", check_finite=False)
    return sol[:nd]


class FluxField:
    """Global RT1 field stored as per-element dof vectors (M, 8)."""

    def __init__(self, basis: RT1Basis, coefficients):
        self.basis = basis
        self.mesh = basis.mesh
        self.coefficients = np.asarray(coefficients, dtype=float)

    def element(self, K: int) -> RT1Element:
        return RT1Element(K, self.coefficients[K])

    @cached_property
    def qvalues(self) -> np.ndarray:
        return np.einsum("mqjd,mj->mqd", self.basis.qvalues, self.coefficients)

    @cached_property
    def qdiv(self) -> np.ndarray:
        return np.einsum("mqj,mj->mq", self.basis.qdiv, self.coefficients)

    @cached_property
    def div_moments(self) -> np.ndarray:
        """int_K div(tau) lambda_j, shape (M, 3)."""
        return np.einsum("mij,mi->mj", self.basis.div_p1, self.coefficients)

    def edge_dofs(self, e: int, side: int = 0) -> np.ndarray:
        K = self.mesh.edge_elements[e, side]
        i = int(np.argmax(self.mesh.element_edges[K] == e))
        return self.coefficients[K, 2 * i:2 * i + 2]

    def normal_trace(self, edges) -> np.ndarray:
        """Endpoint values of tau . nu_e (global orientation) on each edge, from the left element."""
        edges = np.asarray(edges)
        K = self.mesh.edge_elements[edges, 0]
        i = np.argmax(self.mesh.element_edges[K] == edges[:, None], axis=1)
        dofs = np.stack([self.coefficients[K, 2 * i], self.coefficients[K, 2 * i + 1]], axis=1)
        return edge_trace_values(dofs, self.mesh.edge_lengths[edges])

    def normal_jumps(self, npts: int = 2) -> np.ndarray:
        """Max normal-trace jump per interior edge, evaluating both sides' polynomials."""
        mesh = self.mesh
        inner = np.flatnonzero(mesh.edge_elements[:, 1] >= 0)
        s = np.polynomial.legendre.leggauss(npts)[0] * 0.5 + 0.5
        a = mesh.vertices[mesh.edges[inner, 0]]
        b = mesh.vertices[mesh.edges[inner, 1]]
        pts = a[:, None] * (1 - s)[None, :, None] + b[:, None] * s[None, :, None]
        t = b - a
        nu = np.stack([t[:, 1], -t[:, 0]], axis=1) / mesh.edge_lengths[inner][:, None]
        L = mesh.edge_elements[inner, 0]
        R = mesh.edge_elements[inner, 1]
        vl = np.einsum("eqjd,ej->eqd", self.basis.values(L, pts), self.coefficients[L])
        vr = np.einsum("eqjd,ej->eqd", self.basis.values(R, pts), self.coefficients[R])
        return np.max(np.abs(np.einsum("eqd,ed->eq", vl - vr, nu)), axis=1)

    def scale(self) -> float:
        return float(np.max(np.abs(self.qvalues))) if self.qvalues.size else 0.0


def accumulate_global(solutions: dict, mesh: Mesh, basis: RT1Basis | None = None) -> FluxField:
    """Sum the patch fluxes; ``solutions`` maps node -> (PatchSystem or space, x)."""
    missing = set(range(mesh.n_vertices)) - set(solutions)
    if missing:
        raise MissingPatch(f"no patch solution for node {min(missing)}")
    if basis is None:
        first = next(iter(solutions.values()))[0]
        basis = first.context.basis if isinstance(first, PatchSystem) else RT1Basis(mesh)
    coefs = np.zeros((mesh.n_elements, 8))
    for n in range(mesh.n_vertices):
        holder, x = solutions[n]
        space = holder.space if isinstance(holder, PatchSystem) else holder
        xe = np.append(x, 0.0)
        idx = np.where(space.local_dofs < 0, len(x), space.local_dofs)
        coefs[space.patch.elements] += xe[idx]
    return FluxField(basis, coefs)


@dataclass
class Reconstruction:
    flux: FluxField
    functionals: np.ndarray  # E_n per node
    constraint_residuals: np.ndarray
    mode: str
    kappa0: float
    zeta0: float


def reconstruct_flux(u_h: P1Solution, data: DataProjection, mode: str = "constrained",
                     kappa0: float = DEFAULT_PENALTY, zeta0: float = DEFAULT_PENALTY,
                     context: FluxContext | None = None) -> Reconstruction:
    if mode not in ("constrained", "penalized"):
        raise ValueError(f"unknown mode {mode!r}")
    ctx = FluxContext(u_h, data) if context is None else context
    mesh = ctx.mesh
    sols = {}
    E = np.zeros(mesh.n_vertices)
    cres = np.zeros(mesh.n_vertices)
    for n in range(mesh.n_vertices):
        if mode == "constrained":
            system = assemble_patch_constrained(ctx, n)
        else:
            system = assemble_patch_penalized(ctx, n, kappa0, zeta0)
        x = solve_patch(system)
        sols[n] = (system, x)
        E[n] = system.functional(x)
        cres[n] = system.constraint_residual(x)
    flux = accumulate_global(sols, mesh, ctx.basis)
    return Reconstruction(flux, E, cres, mode, kappa0, zeta0)
