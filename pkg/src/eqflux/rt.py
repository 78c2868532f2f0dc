"""Lowest-order-with-affine-traces Raviart-Thomas space RT1 on triangles.

Each element carries 8 degrees of freedom:

* per local edge ``i`` (opposite vertex ``i``): the moments
  ``int_e (tau . nu_e) lambda_g`` for both endpoints ``g`` of the edge, in
  increasing global vertex order, with ``nu_e`` the edge's global normal;
* two interior moments ``int_K tau_x`` and ``int_K tau_y``.

Because edge moments use the global orientation, two elements sharing an
edge see identical values of the shared dofs; a field assembled from shared
dofs is H(div)-conforming by construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import Mesh
from .quadrature import gauss_segment, quadrature_rule

NDOF = 8
EXACT_RULE = 4  # RT1 . RT1 integrands have degree <= 4


def monomials(xi, eta):
    """Monomial fields spanning RT1 in scaled local coordinates, shape (..., 8, 2)."""
    one = np.ones_like(xi)
    zero = np.zeros_like(xi)
    comps = [
        (one, zero), (zero, one), (xi, zero), (eta, zero),
        (zero, xi), (zero, eta), (xi * xi, xi * eta), (xi * eta, eta * eta),
    ]
    return np.stack([np.stack(c, axis=-1) for c in comps], axis=-2)


def monomial_div(xi, eta, h):
    zero = np.zeros_like(xi)
    one = np.ones_like(xi)
    d = [zero, zero, one, zero, zero, one, 3 * xi, 3 * eta]
    return np.stack(d, axis=-1) / np.asarray(h)[..., None]


class RT1Basis:
    """Per-mesh RT1 basis with exact local matrices."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.center = mesh.centroids
        self.scale = mesh.diameters
        self.dof_matrix = self._dof_matrix(
            lambda K, xy: self._monomials_at(K, xy))
        self.coef = np.linalg.inv(self.dof_matrix)

    def _local(self, K, xy):
        c = self.center[K]
        h = self.scale[K]
        return (xy[..., 0] - c[..., 0]) / h, (xy[..., 1] - c[..., 1]) / h

    def _monomials_at(self, K, xy):
        xi, eta = self._local(K, xy)
        return monomials(xi, eta)

    def _dof_matrix(self, field_at):
        """Apply the 8 dof functionals to fields returning (M, n, k, 2) values."""
        mesh = self.mesh
        M = mesh.n_elements
        K = np.arange(M)[:, None]
        s, w = gauss_segment(4)
        rows = []
        for i in range(3):
            e = mesh.edges[mesh.element_edges[:, i]]
            a, b = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
            pts = a[:, None, :] * (1 - s)[None, :, None] + b[:, None, :] * s[None, :, None]
            nu = mesh.outward_normals[:, i] * mesh.element_edge_sign[:, i][:, None]
            vals = field_at(K, pts)
            flux = np.einsum("mqkd,md->mqk", vals, nu) * mesh.local_edge_lengths[:, i][:, None, None]
            rows.append(np.einsum("mqk,q->mk", flux, w * (1 - s)))
            rows.append(np.einsum("mqk,q->mk", flux, w * s))
        rule = quadrature_rule(EXACT_RULE)
        xy = rule.physical(mesh.coords)
        vals = field_at(K, xy)
        ints = np.einsum("mqkd,q->mkd", vals, rule.weights) * mesh.areas[:, None, None]
        rows.append(ints[..., 0])
        rows.append(ints[..., 1])
        return np.stack(rows, axis=1)

    # evaluation ---------------------------------------------------------
    def values(self, K, xy):
        """Basis values at points ``xy`` of elements ``K``.

        ``K`` scalar with ``xy`` (n, 2), or ``K`` (M,) with ``xy`` (M, n, 2);
        returns (..., n, 8, 2).
        """
        K = np.asarray(K)
        xi, eta = self._local(K[..., None] if K.ndim else K, xy)
        return np.einsum("...nkd,...kj->...njd", monomials(xi, eta), self.coef[K])

    def divergences(self, K, xy):
        K = np.asarray(K)
        Kx = K[..., None] if K.ndim else K
        xi, eta = self._local(Kx, xy)
        d = monomial_div(xi, eta, self.scale[Kx])
        return np.einsum("...nk,...kj->...nj", d, self.coef[K])

    # precomputed quantities at the exact rule ---------------------------
    @cached_property
    def rule(self):
        return quadrature_rule(EXACT_RULE)

    @cached_property
    def qpoints(self) -> np.ndarray:
        return self.rule.physical(self.mesh.coords)

    @cached_property
    def qvalues(self) -> np.ndarray:
        """Basis values at the exact-rule points, shape (M, q, 8, 2)."""
        return self.values(np.arange(self.mesh.n_elements), self.qpoints)

    @cached_property
    def qdiv(self) -> np.ndarray:
        return self.divergences(np.arange(self.mesh.n_elements), self.qpoints)

    @cached_property
    def qweights(self) -> np.ndarray:
        """Quadrature weights times element areas, shape (M, q)."""
        return self.rule.weights[None, :] * self.mesh.areas[:, None]

    @cached_property
    def mass(self) -> np.ndarray:
        """int_K phi_i . phi_j, shape (M, 8, 8)."""
        return np.einsum("mq,mqid,mqjd->mij", self.qweights, self.qvalues, self.qvalues)

    @cached_property
    def div_p1(self) -> np.ndarray:
        """int_K div(phi_i) lambda_j, shape (M, 8, 3)."""
        return np.einsum("mq,mqi,qj->mij", self.qweights, self.qdiv, self.rule.points)

    @cached_property
    def vec_p1(self) -> np.ndarray:
        """int_K lambda_a phi_i, shape (M, 3, 8, 2)."""
        return np.einsum("mq,qa,mqid->maid", self.qweights, self.rule.points, self.qvalues)

    def interpolate(self, field) -> np.ndarray:
        """Coefficients of the canonical interpolant of ``field(x, y) -> (..., 2)``."""
        def at(K, xy):
            v = np.asarray(field(xy[..., 0], xy[..., 1]), dtype=float)
            return v[..., None, :]
        return self._dof_matrix(at)[..., 0]


@dataclass(frozen=True)
class RT1Element:
    element: int
    coefficients: np.ndarray


def rt1_eval(basis: RT1Basis, e: RT1Element, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.einsum("njd,j->nd", basis.values(e.element, pts), e.coefficients)


def rt1_div(basis: RT1Basis, e: RT1Element, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return basis.divergences(e.element, pts) @ e.coefficients


def edge_trace_values(dofs, length):
    """Endpoint values of an affine normal trace from its two edge moments."""
    dofs = np.asarray(dofs, dtype=float)
    inv = np.array([[2.0, -1.0], [-1.0, 2.0]]) * 2.0
    return dofs @ inv.T / np.asarray(length)[..., None]
