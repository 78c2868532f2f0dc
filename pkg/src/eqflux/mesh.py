"""Conforming triangular meshes: topology, node patches, metrics, refinement.

Elements are stored counterclockwise.  Local edge ``i`` of an element is the
edge opposite its local vertex ``i``.  Every edge carries a global orientation:
its normal points out of the lower-indexed adjacent element (outward on the
boundary), and its endpoints are stored in increasing vertex order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2
LABEL_NAMES = {INTERIOR: "interior", DIRICHLET: "dirichlet", NEUMANN: "neumann"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}


class MeshError(Exception):
    pass


class NonConforming(MeshError):
    pass


class DegenerateElement(MeshError):
    pass


class UnlabeledBoundaryFacet(MeshError):
    pass


class RefinementOverflow(MeshError):
    pass


@dataclass(frozen=True)
class Facet:
    vertex_ids: tuple[int, int]
    left_element: int
    right_element: int | None
    boundary_label: str


@dataclass(frozen=True)
class ElementMetrics:
    h: float
    rho: float
    area: float
    facet_lengths: np.ndarray
    outward_normals: np.ndarray


@dataclass(frozen=True)
class Patch:
    node_id: int
    elements: np.ndarray
    interior_facets: np.ndarray
    ext_facets_no_node: np.ndarray
    neumann_facets: np.ndarray
    zero_kappa_elements: np.ndarray
    positive_kappa_elements: np.ndarray


@dataclass(frozen=True)
class KappaReport:
    worst_ratio: float
    violations: list[tuple[int, int, float]] = field(default_factory=list)


def _label_code(label) -> int:
    if isinstance(label, str):
        try:
            return LABEL_CODES[label.lower()]
        except KeyError:
            raise MeshError(f"unknown boundary label {label!r}") from None
    return int(label)


class Mesh:
    """Immutable conforming triangulation.

    Construct through :func:`build_mesh`; refinement returns new instances.
    """

    def __init__(self, vertices, elements, edges, edge_elements, edge_labels,
                 element_edges, kappa, region, vertex_parents=None):
        self.vertices = vertices
        self.elements = elements
        self.edges = edges
        self.edge_elements = edge_elements
        self.edge_labels = edge_labels
        self.element_edges = element_edges
        self.kappa = kappa
        self.region = region
        n = len(vertices)
        self.vertex_parents = (np.full((n, 2), -1, dtype=np.int64)
                               if vertex_parents is None else vertex_parents)
        for a in (self.vertices, self.elements, self.edges, self.edge_elements,
                  self.edge_labels, self.element_edges, self.kappa, self.region,
                  self.vertex_parents):
            a.setflags(write=False)

    # sizes --------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def __repr__(self):
        return (f"Mesh(vertices={self.n_vertices}, elements={self.n_elements}, "
                f"facets={self.n_edges})")

    # topology -----------------------------------------------------------
    @cached_property
    def element_edge_sign(self) -> np.ndarray:
        """+1 where the element is the edge's left (lower-index) element."""
        left = self.edge_elements[self.element_edges, 0]
        s = np.where(left == np.arange(self.n_elements)[:, None], 1.0, -1.0)
        s.setflags(write=False)
        return s

    @cached_property
    def node_elements(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR incidence (indptr, element indices) of nodes to elements."""
        flat = self.elements.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.n_vertices)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return indptr, order // 3

    def elements_of_node(self, n: int) -> np.ndarray:
        indptr, idx = self.node_elements
        return idx[indptr[n]:indptr[n + 1]]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_labels != INTERIOR)

    @cached_property
    def neumann_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_labels == NEUMANN)

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        e = self.edges[self.edge_labels == DIRICHLET]
        return np.unique(e)

    def facet(self, e: int) -> Facet:
        left, right = self.edge_elements[e]
        return Facet((int(self.edges[e, 0]), int(self.edges[e, 1])), int(left),
                     None if right < 0 else int(right),
                     LABEL_NAMES[int(self.edge_labels[e])])

    # geometry -----------------------------------------------------------
    @cached_property
    def coords(self) -> np.ndarray:
        """Element vertex coordinates, shape (M, 3, 2)."""
        return self.vertices[self.elements]

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.coords
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.coords.mean(axis=1)

    @cached_property
    def local_edge_lengths(self) -> np.ndarray:
        p = self.coords
        return np.stack([np.linalg.norm(p[:, (i + 2) % 3] - p[:, (i + 1) % 3], axis=1)
                         for i in range(3)], axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        return self.local_edge_lengths.max(axis=1)

    @cached_property
    def inradii(self) -> np.ndarray:
        return self.areas / (0.5 * self.local_edge_lengths.sum(axis=1))

    @cached_property
    def outward_normals(self) -> np.ndarray:
        """Unit outward normals per local edge, shape (M, 3, 2)."""
        p = self.coords
        t = np.stack([p[:, (i + 2) % 3] - p[:, (i + 1) % 3] for i in range(3)], axis=1)
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]], axis=1)

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, shape (M, 3, 2)."""
        p = self.coords
        twice = 2.0 * self.areas[:, None]
        g = np.empty((self.n_elements, 3, 2))
        for i in range(3):
            a, b = p[:, (i + 1) % 3], p[:, (i + 2) % 3]
            g[:, i, 0] = (a[:, 1] - b[:, 1]) / twice[:, 0]
            g[:, i, 1] = (b[:, 0] - a[:, 0]) / twice[:, 0]
        return g

    @cached_property
    def min_angles(self) -> np.ndarray:
        L = self.local_edge_lengths
        ang = []
        for i in range(3):
            a, b, c = L[:, i], L[:, (i + 1) % 3], L[:, (i + 2) % 3]
            cosv = np.clip((b * b + c * c - a * a) / (2 * b * c), -1.0, 1.0)
            ang.append(np.arccos(cosv))
        return np.min(ang, axis=0)

    def with_kappa(self, kappa) -> "Mesh":
        """Copy with new per-element coefficients (array or centroid rule)."""
        if callable(kappa):
            kappa = kappa(self.centroids)
        kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (self.n_elements,)).copy()
        if np.any(kappa < 0) or not np.all(np.isfinite(kappa)):
            raise MeshError("kappa must be finite and non-negative")
        return Mesh(self.vertices, self.elements, self.edges, self.edge_elements,
                    self.edge_labels, self.element_edges, kappa, self.region,
                    self.vertex_parents)


def _topology(elements: np.ndarray):
    m = len(elements)
    local = np.stack([elements[:, [1, 2]], elements[:, [2, 0]], elements[:, [0, 1]]], axis=1)
    keys = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise NonConforming("a facet is shared by more than two elements")
    element_edges = inverse.reshape(m, 3)
    owner = np.repeat(np.arange(m), 3)
    order = np.lexsort((owner, inverse))
    edge_elements = np.full((len(edges), 2), -1, dtype=np.int64)
    first = np.ones(len(order), dtype=bool)
    first[1:] = inverse[order][1:] != inverse[order][:-1]
    edge_elements[inverse[order][first], 0] = owner[order][first]
    edge_elements[inverse[order][~first], 1] = owner[order][~first]
    return edges.astype(np.int64), edge_elements, element_edges.astype(np.int64)


def _check_hanging(vertices, edges, boundary, tol=1e-12):
    if len(boundary) == 0:
        return
    bverts = np.unique(edges[boundary])
    q = vertices[bverts]
    scale = np.ptp(vertices, axis=0).max() or 1.0
    for chunk in np.array_split(boundary, max(1, len(boundary) // 256)):
        a = vertices[edges[chunk, 0]][:, None, :]
        b = vertices[edges[chunk, 1]][:, None, :]
        d = b - a
        L2 = np.sum(d * d, axis=-1)
        w = q[None, :, :] - a
        t = np.sum(w * d, axis=-1) / L2
        cross = d[..., 0] * w[..., 1] - d[..., 1] * w[..., 0]
        dist = np.abs(cross) / np.sqrt(L2)
        inside = (t > 1e-9) & (t < 1 - 1e-9) & (dist < tol * scale)
        if np.any(inside):
            i, j = np.argwhere(inside)[0]
            raise NonConforming(
                f"vertex {bverts[j]} lies inside facet {tuple(edges[chunk[i]])} (hanging node)")


def build_mesh(vertices, triangles, boundary_markers, kappa=0.0, region=None,
               *, check_conformity: bool = True) -> Mesh:
    """Build a conforming mesh.

    ``boundary_markers`` is a sequence of ``(i, j, label)`` with ``label`` in
    {"dirichlet", "neumann"}, or a callable mapping facet midpoints (B, 2)
    to labels.  Triangles given clockwise are reoriented.
    """
    vertices = np.array(vertices, dtype=float).reshape(-1, 2)
    tris = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    if not np.all(np.isfinite(vertices)):
        raise MeshError("non-finite vertex coordinates")
    if tris.size and (tris.min() < 0 or tris.max() >= len(vertices)):
        raise MeshError("triangle index out of range")
    if check_conformity and len(np.unique(vertices, axis=0)) != len(vertices):
        raise NonConforming("duplicate vertices")
    p = vertices[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    scale = max(np.ptp(vertices, axis=0).max(), 1e-300) if len(vertices) else 1.0
    bad = np.abs(signed) <= 1e-14 * scale * scale
    if np.any(bad):
        raise DegenerateElement(f"element {int(np.flatnonzero(bad)[0])} has zero area")
    flip = signed < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    edges, edge_elements, element_edges = _topology(tris)
    labels = np.zeros(len(edges), dtype=np.int8)
    boundary = np.flatnonzero(edge_elements[:, 1] < 0)
    if callable(boundary_markers):
        mids = 0.5 * (vertices[edges[boundary, 0]] + vertices[edges[boundary, 1]])
        labels[boundary] = [_label_code(c) for c in boundary_markers(mids)]
    else:
        lookup = {}
        for i, j, lab in boundary_markers:
            lookup[(min(int(i), int(j)), max(int(i), int(j)))] = _label_code(lab)
        for e in boundary:
            key = (int(edges[e, 0]), int(edges[e, 1]))
            if key not in lookup:
                raise UnlabeledBoundaryFacet(f"boundary facet {key} has no label")
            labels[e] = lookup.pop(key)
        interior_keys = set(map(tuple, edges[edge_elements[:, 1] >= 0].tolist()))
        stray = [k for k in lookup if k in interior_keys]
        if stray:
            raise MeshError(f"labelled facet {stray[0]} is not on the boundary")
    if np.any(labels[boundary] == INTERIOR):
        raise UnlabeledBoundaryFacet("boundary facet labelled interior")
    if check_conformity:
        _check_hanging(vertices, edges, boundary)

    m = len(tris)
    region = np.zeros(m, dtype=np.int64) if region is None else np.array(region, dtype=np.int64)
    mesh = Mesh(vertices, tris, edges, edge_elements, labels, element_edges,
                np.zeros(m), region)
    return mesh.with_kappa(kappa)


def element_metrics(mesh: Mesh, K: int) -> ElementMetrics:
    return ElementMetrics(h=float(mesh.diameters[K]), rho=float(mesh.inradii[K]),
                          area=float(mesh.areas[K]),
                          facet_lengths=mesh.local_edge_lengths[K].copy(),
                          outward_normals=mesh.outward_normals[K].copy())


def node_patch(mesh: Mesh, n: int) -> Patch:
    elems = mesh.elements_of_node(n)
    assert len(elems) > 0, "every node touches at least one element"
    eds = np.unique(mesh.element_edges[elems])
    has_node = np.any(mesh.edges[eds] == n, axis=1)
    interior = mesh.edge_labels[eds] == INTERIOR
    kap = mesh.kappa[elems]
    return Patch(
        node_id=int(n),
        elements=elems,
        interior_facets=eds[has_node & interior],
        ext_facets_no_node=eds[~has_node],
        neumann_facets=eds[has_node & (mesh.edge_labels[eds] == NEUMANN)],
        zero_kappa_elements=elems[kap == 0],
        positive_kappa_elements=elems[kap > 0],
    )


def validate_kappa_condition(mesh: Mesh, c_threshold: float) -> KappaReport:
    """Check that kappa varies slowly around elements with h*kappa > 1."""
    if c_threshold <= 0:
        raise ValueError("c_threshold must be positive")
    worst = 1.0
    violations = []
    active = np.flatnonzero(mesh.diameters * mesh.kappa > 1.0)
    for K in active:
        neigh = np.unique(np.concatenate([mesh.elements_of_node(v) for v in mesh.elements[K]]))
        for Kp in neigh:
            kp = mesh.kappa[Kp]
            ratio = np.inf if kp == 0 else mesh.kappa[K] / kp
            worst = max(worst, ratio)
            if ratio > c_threshold:
                violations.append((int(K), int(Kp), float(ratio)))
    return KappaReport(worst_ratio=float(worst), violations=violations)


# refinement -------------------------------------------------------------

def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def bisect(mesh: Mesh, marked: Iterable[int], kappa_rule: Callable | None = None,
           boundary_projection: Callable | None = None, max_depth: int = 64) -> Mesh:
    """Conforming longest-edge bisection of the marked elements.

    Each marked element is bisected at least once across its longest edge;
    neighbours are bisected recursively (again across their own longest edge)
    until the mesh is conforming.  Ties between equally long edges go to the
    edge with the smallest sorted vertex pair.  Children take ``kappa`` from
    ``kappa_rule`` at their centroids when given, otherwise from the parent.
    ``boundary_projection(mid, a, b)`` may move new boundary midpoints.
    """
    marked = sorted({int(k) for k in marked})
    if not marked:
        return mesh
    if marked[0] < 0 or marked[-1] >= mesh.n_elements:
        raise IndexError("marked element out of range")

    verts = [tuple(v) for v in mesh.vertices.tolist()]
    parents = [tuple(p) for p in mesh.vertex_parents.tolist()]
    tris = [list(t) for t in mesh.elements.tolist()]
    alive = [True] * len(tris)
    origin = list(range(len(tris)))
    edge_map: dict[tuple[int, int], list[int]] = {}
    for t, (a, b, c) in enumerate(tris):
        for key in (_edge_key(b, c), _edge_key(c, a), _edge_key(a, b)):
            edge_map.setdefault(key, []).append(t)
    labels = {(int(a), int(b)): int(lab) for (a, b), lab in
              zip(mesh.edges[mesh.boundary_edges].tolist(), mesh.edge_labels[mesh.boundary_edges])}
    midpoints: dict[tuple[int, int], int] = {}

    def longest(t):
        a, b, c = tris[t]
        best = None
        for p, q in ((b, c), (c, a), (a, b)):
            dx = verts[q][0] - verts[p][0]
            dy = verts[q][1] - verts[p][1]
            cand = (-(dx * dx + dy * dy), _edge_key(p, q))
            if best is None or cand < best:
                best = cand
        return best[1]

    def midpoint(key):
        if key in midpoints:
            return midpoints[key]
        a, b = key
        pa, pb = verts[a], verts[b]
        m = (0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]))
        if boundary_projection is not None and key in labels:
            m = tuple(float(v) for v in boundary_projection(np.array(m), np.array(pa), np.array(pb)))
        verts.append(m)
        parents.append(key)
        midpoints[key] = len(verts) - 1
        return midpoints[key]

    def split(t, key, m):
        a, b, c = tris[t]
        for i in range(3):
            if _edge_key(tris[t][(i + 1) % 3], tris[t][(i + 2) % 3]) == key:
                apex, p, q = tris[t][i], tris[t][(i + 1) % 3], tris[t][(i + 2) % 3]
                break
        alive[t] = False
        for e in (_edge_key(b, c), _edge_key(c, a), _edge_key(a, b)):
            edge_map[e].remove(t)
        for child in ([apex, p, m], [apex, m, q]):
            tris.append(child)
            alive.append(True)
            origin.append(origin[t])
            cid = len(tris) - 1
            x, y, z = child
            for e in (_edge_key(y, z), _edge_key(z, x), _edge_key(x, y)):
                edge_map.setdefault(e, []).append(cid)

    def refine(t, depth):
        while alive[t]:
            if depth > max_depth:
                raise RefinementOverflow(f"bisection recursion exceeded depth {max_depth}")
            key = longest(t)
            others = [s for s in edge_map[key] if s != t]
            if others and longest(others[0]) != key:
                refine(others[0], depth + 1)
                continue
            m = midpoint(key)
            split(t, key, m)
            if others:
                split(others[0], key, m)
            if key in labels:
                lab = labels.pop(key)
                labels[_edge_key(key[0], m)] = lab
                labels[_edge_key(m, key[1])] = lab
            del edge_map[key]

    for t in marked:
        if alive[t]:
            refine(t, 0)

    keep = [i for i, a in enumerate(alive) if a]
    new_tris = np.array([tris[i] for i in keep], dtype=np.int64)
    vertices = np.array(verts, dtype=float)
    edges, edge_elements, element_edges = _topology(new_tris)
    edge_labels = np.zeros(len(edges), dtype=np.int8)
    bnd = np.flatnonzero(edge_elements[:, 1] < 0)
    for e in bnd:
        edge_labels[e] = labels[(int(edges[e, 0]), int(edges[e, 1]))]
    org = np.array([origin[i] for i in keep])
    region = mesh.region[org]
    out = Mesh(vertices, new_tris, edges, edge_elements, edge_labels, element_edges,
               mesh.kappa[org].copy(), region.copy(), np.array(parents, dtype=np.int64))
    if kappa_rule is not None:
        out = out.with_kappa(kappa_rule)
    return out


def uniform_refine(mesh: Mesh, kappa_rule=None, boundary_projection=None) -> Mesh:
    """One sweep of bisection with every element marked."""
    return bisect(mesh, range(mesh.n_elements), kappa_rule, boundary_projection)


def prolongate(values: np.ndarray, fine: Mesh) -> np.ndarray:
    """Interpolate nodal values onto a mesh produced by bisection.

    Midpoint vertices take the mean of their parent edge endpoints, which is
    exact for continuous piecewise affine functions on nested meshes.
    """
    out = np.empty(fine.n_vertices)
    n = len(values)
    out[:n] = values
    for v in range(n, fine.n_vertices):
        a, b = fine.vertex_parents[v]
        out[v] = 0.5 * (out[a] + out[b])
    return out


# generators -------------------------------------------------------------

def rectangle_mesh(nx: int, ny: int, x0=0.0, x1=1.0, y0=0.0, y1=1.0,
                   labels: Callable | str = "dirichlet", kappa=0.0) -> Mesh:
    """Structured mesh, each cell split along its (x0,y0)-(x1,y1) diagonal."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    rule = labels if callable(labels) else (lambda mids: [labels] * len(mids))
    return build_mesh(verts, tris, rule, kappa=kappa, check_conformity=False)


def sector_mesh(segments: int, rings: int | None = None, labels="dirichlet", kappa=0.0) -> Mesh:
    """Unit disc minus the first quadrant, arc replaced by ``segments`` chords.

    Ring ``j`` (radius j/rings) carries about ``segments*j/rings`` chords; the
    strips between consecutive rings are zipped together by angle.
    """
    if segments < 8:
        raise ValueError("segments must be at least 8")
    span = 1.5 * np.pi
    if rings is None:
        rings = max(2, int(round(segments / span)))
    verts = [(0.0, 0.0)]
    ring_ids = [[0]]
    ring_angles = [None]
    for j in range(1, rings + 1):
        m = max(3, int(round(segments * j / rings)))
        ang = np.linspace(0.5 * np.pi, 2 * np.pi, m + 1)
        r = j / rings
        ids = []
        for k, phi in enumerate(ang):
            x, y = r * np.cos(phi), r * np.sin(phi)
            if k == m:
                x, y = r, 0.0
            elif k == 0:
                x, y = 0.0, r
            verts.append((x, y))
            ids.append(len(verts) - 1)
        ring_ids.append(ids)
        ring_angles.append(ang)
    tris = []
    first = ring_ids[1]
    for k in range(len(first) - 1):
        tris.append((0, first[k], first[k + 1]))
    for j in range(2, rings + 1):
        inner, outer = ring_ids[j - 1], ring_ids[j]
        ai, ao = ring_angles[j - 1], ring_angles[j]
        i = o = 0
        while i < len(inner) - 1 or o < len(outer) - 1:
            if o < len(outer) - 1 and (i == len(inner) - 1 or ao[o + 1] <= ai[i + 1]):
                tris.append((inner[i], outer[o], outer[o + 1]))
                o += 1
            else:
                tris.append((inner[i], outer[o], inner[i + 1]))
                i += 1
    rule = labels if callable(labels) else (lambda mids: [labels] * len(mids))
    return build_mesh(np.array(verts), np.array(tris), rule, kappa=kappa, check_conformity=False)


def project_to_unit_arc(mid, a, b):
    """Boundary projection for :func:`sector_mesh`: push arc midpoints to radius 1."""
    if abs(np.hypot(*a) - 1.0) < 1e-12 and abs(np.hypot(*b) - 1.0) < 1e-12:
        return mid / np.hypot(*mid)
    return mid


# ASCII mesh format ------------------------------------------------------

def write_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"triangles {mesh.n_elements}\n")
        for (i, j, k), r in zip(mesh.elements, mesh.region):
            fh.write(f"{i} {j} {k} {r}\n")
        b = mesh.boundary_edges
        fh.write(f"boundary {len(b)}\n")
        for e in b:
            i, j = mesh.edges[e]
            fh.write(f"{i} {j} {LABEL_NAMES[int(mesh.edge_labels[e])]}\n")


def read_mesh(path, kappa=0.0) -> Mesh:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    pos = 0

    def header(name):
        nonlocal pos
        tok = lines[pos]
        if len(tok) != 2 or tok[0] != name:
            raise MeshError(f"line {pos + 1}: expected '{name} <count>'")
        pos += 1
        return int(tok[1])

    nv = header("vertices")
    verts = [(float(t[0]), float(t[1])) for t in lines[pos:pos + nv]]
    pos += nv
    nt = header("triangles")
    rows = lines[pos:pos + nt]
    pos += nt
    tris = [(int(t[0]), int(t[1]), int(t[2])) for t in rows]
    region = [int(t[3]) if len(t) > 3 else 0 for t in rows]
    nb = header("boundary")
    marks = [(int(t[0]), int(t[1]), t[2]) for t in lines[pos:pos + nb]]
    return build_mesh(verts, tris, marks, kappa=kappa, region=region)


def facet_census(mesh: Mesh) -> dict:
    """Counts used by conformity checks."""
    interior = mesh.edge_labels == INTERIOR
    return {
        "interior_two_sided": bool(np.all(mesh.edge_elements[interior, 1] >= 0)),
        "boundary_one_sided": bool(np.all(mesh.edge_elements[~interior, 1] < 0)),
        "euler": mesh.n_vertices - mesh.n_edges + mesh.n_elements,
    }
