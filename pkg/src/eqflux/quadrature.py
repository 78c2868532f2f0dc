"""Quadrature on triangles and segments, plus adaptive integration."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi


class UnsupportedDegree(ValueError):
    pass


class MaxDepthExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # barycentric triples, shape (n, 3)
    weights: np.ndarray  # sum to 1; multiply by the element area
    exact_degree: int

    def physical(self, coords: np.ndarray) -> np.ndarray:
        """Map points into elements; ``coords`` has shape (..., 3, 2)."""
        return np.einsum("qi,...id->...qd", self.points, coords)


def _orbit(a, b, c):
    return sorted({(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)})


def _table(entries):
    pts, wts = [], []
    for w, bary in entries:
        orb = _orbit(*bary)
        pts.extend(orb)
        wts.extend([w] * len(orb))
    return np.array(pts), np.array(wts)


# Radon's 7-point rule, closed form.
_s15 = np.sqrt(15.0)
_A5, _B5 = (6 - _s15) / 21, (6 + _s15) / 21
_TABLES = {
    1: [(1.0, (1 / 3, 1 / 3, 1 / 3))],
    2: [(1 / 3, (2 / 3, 1 / 6, 1 / 6))],
    4: [(0.223381589678011, (1 - 2 * 0.445948490915965, 0.445948490915965, 0.445948490915965)),
        (0.109951743655322, (1 - 2 * 0.091576213509771, 0.091576213509771, 0.091576213509771))],
    5: [(9 / 40, (1 / 3, 1 / 3, 1 / 3)),
        ((155 - _s15) / 1200, (1 - 2 * _A5, _A5, _A5)),
        ((155 + _s15) / 1200, (1 - 2 * _B5, _B5, _B5))],
}


def _conical_rule(degree: int):
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule, symmetrised over S3."""
    n = (degree + 2) // 2
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_jacobi(n, 0.0, 0.0)
    s = 0.5 * (1 + xj)
    t = 0.5 * (1 + xl)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(wj, wl)
    x = S.ravel()
    y = (T * (1 - S)).ravel()
    bary = np.column_stack([1 - x - y, x, y])
    w = W.ravel() / W.sum()
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    pts = np.concatenate([bary[:, p] for p in perms])
    wts = np.concatenate([w] * 6) / 6
    key = np.round(pts, 13)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inv.ravel(), wts)
    first = np.zeros(len(uniq), dtype=np.int64)
    first[inv.ravel()[::-1]] = np.arange(len(pts))[::-1]
    return pts[first], merged


def _monomial_error(points, weights, degree) -> float:
    x, y = points[:, 1], points[:, 2]
    worst = 0.0
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = 2.0 * factorial(a) * factorial(b) / factorial(a + b + 2)
            approx = np.dot(weights, x ** a * y ** b)
            worst = max(worst, abs(approx - exact) / exact)
    return worst


def validate_rule(points, weights, degree) -> QuadratureRule:
    """Self-test a table; raise :class:`UnsupportedDegree` if it is not exact."""
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0) or abs(weights.sum() - 1) > 1e-14:
        raise UnsupportedDegree("quadrature weights must be positive and sum to one")
    if _monomial_error(points, weights, degree) > 1e-12:
        raise UnsupportedDegree(f"rule is not exact to degree {degree}")
    return QuadratureRule(points, weights, degree)


@lru_cache(maxsize=None)
def quadrature_rule(degree: int) -> QuadratureRule:
    """Symmetric positive rule on the triangle exact to ``degree`` (1..20)."""
    if not 1 <= int(degree) <= 20:
        raise UnsupportedDegree(f"degree {degree} not in 1..20")
    degree = int(degree)
    if degree in _TABLES:
        pts, wts = _table(_TABLES[degree])
    elif degree == 3:
        return quadrature_rule(4)
    else:
        pts, wts = _conical_rule(degree)
    rule = validate_rule(pts, wts, degree)
    for a in (rule.points, rule.weights):
        a.setflags(write=False)
    return rule


@lru_cache(maxsize=None)
def gauss_segment(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points on [0, 1] (weights summing to 1)."""
    n = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w


# adaptive integration ---------------------------------------------------

_CHILDREN = np.array([
    [[1, 0, 0], [.5, .5, 0], [.5, 0, .5]],
    [[.5, .5, 0], [0, 1, 0], [0, .5, .5]],
    [[.5, 0, .5], [0, .5, .5], [0, 0, 1]],
    [[0, .5, .5], [.5, 0, .5], [.5, .5, 0]],
])


def _cell_integrals(func, parent, cell_bary, coords, areas, rule):
    # cell_bary: (C, 3, 3) cell vertices in parent barycentrics
    bary = np.einsum("qi,cij->cqj", rule.points, cell_bary)
    xy = np.einsum("cqj,cjd->cqd", bary, coords[parent])
    vals = func(np.repeat(parent, len(rule.weights)), bary.reshape(-1, 3), xy.reshape(-1, 2))
    vals = np.asarray(vals, dtype=float).reshape(len(parent), -1)
    det = np.abs(np.linalg.det(cell_bary))
    return (vals @ rule.weights) * areas[parent] * det


def integrate_adaptive_batch(func, coords, rel_tol=1e-10, abs_tol=0.0, degree=10,
                             max_depth=20, elements=None, chunk_points=2_000_000,
                             precheck_degree: int | None = 5) -> np.ndarray:
    """Integrate ``func`` over many triangles by adaptive 4-subdivision.

    ``func(elem, bary, xy)`` receives flat arrays of element indices, parent
    barycentric coordinates (n, 3) and physical points (n, 2).  Cells are
    split uniformly into four; a cell's error is the difference between its
    own rule and the sum over its children.  Cells whose error exceeds the
    per-cell share of the budget are split until the summed error drops
    below ``rel_tol * |total| + abs_tol``.  Elements are processed in chunks
    of bounded size, each with its proportional share of the budget.

    With ``precheck_degree`` set, whole elements are first compared against
    that cheaper rule; those agreeing within half the per-element budget are
    accepted without subdivision.  Returns per-element integrals.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    rule = quadrature_rule(degree)
    coords = np.asarray(coords, dtype=float)
    n_el = len(coords)
    elements = np.arange(n_el) if elements is None else np.asarray(elements)
    d1 = coords[:, 1] - coords[:, 0]
    d2 = coords[:, 2] - coords[:, 0]
    areas = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    done = np.zeros(n_el)
    size = max(1, chunk_points // (5 * len(rule.weights)))
    for start in range(0, len(elements), size):
        chunk = elements[start:start + size]
        share = abs_tol * len(chunk) / max(len(elements), 1)
        low = None if precheck_degree is None else quadrature_rule(precheck_degree)
        _adaptive_chunk(func, coords, areas, rule, chunk, rel_tol, share, max_depth, done, low)
    return done


def _adaptive_chunk(func, coords, areas, rule, elements, rel_tol, abs_tol, max_depth, done, low):
    parent = elements.copy()
    cells = np.broadcast_to(np.eye(3), (len(parent), 3, 3)).copy()
    depth = np.zeros(len(parent), dtype=np.int64)
    coarse = _cell_integrals(func, parent, cells, coords, areas, rule)
    accepted = 0.0
    settled_err = 0.0
    if low is not None:
        err = np.abs(coarse - _cell_integrals(func, parent, cells, coords, areas, low))
        budget = rel_tol * abs(coarse.sum()) + abs_tol
        ok = err <= 0.5 * budget / len(err)
        np.add.at(done, parent[ok], coarse[ok])
        accepted = coarse[ok].sum()
        settled_err = err[ok].sum()
        parent, cells, coarse, depth = parent[~ok], cells[~ok], coarse[~ok], depth[~ok]
        if not len(parent):
            return
    while True:
        kids = np.einsum("kab,cbj->ckaj", _CHILDREN, cells).reshape(-1, 3, 3)
        kid_parent = np.repeat(parent, 4)
        kid_vals = _cell_integrals(func, kid_parent, kids, coords, areas, rule).reshape(-1, 4)
        fine = kid_vals.sum(axis=1)
        err = np.abs(fine - coarse)
        total = accepted + fine.sum()
        budget = rel_tol * abs(total) + abs_tol
        if settled_err + err.sum() <= budget:
            np.add.at(done, parent, fine)
            return
        split = err > (budget - settled_err) / max(len(err), 1)
        if not np.any(split):
            split = err >= err.max()
        if np.any(depth[split] + 1 >= max_depth):
            raise MaxDepthExceeded(f"adaptive quadrature exceeded depth {max_depth}")
        np.add.at(done, parent[~split], fine[~split])
        accepted += fine[~split].sum()
        settled_err += err[~split].sum()
        parent = kid_parent.reshape(-1, 4)[split].ravel()
        cells = kids.reshape(-1, 4, 3, 3)[split].reshape(-1, 3, 3)
        coarse = kid_vals[split].ravel()
        depth = np.repeat(depth[split] + 1, 4)


def integrate_adaptive(f, vertices, rel_tol=1e-10, degree=10, max_depth=20) -> float:
    """Integrate ``f(x, y)`` over one triangle given by its 3 vertices."""
    coords = np.asarray(vertices, dtype=float).reshape(1, 3, 2)

    def func(elem, bary, xy):
        return f(xy[:, 0], xy[:, 1])

    return float(integrate_adaptive_batch(func, coords, rel_tol, 0.0, degree, max_depth)[0])
