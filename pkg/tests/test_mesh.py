import numpy as np
import pytest
from hypothesis import given, strategies as st

from eqflux.mesh import (INTERIOR, NEUMANN, NonConforming, bisect, build_mesh, element_metrics,
                         facet_census, node_patch, read_mesh, rectangle_mesh, validate_kappa_condition,
                         write_mesh)
from helpers import perturbed_mesh, two_triangle_square


def test_two_triangle_square_counts(square2):
    assert square2.n_elements == 2
    assert square2.n_edges == 5
    assert np.count_nonzero(square2.edge_labels == INTERIOR) == 1


def test_clockwise_triangle_is_reoriented():
    verts = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
    marks = [(0, 1, "dirichlet"), (1, 2, "dirichlet"), (2, 3, "dirichlet"), (3, 0, "dirichlet")]
    m = build_mesh(verts, [(0, 2, 1), (0, 2, 3)], marks)
    ref = two_triangle_square()
    assert np.all(m.areas > 0)
    assert m.areas == pytest.approx(ref.areas)
    assert m.n_edges == ref.n_edges


def test_hanging_node_rejected():
    verts = [(0.0, 0.0), (2.0, 0.0), (0.0, 2.0), (1.0, 1.0), (2.0, 2.0)]
    tris = [(0, 1, 2), (1, 4, 3)]
    with pytest.raises(NonConforming):
        build_mesh(verts, tris, lambda mids: ["dirichlet"] * len(mids))


def test_right_triangle_metrics():
    m = build_mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)], lambda mids: ["dirichlet"] * len(mids))
    em = element_metrics(m, 0)
    assert em.h == pytest.approx(np.sqrt(2))
    assert em.area == pytest.approx(0.5)
    assert em.rho == pytest.approx(0.2928932, abs=1e-7)
    assert any(np.allclose(nu, (0.0, -1.0)) for nu in em.outward_normals)


def test_equilateral_diameter():
    m = build_mesh([(0, 0), (1, 0), (0.5, np.sqrt(3) / 2)], [(0, 1, 2)],
                   lambda mids: ["dirichlet"] * len(mids))
    assert element_metrics(m, 0).h == pytest.approx(1.0)


def test_interior_star_patch():
    m = rectangle_mesh(2, 2)
    center = int(np.argmin(np.sum((m.vertices - 0.5) ** 2, axis=1)))
    p = node_patch(m, center)
    assert len(p.elements) == 6
    assert len(p.interior_facets) == 6
    assert len(p.ext_facets_no_node) == 6
    assert len(p.neumann_facets) == 0


def test_corner_patch_without_neumann(square2):
    for n in range(4):
        p = node_patch(square2, n)
        assert 1 <= len(p.elements) <= 2
        assert len(p.neumann_facets) == 0


def test_neumann_boundary_node_patch():
    m = rectangle_mesh(2, 2, labels="neumann")
    n = int(np.argmin(np.sum((m.vertices - (0.5, 0.0)) ** 2, axis=1)))
    p = node_patch(m, n)
    assert len(p.neumann_facets) == 2
    for e in p.neumann_facets:
        assert n in m.edges[e]
    for e in p.ext_facets_no_node:
        assert n not in m.edges[e]


def test_bisect_single_triangle():
    m = build_mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)], lambda mids: ["dirichlet"] * len(mids))
    fine = bisect(m, [0])
    assert fine.n_elements == 2
    mid = fine.n_vertices - 1
    assert np.allclose(fine.vertices[mid], (0.5, 0.5))
    assert np.all(np.any(fine.elements == mid, axis=1))


def test_bisect_forces_neighbour(square2):
    assert bisect(square2, [0]).n_elements == 4


def test_bisect_empty_marking_is_identity(square2):
    fine = bisect(square2, [])
    assert fine.n_vertices == square2.n_vertices
    assert fine.n_elements == square2.n_elements


def test_kappa_condition_constant():
    rep = validate_kappa_condition(rectangle_mesh(4, 4, kappa=100.0), 5.0)
    assert rep.worst_ratio == 1.0 and rep.violations == []


def test_kappa_condition_vacuous_for_zero():
    rep = validate_kappa_condition(rectangle_mesh(4, 4, kappa=0.0), 5.0)
    assert rep.worst_ratio == 1.0 and rep.violations == []


def test_kappa_condition_jump():
    m = rectangle_mesh(2, 2, 0, 2, 0, 2)
    kap = np.ones(m.n_elements)
    kap[0] = 10.0
    rep = validate_kappa_condition(m.with_kappa(kap), 5.0)
    assert rep.worst_ratio == pytest.approx(10.0)
    assert any(K == 0 and ratio == pytest.approx(10.0) for K, _, ratio in rep.violations)


def test_ascii_round_trip_is_bit_exact(tmp_path):
    m = perturbed_mesh(5, seed=3, labels=lambda mids: np.where(mids[:, 1] < 1e-12, "neumann", "dirichlet"))
    write_mesh(m, tmp_path / "m.txt")
    back = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.elements, m.elements)
    assert np.array_equal(np.sort(back.edge_labels), np.sort(m.edge_labels))


def _conforming(mesh):
    census = facet_census(mesh)
    return census["interior_two_sided"] and census["boundary_one_sided"] and census["euler"] == 1


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_random_bisection_stays_conforming(seed, sweeps):
    rng = np.random.default_rng(seed)
    m = rectangle_mesh(3, 3, labels=lambda mids: np.where(mids[:, 0] > 0.99, "neumann", "dirichlet"))
    area = m.areas.sum()
    for _ in range(sweeps):
        marked = rng.choice(m.n_elements, size=max(1, m.n_elements // 4), replace=False)
        m = bisect(m, marked)
        assert _conforming(m)
    assert m.areas.sum() == pytest.approx(area, rel=1e-13)
    # boundary labels survive refinement
    right = m.boundary_edges[np.all(m.vertices[m.edges[m.boundary_edges]][:, :, 0] > 0.99, axis=1)]
    assert np.all(m.edge_labels[right] == NEUMANN)


def test_min_angle_over_forty_steps():
    m = rectangle_mesh(4, 4)
    initial = m.min_angles.min()
    rng = np.random.default_rng(7)
    corner = np.array([0.3, 0.7])
    for _ in range(40):
        # adaptive-like marking: elements nearest a point plus a few random ones
        near = np.argsort(np.sum((m.centroids - corner) ** 2, axis=1))[:4]
        marked = np.concatenate([near, rng.choice(m.n_elements, size=3, replace=False)])
        m = bisect(m, marked)
        assert _conforming(m)
    assert m.min_angles.min() >= 0.5 * initial


@given(st.integers(2, 6), st.integers(0, 1000))
def test_patch_covering(n, seed):
    m = perturbed_mesh(n, seed)
    counts = sum(len(node_patch(m, v).elements) for v in range(m.n_vertices))
    assert counts == 3 * m.n_elements


@given(st.integers(2, 6), st.integers(0, 1000))
def test_inradius_bounded_by_half_diameter(n, seed):
    m = perturbed_mesh(n, seed, amount=0.4)
    assert np.all(m.inradii <= m.diameters / 2)
