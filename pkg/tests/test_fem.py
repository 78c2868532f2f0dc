from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from eqflux.fem import (FunctionField, P1Solution, assemble, dofmap, element_energy_sq,
                        energy_norm, galerkin_residual, global_matrix, pcg, project_affine_element,
                        project_affine_facet, project_data, solve, solve_cg)
from eqflux.mesh import build_mesh, rectangle_mesh
from eqflux.problems import exact_error, sinsin_spec
from eqflux.quadrature import quadrature_rule
from helpers import perturbed_mesh, two_triangle_square

UNIT = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])


def problem(f, g=None):
    return SimpleNamespace(f=f, g_neumann=g, dirichlet_value=0.0)


def unit_triangle(kappa=0.0):
    return build_mesh(UNIT, [(0, 1, 2)], lambda mids: ["dirichlet"] * len(mids), kappa=kappa)


def test_zero_data_pure_neumann():
    mesh = two_triangle_square("neumann", kappa=1.0)
    system, _ = assemble(mesh, problem(lambda x, y: 0 * x, lambda x, y: 0 * x))
    assert np.all(system.rhs == 0)
    assert np.all(solve_cg(system).values == 0)


def test_constant_solution_reproduced():
    mesh = two_triangle_square("neumann", kappa=1.0)
    u = solve(mesh, problem(lambda x, y: 1 + 0 * x, lambda x, y: 0 * x))
    assert np.allclose(u.values, 1.0, atol=1e-12, rtol=0)


def test_sinsin_energy_error_first_order():
    spec = sinsin_spec(kappa=1.0)
    errs, hs = [], []
    for n in (8, 16, 32):
        mesh = rectangle_mesh(n, n, kappa=1.0)
        errs.append(exact_error(solve(mesh, spec), spec))
        hs.append(1 / n)
    rates = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert np.all(np.abs(rates - 1) < 0.1)
    assert np.all(np.diff(errs) < 0)


def test_cg_scalar():
    res = pcg(sp.csr_matrix([[2.0]]), np.array([4.0]))
    assert res.x == pytest.approx([2.0])
    assert res.iterations == 1


def test_cg_identity():
    b = np.arange(1.0, 6.0)
    assert np.allclose(pcg(sp.identity(5, format="csr"), b).x, b)


def test_cg_matches_dense_solver():
    mesh = rectangle_mesh(8, 8, kappa=0.0)
    system, _ = assemble(mesh, problem(lambda x, y: np.sin(3 * x) + y))
    x = pcg(system.matrix, system.rhs, rel_tol=1e-13).x
    ref = np.linalg.solve(system.matrix.toarray(), system.rhs)
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


def test_galerkin_residual_after_solve():
    spec = sinsin_spec(kappa=3.0)
    mesh = perturbed_mesh(8, seed=1, kappa=3.0)
    u = solve(mesh, spec)
    system, _ = assemble(mesh, spec)
    assert galerkin_residual(u, spec) <= 1e-10 * np.max(np.abs(system.rhs))


def test_galerkin_residual_detects_perturbation():
    spec = sinsin_spec(kappa=1.0)
    mesh = rectangle_mesh(4, 4, kappa=1.0)
    u = solve(mesh, spec)
    node = int(np.argmin(np.sum((mesh.vertices - 0.5) ** 2, axis=1)))
    bumped = u.values.copy()
    bumped[node] += 1.0
    column = global_matrix(mesh)[:, [node]].toarray().ravel()
    expected = np.max(np.abs(column[dofmap(mesh).free]))
    got = galerkin_residual(P1Solution(mesh, bumped), spec)
    assert got == pytest.approx(expected, rel=1e-8)


def test_zero_problem_residual():
    mesh = rectangle_mesh(3, 3, kappa=2.0)
    prob = problem(lambda x, y: 0 * x)
    assert galerkin_residual(solve(mesh, prob), prob) == 0.0


def test_nonzero_dirichlet_rejected():
    prob = SimpleNamespace(f=lambda x, y: 0 * x, g_neumann=None, dirichlet_value=1.0)
    with pytest.raises(ValueError):
        assemble(rectangle_mesh(2, 2), prob)


def test_affine_projection_fixes_affine():
    c = project_affine_element(lambda x, y: 2 - 3 * x + 0.5 * y, UNIT)
    assert np.allclose(c, [2, -3, 0.5], atol=1e-13)


def test_affine_projection_of_x_squared():
    c = project_affine_element(lambda x, y: x * x, UNIT)
    assert np.allclose(c, [-0.1, 0.8, 0.0], atol=1e-13)


def test_projection_of_indicator_is_orthogonal():
    f = lambda x, y: (x < 0.5 - y + 0.2).astype(float)  # noqa: E731
    c = project_affine_element(f, UNIT)
    rule = quadrature_rule(10)
    xy = rule.points @ UNIT
    resid = f(xy[:, 0], xy[:, 1]) - (c[0] + c[1] * xy[:, 0] + c[2] * xy[:, 1])
    # orthogonality holds for the discrete inner product that defines the projection
    for q in (np.ones(len(xy)), xy[:, 0], xy[:, 1]):
        assert abs(np.sum(rule.weights * resid * q)) < 1e-14


def test_facet_projection():
    a, b = (0.0, 0.0), (1.0, 0.0)
    assert np.allclose(project_affine_facet(lambda s: 3 - 2 * s, a, b), [3, -2], atol=1e-14)
    assert np.allclose(project_affine_facet(lambda s: s * s, a, b), [-1 / 6, 1.0], atol=1e-14)
    assert np.allclose(project_affine_facet(lambda s: 0 * s, a, b), [0, 0])


@given(st.lists(st.floats(-5, 5), min_size=15, max_size=15), st.integers(0, 100))
def test_projection_idempotent_and_orthogonal(coefs, seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(-1, 1, (3, 2))
    d1, d2 = P[1] - P[0], P[2] - P[0]
    if abs(d1[0] * d2[1] - d1[1] * d2[0]) < 0.05:
        return
    powers = [(p, q) for p in range(5) for q in range(5 - p)]

    def f(x, y):
        return sum(c * x ** p * y ** q for c, (p, q) in zip(coefs, powers))

    c1 = project_affine_element(f, P)
    c2 = project_affine_element(lambda x, y: c1[0] + c1[1] * x + c1[2] * y, P)
    assert np.allclose(c1, c2, atol=1e-13 * max(1.0, np.max(np.abs(c1))))
    rule = quadrature_rule(10)
    xy = rule.points @ P
    resid = f(xy[:, 0], xy[:, 1]) - (c1[0] + c1[1] * xy[:, 0] + c1[2] * xy[:, 1])
    scale = max(1.0, np.max(np.abs(f(xy[:, 0], xy[:, 1]))))
    for q in (1.0, xy[:, 0], xy[:, 1]):
        assert abs(np.sum(rule.weights * resid * q)) < 1e-12 * scale


def test_energy_norm_examples():
    m1 = unit_triangle(kappa=1.0)
    zero = FunctionField(lambda x, y: 0 * x, lambda x, y: np.zeros((len(x), 2)))
    assert energy_norm(zero, m1) == 0.0
    v = FunctionField(lambda x, y: x, lambda x, y: np.column_stack([np.ones_like(x), 0 * x]))
    assert energy_norm(v, m1) == pytest.approx(np.sqrt(7 / 12), rel=1e-14)
    assert energy_norm(v, unit_triangle(kappa=0.0)) == pytest.approx(np.sqrt(0.5), rel=1e-14)


@given(st.integers(0, 1000))
def test_energy_norm_is_sum_of_element_parts(seed):
    rng = np.random.default_rng(seed)
    mesh = perturbed_mesh(4, seed, kappa=1.0).with_kappa(rng.uniform(0, 5, 32))
    a, b = rng.uniform(-2, 2, 2)
    field = FunctionField(lambda x, y: np.sin(a * x) * np.cos(b * y),
                          lambda x, y: np.column_stack([a * np.cos(a * x) * np.cos(b * y),
                                                        -b * np.sin(a * x) * np.sin(b * y)]))
    parts = element_energy_sq(field, mesh)
    assert energy_norm(field, mesh) ** 2 == pytest.approx(parts.sum(), rel=1e-14)


def test_data_projection_shapes():
    mesh = rectangle_mesh(3, 3, labels=lambda mids: np.where(mids[:, 1] < 1e-12, "neumann", "dirichlet"))
    data = project_data(mesh, lambda x, y: x + y, lambda x, y: 1 + x)
    assert data.f_proj.shape == (mesh.n_elements, 3)
    assert data.g_proj.shape == (3, 2)
    assert np.allclose(data.f_osc, 0, atol=1e-14)
    assert np.allclose(data.g_osc, 0, atol=1e-14)
