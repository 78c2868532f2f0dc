from fractions import Fraction
from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eqflux.estimator import (GUARANTEE_EQUILIBRATED, GUARANTEE_PENALIZED, BOUND_FACTOR, Constants,
                              ZeroError, ZeroKappaTraceConstant, effectivity, equilibration_residual,
                              estimate, estimate_total, functional_bound_ratio, indicator_element,
                              indicator_modified, oscillation, oscillation_element, trace_constants)
from eqflux.fem import P1Solution, project_data, solve
from eqflux.flux import FluxField, reconstruct_flux
from eqflux.mesh import build_mesh, element_metrics, rectangle_mesh
from eqflux.problems import exact_error, get_problem, half_zero_spec, layer_problem_spec
from eqflux.quadrature import quadrature_rule
from eqflux.rt import RT1Basis
from helpers import perturbed_mesh

UNIT = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]


def unit_triangle(kappa=0.0, label="dirichlet"):
    return build_mesh(UNIT, [(0, 1, 2)], lambda mids: [label] * len(mids), kappa=kappa)


def hypotenuse(mesh):
    return int(np.argmax(mesh.local_edge_lengths[0]))


def test_trace_constant_hypotenuse():
    m = unit_triangle(1.0)
    tc = trace_constants(element_metrics(m, 0), 1.0, hypotenuse(m))
    assert tc.c_t ** 2 == pytest.approx(2 * np.sqrt(6), rel=1e-14)
    assert tc.c_t == pytest.approx(2.2133638, abs=1e-7)
    assert tc.m_bar == pytest.approx(0.4501582, abs=1e-7)
    mbar = np.sqrt(2) / np.pi
    assert tc.c_bar ** 2 == pytest.approx(np.sqrt(2) * mbar * (2 * np.sqrt(2) + 2 * mbar), rel=1e-14)
    assert tc.c_bar == pytest.approx(1.5407115, abs=1e-7)


def test_trace_constant_decreasing_in_kappa():
    m = unit_triangle(1.0)
    em = element_metrics(m, 0)
    ct = [trace_constants(em, k, hypotenuse(m)).c_t for k in (1.0, 1e3, 1e6)]
    assert ct[2] < ct[1] < ct[0]


def test_trace_constant_undefined_at_zero_kappa():
    m = unit_triangle(0.0)
    with pytest.raises(ZeroKappaTraceConstant):
        trace_constants(element_metrics(m, 0), 0.0, 0)


def test_oscillation_affine_data_vanishes():
    m = rectangle_mesh(3, 3, kappa=2.0, labels=lambda mid: np.where(mid[:, 0] < 1e-12, "neumann", "dirichlet"))
    data = project_data(m, lambda x, y: 1 + x - 2 * y, lambda x, y: 3 * y - 1)
    assert np.allclose(oscillation(m, data), 0, atol=1e-14)


def test_oscillation_of_x_squared():
    m = unit_triangle(0.0)
    data = project_data(m, lambda x, y: x * x)

    def mono(p):  # int of x^p over the unit triangle
        return Fraction(factorial(p), factorial(p + 2))

    # (x^2 - 4x/5 + 1/10)^2 expanded
    coeffs = {4: 1, 3: Fraction(-8, 5), 2: Fraction(16, 25) + Fraction(1, 5), 1: Fraction(-8, 50),
              0: Fraction(1, 100)}
    norm_sq = sum(c * mono(p) for p, c in coeffs.items())
    assert norm_sq == Fraction(1, 600)
    expected = np.sqrt(2) / np.pi * np.sqrt(float(norm_sq))
    assert oscillation_element(m, data, 0) == pytest.approx(expected, rel=1e-12)


@pytest.fixture(scope="module")
def affine_case():
    kappa = 1.0
    mesh = perturbed_mesh(3, seed=4, labels="neumann", kappa=kappa)
    a, b, c = 0.3, -1.2, 0.7

    def g(x, y):
        nx = np.where(x < 1e-12, -1.0, np.where(x > 1 - 1e-12, 1.0, 0.0))
        ny = np.where(y < 1e-12, -1.0, np.where(y > 1 - 1e-12, 1.0, 0.0))
        return b * nx + c * ny

    data = project_data(mesh, lambda x, y: a + b * x + c * y, g)
    u_h = P1Solution(mesh, a + b * mesh.vertices[:, 0] + c * mesh.vertices[:, 1])
    basis = RT1Basis(mesh)
    tau = FluxField(basis, basis.interpolate(lambda x, y: np.stack([b + 0 * x, c + 0 * y], axis=-1)))
    return mesh, u_h, data, tau


def test_exact_flux_gives_zero_indicator(affine_case):
    mesh, u_h, data, tau = affine_case
    for K in range(mesh.n_elements):
        ind = indicator_element(K, tau, u_h, data)
        assert ind.eps_norm < 1e-13 and ind.r_norm < 1e-12 and ind.eta < 1e-12


@pytest.fixture(scope="module")
def half_zero():
    spec = half_zero_spec(kappa=10.0, n=4)
    mesh = spec.initial_mesh()
    data = project_data(mesh, spec.f, spec.g_neumann)
    u_h = solve(mesh, spec)
    return mesh, u_h, data, reconstruct_flux(u_h, data).flux


def test_zero_kappa_indicator_is_flux_mismatch(half_zero):
    mesh, u_h, data, tau = half_zero
    for K in np.flatnonzero(mesh.kappa == 0):
        ind = indicator_element(K, tau, u_h, data)
        assert ind.eta == ind.eps_norm


def test_modified_indicator_matches_on_positive_kappa(half_zero):
    mesh, u_h, data, tau = half_zero
    for K in np.flatnonzero(mesh.kappa > 0):
        assert indicator_modified(K, tau, u_h, data, 1e-8, 1e-8).eta == indicator_element(K, tau, u_h, data).eta


def test_modified_indicator_with_equilibrated_flux(half_zero):
    mesh, u_h, data, tau = half_zero
    for K in np.flatnonzero(mesh.kappa == 0):
        ind = indicator_modified(K, tau, u_h, data, 1.49e-8, 1.49e-8)
        assert ind.eta == pytest.approx(ind.eps_norm, rel=1e-8)


def test_modified_indicator_perturbed_flux(half_zero):
    mesh, u_h, data, tau = half_zero
    K = int(np.flatnonzero(mesh.kappa == 0)[0])
    coefs = tau.coefficients.copy()
    coefs[K, 6] += 1.0
    bumped = FluxField(tau.basis, coefs)
    k0 = z0 = 1e-3
    ind = indicator_modified(K, bumped, u_h, data, k0, z0)
    # recompute the three norms by independent degree-10 quadrature
    rule = quadrature_rule(10)
    xy = rule.points @ mesh.coords[K]
    w = rule.weights * mesh.areas[K]
    vals = np.einsum("qjd,j->qd", tau.basis.values(K, xy), coefs[K])
    div = tau.basis.divergences(K, xy) @ coefs[K]
    eps_sq = np.sum(w * np.sum((vals - u_h.gradients[K]) ** 2, axis=1))
    res = data.f_proj[K] @ rule.points.T + div
    r_sq = np.sum(w * res ** 2)
    nsq = np.sum(ind.neumann_terms ** 2)
    assert ind.eta == pytest.approx(np.sqrt(eps_sq + r_sq / k0 ** 2 + nsq / z0 ** 2), rel=1e-10)
    assert ind.eta > indicator_modified(K, tau, u_h, data, k0, z0).eta


def test_residual_norm_against_quadrature():
    spec = layer_problem_spec(30.0, n=4)
    mesh = spec.initial_mesh()
    data = project_data(mesh, spec.f, spec.g_neumann)
    u_h = solve(mesh, spec)
    tau = reconstruct_flux(u_h, data).flux
    rule = quadrature_rule(10)
    for K in range(0, mesh.n_elements, 7):
        ind = indicator_element(K, tau, u_h, data)
        xy = rule.points @ mesh.coords[K]
        div = tau.basis.divergences(K, xy) @ tau.coefficients[K]
        res = (data.f_proj[K] - mesh.kappa[K] ** 2 * u_h.element_values[K]) @ rule.points.T + div
        assert ind.r_norm == pytest.approx(np.sqrt(np.sum(rule.weights * res ** 2) * mesh.areas[K]), rel=1e-11)
        assert np.isfinite(ind.eta) and ind.eta >= 0


def test_totals():
    assert estimate_total(np.zeros(4), np.zeros(4)).total == 0.0
    assert estimate_total([3.0], [1.0]).total == pytest.approx(4.0)
    rep = estimate_total([3.0, 4.0], [0.0, 0.0], "penalized", Constants(None, None, 1e-8, 1e-8))
    assert rep.prefactor == 1.0 and rep.total == pytest.approx(5.0)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=20), st.integers(0, 19), st.floats(0, 1))
def test_total_is_monotone(eta, k, bump):
    eta = np.array(eta)
    osc = eta[::-1] * 0.1
    k = k % len(eta)
    base = estimate_total(eta, osc).total
    up = eta.copy()
    up[k] += bump
    assert estimate_total(up, osc).total >= base
    osc2 = osc.copy()
    osc2[k] += bump
    assert estimate_total(eta, osc2).total >= base


def test_equilibration_constrained_vs_penalized(half_zero):
    mesh, u_h, data, tau = half_zero
    rep = equilibration_residual(tau, u_h, data)
    assert rep.equilibrated
    pen = reconstruct_flux(u_h, data, "penalized", 1e-8, 1e-8).flux
    rep_p = equilibration_residual(pen, u_h, data)
    assert 0 < rep_p.max_residual < 1e-5 * rep_p.scale
    full = estimate(u_h, data, "penalized", Constants(1.0, 1.0, 1e-8, 1e-8))
    assert full.guarantee == GUARANTEE_PENALIZED
    assert estimate(u_h, data).guarantee == GUARANTEE_EQUILIBRATED


def test_equilibration_trivial():
    mesh = rectangle_mesh(2, 2, kappa=0.0)
    data = project_data(mesh, lambda x, y: 0 * x)
    u_h = P1Solution(mesh, np.zeros(mesh.n_vertices))
    tau = FluxField(RT1Basis(mesh), np.zeros((mesh.n_elements, 8)))
    assert equilibration_residual(tau, u_h, data).max_residual == 0.0


@pytest.mark.parametrize("name,params", [("layer", {"kappa": 10.0, "n": 8}),
                                         ("sinsin", {"kappa": 1.0, "n": 8}),
                                         ("example1", {"kappa": 10.0, "boundary_segments": 16})])
def test_guaranteed_bound_and_minimizer_bound(name, params):
    spec = get_problem(name, **params)
    mesh = spec.initial_mesh()
    data = project_data(mesh, spec.f, spec.g_neumann)
    u_h = solve(mesh, spec)
    err = exact_error(u_h, spec)
    for mode in ("constrained", "penalized"):
        rep = estimate(u_h, data, mode, spec.constants())
        assert rep.total >= err * (1 - 1e-8)
        assert np.nanmax(functional_bound_ratio(rep, mesh)) <= 1.0
    assert BOUND_FACTOR == 12


def test_penalized_bound_without_galerkin_orthogonality():
    spec = layer_problem_spec(10.0, n=8)
    mesh = spec.initial_mesh()
    data = project_data(mesh, spec.f, spec.g_neumann)
    u_h = solve(mesh, spec)
    rng = np.random.default_rng(11)
    free = np.abs(np.abs(mesh.vertices[:, 0]) - 1) > 1e-12
    for _ in range(3):
        v = u_h.values.copy()
        v[free] *= 1 + 0.1 * rng.uniform(-1, 1, free.sum())
        noisy = P1Solution(mesh, v)
        rep = estimate(noisy, data, "penalized", spec.constants())
        assert rep.total >= exact_error(noisy, spec, method="quadrature")


def test_coincidence_without_neumann_or_zero_kappa():
    spec = get_problem("sinsin", kappa=100.0, n=8)
    mesh = spec.initial_mesh()
    data = project_data(mesh, spec.f)
    u_h = solve(mesh, spec)
    c = estimate(u_h, data, "constrained")
    p = estimate(u_h, data, "penalized")
    assert p.total == pytest.approx(c.total, rel=1e-12)


def test_effectivity():
    rep = estimate_total([2.0], [0.0])
    assert effectivity(rep, 2.0) == 1.0
    with pytest.raises(ZeroError):
        effectivity(rep, 0.0)
