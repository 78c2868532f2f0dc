import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eqflux.quadrature import (UnsupportedDegree, gauss_segment, integrate_adaptive,
                               integrate_adaptive_batch, quadrature_rule, validate_rule)

UNIT = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]


def monomial_integral(p, q):
    # int over the unit right triangle of x^p y^q
    return math.factorial(p) * math.factorial(q) / math.factorial(p + q + 2)


def test_degree_one_is_centroid():
    r = quadrature_rule(1)
    assert len(r.weights) == 1
    assert r.weights[0] == pytest.approx(1.0)
    assert np.allclose(r.points[0], 1 / 3)


def test_degree_two_quadratics():
    r = quadrature_rule(2)
    assert len(r.weights) == 3
    assert np.allclose(r.weights, 1 / 3)
    xy = r.points @ np.array(UNIT)
    for (p, q), exact in [((2, 0), 1 / 12), ((1, 1), 1 / 24), ((0, 2), 1 / 12)]:
        assert 0.5 * np.sum(r.weights * xy[:, 0] ** p * xy[:, 1] ** q) == pytest.approx(exact, abs=1e-15)


@pytest.mark.parametrize("degree", range(1, 21))
def test_rules_are_exact_and_positive(degree):
    r = quadrature_rule(degree)
    assert np.all(r.weights > 0)
    assert np.all(r.points >= -1e-14)
    xy = r.points @ np.array(UNIT)
    for p in range(degree + 1):
        for q in range(degree + 1 - p):
            approx = 0.5 * np.sum(r.weights * xy[:, 0] ** p * xy[:, 1] ** q)
            assert approx == pytest.approx(monomial_integral(p, q), rel=1e-12, abs=1e-15)


def test_corrupted_table_rejected():
    r = quadrature_rule(4)
    bad = r.weights.copy()
    bad[0] += 1e-3
    bad /= bad.sum()
    with pytest.raises(UnsupportedDegree):
        validate_rule(r.points, bad, 4)


@pytest.mark.parametrize("degree", [0, 21])
def test_out_of_range_degree(degree):
    with pytest.raises(UnsupportedDegree):
        quadrature_rule(degree)


def test_gauss_segment_exactness():
    s, w = gauss_segment(7)
    for k in range(8):
        assert np.sum(w * s ** k) == pytest.approx(1 / (k + 1), rel=1e-14)


def test_adaptive_constant():
    assert integrate_adaptive(lambda x, y: np.ones_like(x), UNIT) == pytest.approx(0.5, rel=1e-15)


def test_adaptive_quadratic():
    assert integrate_adaptive(lambda x, y: x * x, UNIT) == pytest.approx(1 / 12, abs=1e-14)


def test_adaptive_boundary_layer():
    f = lambda x, y: np.exp(-100 * (1 - x))  # noqa: E731
    loose = integrate_adaptive(f, UNIT, rel_tol=1e-10)
    tight = integrate_adaptive(f, UNIT, rel_tol=1e-12)
    # int_0^1 (1 - x) e^{-100(1-x)} dx in closed form
    exact = (1 - 101 * math.exp(-100)) / 100 ** 2
    assert loose == pytest.approx(tight, rel=1e-9)
    assert tight == pytest.approx(exact, rel=1e-11)


@given(st.integers(0, 10_000))
def test_batch_matches_per_element(seed):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(-1, 1, (4, 3, 2))
    k = rng.uniform(1, 30)

    def func(elem, bary, xy):
        return np.exp(-k * np.sum(xy ** 2, axis=1))

    batch = integrate_adaptive_batch(func, coords, rel_tol=1e-11)
    single = [integrate_adaptive(lambda x, y: np.exp(-k * (x * x + y * y)), c, rel_tol=1e-11)
              for c in coords]
    assert np.allclose(batch, single, rtol=1e-9, atol=1e-14)
