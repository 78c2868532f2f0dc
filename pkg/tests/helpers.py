"""Mesh builders, oracles and brute-force solvers shared by the test modules."""
import numpy as np

from eqflux.mesh import build_mesh, rectangle_mesh

# I_{2/3}(x) e^{-x}, evaluated once with mpmath at 40 digits and frozen here
ALPHA_TWO_THIRDS = [
    (0.01, 0.03206847736848070828),
    (0.1, 0.13623956470126809905),
    (1.0, 0.29707048038646619444),
    (2.5, 0.23789186342064410282),
    (7.0, 0.1485320978051631034),
    (15.0, 0.10231728476034503793),
    (29.9, 0.072717327673202979252),
    (30.1, 0.072476959981534392607),
    (100.0, 0.039855265189633124955),
    (1000.0, 0.012614435533171808584),
]


def two_triangle_square(label="dirichlet", kappa=0.0):
    verts = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
    tris = [(0, 1, 2), (0, 2, 3)]
    marks = [(0, 1, label), (1, 2, label), (2, 3, label), (3, 0, label)]
    return build_mesh(verts, tris, marks, kappa=kappa)


def perturbed_mesh(n, seed, amount=0.25, labels="dirichlet", kappa=1.0):
    """Uniform mesh of the unit square with interior nodes jittered."""
    base = rectangle_mesh(n, n, labels=labels)
    rng = np.random.default_rng(seed)
    v = base.vertices.copy()
    inner = (v[:, 0] > 0) & (v[:, 0] < 1) & (v[:, 1] > 0) & (v[:, 1] < 1)
    v[inner] += rng.uniform(-amount, amount, (inner.sum(), 2)) / n
    marks = [(int(a), int(b), "neumann" if base.edge_labels[e] == 2 else "dirichlet")
             for e, (a, b) in zip(base.boundary_edges, base.edges[base.boundary_edges])]
    return build_mesh(v, base.elements, marks, kappa=kappa)


def nullspace_minimizer(system):
    """Brute-force minimiser of a patch functional.

    Feasible points are parameterised as x0 + Z y with x0 the minimum-norm
    solution of the hard constraints and Z an orthonormal null-space basis;
    the reduced unconstrained quadratic is then solved by least squares.
    """
    import scipy.linalg as sla

    H, g = system.matrix, system.linear
    C, e = system.hard_rows, system.hard_rhs
    n = len(g)
    if len(C):
        x0 = np.linalg.pinv(C) @ e
        Z = sla.null_space(C)
    else:
        x0, Z = np.zeros(n), np.eye(n)
    y = np.linalg.lstsq(Z.T @ H @ Z, Z.T @ (g - H @ x0), rcond=None)[0]
    return x0 + Z @ y, x0, Z
