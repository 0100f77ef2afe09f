"""Mesh construction and P1 assembly."""

import numpy as np
import pytest

from chsav import (AssemblyError, ConfigError, assemble_lumped_mass,
                   assemble_stiffness, assemble_weighted_stiffness,
                   build_friedrichs_keller, build_interval_mesh,
                   lumped_norm, nodal_interpolate)

from _reference import interval_ops


def test_interval_mesh_structure():
    mesh = build_interval_mesh(0.0, 2.0, 8)
    assert mesh.dimension == 1
    assert mesh.n_nodes == 9
    assert mesh.elements.shape == (8, 2)
    assert mesh.grid_shape == (9,)
    np.testing.assert_allclose(mesh.nodes, np.linspace(0.0, 2.0, 9))
    assert mesh.h == pytest.approx(0.25)


def test_interval_mesh_rejects_bad_input():
    with pytest.raises(ConfigError):
        build_interval_mesh(1.0, 1.0, 4)
    with pytest.raises(ConfigError):
        build_interval_mesh(2.0, 1.0, 4)
    with pytest.raises(ConfigError):
        build_interval_mesh(0.0, 1.0, 0)
    with pytest.raises(ConfigError):
        build_interval_mesh(np.nan, 1.0, 4)


def test_square_mesh_structure():
    nx, ny = 4, 3
    mesh = build_friedrichs_keller(nx, ny)
    assert mesh.dimension == 2
    assert mesh.n_nodes == (nx + 1) * (ny + 1)
    assert mesh.elements.shape == (2 * nx * ny, 3)
    assert mesh.grid_shape == (ny + 1, nx + 1)
    assert mesh.h == pytest.approx(np.hypot(1.0 / nx, 1.0 / ny))
    # node k = j*(nx+1) + i sits at (i/nx, j/ny)
    for j in (0, 2):
        for i in (0, 3):
            k = j * (nx + 1) + i
            np.testing.assert_allclose(mesh.nodes[k], [i / nx, j / ny])
    # reshape to the grid recovers x varying along rows
    x_grid = mesh.nodes[:, 0].reshape(mesh.grid_shape)
    np.testing.assert_allclose(x_grid[0], np.linspace(0.0, 1.0, nx + 1))

    with pytest.raises(ConfigError):
        build_friedrichs_keller(0, 3)


def test_triangle_areas_tile_the_square():
    mesh = build_friedrichs_keller(5, 7)
    p = mesh.nodes[mesh.elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    assert np.all(areas > 0.0)
    assert areas.sum() == pytest.approx(1.0, abs=1e-14)


def test_lumped_mass_interval():
    mesh = build_interval_mesh(0.0, 1.0, 2)
    mass = assemble_lumped_mass(mesh)
    np.testing.assert_allclose(mass.diag, [0.25, 0.5, 0.25])
    # total mass equals the domain measure on any interval
    mass2 = assemble_lumped_mass(build_interval_mesh(-1.0, 3.0, 17))
    assert mass2.total == pytest.approx(4.0)


def test_lumped_mass_square_unit_cell():
    # one cell, two triangles of area 1/2, each vertex gets area/3
    mass = assemble_lumped_mass(build_friedrichs_keller(1, 1))
    np.testing.assert_allclose(mass.diag,
                               [1 / 3, 1 / 6, 1 / 6, 1 / 3], atol=1e-15)
    assert mass.total == pytest.approx(1.0)


def test_lumped_mass_helpers():
    mass = assemble_lumped_mass(build_interval_mesh(0.0, 1.0, 4))
    v = np.arange(5.0)
    np.testing.assert_allclose(mass.solve(mass.apply(v)), v)
    assert mass.inner(v, v) == pytest.approx(np.dot(mass.diag * v, v))


def test_stiffness_interval_entries():
    h = 0.25
    S = assemble_stiffness(build_interval_mesh(0.0, 1.0, 4)).toarray()
    assert S[0, 0] == pytest.approx(1.0 / h)
    assert S[2, 2] == pytest.approx(2.0 / h)
    assert S[2, 3] == pytest.approx(-1.0 / h)
    np.testing.assert_allclose(S, S.T)
    np.testing.assert_allclose(S.sum(axis=1), 0.0, atol=1e-13)


def test_stiffness_square_against_direct_assembly():
    """Cross-check the vectorized assembly with a per-element loop that
    obtains the shape function gradients from a 3x3 linear solve."""
    mesh = build_friedrichs_keller(3, 2)
    S = assemble_stiffness(mesh).toarray()
    ref = np.zeros_like(S)
    for tri in mesh.elements:
        pts = mesh.nodes[tri]
        V = np.column_stack([np.ones(3), pts])
        area = 0.5 * abs(np.linalg.det(V))
        # rows of C are the coefficients of each nodal basis function
        C = np.linalg.inv(V).T
        grads = C[:, 1:]
        ref[np.ix_(tri, tri)] += area * grads @ grads.T
    np.testing.assert_allclose(S, ref, atol=1e-13)
    np.testing.assert_allclose(S.sum(axis=1), 0.0, atol=1e-13)


def test_weighted_stiffness_constant_coefficient():
    mesh = build_friedrichs_keller(3, 3)
    S = assemble_stiffness(mesh)
    Sw = assemble_weighted_stiffness(mesh, np.full(mesh.n_nodes, 2.5))
    np.testing.assert_allclose(Sw.toarray(), 2.5 * S.toarray(), atol=1e-13)


def test_weighted_stiffness_interval_quadrature():
    """P1 gradients are elementwise constant, so the exact weighted entry
    is the two-point Gauss integral of the interpolated coefficient times
    the unweighted element matrix."""
    mesh = build_interval_mesh(0.0, 1.0, 6)
    coeff = 1.0 + 0.5 * np.sin(2.0 * np.pi * mesh.nodes) ** 2
    Sw = assemble_weighted_stiffness(mesh, coeff).toarray()
    ref = np.zeros_like(Sw)
    gauss = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    for (i, j) in mesh.elements:
        xl, xr = mesh.nodes[i], mesh.nodes[j]
        he = xr - xl
        s = 0.5 * (gauss + 1.0)  # map to [0, 1]
        c_interp = coeff[i] * (1.0 - s) + coeff[j] * s
        w_mean = 0.5 * c_interp.sum()
        k = w_mean / he * np.array([[1.0, -1.0], [-1.0, 1.0]])
        ref[np.ix_((i, j), (i, j))] += k
    np.testing.assert_allclose(Sw, ref, atol=1e-13)


def test_weighted_stiffness_rejects_bad_coefficient():
    mesh = build_interval_mesh(0.0, 1.0, 4)
    with pytest.raises(AssemblyError):
        assemble_weighted_stiffness(mesh, np.ones(3))
    with pytest.raises(AssemblyError):
        assemble_weighted_stiffness(mesh, np.array([1, 1, 0, 1, 1.0]))
    with pytest.raises(AssemblyError):
        assemble_weighted_stiffness(mesh, np.array([1, 1, np.inf, 1, 1.0]))


def test_nodal_interpolate():
    mesh1 = build_interval_mesh(0.0, 1.0, 4)
    np.testing.assert_allclose(nodal_interpolate(mesh1, lambda x: 2 * x),
                               2 * mesh1.nodes)
    # scalar-valued callables broadcast to every node
    np.testing.assert_allclose(nodal_interpolate(mesh1, lambda x: 3.0),
                               np.full(5, 3.0))
    mesh2 = build_friedrichs_keller(2, 2)
    vals = nodal_interpolate(mesh2, lambda x, y: x + 10 * y)
    np.testing.assert_allclose(
        vals, mesh2.nodes[:, 0] + 10 * mesh2.nodes[:, 1])
    with np.errstate(divide="ignore"), pytest.raises(ValueError):
        nodal_interpolate(mesh1, lambda x: x / (x - 0.5))


def test_lumped_norm_trigonometric_exactness():
    # the lumped rule is the trapezoid rule, which integrates cos^2(pi x)
    # exactly on a uniform grid of the unit interval
    mesh, mass, _ = interval_ops(16)
    phi = np.cos(np.pi * mesh.nodes)
    assert lumped_norm(phi, mass) == pytest.approx(np.sqrt(0.5), abs=1e-12)


def test_lumped_norm_second_order_quadrature():
    errs = []
    for n in (10, 20, 40):
        mesh, mass, _ = interval_ops(n)
        val = lumped_norm(mesh.nodes**2, mass) ** 2
        errs.append(abs(val - 0.2))  # integral of x^4 over [0, 1]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_lumped_norm_shape_mismatch():
    _, mass, _ = interval_ops(4)
    with pytest.raises(ValueError):
        lumped_norm(np.ones(3), mass)
