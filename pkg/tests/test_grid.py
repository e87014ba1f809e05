import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mflab.grid import (GridMismatchError, LagrangianMesh, PeriodicGrid, ScalarField, ddx, integrate,
                        norms, solve_cyclic_tridiagonal)


def sine(grid, mode=1):
    return grid.sample(lambda x: np.sin(2 * np.pi * mode * x / grid.L))


def test_grid_geometry():
    g = PeriodicGrid(2.0, 8)
    assert g.dx == 0.25
    np.testing.assert_allclose(g.centers, 0.125 + 0.25 * np.arange(8))
    assert g.faces[-1] == 2.0


@pytest.mark.parametrize("L,N", [(0.0, 8), (-1.0, 8), (1.0, 3), (1.0, 4.5), (math.inf, 8)])
def test_invalid_grids(L, N):
    with pytest.raises(ValueError):
        PeriodicGrid(L, N)


def test_field_rejects_bad_values():
    g = PeriodicGrid(1.0, 4)
    with pytest.raises(ValueError):
        ScalarField(g, np.ones(5))
    with pytest.raises(ValueError):
        ScalarField(g, np.array([1.0, np.nan, 1.0, 1.0]))


def test_arithmetic_requires_matching_grids():
    a = PeriodicGrid(1.0, 8).sample(lambda x: x)
    b = PeriodicGrid(1.0, 16).sample(lambda x: x)
    with pytest.raises(GridMismatchError):
        a + b
    c = a * 2 - a
    np.testing.assert_allclose(c.values, a.values)
    np.testing.assert_allclose((-a).values, -a.values)


def test_derivative_of_constant_vanishes():
    g = PeriodicGrid(1.0, 16)
    f = g.sample(lambda x: 3.0 + 0 * x)
    assert np.all(ddx(f).values == 0)
    assert np.all(ddx(f, "upwind", velocity=f).values == 0)


def test_central_derivative_is_second_order():
    errs = []
    for N in (32, 64, 128):
        g = PeriodicGrid(1.0, N)
        d = ddx(sine(g)).values
        errs.append(np.max(np.abs(d - 2 * np.pi * np.cos(2 * np.pi * g.centers))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.01)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.01)


def test_upwind_picks_side_by_velocity_sign():
    g = PeriodicGrid(1.0, 4)
    f = ScalarField(g, np.array([0.0, 1.0, 4.0, 9.0]))
    vel = ScalarField(g, np.array([1.0, -1.0, 0.0, 1.0]))
    d = ddx(f, "upwind", velocity=vel).values
    assert d[0] == (0.0 - 9.0) / 0.25
    assert d[1] == (4.0 - 1.0) / 0.25
    assert d[2] == (9.0 - 1.0) / 0.5
    assert d[3] == (9.0 - 4.0) / 0.25
    with pytest.raises(ValueError):
        ddx(f, "upwind")
    with pytest.raises(ValueError):
        ddx(f, "spectral")


def test_nonuniform_central_is_exact_for_linear_data():
    widths = np.array([0.1, 0.3, 0.2, 0.15, 0.25])
    mesh = LagrangianMesh(1.0, widths)
    x = mesh.centers
    # periodic sawtooth is linear away from the wrap
    f = ScalarField(mesh, 2.0 * x)
    d = ddx(f).values
    np.testing.assert_allclose(d[1:-1], 2.0, rtol=1e-13)


def test_sine_norms():
    g = PeriodicGrid(1.0, 64)
    n = norms(sine(g))
    assert n["l2"] == pytest.approx(1 / math.sqrt(2), rel=1e-14)
    assert n["linf"] == pytest.approx(1.0, abs=2e-3)
    assert n["h1_seminorm"] == pytest.approx(math.sqrt(2) * math.pi, rel=5e-3)


def test_integrate_uses_widths():
    mesh = LagrangianMesh(1.0, np.array([0.5, 0.25, 0.25]))
    assert integrate(ScalarField(mesh, np.array([1.0, 2.0, 4.0]))) == 2.0
    assert integrate(PeriodicGrid(3.0, 6).sample(lambda x: 1 + 0 * x)) == 3.0


def dense_cyclic(lower, diag, upper):
    n = len(diag)
    A = np.diag(diag)
    for i in range(n):
        A[i, (i - 1) % n] += lower[i]
        A[i, (i + 1) % n] += upper[i]
    return A


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 40), st.integers(0, 2**31 - 1))
def test_cyclic_solve_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    lower, upper = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
    diag = 2.5 + rng.uniform(0, 1, n)
    rhs = rng.normal(size=n)
    x = solve_cyclic_tridiagonal(lower, diag, upper, rhs)
    ref = np.linalg.solve(dense_cyclic(lower, diag, upper), rhs)
    np.testing.assert_allclose(x, ref, rtol=1e-10, atol=1e-12)


def test_cyclic_solve_periodic_laplacian_with_shift():
    n = 50
    x = solve_cyclic_tridiagonal(-np.ones(n), 2.1 * np.ones(n), -np.ones(n), np.ones(n))
    np.testing.assert_allclose(x, 10.0, rtol=1e-12)
    with pytest.raises(ValueError):
        solve_cyclic_tridiagonal([1, 1], [2, 2], [1, 1], [1, 1])
