"""Periodic 1D meshes, cell-centred fields and discrete calculus."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic mesh of ``N`` cells on [0, L)."""

    L: float
    N: int

    def __post_init__(self):
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError("period length L must be positive and finite")
        if int(self.N) != self.N or self.N < 4:
            raise ValueError("cell count N must be an integer >= 4")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        """Right faces of the cells, x_{j+1/2} = (j+1) dx."""
        return (np.arange(self.N) + 1.0) * self.dx

    @property
    def widths(self) -> np.ndarray:
        return np.full(self.N, self.dx)

    @property
    def uniform(self) -> bool:
        return True

    def sample(self, fn) -> "ScalarField":
        return ScalarField(self, np.asarray(fn(self.centers), dtype=float) * np.ones(self.N))


@dataclass(frozen=True, eq=False)
class LagrangianMesh:
    """Periodic mesh with arbitrary positive cell widths.

    ``x_left`` is the position of the left face of cell 0; faces are
    ``x_left + cumsum(widths)``.
    """

    L: float
    widths: np.ndarray
    x_left: float = 0.0

    @property
    def N(self) -> int:
        return len(self.widths)

    @property
    def faces(self) -> np.ndarray:
        return self.x_left + np.cumsum(self.widths)

    @property
    def centers(self) -> np.ndarray:
        return self.faces - 0.5 * self.widths

    @property
    def uniform(self) -> bool:
        return False

    @classmethod
    def from_grid(cls, grid: PeriodicGrid) -> "LagrangianMesh":
        return cls(grid.L, grid.widths.copy(), 0.0)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Cell-centred values on a periodic mesh."""

    grid: object
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.N,):
            raise ValueError(f"expected {self.grid.N} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)

    def __add__(self, other):
        return _binop(self, other, np.add)

    def __sub__(self, other):
        return _binop(self, other, np.subtract)

    def __mul__(self, other):
        return _binop(self, other, np.multiply)

    __rmul__ = __mul__
    __radd__ = __add__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def map(self, fn) -> "ScalarField":
        return ScalarField(self.grid, np.asarray(fn(self.values), dtype=float) * np.ones(self.grid.N))

    def csv_rows(self):
        """(x_j, value) pairs for plotting."""
        return list(zip(self.grid.centers.tolist(), self.values.tolist()))


def _same_grid(a, b) -> bool:
    if a is b:
        return True
    if isinstance(a, PeriodicGrid) and isinstance(b, PeriodicGrid):
        return a == b
    return False


def _binop(f: ScalarField, other, op):
    if isinstance(other, ScalarField):
        if not _same_grid(f.grid, other.grid):
            raise GridMismatchError("fields live on different grids")
        return ScalarField(f.grid, op(f.values, other.values))
    return ScalarField(f.grid, op(f.values, other))


# ---------------------------------------------------------------------------
# calculus
# ---------------------------------------------------------------------------


def ddx(f: ScalarField, scheme: str = "central", velocity: ScalarField | None = None) -> ScalarField:
    """Periodic first derivative.

    ``central`` is second order on uniform grids.  ``upwind`` takes the
    one-sided difference towards the upstream neighbour of ``velocity``
    (left for u > 0, right for u < 0, the central value for u == 0).
    """
    grid = f.grid
    v = f.values
    if grid.uniform:
        dx = grid.dx
        back = (v - np.roll(v, 1)) / dx
        fwd = (np.roll(v, -1) - v) / dx
        central = (np.roll(v, -1) - np.roll(v, 1)) / (2.0 * dx)
    else:
        c = grid.centers
        h_back = np.diff(c, prepend=c[-1] - grid.L)
        h_fwd = np.roll(h_back, -1)
        back = (v - np.roll(v, 1)) / h_back
        fwd = (np.roll(v, -1) - v) / h_fwd
        # second-order weighted combination on nonuniform spacing
        central = (h_back * fwd + h_fwd * back) / (h_back + h_fwd)

    if scheme == "central":
        return ScalarField(grid, central)
    if scheme == "upwind":
        if velocity is None:
            raise ValueError("upwind differencing needs a velocity field")
        if not _same_grid(grid, velocity.grid):
            raise GridMismatchError("velocity lives on a different grid")
        u = velocity.values
        out = np.where(u > 0, back, np.where(u < 0, fwd, central))
        return ScalarField(grid, out)
    raise ValueError(f"unknown scheme {scheme!r}")


def integrate(f: ScalarField) -> float:
    """Midpoint rule; exact for cell-wise constant fields."""
    if f.grid.uniform:
        return float(f.grid.dx * np.sum(f.values))
    return float(np.dot(f.grid.widths, f.values))


def norms(f: ScalarField) -> dict:
    l2 = math.sqrt(integrate(f * f))
    d = ddx(f, "central")
    return {
        "l2": l2,
        "linf": float(np.max(np.abs(f.values))),
        "h1_seminorm": math.sqrt(integrate(d * d)),
    }


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def solve_cyclic_tridiagonal(lower, diag, upper, rhs):
    """Solve the periodic tridiagonal system

        lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]

    with indices taken modulo n, via Sherman-Morrison on a banded LAPACK
    solve.
    """
    from scipy.linalg import solve_banded

    lower = np.asarray(lower, dtype=float)
    diag = np.asarray(diag, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = len(diag)
    if n < 3:
        raise ValueError("cyclic tridiagonal systems need n >= 3")

    alpha = upper[-1]  # couples row n-1 to x[0]
    beta = lower[0]    # couples row 0 to x[n-1]
    gamma = -diag[0] if diag[0] != 0 else -1.0

    b = diag.copy()
    b[0] -= gamma
    b[-1] -= alpha * beta / gamma

    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = b
    ab[2, :-1] = lower[1:]

    u = np.zeros(n)
    u[0] = gamma
    u[-1] = alpha
    sol = solve_banded((1, 1), ab, np.column_stack([rhs, u]), check_finite=True)
    x, z = sol[:, 0], sol[:, 1]
    denom = 1.0 + z[0] + beta * z[-1] / gamma
    if denom == 0:
        raise np.linalg.LinAlgError("singular cyclic tridiagonal system")
    fact = (x[0] + beta * x[-1] / gamma) / denom
    return x - fact * z
