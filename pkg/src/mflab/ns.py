"""Fine-scale barotropic Navier-Stokes with density-dependent viscosity.

The solver works in Lagrangian mass coordinates on a periodic staggered
mesh: densities live in cells whose masses never change, velocities live on
the faces between cells.  One step solves, by Newton iteration,

    M_f (u_f^{n+1} - u_f^n) = dt (sigma_{j+1} - sigma_j),
    sigma_j = mu(rho_j^{n+1}) du_j / dx_j^{n+1} - p(rho_j^{n+1}),
    dx_j^{n+1} = dx_j^n + dt du_j,   rho_j^{n+1} = m_j / dx_j^{n+1},

with du_j = u_{j+1/2} - u_{j-1/2}.  Mass and momentum are conserved to
round-off, density interfaces are never smeared, and the convexity of the
internal energy gives the discrete energy inequality

    E^{n+1} + dt sum_j mu_j du_j^2 / dx_j^{n+1} <= E^n

with the kinetic energy carried by the face masses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .constitutive import (ConstitutiveLaws, bd_potential, energy_potential, kappa,
                           validate_laws)
from .grid import (LagrangianMesh, PeriodicGrid, ScalarField, ddx, integrate,
                   solve_cyclic_tridiagonal)


class SolverError(RuntimeError):
    pass


class VacuumError(SolverError):
    """Raised when a step would drive a cell density to (near) vacuum."""

    def __init__(self, cell: int, rho: float):
        super().__init__(f"vacuum approach: density {rho:.3e} in cell {cell}")
        self.cell = cell
        self.rho = rho


@dataclass(frozen=True, eq=False)
class NSState:
    """State at one instant.

    ``u[j]`` is the velocity of the right face of cell ``j`` (the face
    shared with cell ``j+1``, periodically).
    """

    time: float
    mesh: LagrangianMesh
    rho: np.ndarray
    u: np.ndarray
    dissipation_integral: float = 0.0

    @property
    def L(self) -> float:
        return self.mesh.L

    @property
    def N(self) -> int:
        return self.mesh.N

    @property
    def cell_mass(self) -> np.ndarray:
        return self.rho * self.mesh.widths

    @property
    def face_mass(self) -> np.ndarray:
        m = self.cell_mass
        return 0.5 * (m + np.roll(m, -1))

    @property
    def rho_field(self) -> ScalarField:
        return ScalarField(self.mesh, self.rho)

    def u_centers(self) -> ScalarField:
        return ScalarField(self.mesh, 0.5 * (self.u + np.roll(self.u, 1)))

    def du(self) -> np.ndarray:
        """Velocity jump across each cell."""
        return self.u - np.roll(self.u, 1)

    def dudx(self) -> np.ndarray:
        return self.du() / self.mesh.widths

    def mass(self) -> float:
        return float(np.sum(self.cell_mass))

    def momentum(self) -> float:
        return float(np.dot(self.face_mass, self.u))


def initial_state(rho0: ScalarField, u0, time: float = 0.0) -> NSState:
    """Lagrangian state from data on a uniform grid.

    ``u0`` is either a callable sampled at the cell faces or a cell-centred
    field, averaged onto the faces.
    """
    grid = rho0.grid
    if not isinstance(grid, PeriodicGrid):
        raise TypeError("initial data must live on a uniform PeriodicGrid")
    if callable(u0):
        uf = np.asarray(u0(grid.faces), dtype=float) * np.ones(grid.N)
    else:
        if u0.grid != grid:
            raise ValueError("rho0 and u0 must share a grid")
        uf = 0.5 * (u0.values + np.roll(u0.values, -1))
    if np.any(~(rho0.values > 0)):
        raise ValueError("initial density must be strictly positive")
    return NSState(time, LagrangianMesh.from_grid(grid), rho0.values.copy(), uf, 0.0)


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


def _stress(laws, m, dx0, d, dt):
    X = dx0 + dt * d
    r = m / X
    mu = laws.mu(r)
    sigma = mu * d / X - laws.p(r)
    dsigma = mu * dx0 / X**2 - laws.dmu(r) * r * dt * d / X**2 + laws.dp(r) * r * dt / X
    return X, r, mu, sigma, dsigma


def ns_step(state: NSState, laws: ConstitutiveLaws, dt: float,
            forcing: Optional[Callable] = None, vacuum_floor: float = 1e-10,
            max_newton: int = 50) -> NSState:
    """Advance one implicit step of length ``dt``.

    ``forcing(t, state)`` may return a body acceleration on the faces; it is
    evaluated at the new time and only used for manufactured-solution tests.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    m = state.cell_mass
    M = state.face_mass
    dx0 = state.mesh.widths
    un = state.u
    rhs_force = np.zeros_like(un) if forcing is None else dt * M * np.asarray(forcing(state.time + dt, state))

    def residual(u):
        d = u - np.roll(u, 1)
        X, r, mu, sigma, dsigma = _stress(laws, m, dx0, d, dt)
        R = M * (u - un) - dt * (np.roll(sigma, -1) - sigma) - rhs_force
        return R, d, X, dsigma

    u = un.copy()
    if not np.all(dx0 + dt * (u - np.roll(u, 1)) > 0):
        # the old velocity would invert a cell; start from rigid translation
        u = np.full_like(un, np.dot(M, un) / np.sum(M))
    R, d, X, dsig = residual(u)
    scale = float(np.max(M)) * (1.0 + float(np.max(np.abs(un)))) + float(np.max(np.abs(rhs_force)))
    converged = False
    for _ in range(max_newton):
        S_next = np.roll(dsig, -1)
        diag = M + dt * (S_next + dsig)
        upper = -dt * S_next
        lower = -dt * dsig
        try:
            delta = solve_cyclic_tridiagonal(lower, diag, upper, -R)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"linear solve failed: {exc}") from exc
        lam = 1.0
        while True:
            trial = u + lam * delta
            X_trial = dx0 + dt * (trial - np.roll(trial, 1))
            if np.all(X_trial > 0):
                break
            if lam < 1e-6:
                j = int(np.argmax(X_trial <= 0))
                raise SolverError(f"cell {j} collapses within the step; reduce the time step")
            lam *= 0.5
        u = trial
        R, d, X, dsig = residual(u)
        if not np.all(np.isfinite(R)):
            raise SolverError("non-finite residual in Newton iteration")
        step = float(np.max(np.abs(lam * delta)))
        if step <= 1e-15 * (1.0 + float(np.max(np.abs(u)))) or float(np.max(np.abs(R))) <= 4e-16 * scale:
            converged = True
            break
    if not converged:
        raise SolverError("Newton iteration did not converge")

    rho = m / X
    if np.any(rho <= vacuum_floor):
        j = int(np.argmax(rho <= vacuum_floor))
        raise VacuumError(j, float(rho[j]))

    mu = laws.mu(rho)
    diss = dt * float(np.sum(mu * d * d / X))
    mesh = LagrangianMesh(state.L, X, state.mesh.x_left + dt * u[-1])
    return NSState(state.time + dt, mesh, rho, u, state.dissipation_integral + diss)


def stable_dt(state: NSState, laws: ConstitutiveLaws, cfl: float = 0.5,
              dt_max: float = 1e-2) -> float:
    """Acoustic/advective step limit; viscosity is implicit and imposes none."""
    if not (0 < cfl <= 1):
        raise ValueError("cfl must lie in (0, 1]")
    c = np.sqrt(np.maximum(laws.dp(state.rho), 0.0))
    speed = np.maximum(np.abs(state.u), np.abs(np.roll(state.u, 1))) + c
    with np.errstate(divide="ignore"):
        dt = cfl * np.min(np.where(speed > 0, state.mesh.widths / speed, np.inf))
    return float(min(dt, dt_max))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def effective_flux(state: NSState, laws: ConstitutiveLaws) -> ScalarField:
    """z = mu(rho) du/dx - p(rho), cell-wise."""
    z = laws.mu(state.rho) * state.dudx() - laws.p(state.rho)
    return ScalarField(state.mesh, z)


def energy_report(state: NSState, laws: ConstitutiveLaws) -> dict:
    kinetic = 0.5 * float(np.dot(state.face_mass, state.u**2))
    potential = integrate(ScalarField(state.mesh, energy_potential(laws, state.rho)))
    return {
        "kinetic": kinetic,
        "potential": potential,
        "dissipation": state.dissipation_integral,
        "total_plus_dissipation": kinetic + potential + state.dissipation_integral,
    }


def _face_spacing(state: NSState) -> np.ndarray:
    w = state.mesh.widths
    return 0.5 * (w + np.roll(w, -1))


def bd_gradient(state: NSState, laws: ConstitutiveLaws, gradient: str = "potential") -> np.ndarray:
    """d/dx phi(rho) on the faces.

    ``potential`` differences phi(rho) directly; ``chain`` uses
    phi'(rho) d rho/dx with phi' = mu/rho^2 at the face-averaged density.
    """
    h = _face_spacing(state)
    rho = state.rho
    if gradient == "potential":
        phi = bd_potential(laws, rho)
        return (np.roll(phi, -1) - phi) / h
    if gradient == "chain":
        rf = 0.5 * (rho + np.roll(rho, -1))
        return laws.mu(rf) / rf**2 * (np.roll(rho, -1) - rho) / h
    raise ValueError(f"unknown gradient form {gradient!r}")


def haspot_v(state: NSState, laws: ConstitutiveLaws) -> np.ndarray:
    """v = u + d/dx phi(rho) on the faces."""
    return state.u + bd_gradient(state, laws)


def bd_entropy(state: NSState, laws: ConstitutiveLaws, gradient: str = "potential") -> float:
    """int rho |u + d/dx phi(rho)|^2 / 2 + q(rho)."""
    if np.any(~(state.rho > 0)):
        raise ValueError("BD entropy needs a strictly positive density")
    v = state.u + bd_gradient(state, laws, gradient)
    kin = 0.5 * float(np.dot(state.face_mass, v**2))
    return kin + integrate(ScalarField(state.mesh, energy_potential(laws, state.rho)))


def diagnostics_row(state: NSState, laws: ConstitutiveLaws) -> dict:
    e = energy_report(state, laws)
    return {
        "t": state.time,
        "kinetic": e["kinetic"],
        "potential": e["potential"],
        "dissipation": e["dissipation"],
        "bd_entropy": bd_entropy(state, laws),
        "max_haspot_v": float(np.max(np.abs(haspot_v(state, laws)))),
        "min_rho": float(np.min(state.rho)),
        "max_rho": float(np.max(state.rho)),
    }


# ---------------------------------------------------------------------------
# time-horizon constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HorizonEstimate:
    K_u0: float
    K_d0: float
    T0_rho: float
    T0: float
    T0_u: float
    T0_u_computed: bool = False
    E_c0: float = 0.0
    K_kappa: float = 0.0
    K_mu: float = 0.0
    K_p: float = 0.0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _max_on(fn, lo, hi, samples=2001):
    s = np.linspace(lo, hi, samples)
    return float(np.max(fn(s)))


def horizon_estimate(rho0: ScalarField, u0: ScalarField, laws: ConstitutiveLaws) -> HorizonEstimate:
    """Explicit constants of the short-time a priori bounds.

    The horizon from the velocity-gradient bound is only given
    implicitly, so ``T0_u`` is set to ``T0_rho`` and flagged as such.
    """
    rlo = float(np.min(rho0.values))
    rhi = float(np.max(rho0.values))
    if rlo <= 0:
        raise ValueError("initial density must be strictly positive")
    report = validate_laws(laws, (0.0 if laws.mode == "strict" else 0.5 * rlo, 2.0 * rhi))
    if not report.admissible:
        raise ValueError(f"laws are not admissible: {report.violations[0]}")
    mu0 = laws.mu0
    lo, hi = 0.5 * rlo, 2.0 * rhi
    if _max_on(lambda s: -laws.mu(s), lo, hi) > -mu0:
        raise ValueError("viscosity drops below mu0 on the density range of the estimate")
    L = rho0.grid.L

    K_kappa = _max_on(lambda s: kappa(laws, s), lo, hi)
    K_mu = _max_on(laws.mu, lo, hi)
    K_p = _max_on(laws.p, lo, hi)

    dudx = ddx(u0, "central").values
    flux = np.sqrt(laws.mu(rho0.values)) * dudx - kappa(laws, rho0.values)
    flux_norm2 = integrate(ScalarField(rho0.grid, flux**2))
    K_u0 = 36.0 * (1.0 / mu0 + rhi) * (flux_norm2 + 1.0 + L * K_kappa**2)

    q_max = _max_on(lambda s: energy_potential(laws, s), rlo, rhi) if rhi > rlo else float(energy_potential(laws, rlo))
    E_c0 = rhi * 0.5 * integrate(u0 * u0) + L * q_max

    emb = math.sqrt(L) + 1.0 / math.sqrt(L)
    K_d0 = emb / mu0 * math.sqrt(2.0 * K_mu * E_c0 + 2.0 * L * K_p**2 + K_u0) + K_p / mu0
    T0_rho = min(0.5, (math.log(1.5) / (2.0 * K_d0)) ** 2)
    T0_u = T0_rho
    T0 = min(1.0, T0_rho, T0_u) / 2.0
    return HorizonEstimate(K_u0=K_u0, K_d0=K_d0, T0_rho=T0_rho, T0=T0, T0_u=T0_u,
                           T0_u_computed=False, E_c0=E_c0, K_kappa=K_kappa, K_mu=K_mu, K_p=K_p)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass
class NSRun:
    frames: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    steps: int = 0
    failure: Optional[str] = None

    @property
    def final(self) -> NSState:
        return self.frames[-1]

    @property
    def ok(self) -> bool:
        return self.failure is None


def _next_stop(t, T, times, idx):
    while idx < len(times) and times[idx] <= t * (1 + 1e-14) + 1e-300:
        idx += 1
    stop = T if idx >= len(times) else min(T, times[idx])
    return stop, idx


def ns_run(rho0, u0, laws: ConstitutiveLaws, T: float, output_every: int = 0,
           output_times: Sequence[float] = (), cfl: float = 0.5, dt_max: float = 1e-2,
           forcing: Optional[Callable] = None, validate: bool = True,
           keep_frames: bool = True, on_frame: Optional[Callable] = None,
           vacuum_floor: float = 1e-10) -> NSRun:
    """Integrate from the initial data up to time ``T``.

    Frames are kept every ``output_every`` steps (0 disables), at each of
    ``output_times`` and at the final time.  A vacuum approach or a
    non-finite state stops the run and is reported in ``failure``; the
    frames produced so far are kept.
    """
    state = rho0 if isinstance(rho0, NSState) else initial_state(rho0, u0)
    if T < 0:
        raise ValueError("T must be >= 0")
    if validate:
        lo, hi = float(np.min(state.rho)), float(np.max(state.rho))
        rng = (0.5 * lo, 2.0 * hi)
        report = validate_laws(laws, rng)
        if not report.admissible:
            raise ValueError(f"laws are not admissible on {rng}: {report.violations[0]}")

    run = NSRun()

    def emit(s):
        row = diagnostics_row(s, laws)
        run.diagnostics.append(row)
        if keep_frames:
            run.frames.append(s)
        if on_frame is not None:
            on_frame(s, row)

    emit(state)
    times = sorted(float(t) for t in output_times if 0 < t <= T)
    idx = 0
    t0 = state.time
    while state.time - t0 < T * (1 - 1e-14) and T > 0:
        stop, idx = _next_stop(state.time - t0, T, times, idx)
        dt = stable_dt(state, laws, cfl, dt_max)
        remaining = stop - (state.time - t0)
        hit = dt >= remaining * (1 - 1e-12)
        if hit:
            dt = remaining
        elif dt > 0.5 * remaining:
            # avoid a sliver step before the stop time
            dt = 0.5 * remaining
        try:
            new = ns_step(state, laws, dt, forcing=forcing, vacuum_floor=vacuum_floor)
        except SolverError as exc:
            run.failure = str(exc)
            break
        if hit:
            new = replace(new, time=t0 + stop)
        state = new
        run.steps += 1
        at_output = hit and stop < T and abs(stop - (state.time - t0)) == 0.0
        final = state.time - t0 >= T * (1 - 1e-14)
        if final or at_output or (output_every and run.steps % output_every == 0):
            emit(state)
    if not keep_frames:
        run.frames.append(state)
    elif run.frames[-1] is not state:
        # failure after the last emitted frame: keep the state reached
        run.frames.append(state)
        run.diagnostics.append(diagnostics_row(state, laws))
    return run
