"""One-velocity k-phase system with viscous-pressure relaxation.

    d_t a_i + d_x(a_i u) = a_i f_i / mu(r_i)
    d_t r_i + u d_x r_i  = -r_i f_i / mu(r_i)
    d_t(R u) + d_x(R u^2) = d_x(m d_x u - pi)

with R = sum a_j r_j, m = [sum a_j/mu_j]^-1, pi = m sum a_j p_j/mu_j and
f_i = m (d_x u - sum a_j p_j/mu_j) + p_i.

A step is split into conservative upwind transport of (a_i, a_i r_i, R u),
a cell-local relaxation of (a_i, r_i) at fixed phase mass, and an implicit
viscous momentum solve with the mixture closures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .constitutive import ConstitutiveLaws, LawDomainError, SqrtViscosity, make_laws, powerlaw_laws
from .grid import PeriodicGrid, ScalarField, ddx, integrate, solve_cyclic_tridiagonal
from .ns import SolverError, VacuumError, _next_stop


class SimplexError(SolverError):
    pass


@dataclass(frozen=True, eq=False)
class MultifluidState:
    """Cell-centred phase fractions ``alpha[i]``, densities ``rho[i]`` and
    the common velocity ``u`` on a uniform periodic grid."""

    time: float
    grid: PeriodicGrid
    alpha: np.ndarray
    rho: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        r = np.atleast_2d(np.asarray(self.rho, dtype=float))
        u = np.asarray(self.u, dtype=float)
        N = self.grid.N
        if a.shape != r.shape or a.shape[1] != N or u.shape != (N,):
            raise ValueError("alpha, rho must be (k, N) and u must be (N,)")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "rho", r)
        object.__setattr__(self, "u", u)

    @property
    def k(self) -> int:
        return self.alpha.shape[0]

    @property
    def rho_bar(self) -> np.ndarray:
        return np.sum(self.alpha * self.rho, axis=0)

    def alpha_field(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.alpha[i])

    def rho_field(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.rho[i])

    def u_field(self) -> ScalarField:
        return ScalarField(self.grid, self.u)

    def phase_masses(self) -> np.ndarray:
        return self.grid.dx * np.sum(self.alpha * self.rho, axis=1)

    def momentum(self) -> float:
        return float(self.grid.dx * np.sum(self.rho_bar * self.u))

    def check(self, tol: float = 1e-12) -> None:
        """Raise if the simplex or positivity invariants fail."""
        if np.any(self.alpha < -tol):
            raise SimplexError("negative volume fraction")
        drift = float(np.max(np.abs(np.sum(self.alpha, axis=0) - 1.0)))
        if drift > tol:
            raise SimplexError(f"volume fractions sum to 1 only within {drift:.3e}")
        if np.any(~(self.rho > 0)):
            raise ValueError("phase densities must be strictly positive")


def mf_initial_state(grid: PeriodicGrid, alpha0: Sequence[Callable], rho0: Sequence[Callable],
                     u0: Callable, time: float = 0.0) -> MultifluidState:
    """Sample profiles at the cell centres."""
    if len(alpha0) != len(rho0) or not alpha0:
        raise ValueError("alpha0 and rho0 need the same, nonzero, number of phases")
    x = grid.centers
    ones = np.ones(grid.N)
    a = np.array([np.asarray(f(x), dtype=float) * ones for f in alpha0])
    r = np.array([np.asarray(f(x), dtype=float) * ones for f in rho0])
    state = MultifluidState(time, grid, a, r, np.asarray(u0(x), dtype=float) * ones)
    state.check()
    return state


# ---------------------------------------------------------------------------
# closures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureClosures:
    rho_bar: ScalarField
    m: ScalarField
    pi: ScalarField
    kappa_inf: ScalarField


def _closures(alpha, rho, laws):
    mu = np.asarray(laws.mu(rho), dtype=float)
    if np.any(~(mu > 0)):
        raise LawDomainError("phase viscosity must be strictly positive")
    p = np.asarray(laws.p(rho), dtype=float)
    m = 1.0 / np.sum(alpha / mu, axis=0)
    kinf = np.sum(alpha * p / mu, axis=0)
    return np.sum(alpha * rho, axis=0), m, m * kinf, kinf, mu, p


def mixture(state: MultifluidState, laws: ConstitutiveLaws) -> MixtureClosures:
    rb, m, pi, kinf, _, _ = _closures(state.alpha, state.rho, laws)
    g = state.grid
    return MixtureClosures(ScalarField(g, rb), ScalarField(g, m), ScalarField(g, pi), ScalarField(g, kinf))


def relaxation_rates(state: MultifluidState, laws: ConstitutiveLaws, dudx: ScalarField) -> list:
    """f_i = m (dudx - kappa_inf) + p(rho_i) for every phase."""
    _, m, _, kinf, _, p = _closures(state.alpha, state.rho, laws)
    z = m * (dudx.values - kinf)
    return [ScalarField(state.grid, z + p[i]) for i in range(state.k)]


def closure_identity_residual(state: MultifluidState, laws: ConstitutiveLaws,
                              dudx: Optional[ScalarField] = None) -> float:
    """max |sum_i a_i f_i / mu_i - dudx| over cells."""
    if dudx is None:
        dudx = ddx(state.u_field(), "central")
    _, m, _, kinf, mu, p = _closures(state.alpha, state.rho, laws)
    f = m * (dudx.values - kinf) + p
    return float(np.max(np.abs(np.sum(state.alpha * f / mu, axis=0) - dudx.values)))


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


def mf_stable_dt(state: MultifluidState, laws: ConstitutiveLaws, cfl: float = 0.5,
                 dt_max: float = 1e-2) -> float:
    if not (0 < cfl <= 1):
        raise ValueError("cfl must lie in (0, 1]")
    c = float(np.max(np.sqrt(np.maximum(laws.dp(state.rho), 0.0))))
    speed = float(np.max(np.abs(state.u))) + c
    if speed == 0:
        return float(dt_max)
    return float(min(cfl * state.grid.dx / speed, dt_max))


def _upwind_transport(Q, uf, lam):
    # face j sits between cells j and j+1
    up = np.where(uf > 0, Q, np.roll(Q, -1, axis=-1))
    F = uf * up
    return Q - lam * (F - np.roll(F, 1, axis=-1))


def _relax(a, m, rho_old, laws, dt, div, alpha_floor):
    """Cell-local relaxation at fixed phase mass.

    Each active phase follows r_i -> r_i exp(-dt f_i/mu_i) with p_i, mu_i
    frozen at the transported state, so a_i -> a_i exp(dt f_i/mu_i).  The
    common part z of f_i = z + p_i is fixed per cell by requiring the
    fractions to sum to one, which the exact flow also does.
    """
    active = a > alpha_floor
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(active, m / np.where(active, a, 1.0), rho_old)
    a_frozen = np.where(active, 0.0, m / r)
    mu = np.asarray(laws.mu(r), dtype=float)
    p = np.asarray(laws.p(r), dtype=float)
    if np.any(~(mu > 0)):
        raise LawDomainError("phase viscosity must be strictly positive")
    aa = np.where(active, a, 0.0)
    # first-order guess w = dt * m (div - kappa_inf)
    mm = 1.0 / np.sum(np.maximum(a, 0.0) / mu, axis=0)
    w = mm * (div - np.sum(np.maximum(a, 0.0) * p / mu, axis=0)) * dt
    target = 1.0 - np.sum(a_frozen, axis=0)
    for _ in range(100):
        e = aa * np.exp((w + dt * p) / mu)
        g = np.sum(e, axis=0) - target
        dg = np.sum(e / mu, axis=0)
        step = g / dg
        w = w - step
        if np.all((np.abs(g) <= 1e-15 * a.shape[0]) | (np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(w)))):
            break
    else:
        if np.max(np.abs(g)) > 1e-13:
            raise SolverError("relaxation root solve did not converge")
    rate = (w + dt * p) * (1.0 / mu)
    r_new = np.where(active, r * np.exp(-rate), r)
    a_new = np.where(active, m / r_new, a_frozen)
    return a_new, r_new


def mf_step(state: MultifluidState, laws: ConstitutiveLaws, dt: float,
            alpha_floor: float = 1e-8, vacuum_floor: float = 1e-10):
    """Advance one step; returns ``(new_state, drift)`` where ``drift`` is
    max |sum a_i - 1| before renormalisation."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = state.grid
    dx = g.dx
    lam = dt / dx
    u = state.u
    uf = 0.5 * (u + np.roll(u, -1))
    a_star = _upwind_transport(state.alpha, uf, lam)
    m_star = _upwind_transport(state.alpha * state.rho, uf, lam)
    q_star = _upwind_transport(state.rho_bar * u, uf, lam)
    if np.any(a_star < -1e-9):
        raise SimplexError("negative volume fraction after transport; reduce the time step")
    a_star = np.maximum(a_star, 0.0)
    m_star = np.maximum(m_star, 0.0)
    div = (uf - np.roll(uf, 1)) / dx

    a_new, r_new = _relax(a_star, m_star, state.rho, laws, dt, div, alpha_floor)
    if np.any(a_new < -1e-9) or np.any(a_new > 1 + 1e-9):
        raise SimplexError("volume fraction left [0, 1] after relaxation; reduce the time step")
    a_new = np.clip(a_new, 0.0, 1.0)
    total = np.sum(a_new, axis=0)
    drift = float(np.max(np.abs(total - 1.0)))
    a_new = a_new / total
    active = a_star > alpha_floor
    with np.errstate(divide="ignore", invalid="ignore"):
        r_new = np.where(active, m_star / np.where(active, a_new, 1.0), r_new)
    if not np.all(np.isfinite(r_new)) or np.any(r_new <= vacuum_floor):
        bad = ~np.isfinite(r_new) | (r_new <= vacuum_floor)
        cell = int(np.argmax(np.any(bad, axis=0)))
        raise VacuumError(cell, float(np.min(r_new[:, cell])))

    rb, m, pi, _, _, _ = _closures(a_new, r_new, laws)
    u_star = q_star / rb
    mf_face = 0.5 * (m + np.roll(m, -1))
    c = dt / dx**2
    lower = -c * np.roll(mf_face, 1)
    upper = -c * mf_face
    diag = rb + c * (mf_face + np.roll(mf_face, 1))
    rhs = rb * u_star - dt * (np.roll(pi, -1) - np.roll(pi, 1)) / (2.0 * dx)
    try:
        u_new = solve_cyclic_tridiagonal(lower, diag, upper, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"momentum solve failed: {exc}") from exc
    if not np.all(np.isfinite(u_new)):
        raise SolverError("non-finite velocity")
    return MultifluidState(state.time + dt, g, a_new, r_new, u_new), drift


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def mf_diagnostics_row(state: MultifluidState, laws: ConstitutiveLaws, drift: float) -> dict:
    row = {"t": state.time, "sum_alpha_drift": drift}
    for i, mass in enumerate(state.phase_masses()):
        row[f"mass_{i + 1}"] = float(mass)
    row["closure_identity_residual"] = closure_identity_residual(state, laws)
    return row


@dataclass
class MFRun:
    frames: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    step_drifts: list = field(default_factory=list)
    steps: int = 0
    failure: Optional[str] = None

    @property
    def final(self) -> MultifluidState:
        return self.frames[-1]

    @property
    def ok(self) -> bool:
        return self.failure is None


def mf_run(state0: MultifluidState, laws: ConstitutiveLaws, T: float, output_every: int = 0,
           output_times: Sequence[float] = (), cfl: float = 0.5, dt_max: float = 1e-2,
           dt: Optional[float] = None, keep_frames: bool = True,
           on_frame: Optional[Callable] = None) -> MFRun:
    """Integrate to time ``T``; frame policy as for the fine-scale driver.

    A fixed ``dt`` may be given instead of the CFL-based one.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    state0.check()
    run = MFRun()
    since = 0.0

    def emit(s):
        nonlocal since
        row = mf_diagnostics_row(s, laws, since)
        since = 0.0
        run.diagnostics.append(row)
        if keep_frames:
            run.frames.append(s)
        if on_frame is not None:
            on_frame(s, row)

    state = state0
    emit(state)
    times = sorted(float(t) for t in output_times if 0 < t <= T)
    idx = 0
    t0 = state.time
    while T > 0 and state.time - t0 < T * (1 - 1e-14):
        stop, idx = _next_stop(state.time - t0, T, times, idx)
        h = dt if dt is not None else mf_stable_dt(state, laws, cfl, dt_max)
        remaining = stop - (state.time - t0)
        hit = h >= remaining * (1 - 1e-12)
        if hit:
            h = remaining
        elif dt is None and h > 0.5 * remaining:
            h = 0.5 * remaining
        try:
            new, drift = mf_step(state, laws, h)
        except (SolverError, LawDomainError) as exc:
            run.failure = str(exc)
            break
        if hit:
            new = MultifluidState(t0 + stop, new.grid, new.alpha, new.rho, new.u)
        state = new
        run.steps += 1
        run.step_drifts.append(drift)
        since = max(since, drift)
        final = state.time - t0 >= T * (1 - 1e-14)
        at_output = hit and stop < T
        if final or at_output or (output_every and run.steps % output_every == 0):
            emit(state)
    if not keep_frames:
        run.frames.append(state)
    elif run.frames[-1] is not state:
        run.frames.append(state)
        run.diagnostics.append(mf_diagnostics_row(state, laws, since))
    return run


# ---------------------------------------------------------------------------
# two-phase forms
# ---------------------------------------------------------------------------


def bifluid_rhs(alpha_plus, rho_plus, rho_minus, dudx, laws: ConstitutiveLaws):
    """Material rate of a_+ in the two-phase form:

        a_+ a_- / (a_+ mu_- + a_- mu_+) * [(p_+ - p_-) - dudx (mu_+ - mu_-)]
    """
    a = np.asarray(alpha_plus, dtype=float)
    b = 1.0 - a
    mp, mm = laws.mu(rho_plus), laws.mu(rho_minus)
    pp, pm = laws.p(rho_plus), laws.p(rho_minus)
    return a * b / (a * mm + b * mp) * ((pp - pm) - dudx * (mp - mm))


def general_alpha_rate(alpha_plus, rho_plus, rho_minus, dudx, laws: ConstitutiveLaws):
    """a_+ f_+ / mu_+ - a_+ dudx from the k-phase closures with k = 2."""
    a = np.asarray(alpha_plus, dtype=float)
    alpha = np.stack([a, 1.0 - a])
    rho = np.stack(np.broadcast_arrays(np.asarray(rho_plus, float), np.asarray(rho_minus, float)))
    _, m, _, kinf, mu, p = _closures(alpha, rho, laws)
    f_plus = m * (dudx - kinf) + p[0]
    return a * f_plus / mu[0] - a * dudx


@dataclass(frozen=True)
class EquivalenceReport:
    samples: int
    relaxation: float
    viscosity: float
    pressure: float
    constant_viscosity: Optional[float] = None

    @property
    def max_abs_difference(self) -> float:
        vals = [self.relaxation, self.viscosity, self.pressure]
        if self.constant_viscosity is not None:
            vals.append(self.constant_viscosity)
        return max(vals)


def equivalence_check_k2(samples: int = 100_000, seed: int = 1,
                         laws: Optional[ConstitutiveLaws] = None,
                         constant_mu: Optional[float] = None) -> EquivalenceReport:
    """Compare the k = 2 closures and relaxation with their two-phase forms
    on random samples a_+ in (0,1), rho in [0.1, 10], dudx in [-5, 5].

    With ``constant_mu`` set, the laws use mu = constant_mu and the
    two-phase rate is also checked against a_+ a_- (p_+ - p_-) / mu.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if constant_mu is not None:
        laws = make_laws({"a": 1.0, "gamma": 2.0}, {"c": constant_mu, "d": 0.0})
    elif laws is None:
        laws = powerlaw_laws()
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, 1.0, samples)
    a = np.where(a == 0.0, 0.5, a)
    rp = rng.uniform(0.1, 10.0, samples)
    rm = rng.uniform(0.1, 10.0, samples)
    dudx = rng.uniform(-5.0, 5.0, samples)
    return _compare_k2(a, rp, rm, dudx, laws, constant_mu)


def _compare_k2(a, rp, rm, dudx, laws, constant_mu=None) -> EquivalenceReport:
    b = 1.0 - a
    rel = np.max(np.abs(general_alpha_rate(a, rp, rm, dudx, laws) - bifluid_rhs(a, rp, rm, dudx, laws)))
    _, m, pi, _, _, _ = _closures(np.stack([a, b]), np.stack([rp, rm]), laws)
    mp, mm = laws.mu(rp), laws.mu(rm)
    pp, pm = laws.p(rp), laws.p(rm)
    den = a * mm + b * mp
    visc = np.max(np.abs(m - mp * mm / den))
    pres = np.max(np.abs(pi - (a * pp * mm + b * pm * mp) / den))
    const = None
    if constant_mu is not None:
        const = float(np.max(np.abs(bifluid_rhs(a, rp, rm, dudx, laws) - a * b * (pp - pm) / constant_mu)))
    return EquivalenceReport(len(a), float(rel), float(visc), float(pres), const)


def equivalence_check_points(alpha_plus, rho_plus, rho_minus, dudx, laws=None) -> EquivalenceReport:
    """Same comparison on given sample points."""
    laws = laws or powerlaw_laws()
    arr = [np.atleast_1d(np.asarray(v, dtype=float)) for v in (alpha_plus, rho_plus, rho_minus, dudx)]
    arr = np.broadcast_arrays(*arr)
    visc = laws.viscosity
    cm = visc.c if isinstance(visc, SqrtViscosity) and visc.d == 0 else None
    return _compare_k2(*arr, laws, cm)


# ---------------------------------------------------------------------------
# kinetic formulation
# ---------------------------------------------------------------------------


def kinetic_residual(frames: Sequence[MultifluidState], laws: ConstitutiveLaws, probes) -> list:
    """Weak residual of the kinetic equation for nu = sum a_i delta_{r_i}.

    For each probe (psi, beta) and each interior frame t_k,

        R = d/dt int sum a_i beta(r_i) psi - int sum a_i beta(r_i) u psi'
            - int sum a_i (f_i/mu_i) (beta(r_i) - r_i beta'(r_i)) psi

    with the time derivative from a three-point stencil on neighbouring frames
    and f_i from the closures.  Probes need ``beta``, ``beta_prime``,
    ``phi``, ``phi_prime`` and ``label`` attributes.
    """
    if len(frames) < 3:
        raise ValueError("need at least three frames")
    grid = frames[0].grid
    x = grid.centers
    lo = min(float(np.min(s.rho)) for s in frames)
    hi = max(float(np.max(s.rho)) for s in frames)
    out = []
    for probe in probes:
        xi = np.linspace(lo, hi, 33)
        with np.errstate(all="ignore"):
            vals = np.asarray(probe.beta(xi), dtype=float) * np.ones_like(xi)
            dvals = np.asarray(probe.beta_prime(xi), dtype=float) * np.ones_like(xi)
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(dvals))):
            raise ValueError(f"probe {probe.label!r} is not C1 on the density range [{lo}, {hi}]")
        psi = np.asarray(probe.phi(x), dtype=float) * np.ones(grid.N)
        dpsi = np.asarray(probe.phi_prime(x), dtype=float) * np.ones(grid.N)
        moments = []
        fluxes = []
        for s in frames:
            b = np.asarray(probe.beta(s.rho), dtype=float) * np.ones_like(s.rho)
            db = np.asarray(probe.beta_prime(s.rho), dtype=float) * np.ones_like(s.rho)
            moments.append(grid.dx * float(np.sum(np.sum(s.alpha * b, axis=0) * psi)))
            dudx = ddx(s.u_field(), "central").values
            _, m, _, kinf, mu, p = _closures(s.alpha, s.rho, laws)
            f = m * (dudx - kinf) + p
            src = np.sum(s.alpha * f / mu * (b - s.rho * db), axis=0)
            adv = np.sum(s.alpha * b, axis=0) * s.u
            fluxes.append(grid.dx * float(np.sum(adv * dpsi + src * psi)))
        t = np.array([s.time for s in frames])
        M = np.array(moments)
        F = np.array(fluxes)
        h1, h2 = t[1:-1] - t[:-2], t[2:] - t[1:-1]
        # three-point derivative, second order on unequal spacing
        dMdt = (-h2 / (h1 * (h1 + h2)) * M[:-2] + (h2 - h1) / (h1 * h2) * M[1:-1]
                + h1 / (h2 * (h1 + h2)) * M[2:])
        R = dMdt - F[1:-1]
        out.append({"label": probe.label, "times": t[1:-1].tolist(), "residual": R.tolist(),
                    "max_abs": float(np.max(np.abs(R)))})
    return out
