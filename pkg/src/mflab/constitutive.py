"""Equations of state p(rho), mu(rho) and the potentials built on them.

Laws are small picklable callables so that runs can be shipped to worker
processes.  Every law evaluates elementwise on numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

STRICT = "strict"
RELAXED = "relaxed"


class LawDomainError(ValueError):
    """Raised when a potential or ratio is requested outside its domain."""


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawPressure:
    """p(rho) = a * rho**gamma."""

    a: float = 1.0
    gamma: float = 2.0

    def __call__(self, rho):
        return self.a * np.power(rho, self.gamma)

    def derivative(self, rho):
        if self.gamma == 0.0:
            return np.zeros_like(np.asarray(rho, dtype=float))
        return self.a * self.gamma * np.power(rho, self.gamma - 1.0)

    def energy_potential(self, rho):
        # rho * int_1^rho a s**(gamma-2) ds
        rho = np.asarray(rho, dtype=float)
        if self.a == 0.0:
            return np.zeros_like(rho)
        if self.gamma == 1.0:
            return self.a * rho * np.log(rho)
        g1 = self.gamma - 1.0
        return self.a * rho * (np.power(rho, g1) - 1.0) / g1


@dataclass(frozen=True)
class SqrtViscosity:
    """mu(rho) = c + d * sqrt(rho)."""

    c: float = 1.0
    d: float = 1.0

    def __call__(self, rho):
        return self.c + self.d * np.sqrt(rho)

    def derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return 0.5 * self.d / np.sqrt(rho)

    def bd_potential(self, rho):
        rho = np.asarray(rho, dtype=float)
        return self.c * (1.0 - 1.0 / rho) + 2.0 * self.d * (1.0 - 1.0 / np.sqrt(rho))


@dataclass(frozen=True)
class LinearViscosity:
    """mu(rho) = c * rho (shallow-water type; relaxed mode only)."""

    c: float = 1.0

    def __call__(self, rho):
        return self.c * np.asarray(rho, dtype=float)

    def derivative(self, rho):
        return np.full_like(np.asarray(rho, dtype=float), self.c)

    def bd_potential(self, rho):
        return self.c * np.log(np.asarray(rho, dtype=float))


# ---------------------------------------------------------------------------
# the law bundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstitutiveLaws:
    """Pressure and viscosity laws with their derivatives.

    ``q_closed`` and ``phi_closed`` are optional closed forms of the energy
    and BD potentials (base point 1).  When absent the potentials fall back
    to adaptive quadrature.
    """

    pressure: Callable
    pressure_derivative: Callable
    viscosity: Callable
    viscosity_derivative: Callable
    mu0: float = 1.0
    mode: str = STRICT
    q_closed: Optional[Callable] = None
    phi_closed: Optional[Callable] = None
    description: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.mode not in (STRICT, RELAXED):
            raise ValueError(f"mode must be 'strict' or 'relaxed', got {self.mode!r}")
        if not (self.mu0 > 0 and math.isfinite(self.mu0)):
            raise ValueError("mu0 must be a strictly positive finite number")

    def p(self, rho):
        return self.pressure(rho)

    def dp(self, rho):
        return self.pressure_derivative(rho)

    def mu(self, rho):
        return self.viscosity(rho)

    def dmu(self, rho):
        return self.viscosity_derivative(rho)


def make_laws(pressure: dict, viscosity: dict, mu0: Optional[float] = None,
              mode: Optional[str] = None) -> ConstitutiveLaws:
    """Build laws from named selections.

    ``pressure = {"name": "powerlaw_pressure", "a": .., "gamma": ..}``;
    ``viscosity`` is ``{"name": "powerlaw_viscosity", "c": .., "d": ..}`` or
    ``{"name": "linear_viscosity", "c": ..}``.
    """
    pressure = dict(pressure)
    viscosity = dict(viscosity)
    pname = pressure.pop("name", "powerlaw_pressure")
    vname = viscosity.pop("name", "powerlaw_viscosity")
    if pname != "powerlaw_pressure":
        raise ValueError(f"unknown pressure law {pname!r}")
    p = PowerLawPressure(**{k: float(v) for k, v in pressure.items()})

    if vname == "powerlaw_viscosity":
        mu = SqrtViscosity(**{k: float(v) for k, v in viscosity.items()})
        # mu >= mu0 (1 + sqrt(rho)) on [0, inf) needs c > 0 and d > 0
        if mu.c > 0 and mu.d > 0:
            default_mode, default_mu0 = STRICT, min(mu.c, mu.d)
        else:
            default_mode, default_mu0 = RELAXED, max(mu.c, mu.d)
    elif vname == "linear_viscosity":
        mu = LinearViscosity(**{k: float(v) for k, v in viscosity.items()})
        default_mode = RELAXED
        default_mu0 = mu.c
    else:
        raise ValueError(f"unknown viscosity law {vname!r}")

    return ConstitutiveLaws(
        pressure=p,
        pressure_derivative=p.derivative,
        viscosity=mu,
        viscosity_derivative=mu.derivative,
        mu0=float(mu0 if mu0 is not None else default_mu0),
        mode=mode or default_mode,
        q_closed=p.energy_potential,
        phi_closed=mu.bd_potential,
        description={"pressure": {"name": pname, **pressure},
                     "viscosity": {"name": vname, **viscosity}},
    )


def powerlaw_laws(a=1.0, gamma=2.0, c=1.0, d=1.0, mu0=None, mode=None) -> ConstitutiveLaws:
    """p = a rho^gamma, mu = c + d sqrt(rho)."""
    return make_laws({"a": a, "gamma": gamma}, {"c": c, "d": d}, mu0=mu0, mode=mode)


def shallow_water_laws(a=1.0, c=1.0) -> ConstitutiveLaws:
    """p = a rho^2, mu = c rho, relaxed mode."""
    return make_laws({"a": a, "gamma": 2.0}, {"name": "linear_viscosity", "c": c})


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class Violation:
    invariant: str
    rho: float
    detail: str


@dataclass
class ValidationReport:
    mode: str
    violations: list
    damping_constant: Optional[float] = None

    @property
    def admissible(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.admissible


def _safe_eval(fn, s):
    with np.errstate(all="ignore"):
        try:
            return np.asarray(fn(s), dtype=float) * np.ones_like(s)
        except (ValueError, ZeroDivisionError, FloatingPointError, OverflowError):
            return np.full_like(s, np.nan)


def validate_laws(laws: ConstitutiveLaws, rho_range=(0.0, 10.0), samples: int = 201,
                  fd_rtol: float = 1e-6) -> ValidationReport:
    """Sample the laws on ``rho_range`` and list every violated assumption.

    Strict mode checks p' >= 0 and mu >= mu0 (1 + sqrt(rho)).  Relaxed mode
    checks mu > 0 for rho > 0 and reports the smallest C with
    mu <= C + C p on the sample.  Both modes compare the declared
    derivatives with centred finite differences.
    """
    lo, hi = map(float, rho_range)
    if lo < 0 or hi < lo:
        raise ValueError("rho_range must be an interval inside [0, inf)")
    if samples < 2:
        raise ValueError("samples must be >= 2")

    s = np.linspace(lo, hi, samples)
    p = _safe_eval(laws.pressure, s)
    dp = _safe_eval(laws.pressure_derivative, s)
    mu = _safe_eval(laws.viscosity, s)
    dmu = _safe_eval(laws.viscosity_derivative, s)
    out = []

    for name, vals in (("pressure", p), ("pressure_derivative", dp),
                       ("viscosity", mu), ("viscosity_derivative", dmu)):
        bad = ~np.isfinite(vals)
        if name == "viscosity_derivative":
            # mu' may blow up at 0 for sqrt laws; only interior points matter
            bad &= s > 0
        for x in s[bad]:
            out.append(Violation("finite", float(x), f"{name} is not finite"))

    C = None
    if laws.mode == STRICT:
        for x in s[dp < 0]:
            out.append(Violation("pressure_monotone", float(x), "p'(rho) < 0"))
        bound = laws.mu0 * (1.0 + np.sqrt(s))
        for x, m, b in zip(s[mu < bound], mu[mu < bound], bound[mu < bound]):
            out.append(Violation("viscosity_lower_bound", float(x),
                                 f"mu={m:.6g} < mu0*(1+sqrt(rho))={b:.6g}"))
    else:
        pos = s > 0
        for x in s[pos & ~(mu > 0)]:
            out.append(Violation("viscosity_positive", float(x), "mu(rho) <= 0"))
        ok = np.isfinite(mu) & np.isfinite(p) & (1.0 + p > 0)
        if ok.any():
            C = float(max(np.max(mu[ok] / (1.0 + p[ok])), 0.0))
            if not math.isfinite(C):
                out.append(Violation("damping_bound", float("nan"), "mu <= C + C p fails"))
                C = None

    # derivative consistency on the interior of the range (away from 0)
    inner = s[(s > max(lo, 1e-3)) & (s < hi)]
    if inner.size:
        h = 1e-5 * np.maximum(1.0, inner)
        for name, fn, dfn in (("pressure_derivative", laws.pressure, laws.pressure_derivative),
                              ("viscosity_derivative", laws.viscosity, laws.viscosity_derivative)):
            fd = (_safe_eval(fn, inner + h) - _safe_eval(fn, inner - h)) / (2 * h)
            exact = _safe_eval(dfn, inner)
            scale = np.maximum(np.abs(exact), np.maximum(np.abs(_safe_eval(fn, inner)), 1.0) * 1e-3)
            err = np.abs(fd - exact) / scale
            for x, e in zip(inner[err > fd_rtol], err[err > fd_rtol]):
                out.append(Violation("derivative_consistency", float(x),
                                     f"{name} differs from finite differences (rel err {e:.2e})"))

    return ValidationReport(mode=laws.mode, violations=out, damping_constant=C)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


def _check_positive(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(~(rho > 0)):
        raise LawDomainError("density must be strictly positive")
    return rho


def _quad_from_one(fn, z: float) -> float:
    if z == 1.0:
        return 0.0
    val, _ = integrate.quad(lambda s: float(fn(s)), 1.0, z, epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def energy_potential(laws: ConstitutiveLaws, rho):
    """q(rho) = rho * int_1^rho p(s)/s^2 ds."""
    rho = _check_positive(rho)
    if laws.q_closed is not None:
        return laws.q_closed(rho)
    f = np.vectorize(lambda z: z * _quad_from_one(lambda s: laws.pressure(s) / s**2, z))
    return f(rho) if rho.ndim else float(f(rho))


def bd_potential(laws: ConstitutiveLaws, rho):
    """phi(rho) = int_1^rho mu(s)/s^2 ds."""
    rho = _check_positive(rho)
    if laws.phi_closed is not None:
        return laws.phi_closed(rho)
    f = np.vectorize(lambda z: _quad_from_one(lambda s: laws.viscosity(s) / s**2, z))
    return f(rho) if rho.ndim else float(f(rho))


def kappa(laws: ConstitutiveLaws, rho):
    """p(rho) / mu(rho)."""
    rho = np.asarray(rho, dtype=float)
    mu = np.asarray(laws.viscosity(rho), dtype=float)
    if np.any(~(mu > 0)):
        raise LawDomainError("viscosity must be strictly positive to form p/mu")
    return laws.pressure(rho) / mu
