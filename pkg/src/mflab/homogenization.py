"""Oscillating initial data, Young-measure moments and convergence studies.

A layered microstructure with ``n`` macro-cells, each split into ``k``
sub-intervals of lengths proportional to the phase fractions, converges
weakly to the measure sum_i alpha_i delta_{rho_i}.  The study runs the
fine-scale solver on that data for increasing ``n`` and compares moments
with a single multifluid run started from the limit measure.
"""

from __future__ import annotations

import hashlib
import math
import time as _time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .constitutive import ConstitutiveLaws
from .grid import PeriodicGrid, ScalarField, integrate
from .multifluid import MultifluidState, mf_run
from .ns import horizon_estimate, ns_run


# ---------------------------------------------------------------------------
# picklable profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.value)

    def derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Sinusoid:
    """offset + amplitude * sin(2 pi mode x / L + phase)."""

    amplitude: float = 1.0
    L: float = 1.0
    mode: int = 1
    offset: float = 0.0
    phase: float = 0.0

    def __call__(self, x):
        return self.offset + self.amplitude * np.sin(2 * np.pi * self.mode * np.asarray(x) / self.L + self.phase)

    def derivative(self, x):
        w = 2 * np.pi * self.mode / self.L
        return self.amplitude * w * np.cos(w * np.asarray(x) + self.phase)


@dataclass(frozen=True)
class Step:
    """``low`` on [0, split*L), ``high`` on [split*L, L)."""

    low: float
    high: float
    L: float = 1.0
    split: float = 0.5

    def __call__(self, x):
        x = np.mod(np.asarray(x, dtype=float), self.L)
        return np.where(x < self.split * self.L, self.low, self.high)


def make_profile(desc, L: float = 1.0):
    """Profile from a number or ``{"name": "constant"|"sine"|"cosine"|"step", ...}``."""
    if isinstance(desc, (int, float)):
        return Constant(float(desc))
    d = dict(desc)
    name = d.pop("name", None)
    if name == "constant":
        return Constant(float(d.pop("value")))
    if name in ("sine", "cosine"):
        kw = dict(amplitude=float(d.pop("amplitude", 1.0)), L=L, mode=int(d.pop("mode", 1)),
                  offset=float(d.pop("offset", 0.0)), phase=0.0 if name == "sine" else math.pi / 2)
        prof = Sinusoid(**kw)
    elif name == "step":
        prof = Step(float(d.pop("low")), float(d.pop("high")), L, float(d.pop("split", 0.5)))
    else:
        raise ValueError(f"unknown profile {name!r}")
    if d:
        raise ValueError(f"unknown profile keys {sorted(d)}")
    return prof


# ---------------------------------------------------------------------------
# measures and probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class YoungMeasureSpec:
    """Limit measure sum_i alpha0_i(x) delta_{rho0_i(x)} with velocity u0."""

    alpha0: tuple
    rho0: tuple
    u0: Callable
    L: float = 1.0
    C0: float = 100.0

    @property
    def k(self) -> int:
        return len(self.alpha0)

    def validate(self, samples: int = 257) -> None:
        if self.k < 1 or len(self.rho0) != self.k:
            raise ValueError("alpha0 and rho0 need the same, nonzero, number of phases")
        x = (np.arange(samples) + 0.5) * self.L / samples
        a = np.array([np.asarray(f(x), dtype=float) * np.ones(samples) for f in self.alpha0])
        r = np.array([np.asarray(f(x), dtype=float) * np.ones(samples) for f in self.rho0])
        if np.any(a < 0) or np.max(np.abs(a.sum(axis=0) - 1.0)) > 1e-12:
            raise ValueError("alpha0 must be nonnegative and sum to one")
        if np.any(r < 1.0 / self.C0) or np.any(r > self.C0):
            raise ValueError(f"atoms must lie in [1/C0, C0] with C0={self.C0}")

    def as_state(self, grid: PeriodicGrid) -> MultifluidState:
        x = grid.centers
        ones = np.ones(grid.N)
        a = np.array([np.asarray(f(x), dtype=float) * ones for f in self.alpha0])
        r = np.array([np.asarray(f(x), dtype=float) * ones for f in self.rho0])
        return MultifluidState(0.0, grid, a, r, np.asarray(self.u0(x), dtype=float) * ones)


@dataclass(frozen=True)
class Power:
    """xi ** exponent."""

    exponent: float

    def __call__(self, xi):
        return np.power(np.asarray(xi, dtype=float), self.exponent)

    def derivative(self, xi):
        if self.exponent == 0:
            return np.zeros_like(np.asarray(xi, dtype=float))
        return self.exponent * np.power(np.asarray(xi, dtype=float), self.exponent - 1)


@dataclass(frozen=True)
class LawComposite:
    """p(xi), 1/mu(xi) or p(xi)/mu(xi) for given laws."""

    laws: ConstitutiveLaws
    kind: str

    def __call__(self, xi):
        p, mu = self.laws.p(xi), self.laws.mu(xi)
        return {"p": p, "inv_mu": 1.0 / mu, "p_over_mu": p / mu}[self.kind]

    def derivative(self, xi):
        p, mu = self.laws.p(xi), self.laws.mu(xi)
        dp, dmu = self.laws.dp(xi), self.laws.dmu(xi)
        if self.kind == "p":
            return dp
        if self.kind == "inv_mu":
            return -dmu / mu**2
        return (dp * mu - p * dmu) / mu**2


@dataclass(frozen=True)
class MomentProbe:
    beta: Callable
    beta_prime: Callable
    phi: Callable
    phi_prime: Callable
    label: str


def default_probes(laws: ConstitutiveLaws, L: float = 1.0) -> list:
    """beta in {1, xi, xi^2, p, 1/mu, p/mu} times phi in {1, sin, cos}."""
    betas = [("1", Power(0.0)), ("xi", Power(1.0)), ("xi2", Power(2.0)),
             ("p", LawComposite(laws, "p")), ("inv_mu", LawComposite(laws, "inv_mu")),
             ("p_over_mu", LawComposite(laws, "p_over_mu"))]
    phis = [("1", Constant(1.0)), ("sin", Sinusoid(1.0, L)), ("cos", Sinusoid(1.0, L, phase=math.pi / 2))]
    return [MomentProbe(b, b.derivative, f, f.derivative, f"{bl}|{fl}")
            for bl, b in betas for fl, f in phis]


# ---------------------------------------------------------------------------
# microstructure and moments
# ---------------------------------------------------------------------------


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights * total
    counts = np.floor(raw).astype(int)
    rest = total - int(counts.sum())
    if rest > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:rest]] += 1
    return counts


def synthesize_microstructure(spec: YoungMeasureSpec, n: int, grid: PeriodicGrid) -> ScalarField:
    """Layered density with ``n`` macro-cells of ``k`` sub-intervals each."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if grid.N < 8 * n * spec.k:
        raise ValueError(f"grid too coarse: N={grid.N} < 8*n*k={8 * n * spec.k}")
    if abs(grid.L - spec.L) > 1e-14 * spec.L:
        raise ValueError("grid and measure have different periods")
    edges = np.round(np.arange(n + 1) * grid.N / n).astype(int)
    values = np.empty(grid.N)
    for c in range(n):
        xc = (c + 0.5) * grid.L / n
        w = np.array([float(np.asarray(f(xc))) for f in spec.alpha0])
        atoms = [float(np.asarray(f(xc))) for f in spec.rho0]
        counts = _largest_remainder(w / w.sum(), int(edges[c + 1] - edges[c]))
        pos = int(edges[c])
        for cnt, r in zip(counts, atoms):
            values[pos:pos + cnt] = r
            pos += cnt
    return ScalarField(grid, values)


def _probe_values(fn, x, n):
    return np.asarray(fn(x), dtype=float) * np.ones(n)


def young_moment_fine(rho: ScalarField, probe: MomentProbe) -> float:
    """int beta(rho(x)) phi(x) dx on whatever mesh ``rho`` lives on."""
    g = rho.grid
    b = _probe_values(probe.beta, rho.values, g.N)
    f = _probe_values(probe.phi, np.mod(g.centers, g.L), g.N)
    return integrate(ScalarField(g, b * f))


def young_moment_mf(state: MultifluidState, probe: MomentProbe) -> float:
    """int sum_i alpha_i beta(rho_i) phi dx."""
    g = state.grid
    b = np.asarray(probe.beta(state.rho), dtype=float) * np.ones_like(state.rho)
    f = _probe_values(probe.phi, g.centers, g.N)
    return integrate(ScalarField(g, np.sum(state.alpha * b, axis=0) * f))


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def default_grid_policy(n: int, k: int) -> int:
    return 32 * n * k


@dataclass
class StudyReport:
    n_list: list
    N_list: list
    N_mf: int
    T: float
    checkpoints: list
    probes: list
    errors: dict
    curves: dict
    failures: dict = field(default_factory=dict)
    run_hashes: dict = field(default_factory=dict)
    horizon_T0: Optional[float] = None
    wall_time: float = 0.0

    def final_errors(self, label: str) -> list:
        return self.errors[label]


def _hash_arrays(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def _fine_member(spec, laws, T, n, N, checkpoints, probes, cfl, dt_max):
    grid = PeriodicGrid(spec.L, N)
    rho0 = synthesize_microstructure(spec, n, grid)
    u_faces = spec.u0
    moments = []

    def record(state, row):
        moments.append([young_moment_fine(state.rho_field, p) for p in probes])

    run = ns_run(rho0, u_faces, laws, T, output_times=checkpoints, cfl=cfl, dt_max=dt_max,
                 keep_frames=False, on_frame=record)
    times = [row["t"] for row in run.diagnostics]
    final = run.final
    return {"n": n, "N": N, "times": times, "moments": moments, "failure": run.failure,
            "hash": _hash_arrays(final.rho, final.u, final.mesh.widths)}


def convergence_study(spec: YoungMeasureSpec, laws: ConstitutiveLaws, T: float, n_list: Sequence[int],
                      probes: Optional[Sequence[MomentProbe]] = None,
                      grid_policy: Callable[[int, int], int] = default_grid_policy,
                      N_mf: Optional[int] = None, n_checkpoints: int = 8, cfl: float = 0.5,
                      dt_max: float = 1e-2, workers: int = 1) -> StudyReport:
    """Fine-scale runs for each n against one multifluid run.

    Errors are reported at ``n_checkpoints`` interior times and at ``T``.
    The multifluid run uses ``N_mf`` cells, by default the finest fine grid.
    """
    start = _time.perf_counter()
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])) or not n_list:
        raise ValueError("n_list must be nonempty and strictly increasing")
    spec.validate()
    probes = list(probes) if probes is not None else default_probes(laws, spec.L)
    N_list = [int(grid_policy(n, spec.k)) for n in n_list]
    N_mf = int(N_mf or max(N_list))
    checkpoints = [T * (j + 1) / (n_checkpoints + 1) for j in range(n_checkpoints)] if T > 0 else []

    T0 = None
    try:
        probe_grid = PeriodicGrid(spec.L, N_list[0])
        rho0 = synthesize_microstructure(spec, n_list[0], probe_grid)
        T0 = horizon_estimate(rho0, probe_grid.sample(spec.u0), laws).T0
        if T > T0:
            warnings.warn(f"T={T} exceeds the estimated existence horizon T0={T0:.3e}", stacklevel=2)
    except ValueError as exc:
        warnings.warn(f"horizon estimate unavailable: {exc}", stacklevel=2)

    mf_moments = []
    mf_state0 = spec.as_state(PeriodicGrid(spec.L, N_mf))
    mf = mf_run(mf_state0, laws, T, output_times=checkpoints, cfl=cfl, dt_max=dt_max, keep_frames=False,
                on_frame=lambda s, row: mf_moments.append([young_moment_mf(s, p) for p in probes]))
    mf_times = [row["t"] for row in mf.diagnostics]
    failures = {}
    if mf.failure:
        failures["mf"] = mf.failure
    hashes = {"mf": _hash_arrays(mf.final.alpha, mf.final.rho, mf.final.u)}

    args = [(spec, laws, T, n, N, checkpoints, probes, cfl, dt_max) for n, N in zip(n_list, N_list)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_fine_member, *zip(*args)))
    else:
        members = [_fine_member(*a) for a in args]

    mf_by_time = {round(t, 12): m for t, m in zip(mf_times, mf_moments)}
    errors = {p.label: [] for p in probes}
    curves = {p.label: {} for p in probes}
    for mem in members:
        n = mem["n"]
        hashes[f"n={n}"] = mem["hash"]
        if mem["failure"]:
            failures[f"n={n}"] = mem["failure"]
        fine_by_time = {round(t, 12): m for t, m in zip(mem["times"], mem["moments"])}
        for j, p in enumerate(probes):
            curve = []
            for t in [0.0] + checkpoints + [T]:
                key = round(t, 12)
                if key in fine_by_time and key in mf_by_time:
                    curve.append((t, abs(fine_by_time[key][j] - mf_by_time[key][j])))
                else:
                    curve.append((t, math.nan))
            curves[p.label][n] = curve
            errors[p.label].append(curve[-1][1])

    return StudyReport(n_list=n_list, N_list=N_list, N_mf=N_mf, T=T, checkpoints=checkpoints,
                       probes=[p.label for p in probes], errors=errors, curves=curves,
                       failures=failures, run_hashes=hashes, horizon_T0=T0,
                       wall_time=_time.perf_counter() - start)


EXACT_TOL = 1e-12


def empirical_orders(errors: Sequence[float], n_list: Sequence[int], exact_tol: float = EXACT_TOL) -> list:
    """log(e_a/e_b)/log(n_b/n_a) for consecutive pairs; "exact" when both
    errors sit at round-off."""
    out = []
    for (ea, na), (eb, nb) in zip(zip(errors, n_list), zip(errors[1:], n_list[1:])):
        if ea <= exact_tol and eb <= exact_tol:
            out.append("exact")
        elif ea > 0 and eb > 0 and math.isfinite(ea) and math.isfinite(eb):
            out.append(math.log(ea / eb) / math.log(nb / na))
        else:
            out.append(math.nan)
    return out


def weak_limit_report(study: StudyReport, decrease_labels: Optional[Sequence[str]] = None,
                      halving_labels: Sequence[str] = (), exact_tol: float = EXACT_TOL) -> dict:
    """Error tables, empirical orders and a monotone-decrease verdict.

    A probe passes when e_last < e_first, or when both sit at round-off
    (the moment is conserved exactly by both solvers).  Probes in
    ``halving_labels`` must also satisfy e_last <= e_first / 2.
    """
    labels = list(decrease_labels) if decrease_labels is not None else list(study.probes)
    if len(study.n_list) < 3:
        warnings.warn("fewer than three resolutions; verdicts are report-only", stacklevel=2)
    rows = []
    all_pass = True
    for label in study.probes:
        e = study.errors[label]
        exact = all(x <= exact_tol for x in (e[0], e[-1]))
        decreased = exact or (math.isfinite(e[-1]) and e[-1] < e[0])
        halved = exact or (math.isfinite(e[-1]) and e[-1] <= 0.5 * e[0])
        checked = label in labels
        passed = decreased and (halved if label in halving_labels else True)
        if checked and not passed:
            all_pass = False
        rows.append({"probe": label, "errors": e, "orders": empirical_orders(e, study.n_list, exact_tol),
                     "exact": exact, "decreased": decreased, "halved": halved, "checked": checked,
                     "pass": passed})
    return {"n_list": study.n_list, "rows": rows, "monotone": all_pass,
            "failures": study.failures, "report_only": len(study.n_list) < 3}
