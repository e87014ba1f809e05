"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is
printed inline and repeated in the terminal summary."""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, CLOSURE_LOG
from mflab.cli import main
from mflab.constitutive import powerlaw_laws
from mflab.grid import PeriodicGrid
from mflab.homogenization import (Constant, Sinusoid, YoungMeasureSpec, convergence_study, default_probes,
                                  empirical_orders, weak_limit_report)
from mflab.multifluid import equivalence_check_k2, kinetic_residual, mf_initial_state, mf_run
from mflab.ns import horizon_estimate, ns_run

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
ORDER_SLACK = 0.05   # estimated orders of a first-order method scatter around 1
EXACT = 1e-8         # residual level treated as identically zero


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def canonical_spec():
    return YoungMeasureSpec((Constant(0.5), Constant(0.5)), (Constant(1.0), Constant(2.0)), Sinusoid(0.1, 1.0))


@pytest.fixture(scope="module")
def smooth_ns_run():
    g = PeriodicGrid(1.0, 512)
    start = time.perf_counter()
    run = ns_run(g.sample(Sinusoid(0.2, 1.0, offset=1.0)), Sinusoid(0.1, 1.0), powerlaw_laws(), 0.1,
                 output_every=1)
    return run, time.perf_counter() - start


@pytest.fixture(scope="module")
def long_mf_run():
    s0 = canonical_spec().as_state(PeriodicGrid(1.0, 128))
    run = mf_run(s0, powerlaw_laws(), 1.0, dt=1e-4, output_every=500)
    return s0, run


@pytest.fixture(scope="module")
def residual_ladder():
    laws = powerlaw_laws()
    out = {}
    for N in (128, 256, 512, 1024):
        run = mf_run(canonical_spec().as_state(PeriodicGrid(1.0, N)), laws, 0.05, output_every=1, dt=0.5 / N)
        assert run.ok, run.failure
        out[N] = {r["label"]: r["max_abs"] for r in kinetic_residual(run.frames, laws, default_probes(laws))}
    return out


def test_criterion_01_bifluid_equivalence():
    start = time.perf_counter()
    rep = equivalence_check_k2(100_000, seed=1)
    wall = time.perf_counter() - start
    ok = rep.max_abs_difference <= 1e-12 and wall < 5.0
    report(1, ok, f"max |difference| = {rep.max_abs_difference:.2e} over 1e5 samples in {wall:.2f} s")


def test_criterion_02_constant_viscosity_reduction():
    worst = max(equivalence_check_k2(10_000, seed=s, constant_mu=mu).constant_viscosity
                for s, mu in ((1, 1.0), (3, 7.0)))
    # at mu = 0.3 rates reach ~80, where one ulp already exceeds 1e-14; reported, not judged
    small = equivalence_check_k2(10_000, seed=2, constant_mu=0.3).constant_viscosity
    report(2, worst <= 1e-14, f"max |difference| = {worst:.2e} on 1e4 samples (mu = 1, 7); "
                              f"{small:.2e} at mu = 0.3")


def test_criterion_03_closure_identity_every_frame(long_mf_run, residual_ladder):
    ok = CLOSURE_LOG["frames"] > 0 and CLOSURE_LOG["max"] <= 1e-12
    report(3, ok, f"max residual {CLOSURE_LOG['max']:.2e} over {CLOSURE_LOG['frames']} multifluid frames")


def test_criterion_04_simplex_and_phase_mass(long_mf_run):
    s0, run = long_mf_run
    m0, m1 = s0.phase_masses(), run.final.phase_masses()
    drift = max(run.step_drifts)
    mass = max(abs(b - a) / a for a, b in zip(m0, m1))
    ok = run.ok and run.steps >= 10_000 and drift <= 1e-12 and mass <= 1e-8
    report(4, ok, f"{run.steps} steps, max |sum alpha - 1| = {drift:.2e}, phase mass drift = {mass:.2e}")


def test_criterion_05_energy_inequality(smooth_ns_run):
    run, wall = smooth_ns_run
    d = run.diagnostics
    E0 = d[0]["kinetic"] + d[0]["potential"]
    worst = max((r["kinetic"] + r["potential"] + r["dissipation"]) / E0 - 1 for r in d)
    ok = run.ok and worst <= 1e-8 and wall < 30.0
    report(5, ok, f"max relative excess {worst:.2e} over {len(d)} frames, N=512, {wall:.1f} s")


def test_criterion_06_bd_entropy(smooth_ns_run):
    run, _ = smooth_ns_run
    bd = [r["bd_entropy"] for r in run.diagnostics]
    rise = max((b - a) / abs(a) for a, b in zip(bd, bd[1:]))
    report(6, rise <= 1e-6, f"largest relative increase {rise:.2e} over {len(bd)} frames")


def test_criterion_07_single_phase_oracle():
    laws = powerlaw_laws()
    rho0, u0 = Sinusoid(0.2, 1.0, offset=1.0), Sinusoid(0.1, 1.0)
    diffs = []
    for N in (128, 256, 512):
        g = PeriodicGrid(1.0, N)
        mf = mf_run(mf_initial_state(g, [Constant(1.0)], [rho0], u0), laws, 0.1).final
        ns = ns_run(g.sample(rho0), u0, laws, 0.1).final
        # compare on the fine mesh's current cell centres
        x = np.mod(ns.mesh.centers, 1.0)
        r = np.interp(x, g.centers, mf.rho[0], period=1.0)
        u = np.interp(x, g.centers, mf.u, period=1.0)
        diffs.append(math.sqrt(np.sum(ns.mesh.widths * ((r - ns.rho) ** 2 + (u - ns.u_centers().values) ** 2))))
    ratios = [a / b for a, b in zip(diffs, diffs[1:])]
    report(7, min(ratios) >= 1.8, "L2 gaps " + ", ".join(f"{d:.2e}" for d in diffs)
           + "; ratios " + ", ".join(f"{r:.2f}" for r in ratios))


def test_criterion_08_homogenization_convergence():
    laws = powerlaw_laws()
    probes = [p for p in default_probes(laws) if p.label.endswith("|1")]
    start = time.perf_counter()
    with pytest.warns(UserWarning, match="horizon"):
        study = convergence_study(canonical_spec(), laws, 0.05, [8, 16, 32, 64], probes)
    wall = time.perf_counter() - start
    rep = weak_limit_report(study, halving_labels=["xi|1"])
    rows = {r["probe"]: r for r in rep["rows"]}
    assert study.N_list == [512, 1024, 2048, 4096]
    ok = not study.failures and rep["monotone"] and wall < 900
    ok = ok and all(r["exact"] or r["errors"][-1] < r["errors"][0] for r in rows.values())
    xi = rows["xi|1"]
    ok = ok and (xi["exact"] or xi["errors"][-1] <= 0.5 * xi["errors"][0])
    parts = [f"{lab} exact" if r["exact"] else f"{lab} {r['errors'][0]:.1e}->{r['errors'][-1]:.1e}"
             for lab, r in rows.items()]
    report(8, ok, "; ".join(parts) + f"; {wall:.1f} s")


def test_criterion_09_horizon_constants():
    laws = powerlaw_laws()
    g = PeriodicGrid(1.0, 64)
    h = horizon_estimate(g.sample(lambda x: 1 + 0 * x), g.sample(lambda x: 0 * x), laws)
    # |kappa(1)|^2 = 1/4 and K_kappa = p(2)/mu(2) = 4/(1+sqrt 2)
    K_u0 = 72 * (0.25 + 1 + (4 / (1 + math.sqrt(2))) ** 2)
    T0_rho = min(0.5, abs(math.log(1.5) / (2 * h.K_d0)) ** 2)
    ok = h.K_u0 == pytest.approx(K_u0, rel=1e-14) and h.T0_rho == T0_rho

    step = PeriodicGrid(1.0, 128)
    rho0 = step.sample(lambda x: np.where(x < 0.5, 1.0, 2.0))
    u0 = step.sample(lambda x: 0 * x)
    T0 = horizon_estimate(rho0, u0, laws).T0
    run = ns_run(rho0, u0, laws, T0, output_every=1)
    lo = min(r["min_rho"] for r in run.diagnostics)
    hi = max(r["max_rho"] for r in run.diagnostics)
    ok = ok and run.ok and lo >= 0.5 and hi <= 4.0
    report(9, ok, f"K_u0 = {h.K_u0:.6f}, T0_rho = {h.T0_rho:.3e}; step data on [0, {T0:.2e}] "
                  f"stays in [{lo:.3f}, {hi:.3f}]")


def test_criterion_10_kinetic_residual(residual_ladder):
    Ns = sorted(residual_ladder)
    finest = residual_ladder[Ns[-1]]
    ok = all(residual_ladder[N][lab] <= 1e-8 for N in Ns for lab in ("1|1", "xi|1"))
    worst_order, exact = math.inf, []
    for lab in finest:
        e = [residual_ladder[N][lab] for N in Ns]
        if max(e) <= EXACT:
            exact.append(lab)
            continue
        orders = empirical_orders(e, Ns)
        decreasing = all(b < a for a, b in zip(e, e[1:]))
        ok = ok and decreasing and orders[-1] >= 1 - ORDER_SLACK
        worst_order = min(worst_order, orders[-1])
    report(10, ok, f"(1,1) {finest['1|1']:.1e}, (1,xi) {finest['xi|1']:.1e}; "
                   f"{len(exact)} probes identically zero; lowest finest-pair order {worst_order:.3f}")


def test_criterion_11_determinism(tmp_path):
    mismatched = []
    for command, name in (("ns", "ns_smooth.json"), ("ns", "ns_step.json"), ("mf", "mf_bifluid.json"),
                          ("homog", "homog_bifluid.json")):
        outs = [tmp_path / f"{name}.{i}" for i in (0, 1)]
        for out in outs:
            assert main([command, "--config", str(CONFIGS / name), "--output", str(out)]) == 0
        for csv in sorted(p.name for p in outs[0].glob("*.csv")):
            if (outs[0] / csv).read_bytes() != (outs[1] / csv).read_bytes():
                mismatched.append(f"{name}:{csv}")
        assert json.loads((outs[0] / "manifest.json").read_text())["config"] == json.loads(
            (CONFIGS / name).read_text())
    eq = [main(["equiv", "--config", str(CONFIGS / "equiv.json")]) for _ in range(2)]
    report(11, not mismatched and eq == [0, 0],
           "byte-identical CSVs for ns, mf and homog configs" if not mismatched else f"differs: {mismatched}")
