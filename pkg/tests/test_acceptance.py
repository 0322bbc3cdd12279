"""Acceptance criteria AC1-AC8.

Run with ``pytest tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``;
either way one PASS/FAIL line per criterion is printed at the end of the session.
"""
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import CONFIGS
from grid_oracle import grid_optimum_2x2, grid_optimum_3x2, random_instance
from lwropt.cli import run_oracle
from lwropt.config import load_problem
from lwropt.fluxmodel import affine_flux_model, build_flux_model
from lwropt.groups import FractionField, check_optimality
from lwropt.junction import admissible_region_contains, simulate_buffer, solve_lp, solve_priority_curve
from lwropt.laxhopf import BoundaryProfile, LaxSolution
from lwropt.oracle import arrival_flux_error
from lwropt.planner import plan

RESULTS = {}


def _arr(x):
    return np.array2string(np.asarray(x), formatter={"float_kind": "{:.3g}".format})


def record(name, ok, detail):
    RESULTS[name] = (bool(ok), detail)
    print(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
    return bool(ok)


@pytest.fixture(scope="module")
def e4():
    cfg = load_problem(CONFIGS / "example4.json")
    opt = replace(cfg.solver, threads=1)
    t0 = time.perf_counter()
    p = plan(cfg.spec(), cfg.model(), cfg.length, opt)
    return cfg, p, time.perf_counter() - t0


def test_ac1_example4_reproduction(e4):
    cfg, p, elapsed = e4
    C, G = p.constants, cfg.spec().sizes
    checks = {
        "C1": abs(C[0] - 5.18) <= 0.02,
        "C2": abs(C[1] - 2.10) <= 0.02,
        "kappa": bool(np.all(np.abs(p.kappa - G) <= 0.02 * G)),
        "runtime": elapsed <= 30.0,
    }
    bad = [k for k, v in checks.items() if not v]
    detail = (f"C=({C[0]:.4f}, {C[1]:.4f}) kappa=({p.kappa[0]:.4f}, {p.kappa[1]:.4f}) "
              f"time={elapsed:.1f}s" + (f" failing: {', '.join(bad)}" if bad else ""))
    assert record("AC1", not bad, detail), detail


def test_ac2_optimality_conditions(e4):
    cfg, p, _ = e4
    co = cfg.check
    sol = p.lax(cfg.model(), cfg.length)
    rep = check_optimality(cfg.spec(), p.constants, sol, p.fractions(), p.group_rates,
                           co.support_samples, 500)
    lim = 1e-3 * (1.0 + np.abs(p.constants))
    ok = np.all(rep.support_dev <= lim) and np.all(rep.off_support_slack >= -1e-3)
    detail = (f"support dev={_arr(rep.support_dev)} limit={_arr(lim)} "
              f"off-support slack={_arr(rep.off_support_slack)}")
    assert record("AC2", ok, detail), detail


def test_ac3_no_shocks(e4):
    cfg, p, _ = e4
    sol = p.lax(cfg.model(), cfg.length)
    idx = np.linspace(0, p.arrival_T.size - 1, 1000).round().astype(int)
    width = float(np.max(sol.backward_char_interval(p.arrival_T[idx]).width))
    detail = f"max width={width:.3g} cell={p.profile.h:.3g}"
    assert record("AC3", width <= p.profile.h, detail), detail


def test_ac4_self_consistency(e4):
    cfg, p, _ = e4
    sol = p.lax(cfg.model(), cfg.length)
    T = p.arrival_T
    l1 = float(np.sum(np.abs(sol.flux(T) - p.arrival_u)[:-1] * np.diff(T)))
    lim = 1e-3 * float(np.sum(cfg.spec().sizes))
    detail = f"L1={l1:.3g} limit={lim:.3g}"
    assert record("AC4", l1 <= lim, detail), detail


def test_ac5_fv_cross_check(e4):
    cfg, p, _ = e4
    cand = p.candidate
    lo, hi = p.profile.support()
    G = float(np.sum(cfg.spec().sizes))
    errs = [arrival_flux_error(cand.departure_rate, cand.arrival_rate, cfg.model(), cfg.length,
                               lo - 0.5, hi + 0.5, dt)[0] for dt in (1e-3, 5e-4)]
    ratio = errs[0] / errs[1]
    ok = errs[0] <= 1e-2 * G and ratio >= 1.5
    detail = f"L1(1e-3)={errs[0]:.3g} L1(5e-4)={errs[1]:.3g} ratio={ratio:.2f}"
    assert record("AC5", ok, detail), detail


@pytest.mark.slow
def test_ac6_brute_force_bound():
    cfg = load_problem(CONFIGS / "single_group.json")
    t0 = time.perf_counter()
    rep = run_oracle(cfg, replace(cfg.solver, threads=1), refine=False, seed=None)
    elapsed = time.perf_counter() - t0
    bf = rep["brute_force"]
    J = min(rep["plan_cost"], rep["plan_cost_fv"])
    ok = J <= 1.01 * bf["cost"] and elapsed <= 300.0
    detail = f"plan={J:.5f} brute={bf['cost']:.5f} bound={1.01 * bf['cost']:.5f} time={elapsed:.0f}s"
    assert record("AC6", ok, detail), detail


def test_ac7_property_suites():
    rng = np.random.default_rng(7)
    fails = []
    models = {"affine": affine_flux_model(2.0, 1.0),
              "generic": build_flux_model(lambda r: 2.0 - np.asarray(r, dtype=float), 2.0)}
    for name, m in models.items():
        rho = np.linspace(0.0, m.rho_max, 200)
        if np.max(np.abs(m.g(m.f(rho)) - rho)) > 1e-9:
            fails.append(f"{name} round trip")
        p = rng.uniform(0.5, 5.0, 200)
        u = rng.uniform(0.0, m.M, 200)
        if np.min(np.asarray(m.g_star(p)) + np.asarray(m.g(u)) - p * u) < -1e-9:
            fails.append(f"{name} Fenchel-Young")
    for seed in range(5):
        k = rng.integers(3, 8)
        edges = np.sort(rng.uniform(0.0, 4.0, k + 1))
        rates = np.zeros(240)
        t = -1.0 + (np.arange(240) + 0.5) * 0.025
        for a, b, r in zip(edges[:-1], edges[1:], rng.uniform(0.0, 0.9, k)):
            rates[(t >= a) & (t < b)] = r
        sol = LaxSolution(models["affine"], BoundaryProfile(-1.0, 5.0, rates), 2.0)
        ci = sol.backward_char_interval(np.linspace(0.5, 12.0, 3000))
        if not (np.all(ci.eta_minus <= ci.eta_plus) and np.all(ci.eta_plus[:-1] <= ci.eta_minus[1:] + 1e-9)):
            fails.append(f"non-crossing seed {seed}")
        split = rng.dirichlet(np.ones(3), size=rates.size).T * rates
        ff = FractionField.from_rates(sol.profile, split)
        th = ff.theta(np.linspace(0.0, sol.profile.G, 501))
        if np.min(th) < -1e-9 or np.max(np.abs(th.sum(axis=-1) - 1.0)) > 1e-9:
            fails.append(f"theta simplex seed {seed}")
    detail = "round trip, Fenchel-Young, non-crossing, theta simplex" + (
        f" failing: {', '.join(fails)}" if fails else "")
    assert record("AC7", not fails, detail), detail


def test_ac8_junction_suite():
    worst_lp = 0.0
    fails = []
    for m, base in ((2, 0), (3, 1000)):
        oracle = grid_optimum_2x2 if m == 2 else grid_optimum_3x2
        for seed in range(50):
            cfg, b = random_instance(np.random.default_rng(base + seed), m, 2)
            r = solve_lp(cfg, b)
            lp = float(cfg.priorities @ r.incoming)
            gap = lp - oracle(cfg, b)
            worst_lp = max(worst_lp, abs(gap))
            if not admissible_region_contains(cfg, b, r.incoming) or gap < -1e-12 or gap > 1e-4:
                fails.append(f"lp {m}x2 seed {seed}")
    worst_buf = 0.0
    for seed in range(20):
        cfg, b = random_instance(np.random.default_rng(4000 + seed), 2, 2, M_buf=1e-3)
        _, _, fin, _ = simulate_buffer(cfg, b, dt=1e-5, t_end=0.1, record_every=1000)
        gap = float(np.max(np.abs(fin[-1] - solve_priority_curve(cfg, b).incoming)))
        worst_buf = max(worst_buf, gap)
        if gap > 1e-2:
            fails.append(f"buffer seed {seed}")
    detail = f"max LP-grid gap={worst_lp:.2g} max buffer gap={worst_buf:.2g}" + (
        f" failing: {', '.join(fails)}" if fails else "")
    assert record("AC8", not fails, detail), detail


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
