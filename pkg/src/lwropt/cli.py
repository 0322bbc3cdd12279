"""Command line entry point: solve, check, oracle, junction."""
import argparse
import csv
import json
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, load_junction, load_problem, parse_problem
from .costexpr import ExprError
from .fluxmodel import FluxModelError
from .groups import (AmbiguousCharacteristic, FractionField, GroupError, check_optimality,
                     support_violation)
from .junction import (JunctionError, admissible_region_contains, flux_bounds, simulate_buffer,
                       solve_lp, solve_priority_curve, solve_stop_sign)
from .laxhopf import BoundaryProfile, LaxError, LaxSolution
from .oracle import (OracleError, arrival_flux_error, brute_force_optimize, cell_averages,
                     fv_cost)
from .planner import PlannerError, plan

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 2, 3

log = logging.getLogger("lwropt")


class CheckFailed(RuntimeError):
    pass


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def write_csv(path, header, columns):
    rows = zip(*columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r], dtype=float)
    if data.size == 0:
        data = np.empty((0, len(header)))
    return header, data


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _options(cfg, args):
    opt = cfg.solver
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    kw["threads"] = args.threads if args.threads else (os.cpu_count() or 1)
    if getattr(args, "refine", None) is not None and args.command == "solve":
        kw["refine"] = args.refine
    return replace(opt, **kw)


# -- solve ---------------------------------------------------------------------
def run_solve(cfg, opt, out: Path):
    model, spec = cfg.model(), cfg.spec()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        p = plan(spec, model, cfg.length, opt)
    names = [g.name for g in spec.groups]
    out.mkdir(parents=True, exist_ok=True)
    res = p.solve
    G = spec.sizes
    write_json(out / "constants.json", {
        "groups": names,
        "C": p.constants,
        "kappa": p.kappa,
        "G": G,
        "masses": p.masses,
        "J": p.cost,
        "residual": res.residual,
        "converged": res.converged,
        "alternatives": res.alternatives,
        "refinements": res.refinements,
        "iterations": res.iterations,
        "warnings": [str(w.message) for w in caught],
        "config": cfg.raw,
    })
    prof = p.profile
    write_csv(out / "departures.csv", ["t", "u_bar"] + [f"u_bar_{n}" for n in names],
              [prof.mids, prof.rates] + list(p.group_rates))
    T, u = p.arrival_T, p.arrival_u
    theta = np.zeros((spec.N, T.size))
    theta[p.active, np.arange(T.size)] = 1.0
    write_csv(out / "arrivals.csv", ["t", "u"] + [f"theta_{n}" for n in names] + ["active_group"],
              [T, u] + list(theta) + [p.active + 1])
    grp = p.envelope.index(p.eta_T) + 1 if p.eta_T.size else np.empty(0, dtype=int)
    write_csv(out / "trajectories.csv", ["arrival_time", "departure_time", "group"],
              [p.eta_T, p.eta, grp])
    ok = res.converged and res.residual <= opt.tol * float(np.max(G))
    return p, ok


# -- check ---------------------------------------------------------------------
def run_check(cfg, out: Path):
    header, data = read_csv(out / "departures.csv")
    consts = json.loads((out / "constants.json").read_text())
    model, spec = cfg.model(), cfg.spec()
    C = np.asarray(consts["C"], dtype=float)
    co = cfg.check
    report = {"conditions": {}, "warnings": []}
    mids = data[:, 0]
    total = data[:, 1]
    group_rates = data[:, 2:].T
    if mids.size < 2:
        raise CheckFailed("departures.csv has fewer than two cells")
    h = float(mids[1] - mids[0])
    profile = BoundaryProfile(mids[0] - 0.5 * h, mids[-1] + 0.5 * h, total)
    if profile.G <= 0.0:
        report["warnings"].append("empty plan: all conditions hold vacuously")
        report["passed"] = True
        return report
    sol = LaxSolution(model, profile, cfg.length)
    fractions = FractionField.from_rates(profile, group_rates)
    cond = report["conditions"]

    masses = group_rates.sum(axis=1) * h
    mass_err = np.abs(masses - spec.sizes) / spec.sizes
    cond["mass"] = {"masses": masses, "G": spec.sizes, "rel_error": mass_err,
                    "passed": bool(np.all(mass_err <= co.mass_rtol))}
    split = np.abs(group_rates.sum(axis=0) - total)
    cond["group_sum"] = {"max_error": float(np.max(split)),
                         "passed": bool(np.max(split) <= 1e-9 * (1.0 + np.max(total)))}

    rep = check_optimality(spec, C, sol, fractions, group_rates, co.support_samples, co.off_samples)
    lim = co.rtol * (1.0 + np.abs(C))
    cond["marginal_cost_support"] = {"max_deviation": rep.support_dev, "limit": lim,
                                     "passed": bool(np.all(rep.support_dev <= lim))}
    cond["marginal_cost_off_support"] = {"min_slack": rep.off_support_slack, "limit": -co.atol,
                                         "passed": bool(np.all(rep.off_support_slack >= -co.atol))}
    cond["ambiguous_samples"] = rep.ambiguous

    supp = profile.support()
    lo = profile.t_lo + cfg.length * model.gp0
    hi = sol.level_time(profile.G * (1.0 - 1e-12))[0]
    T = np.linspace(lo, hi, co.shock_points)
    ci = sol.backward_char_interval(T)
    width = float(np.max(ci.width))
    cond["shock_scan"] = {"points": co.shock_points, "max_width": width, "cell": h,
                          "passed": bool(width <= h * (1.0 + 1e-9))}
    sui = support_violation(spec, C, sol, fractions, T)
    cond["support_condition"] = {"max_violation": sui, "passed": bool(sui <= co.sui_tol)}
    report["support"] = supp
    report["passed"] = all(v["passed"] for v in cond.values() if isinstance(v, dict))
    report["failed"] = sorted(k for k, v in cond.items() if isinstance(v, dict) and not v["passed"])
    return report


# -- oracle --------------------------------------------------------------------
def run_oracle(cfg, opt, refine, seed):
    model, spec = cfg.model(), cfg.spec()
    p = plan(spec, model, cfg.length, opt)
    cand = p.candidate
    oc = cfg.oracle
    lo, hi = p.profile.support() if p.profile.support() else cfg.window
    lo -= 0.5
    hi += 0.5
    report = {"C": p.constants, "plan_cost": p.cost}
    dts = [oc.dt, oc.dt / 2.0] if refine else [oc.dt]
    runs = []
    for dt in dts:
        l1, m_in, m_out = arrival_flux_error(cand.departure_rate, cand.arrival_rate, model,
                                             cfg.length, lo, hi, dt)
        runs.append({"dt": dt, "l1": l1, "mass_in": m_in, "mass_out": m_out})
    report["fv"] = runs
    if refine:
        report["fv_error_ratio"] = runs[0]["l1"] / runs[1]["l1"]

    # FV cost of the plan on the finest grid
    dt = dts[-1]
    n = int(round((hi - lo) / dt))
    rates = np.stack([cell_averages(lambda t, i=i: _group_rate(p, i, t), lo, lo + n * dt, n)
                      for i in range(spec.N)])
    report["plan_cost_fv"] = float(fv_cost(spec, model, cfg.length, rates, lo, dt)[0])

    ok = True
    if spec.N > 2:
        report["brute_force"] = "skipped: more than two groups (FV-only mode)"
    else:
        window = oc.window
        if window is None:
            a, b = p.profile.support() or cfg.window
            pad = 0.25 * (b - a)
            window = (a - pad, b + pad)
        bopt = replace(oc.brute, seed=oc.brute.seed if seed is None else seed)
        br = brute_force_optimize(spec, model, cfg.length, bopt.bins, window, bopt)
        J_plan = min(p.cost, report["plan_cost_fv"])
        bound = br.cost + oc.cost_rtol * abs(br.cost)
        ok = J_plan <= bound
        report["brute_force"] = {"bins": bopt.bins, "window": window, "cost": br.cost,
                                 "coarse_cost": br.coarse_cost, "rates": br.rates,
                                 "plan_cost_bound": bound, "plan_within_bound": ok}
    report["passed"] = ok
    return report


def _group_rate(p, i, t):
    """Piecewise-constant group rate of the plan at times ``t``."""
    prof = p.profile
    k = np.clip(np.floor((np.asarray(t) - prof.t_lo) / prof.h).astype(int), 0, prof.n - 1)
    inside = (np.asarray(t) >= prof.t_lo) & (np.asarray(t) < prof.t_hi)
    return np.where(inside, p.group_rates[i][k], 0.0)


# -- junction ------------------------------------------------------------------
def run_junction(setup, out: Path):
    cfg = setup.config
    b = flux_bounds(cfg, setup.rho_in, setup.rho_out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"model": setup.model, "bounds_incoming": b.incoming, "bounds_outgoing": b.outgoing}
    if setup.model == "buffer":
        ts, qs, fi, fo = simulate_buffer(cfg, b, None, setup.dt, setup.t_end, setup.record_every)
        write_csv(out / "queues.csv",
                  ["t"] + [f"q_{j + 1}" for j in range(cfg.n)] + [f"f_in_{i + 1}" for i in range(cfg.m)]
                  + [f"f_out_{j + 1}" for j in range(cfg.n)],
                  [ts] + list(qs.T) + list(fi.T) + list(fo.T))
        ref = solve_priority_curve(cfg, b)
        report.update({"incoming": fi[-1], "outgoing": fo[-1], "queues": qs[-1],
                       "priority_curve": ref.incoming,
                       "gap_to_priority_curve": float(np.max(np.abs(fi[-1] - ref.incoming)))})
        f = fi[-1]
    else:
        solver = {"lp": solve_lp, "priority": solve_priority_curve, "stopsign": solve_stop_sign}
        r = solver[setup.model](cfg, b)
        report.update({"incoming": r.incoming, "outgoing": r.outgoing, "active": r.active,
                       "tie": r.tie})
        f = r.incoming
    report["in_admissible_region"] = admissible_region_contains(cfg, b, f, tol=1e-12)
    write_json(out / "junction.json", report)
    return report


# -- entry ---------------------------------------------------------------------
def build_parser():
    ap = argparse.ArgumentParser(prog="lwropt", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "fit constants and write the optimal plan"),
                           ("check", "verify optimality conditions of a written plan"),
                           ("oracle", "cross-check a plan with FV and brute force"),
                           ("junction", "solve an intersection model")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None,
                       help="JSON config file (check: defaults to the one stored in --out)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="multistart / brute-force seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        p.add_argument("--refine", action=argparse.BooleanOptionalAction, default=None,
                       help="solve: grid refinement; oracle: also run FV at half the step")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        if args.command == "junction":
            setup = load_junction(args.config)
            report = run_junction(setup, out)
            print(json.dumps({k: report[k] for k in ("model", "incoming", "outgoing",
                                                        "in_admissible_region")},
                             default=_json_default))
            return EXIT_OK
        if args.config is None:
            if args.command != "check":
                raise ConfigError("--config is required")
            stored = out / "constants.json"
            if not stored.exists():
                raise ConfigError(f"no --config given and {stored} does not exist")
            cfg = parse_problem(json.loads(stored.read_text())["config"])
        else:
            cfg = load_problem(args.config)
        if args.command == "solve":
            p, ok = run_solve(cfg, _options(cfg, args), out)
            print(f"C = {np.array2string(p.constants, precision=6)}  "
                  f"kappa = {np.array2string(p.kappa, precision=6)}  J = {p.cost:.6f}")
            if not ok:
                print("solver residual above tolerance", file=sys.stderr)
                return EXIT_FAIL
            return EXIT_OK
        if args.command == "check":
            report = run_check(cfg, out)
            write_json(out / "report.json", report)
            if not report["passed"]:
                print("check failed: " + ", ".join(report["failed"]), file=sys.stderr)
                return EXIT_FAIL
            for w in report["warnings"]:
                print("warning: " + w, file=sys.stderr)
            print("check passed")
            return EXIT_OK
        if args.command == "oracle":
            report = run_oracle(cfg, _options(cfg, args), bool(args.refine), args.seed)
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "oracle.json", report)
            print(json.dumps({"plan_cost": report["plan_cost"], "fv": report["fv"],
                              "passed": report["passed"]}, default=_json_default))
            return EXIT_OK if report["passed"] else EXIT_FAIL
    except (ConfigError, ExprError, FluxModelError, GroupError, JunctionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PlannerError, LaxError, OracleError, AmbiguousCharacteristic, CheckFailed) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
