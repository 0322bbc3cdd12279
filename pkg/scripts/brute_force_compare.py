"""Compare the planner's cost with the binned brute-force optimum for one or two groups."""
import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

from lwropt.cli import run_oracle
from lwropt.config import load_problem

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "single_group.json"))
    ap.add_argument("--bins", type=int, nargs="+", default=[8, 16])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = load_problem(args.config)
    for bins in args.bins:
        cfg.oracle.brute = replace(cfg.oracle.brute, bins=bins)
        t0 = time.perf_counter()
        rep = run_oracle(cfg, cfg.solver, refine=False, seed=args.seed)
        bf = rep["brute_force"]
        print(json.dumps({"bins": bins, "plan_cost": rep["plan_cost"],
                          "plan_cost_fv": rep["plan_cost_fv"], "brute_cost": bf["cost"],
                          "within_bound": bf["plan_within_bound"],
                          "seconds": round(time.perf_counter() - t0, 1)}))


if __name__ == "__main__":
    main()
