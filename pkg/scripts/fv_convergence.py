"""Finite-volume error of the bundled plan's arrival flux under step refinement.

Prints the L1 error per step, the pairwise observed orders, and the order after dividing
out the log(1/dt) factor that first-order schemes pick up at rarefaction fans.
"""
import argparse
from pathlib import Path

import numpy as np

from lwropt.config import load_problem
from lwropt.oracle import arrival_flux_error
from lwropt.planner import plan

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "example4.json"))
    ap.add_argument("--dt", type=float, nargs="+", default=[2e-3, 1e-3, 5e-4, 2.5e-4])
    args = ap.parse_args()

    cfg = load_problem(args.config)
    p = plan(cfg.spec(), cfg.model(), cfg.length, cfg.solver)
    lo, hi = p.profile.support()
    dts = np.array(sorted(args.dt, reverse=True))
    errs = np.array([arrival_flux_error(p.candidate.departure_rate, p.candidate.arrival_rate,
                                        cfg.model(), cfg.length, lo - 0.5, hi + 0.5, dt)[0]
                     for dt in dts])
    print(f"{'dt':>10} {'L1':>12} {'ratio':>7} {'order':>7} {'order/log':>10}")
    for k, (dt, e) in enumerate(zip(dts, errs)):
        if k == 0:
            print(f"{dt:10.3g} {e:12.5g}")
            continue
        r = errs[k - 1] / e
        q = np.log(r) / np.log(dts[k - 1] / dt)
        scaled = errs[k - 1] / np.log(1 / dts[k - 1]) / (e / np.log(1 / dt))
        ql = np.log(scaled) / np.log(dts[k - 1] / dt)
        print(f"{dt:10.3g} {e:12.5g} {r:7.3f} {q:7.3f} {ql:10.3f}")


if __name__ == "__main__":
    main()
