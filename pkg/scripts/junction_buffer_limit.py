"""Distance between buffer-model fluxes and the priority-curve solution as capacity shrinks."""
import argparse
from pathlib import Path

import numpy as np

from lwropt.config import load_junction
from lwropt.junction import JunctionConfig, flux_bounds, simulate_buffer, solve_priority_curve

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "junction_buffer.json"))
    ap.add_argument("--capacity", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4])
    ap.add_argument("--t-end", type=float, default=None,
                    help="simulated time; larger buffers need longer to fill")
    args = ap.parse_args()

    setup = load_junction(args.config)
    base = setup.config
    b = flux_bounds(base, setup.rho_in, setup.rho_out)
    ref = solve_priority_curve(base, b).incoming
    print("priority curve:", np.array2string(ref, precision=6))
    print(f"{'M_buf':>8} {'dt':>8} {'gap':>10}  incoming")
    for M in args.capacity:
        cfg = JunctionConfig(base.incoming, base.outgoing, base.priorities, base.turning, M)
        dt = min(setup.dt, M / 100.0)
        _, _, fin, _ = simulate_buffer(cfg, b, dt=dt, t_end=args.t_end or setup.t_end, record_every=10 ** 9)
        gap = float(np.max(np.abs(fin[-1] - ref)))
        print(f"{M:8.0e} {dt:8.0e} {gap:10.3g}  {np.array2string(fin[-1], precision=6)}")


if __name__ == "__main__":
    main()
