"""Solve the bundled two-group instance, verify it, and compare with the reference constants."""
import argparse
import json
import sys
import time
from pathlib import Path

from lwropt.cli import main

ROOT = Path(__file__).resolve().parents[1]
REFERENCE = (5.18, 2.10)


def run():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "example4.json"))
    ap.add_argument("--out", default="out/example4")
    ap.add_argument("--threads", default="1")
    args = ap.parse_args()

    t0 = time.perf_counter()
    rc = main(["solve", "--config", args.config, "--out", args.out, "--threads", args.threads])
    print(f"solve: exit {rc} in {time.perf_counter() - t0:.1f}s")
    if rc:
        return rc
    rc = main(["check", "--out", args.out])
    consts = json.loads((Path(args.out) / "constants.json").read_text())
    for i, (c, q) in enumerate(zip(consts["C"], REFERENCE), 1):
        print(f"C{i} = {c:.6f}  reference {q:.2f}  diff {c - q:+.4f}")
    print("kappa =", ", ".join(f"{k:.6f}" for k in consts["kappa"]), " J =", f"{consts['J']:.6f}")
    return rc


if __name__ == "__main__":
    sys.exit(run())
