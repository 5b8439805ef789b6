#!/usr/bin/env python3
"""Integration-step sweep on the bundled benchmark: halve the step a few
times and report how the terminal synchronization error moves, as a quick
check that integration error is not driving the conclusions.

Usage: python scripts/step_sweep.py [--levels 2] [--horizon 30]
"""
import argparse
import pathlib
import sys
import time

REPO = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from etsync.config import load_config  # noqa: E402
from etsync.sim import run_scenario  # noqa: E402


def tail_max_sync(result, horizon: float) -> float:
    t = result.trace.t
    sync = result.trace["sync_err"]
    return float(sync[t >= 0.9 * horizon].max())


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=2,
                    help="number of halvings after the configured step")
    ap.add_argument("--horizon", type=float, default=None)
    ap.add_argument("--scenario", default=str(REPO / "scenarios" / "ring4.toml"))
    args = ap.parse_args()

    base = load_config(args.scenario)
    horizon = args.horizon if args.horizon is not None else base.horizon
    step = base.step
    prev = None
    for level in range(args.levels + 1):
        overrides = {"step": step}
        if args.horizon is not None:
            overrides["horizon"] = args.horizon
        scn = load_config(args.scenario, overrides=overrides)
        t0 = time.perf_counter()
        res = run_scenario(scn)
        wall = time.perf_counter() - t0
        tail = tail_max_sync(res, horizon)
        line = (f"step = {step:.6e}   tail max sync error = {tail:.6e}   "
                f"({wall:5.1f} s)")
        if prev is not None:
            line += f"   rel change = {abs(tail - prev) / prev:.3%}"
        print(line)
        prev = tail
        step /= 2.0
    return 0


if __name__ == "__main__":
    sys.exit(main())
