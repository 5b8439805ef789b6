#!/usr/bin/env python3
"""Run the bundled four-agent ring benchmark end to end: print the design
report, simulate, emit files, then run the invariant suite on the results.

Usage: python scripts/run_benchmark.py [outdir] [--horizon H] [--step S]
"""
import argparse
import pathlib
import sys

REPO = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from etsync.cli import main as cli_main  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("outdir", nargs="?", default="out/ring4")
    ap.add_argument("--horizon", type=float, default=None)
    ap.add_argument("--step", type=float, default=None)
    ap.add_argument("--scenario", default=str(REPO / "scenarios" / "ring4.toml"))
    args = ap.parse_args()

    extra = []
    if args.horizon is not None:
        extra += ["--horizon", str(args.horizon)]
    if args.step is not None:
        extra += ["--step", str(args.step)]

    code = cli_main(["design", args.scenario] + extra)
    if code != 0:
        return code
    code = cli_main(["run", args.scenario, "-o", args.outdir] + extra)
    if code != 0:
        return code
    print(f"\ninvariant suite on {args.outdir}:")
    return cli_main(["verify", args.outdir])


if __name__ == "__main__":
    sys.exit(main())
