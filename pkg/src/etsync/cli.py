"""Command-line interface.

Subcommands::

    etsync design <config> [-o DIR]             print the gain-design report
    etsync run <config>... -o DIR [--jobs N]    simulate and emit files
    etsync verify <config-or-rundir>            run the invariant suite

Common flags ``--horizon``, ``--step``, ``--unchecked`` override the
corresponding config fields and are recorded in the run directory so a
rerun is exact.  Exit codes: 0 ok, 2 parse, 3 validation, 4 numerics,
5 simulation runtime, 6 verification failure, 1 unexpected.
"""
from __future__ import annotations

import argparse
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import load_config, parse_config
from .errors import (EtsyncError, LambdaOutOfRange, NotControllable,
                     NotHurwitz, NotObservable, NotStronglyConnected,
                     NumericsError, ParseError, SimulationError,
                     SpectralGapViolation, SingularT, ValidationError,
                     VarphiNotLessThanOne)
from .output import (design_report, read_events, read_overrides,
                     read_trajectory, write_run_outputs)
from .sim import run_scenario
from .verify import verify_run

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICS = 4
EXIT_RUNTIME = 5
EXIT_VERIFY = 6

_VALIDATION_ERRORS = (ValidationError, NotStronglyConnected, LambdaOutOfRange,
                      VarphiNotLessThanOne, SpectralGapViolation, SingularT,
                      NotObservable, NotControllable, NotHurwitz)


def exit_code_for(exc: Exception) -> int:
    if isinstance(exc, ParseError):
        return EXIT_PARSE
    if isinstance(exc, _VALIDATION_ERRORS):
        return EXIT_VALIDATION
    if isinstance(exc, NumericsError):
        return EXIT_NUMERICS
    if isinstance(exc, SimulationError):
        return EXIT_RUNTIME
    return EXIT_UNEXPECTED


def _overrides_from(args) -> dict:
    overrides = {}
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.step is not None:
        overrides["step"] = args.step
    if args.unchecked:
        overrides["unchecked"] = True
    return overrides


def _cmd_design(args) -> int:
    scn = load_config(args.config, overrides=_overrides_from(args))
    report = design_report(scn.design, scn.spectra)
    sys.stdout.write(report)
    if args.output is not None:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "design.txt").write_text(report)
    return EXIT_OK


def _run_one(config_path: str, outdir: str, overrides: dict) -> str:
    scn = load_config(config_path, overrides=overrides)
    result = run_scenario(scn)
    write_run_outputs(Path(outdir), scn, result)
    return (f"{scn.name}: {len(result.trace)} samples, "
            f"{len(result.events.records)} events -> {outdir}")


def _cmd_run(args) -> int:
    overrides = _overrides_from(args)
    outdir = Path(args.output)
    jobs = []
    if len(args.configs) == 1:
        jobs.append((args.configs[0], str(outdir)))
    else:
        for cfg in args.configs:
            jobs.append((cfg, str(outdir / Path(cfg).stem)))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_one, cfg, dest, overrides)
                       for cfg, dest in jobs]
            for fut in futures:
                print(fut.result())
    else:
        for cfg, dest in jobs:
            print(_run_one(cfg, dest, overrides))
    return EXIT_OK


def _cmd_verify(args) -> int:
    target = Path(args.target)
    if target.is_dir():
        overrides = read_overrides(target / "overrides.txt")
        scn = parse_config((target / "config.toml").read_bytes(),
                           name=target.name, overrides=overrides)
        trace = read_trajectory(target / "trajectory.csv")
        events = read_events(target / "events.csv")
    else:
        scn = load_config(target, overrides=_overrides_from(args))
        result = run_scenario(scn)
        trace, events = result.trace, result.events
    checks = verify_run(scn, trace, events)
    failed = 0
    for check in checks:
        print(check.line())
        if not check.ok:
            failed += 1
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="etsync",
        description="Design, simulate and verify event-triggered output "
                    "synchronization scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--horizon", type=float, default=None,
                       help="override [sim].horizon")
        p.add_argument("--step", type=float, default=None,
                       help="override [sim].step")
        p.add_argument("--unchecked", action="store_true",
                       help="skip the coupling-strength and varphi gates")

    p_design = sub.add_parser("design", help="print the gain-design report")
    p_design.add_argument("config")
    p_design.add_argument("-o", "--output", default=None,
                          help="also write design.txt into this directory")
    common(p_design)
    p_design.set_defaults(func=_cmd_design)

    p_run = sub.add_parser("run", help="simulate scenarios and emit files")
    p_run.add_argument("configs", nargs="+")
    p_run.add_argument("-o", "--output", required=True)
    p_run.add_argument("--jobs", type=int, default=1,
                       help="run multiple configs concurrently")
    common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser(
        "verify", help="run the invariant suite on a config or run directory")
    p_verify.add_argument("target")
    common(p_verify)
    p_verify.set_defaults(func=_cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EtsyncError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except Exception:
        traceback.print_exc()
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
