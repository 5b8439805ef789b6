"""File emission and re-ingestion for runs.

Every number is written as a 17-significant-digit decimal so downstream
verification loses nothing, and all writers are deterministic: identical
run results produce byte-identical files.

A run directory contains::

    trajectory.csv   one row per sample, columns as in SimTrace
    events.csv       agent,family,k,t,dt  (dt is the scheduled interval)
    metrics.txt      key = value
    design.txt       design constants and hypothesis flags
    config.toml      byte copy of the input config
    overrides.txt    command-line overrides applied to it (may be empty)
    plots/           two-column CSVs mirroring the standard figures
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .consensus import ConsensusDesign
from .errors import ParseError
from .graph import GraphSpectra
from .sim import CONSENSUS, REGULATION, EventLog, RunResult, Scenario, SimTrace


def fnum(x: float) -> str:
    return format(float(x), ".17g")


def design_report(design: ConsensusDesign, spectra: GraphSpectra) -> str:
    """Human-and-machine-readable design summary with one hypothesis flag
    per line; 'undefined' marks constants that do not exist for the chosen
    coupling strength."""
    lines = []
    n = design.n

    def kv(key, val):
        lines.append(f"{key} = {val}")

    kv("n", n)
    kv("lambda", fnum(design.lam))
    kv("beta", fnum(design.beta))
    kv("beta_overridden", str(design.beta_overridden).lower())
    kv("lambda2_hat", fnum(design.lambda2_hat))
    kv("lambda_bound", fnum(design.lambda2_hat / n))
    kv("r", " ".join(fnum(v) for v in spectra.r))
    kv("g", " ".join(fnum(v) for v in design.g))
    for i in range(design.P.shape[0]):
        kv(f"P_row{i + 1}", " ".join(fnum(v) for v in design.P[i]))
    kv("K", " ".join(fnum(v) for v in design.K))
    kv("eta_i", " ".join(fnum(v) for v in design.eta_i))
    kv("eta", fnum(design.eta))
    kv("phi", fnum(design.phi))
    kv("rho", "undefined" if design.rho is None else fnum(design.rho))
    kv("varphi", "undefined" if design.varphi is None else fnum(design.varphi))
    kv("a_norm", fnum(design.a_norm))
    kv("bbtp_norm", fnum(design.bbtp_norm))
    kv("lambda_lg", fnum(design.lambda_lg))
    kv("b1", fnum(design.b1))
    kv("b2", fnum(design.b2))
    kv("b", fnum(design.b))
    kv("unchecked", str(design.unchecked).lower())
    kv("check_lambda_in_range", "PASS" if design.lambda_in_range else
       f"FAIL (lambda = {fnum(design.lam)} not in (0, "
       f"{fnum(design.lambda2_hat / n)}))")
    if design.varphi_below_one is None:
        kv("check_varphi_lt_1", "UNDEFINED (rho undefined)")
    else:
        kv("check_varphi_lt_1", "PASS" if design.varphi_below_one else
           f"FAIL (varphi = {fnum(design.varphi)} >= 1)")
    kv("check_strongly_connected", "PASS")
    kv("check_g_ge_r", "PASS")
    return "\n".join(lines) + "\n"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def write_trajectory(path: Path, trace: SimTrace) -> None:
    with path.open("w", newline="") as fh:
        fh.write(",".join(trace.columns) + "\n")
        for row in trace.data:
            fh.write(",".join(fnum(v) for v in row) + "\n")


def write_events(path: Path, events: EventLog) -> None:
    with path.open("w", newline="") as fh:
        fh.write("agent,family,k,t,dt\n")
        for agent, family, k, t, dt in events.records:
            fh.write(f"{agent + 1},{family},{k},{fnum(t)},{fnum(dt)}\n")


def write_metrics(path: Path, metrics: dict) -> None:
    with path.open("w", newline="") as fh:
        for key, val in metrics.items():
            fh.write(f"{key} = {fnum(val)}\n")


def write_plot_data(outdir: Path, scn: Scenario, result: RunResult) -> None:
    """Two-column (t, value) files: reference-state components, tracked
    outputs vs the agreed output, and inter-event stems per agent/family."""
    plots = outdir / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    trace = result.trace
    t = trace.t
    n, q = scn.graph.n, scn.model.q

    def two_col(name, xs, ys):
        _write_csv(plots / name, ["t", "value"],
                   ((fnum(a), fnum(b)) for a, b in zip(xs, ys)))

    for i in range(n):
        for c in range(q):
            two_col(f"v{i + 1}_{c + 1}.csv", t, trace[f"v{i + 1}_{c + 1}"])
    if scn.plants:
        v_cols = np.stack([[trace[f"v{i + 1}_{c + 1}"] for c in range(q)]
                           for i in range(n)])          # (n, q, S)
        v_inf = np.einsum("i,ics->cs", scn.spectra.r, v_cols)
        y_inf = np.array([scn.output_map(v_inf[:, s]) for s in range(len(trace))])
        two_col("y_inf.csv", t, y_inf)
        for i in range(n):
            two_col(f"y{i + 1}.csv", t, trace[f"x{i + 1}_1"])
    for family in (CONSENSUS, REGULATION):
        for i in range(n):
            times = result.events.times(i, family)
            dts = result.events.intervals(i, family)
            if times.size == 0:
                continue
            two_col(f"events_{family}_agent{i + 1}.csv", times[1:], dts)


def write_run_outputs(outdir: Path, scn: Scenario, result: RunResult) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_trajectory(outdir / "trajectory.csv", result.trace)
    write_events(outdir / "events.csv", result.events)
    write_metrics(outdir / "metrics.txt", result.metrics)
    (outdir / "design.txt").write_text(design_report(scn.design, scn.spectra))
    if scn.source is not None:
        (outdir / "config.toml").write_bytes(scn.source)
    with (outdir / "overrides.txt").open("w", newline="") as fh:
        for key in sorted(scn.overrides):
            fh.write(f"{key} = {scn.overrides[key]}\n")
    write_plot_data(outdir, scn, result)


def read_trajectory(path: Path) -> SimTrace:
    with Path(path).open() as fh:
        header = fh.readline().strip()
    if not header:
        raise ParseError(f"{path}: empty trajectory file")
    columns = header.split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(columns):
        raise ParseError(f"{path}: {data.shape[1]} columns vs "
                         f"{len(columns)} header fields")
    return SimTrace(columns=columns, data=data)


def read_events(path: Path) -> EventLog:
    log = EventLog()
    with Path(path).open() as fh:
        header = fh.readline().strip()
        if header != "agent,family,k,t,dt":
            raise ParseError(f"{path}: unexpected events header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 fields")
            agent, family, k, t, dt = parts
            log.add(int(agent) - 1, family, int(k), float(t), float(dt))
    return log


def read_overrides(path: Path) -> dict:
    overrides: dict = {}
    p = Path(path)
    if not p.exists():
        return overrides
    for line in p.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key in ("horizon", "step"):
            overrides[key] = float(val)
        elif key == "unchecked":
            overrides[key] = val == "True" or val == "true"
    return overrides
