"""Trajectory invariant suite.

Every check consumes only the scenario (for design constants) plus the
logged trace and event records, so it can run equally on an in-memory
result or on files re-read from a run directory.  Checks that need
constants the design does not define (e.g. the combined error bound when
rho is undefined) or thresholds the scenario does not configure are
reported as skipped-but-passing with an explanatory detail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import max_abs
from .sim import (CONSENSUS, REGULATION, ZENO_EVENT_CAP, EventLog, SimTrace,
                  Scenario)

#: absolute slack absorbing float dust in inequalities that are exact in
#: real arithmetic
EPS_SLACK = 1e-12

#: allowed trigger-safety overshoot at samples (event localization slack)
TRIGGER_SLACK = 1e-6

#: additive slack (times ||p||^2) on the Lyapunov decrease rate
LYAP_SLACK = 1e-3


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.detail}"


def _per_agent_norms(trace: SimTrace, n: int, q: int):
    eps = np.empty((n, len(trace)))
    pnm = np.empty((n, len(trace)))
    for i in range(n):
        e2 = np.zeros(len(trace))
        p2 = np.zeros(len(trace))
        for c in range(q):
            e2 += trace[f"eps{i + 1}_{c + 1}"] ** 2
            p2 += trace[f"p{i + 1}_{c + 1}"] ** 2
        eps[i] = np.sqrt(e2)
        pnm[i] = np.sqrt(p2)
    return eps, pnm


def verify_run(scn: Scenario, trace: SimTrace, events: EventLog) -> list[CheckResult]:
    n, q = scn.graph.n, scn.model.q
    design = scn.design
    t = trace.t
    results: list[CheckResult] = []
    eps_n, p_n = _per_agent_norms(trace, n, q)
    p_tot = trace["p_norm"]
    has_plants = bool(scn.plants)

    # --- event log sanity -------------------------------------------------
    ok, detail = True, "all event times strictly increasing, intervals positive"
    for fam in (CONSENSUS, REGULATION) if has_plants else (CONSENSUS,):
        for i in range(n):
            times = events.times(i, fam)
            dts = events.intervals(i, fam)
            if times.size and np.any(np.diff(times) <= 0.0):
                ok, detail = False, f"agent {i + 1} {fam} times not increasing"
            if dts.size and np.any(dts <= 0.0):
                ok, detail = False, f"agent {i + 1} {fam} has a nonpositive interval"
    results.append(CheckResult("event_log_monotone", ok, detail))

    # --- consensus dwell time ----------------------------------------------
    worst = math.inf
    for i in range(n):
        dts = events.intervals(i, CONSENSUS)
        if dts.size:
            worst = min(worst, float(dts.min()))
    if worst == math.inf:
        results.append(CheckResult("consensus_dwell", True,
                                   "skipped: no completed consensus intervals"))
    else:
        results.append(CheckResult(
            "consensus_dwell", worst >= design.b,
            f"min interval {worst:.9g} vs floor b = {design.b:.9g}"))

    # --- per-agent hold-error bound inside crossing-branch windows ------------
    violations = 0
    checked = 0
    for i in range(n):
        times = events.times(i, CONSENSUS)
        dts = events.intervals(i, CONSENSUS)       # aligned with times[1:]
        for k in range(1, times.size):
            if dts[k - 1] <= design.b:
                continue                            # timer branch: bound not claimed
            lo = np.searchsorted(t, times[k - 1], side="left")
            hi = np.searchsorted(t, times[k], side="left")
            if hi <= lo:
                continue
            checked += hi - lo
            bad = eps_n[i, lo:hi] > design.eta_i[i] * p_n[i, lo:hi] + EPS_SLACK
            violations += int(bad.sum())
    results.append(CheckResult(
        "consensus_hold_error_bound", violations == 0,
        f"{violations} violations over {checked} samples in crossing-branch windows"))

    # --- combined error bound -----------------------------------------------
    if design.rho is None:
        results.append(CheckResult(
            "combined_error_bound", True,
            "skipped: rho undefined for this coupling strength"))
        results.append(CheckResult(
            "lyapunov_decrease", True,
            "skipped: varphi undefined for this coupling strength"))
    else:
        premise = np.ones(len(trace), dtype=bool)
        for i in range(n):
            local = np.maximum(design.eta_i[i] * p_n[i], design.phi * p_tot)
            premise &= eps_n[i] <= local + EPS_SLACK
        eps_tot_sq = (eps_n ** 2).sum(axis=0)
        bound = (design.varphi / design.rho ** 2) * p_tot ** 2
        bad = premise & (eps_tot_sq > bound + EPS_SLACK)
        results.append(CheckResult(
            "combined_error_bound", int(bad.sum()) == 0,
            f"{int(bad.sum())} violations over {int(premise.sum())} samples "
            "where all per-agent bounds hold"))

        if design.varphi >= 1.0:
            results.append(CheckResult(
                "lyapunov_decrease", True,
                f"skipped: varphi = {design.varphi:.6g} >= 1"))
        else:
            V = trace["V"]
            mask = eps_tot_sq <= bound
            rate = -(1.0 - design.varphi) / 2.0 + LYAP_SLACK
            bad_count = 0
            applicable = 0
            dt_s = np.diff(t)
            slopes = np.diff(V) / dt_s
            for k in range(len(trace) - 1):
                if not mask[k]:
                    continue
                applicable += 1
                if slopes[k] > rate * p_tot[k] ** 2:
                    bad_count += 1
            results.append(CheckResult(
                "lyapunov_decrease", bad_count == 0,
                f"{bad_count} slope violations over {applicable} applicable "
                "sample pairs"))

    # --- scenario-specific consensus decay -----------------------------------
    thr = scn.verify_cfg.get("p_decay")
    if thr is None:
        results.append(CheckResult("consensus_decay", True,
                                   "skipped: no p_decay threshold configured"))
    else:
        ok = p_tot[-1] <= float(thr) * p_tot[0]
        results.append(CheckResult(
            "consensus_decay", bool(ok),
            f"|p(T)| = {p_tot[-1]:.6g} vs {thr} * |p(0)| = "
            f"{float(thr) * p_tot[0]:.6g}"))

    if not has_plants:
        return results

    # --- regulation trigger safety ---------------------------------------------
    violations = 0
    checked = 0
    worst_excess = 0.0
    for i, plant in enumerate(scn.plants):
        varpi = np.abs(trace[f"varpi{i + 1}"])
        qv = np.abs(trace[f"q{i + 1}"])
        sigma_q = np.array([plant.sigma(v) for v in qv])
        ev_times = events.times(i, REGULATION)
        interior = ~np.isin(t, ev_times)
        excess = varpi - sigma_q - TRIGGER_SLACK
        bad = interior & (excess > 0.0)
        checked += int(interior.sum())
        violations += int(bad.sum())
        if bad.any():
            worst_excess = max(worst_excess, float(excess[bad].max()))
    results.append(CheckResult(
        "regulation_trigger_safety", violations == 0,
        f"{violations} violations over {checked} interior samples"
        + (f", worst excess {worst_excess:.3e}" if violations else "")))

    # --- regulation dwell / Zeno -------------------------------------------------
    min_dt = math.inf
    for i in range(n):
        dts = events.intervals(i, REGULATION)
        if dts.size:
            min_dt = min(min_dt, float(dts.min()))
    if min_dt == math.inf:
        results.append(CheckResult("regulation_dwell", True,
                                   "skipped: no completed regulation intervals"))
    else:
        results.append(CheckResult(
            "regulation_dwell", min_dt > 0.0,
            f"min regulation interval {min_dt:.9g}"))
    unit_max = 0
    for fam in (CONSENSUS, REGULATION):
        for i in range(n):
            times = events.times(i, fam)
            if times.size:
                unit_max = max(unit_max, int(np.bincount(times.astype(int)).max()))
    results.append(CheckResult(
        "zeno_event_counts", unit_max <= ZENO_EVENT_CAP,
        f"max events in any unit interval: {unit_max}"))

    # --- generator residuals --------------------------------------------------
    worst_resid = 0.0
    worst_inv = 0.0
    for plant in scn.plants:
        for stage in plant.generator.stages:
            resid = max_abs(stage.M @ stage.T + np.outer(stage.N, stage.Psi)
                            - stage.T @ stage.Phi)
            worst_resid = max(worst_resid, resid /
                              (1.0 + max_abs(np.outer(stage.N, stage.Psi))))
            worst_inv = max(worst_inv, max_abs(stage.T @ stage.T_inv
                                               - np.eye(stage.dim)))
    results.append(CheckResult(
        "generator_residuals", worst_resid <= 1e-9 and worst_inv <= 1e-8,
        f"worst transform residual {worst_resid:.3e}, "
        f"worst inverse residual {worst_inv:.3e}"))

    # --- synchronization tail ----------------------------------------------------
    thr = scn.verify_cfg.get("sync_error_max")
    if thr is None:
        results.append(CheckResult("sync_error_tail", True,
                                   "skipped: no sync_error_max configured"))
    else:
        frac = float(scn.verify_cfg.get("sync_tail_fraction", 0.1))
        sync = trace["sync_err"]
        tail_mask = t >= (1.0 - frac) * scn.horizon
        worst = float(sync[tail_mask].max())
        results.append(CheckResult(
            "sync_error_tail", worst <= float(thr),
            f"max sync error over final {frac:.0%}: {worst:.6g} vs {thr}"))

    # --- ISS-style peak decay after the network input settles ----------------------
    mu_thr = scn.verify_cfg.get("iss_mu_threshold")
    window = scn.verify_cfg.get("iss_window")
    if mu_thr is None or window is None:
        results.append(CheckResult(
            "regulation_peak_decay", True,
            "skipped: no iss_mu_threshold/iss_window configured"))
    else:
        ok = True
        detail = "peaks nonincreasing for all agents"
        for i in range(n):
            mu_abs = np.abs(trace[f"mu{i + 1}"])
            settled = np.maximum.accumulate(mu_abs[::-1])[::-1] < float(mu_thr)
            if not settled.any():
                continue
            e_abs = np.abs(trace[f"e{i + 1}"])
            peaks = []
            w0 = float(t[int(np.argmax(settled))])
            while w0 < scn.horizon - 1e-12:
                m = (t >= w0) & (t < w0 + float(window))
                if m.any():
                    peaks.append(float(e_abs[m].max()))
                w0 += float(window)
            for prev, nxt in zip(peaks, peaks[1:]):
                if nxt > prev + EPS_SLACK:
                    ok = False
                    detail = (f"agent {i + 1}: peak rose from {prev:.6g} to "
                              f"{nxt:.6g} across windows")
        results.append(CheckResult("regulation_peak_decay", ok, detail))

    return results
