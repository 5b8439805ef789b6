"""Deterministic hybrid simulator.

Fixed-step RK4 on the full coupled state (reference models + plants +
compensators) with three kinds of discrete action:

* consensus broadcasts at exactly computed trigger times (the trigger
  integral is piecewise linear, so crossings are solved in closed form);
* regulation events localized by bisection whenever the small-gain
  trigger function changes sign across a step boundary;
* sample logging on the fixed grid.

The main loop advances to the nearest of (next consensus trigger, next
sample boundary), so no broadcast ever falls inside an integration step.
Simultaneous events are processed in ascending agent index with
broadcasts applied before any trigger re-query, making runs bit-for-bit
reproducible.

Known limit: regulation triggers are sign-monitored at step boundaries
only, so a crossing whose excursion above zero is fully contained inside
one step would be missed.  The step bound ``step <= b/4`` keeps steps
short relative to the event dynamics in scope.

Between events every held input (mu_i, u_bar_i) is constant and the
dynamics decouple agent by agent; bisection therefore re-integrates only
the affected agent's block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .consensus import (ConsensusAgent, ConsensusDesign, ReferenceModelSpec,
                        all_relative_measurements, lyapunov_V)
from .errors import NonFiniteState, ValidationError, ZenoGuardTripped
from .graph import DirectedGraph, GraphSpectra
from .regulation import RegulationPlant

#: hard cap on events per agent and family; tripping it means a config or
#: numerics bug, not a theory failure
ZENO_EVENT_CAP = 10 ** 6

#: bisection time tolerance is BISECT_TOL_REL * (1 + t)
BISECT_TOL_REL = 1e-10

CONSENSUS = "consensus"
REGULATION = "regulation"


@dataclass
class PlantInit:
    z0: np.ndarray
    x0: np.ndarray
    eta0: list[np.ndarray]


@dataclass
class Scenario:
    """Complete run description; immutable by convention during a run."""

    graph: DirectedGraph
    model: ReferenceModelSpec
    spectra: GraphSpectra
    design: ConsensusDesign
    plants: list[RegulationPlant]
    plant_init: list[PlantInit]
    v0: np.ndarray
    horizon: float
    step: float
    output_map: Callable | None = None   # shared tracked-output map c(v)
    seed: int = 0
    name: str = "scenario"
    verify_cfg: dict = field(default_factory=dict)
    source: bytes | None = None
    overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        n = self.graph.n
        if self.v0.shape != (n, self.model.q):
            raise ValidationError(
                f"v0 must be {n}x{self.model.q}, got {self.v0.shape}")
        if not self.step > 0.0:
            raise ValidationError(f"step must be positive, got {self.step}")
        if self.horizon < self.step:
            raise ValidationError(
                f"horizon {self.horizon} must be at least one step {self.step}")
        if self.step > self.design.b / 4.0:
            raise ValidationError(
                f"step {self.step:.6g} must be <= b/4 = {self.design.b / 4.0:.6g} "
                "so the consensus timer floor is resolved by at least 4 steps")
        if self.plants and len(self.plants) != n:
            raise ValidationError(
                f"either every agent has a plant or none does "
                f"(got {len(self.plants)} plants for {n} agents)")
        if len(self.plant_init) != len(self.plants):
            raise ValidationError("plant_init must match plants one to one")
        if self.plants and self.output_map is None:
            raise ValidationError("scenarios with plants need the shared "
                                  "output map c(v)")


@dataclass
class SimTrace:
    columns: list[str]
    data: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    def __len__(self) -> int:
        return self.data.shape[0]


class EventLog:
    """Time-ordered event records: (agent, family, k, t, dt).

    ``dt`` is the scheduled inter-event interval (nan for the k = 0 events
    at t = 0).  For consensus events it is ``max(tau, b)`` as computed by
    the scheduler, so the dwell bound ``dt >= b`` holds exactly even when
    ``t_k - t_{k-1}`` re-rounds by one ulp.
    """

    def __init__(self):
        self.records: list[tuple[int, str, int, float, float]] = []

    def add(self, agent: int, family: str, k: int, t: float, dt: float) -> None:
        self.records.append((agent, family, k, t, dt))

    def times(self, agent: int, family: str) -> np.ndarray:
        return np.array([r[3] for r in self.records
                         if r[0] == agent and r[1] == family])

    def intervals(self, agent: int, family: str) -> np.ndarray:
        return np.array([r[4] for r in self.records
                         if r[0] == agent and r[1] == family and r[2] > 0])

    def count(self, agent: int, family: str) -> int:
        return sum(1 for r in self.records if r[0] == agent and r[1] == family)


@dataclass
class RunResult:
    trace: SimTrace
    events: EventLog
    metrics: dict


def rk4_step(f: Callable, y: np.ndarray, h: float,
             k1: np.ndarray | None = None) -> np.ndarray:
    """One classical Runge-Kutta step of size h; ``k1 = f(y)`` may be
    passed in when the caller already evaluated it."""
    if k1 is None:
        k1 = f(y)
    k2 = f(y + (0.5 * h) * k1)
    k3 = f(y + (0.5 * h) * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def integrate_step(f: Callable, y: np.ndarray, h: float,
                   k1: np.ndarray | None = None) -> np.ndarray:
    """RK4 step plus the non-finite guard used by the main loop."""
    out = rk4_step(f, y, h, k1)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("integration produced a non-finite state")
    return out


def bisect_crossing(g_of_dt: Callable[[float], float], h_seg: float,
                    tol: float) -> float:
    """First upward zero crossing of g on (0, h_seg].

    Caller guarantees g(0) < 0; returns the right bracket end once the
    bracket is narrower than ``tol`` (so g at the returned offset is
    >= 0 whenever g(h_seg) >= 0).
    """
    if g_of_dt(h_seg) < 0.0:
        return h_seg
    lo, hi = 0.0, h_seg
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if g_of_dt(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class _Signals:
    e: float
    x_bar: np.ndarray
    varpi: float
    q: float
    g: float
    rest: bool


class _PlantRt:
    """Per-plant runtime bundle: state-vector slices and signal evaluation."""

    def __init__(self, agent: int, plant: RegulationPlant, q: int,
                 vsl: slice, zsl: slice, xsl: slice, esls: list[slice]):
        self.agent = agent
        self.plant = plant
        self.vsl, self.zsl, self.xsl, self.esls = vsl, zsl, xsl, esls
        m, r = plant.model.m, plant.model.r
        off = q
        self.bz = slice(off, off + m)
        off += m
        self.bx = slice(off, off + r)
        off += r
        self.bes = []
        for dim in plant.generator.eta_dims:
            self.bes.append(slice(off, off + dim))
            off += dim
        self.block_len = off

    def signals(self, v, dv, x, dx, etas, detas) -> _Signals:
        plant = self.plant
        model = plant.model
        e = float(x[0]) - float(model.c(v))
        x_bar = plant.sensor_bar_x(x, etas, e)
        e_dot = float(dx[0]) - float(np.asarray(model.c_grad(v)) @ dv)
        x_bar_dot = plant.x_bar_dot(dx, detas, e_dot)
        varpi, qv = plant.varpi_and_q(x_bar, x_bar_dot)
        return _Signals(e=e, x_bar=x_bar, varpi=varpi, q=qv,
                        g=plant.trigger_value(varpi, qv),
                        rest=plant.at_rest(varpi, qv))

    def signals_global(self, y: np.ndarray, d: np.ndarray) -> _Signals:
        etas = [y[s] for s in self.esls]
        detas = [d[s] for s in self.esls]
        return self.signals(y[self.vsl], d[self.vsl], y[self.xsl],
                            d[self.xsl], etas, detas)


class _Runner:
    def __init__(self, scn: Scenario):
        self.scn = scn
        self.n = scn.graph.n
        self.q = scn.model.q
        self.nv = self.n * self.q
        self.A = scn.model.A
        self.At = scn.model.A.T.copy()
        self.B = scn.model.B
        self.L = scn.spectra.laplacian
        self.design = scn.design
        self.agents = [ConsensusAgent(i, scn.design, scn.model, scn.graph)
                       for i in range(self.n)]
        self.mu = np.zeros(self.n)
        self.events = EventLog()
        self._counts = {(i, fam): 0 for i in range(self.n)
                        for fam in (CONSENSUS, REGULATION)}

        off = self.nv
        self.rts: list[_PlantRt] = []
        for i, plant in enumerate(scn.plants):
            plant.reset()
            m, r = plant.model.m, plant.model.r
            zsl = slice(off, off + m)
            off += m
            xsl = slice(off, off + r)
            off += r
            esls = []
            for dim in plant.generator.eta_dims:
                esls.append(slice(off, off + dim))
                off += dim
            self.rts.append(_PlantRt(i, plant, self.q,
                                     slice(i * self.q, (i + 1) * self.q),
                                     zsl, xsl, esls))
        self.ylen = off
        self.ubar = np.zeros(len(self.rts))

        self.y = np.zeros(self.ylen)
        self.y[:self.nv] = scn.v0.ravel()
        for rt, init in zip(self.rts, scn.plant_init):
            self.y[rt.zsl] = init.z0
            self.y[rt.xsl] = init.x0
            for s, e0 in zip(rt.esls, init.eta0):
                self.y[s] = e0

        self.k1 = np.zeros(self.ylen)
        self.sigs: list[_Signals | None] = [None] * len(self.rts)
        self.sched_t = np.full(self.n, math.inf)
        self.sched_dt = np.full(self.n, math.nan)

        self._columns = self._build_columns()
        self._rows: list[np.ndarray] = []

    # --- bookkeeping -----------------------------------------------------

    def _build_columns(self) -> list[str]:
        cols = ["t"]
        for i in range(self.n):
            cols += [f"v{i + 1}_{c + 1}" for c in range(self.q)]
        for rt in self.rts:
            i = rt.agent + 1
            cols += [f"z{i}_{c + 1}" for c in range(rt.plant.model.m)]
            cols += [f"x{i}_{c + 1}" for c in range(rt.plant.model.r)]
            for j, dim in enumerate(rt.plant.generator.eta_dims):
                cols += [f"eta{i}_{j + 1}_{c + 1}" for c in range(dim)]
        for i in range(self.n):
            cols += [f"p{i + 1}_{c + 1}" for c in range(self.q)]
        for i in range(self.n):
            cols += [f"eps{i + 1}_{c + 1}" for c in range(self.q)]
        cols += [f"mu{i + 1}" for i in range(self.n)]
        if self.rts:
            for i in range(self.n):
                cols += [f"e{i + 1}", f"varpi{i + 1}", f"q{i + 1}"]
        cols += ["V", "p_norm"]
        if self.rts:
            cols.append("sync_err")
        return cols

    def _count_event(self, agent: int, family: str) -> None:
        self._counts[(agent, family)] += 1
        if self._counts[(agent, family)] > ZENO_EVENT_CAP:
            raise ZenoGuardTripped(
                f"agent {agent + 1} exceeded {ZENO_EVENT_CAP} {family} events; "
                "this indicates a configuration or numerics bug")

    # --- dynamics ----------------------------------------------------------

    def _rhs(self, y: np.ndarray) -> np.ndarray:
        dy = np.empty_like(y)
        v = y[:self.nv].reshape(self.n, self.q)
        dv = v @ self.At + self.mu[:, None] * self.B
        dy[:self.nv] = dv.ravel()
        for i, rt in enumerate(self.rts):
            etas = [y[s] for s in rt.esls]
            dz, dx, detas, _ = rt.plant.derivative(y[rt.zsl], y[rt.xsl], etas)
            dy[rt.zsl] = dz
            dy[rt.xsl] = dx
            for s, de in zip(rt.esls, detas):
                dy[s] = de
        return dy

    def _block_state(self, rt: _PlantRt) -> np.ndarray:
        parts = [self.y[rt.vsl], self.y[rt.zsl], self.y[rt.xsl]]
        parts += [self.y[s] for s in rt.esls]
        return np.concatenate(parts)

    def _block_rhs_fn(self, rt: _PlantRt) -> Callable:
        q = self.q
        A, B = self.A, self.B
        mu_i = float(self.mu[rt.agent])
        plant = rt.plant
        bz, bx, bes = rt.bz, rt.bx, rt.bes

        def f(yb: np.ndarray) -> np.ndarray:
            dyb = np.empty_like(yb)
            dyb[:q] = A @ yb[:q] + B * mu_i
            dz, dx, detas, _ = plant.derivative(yb[bz], yb[bx],
                                                [yb[s] for s in bes])
            dyb[bz] = dz
            dyb[bx] = dx
            for s, de in zip(bes, detas):
                dyb[s] = de
            return dyb

        return f

    # --- event machinery ----------------------------------------------------

    def _init_events(self) -> None:
        """All agents sample, hold and broadcast at t = 0; all plants take
        their first regulation sample at t = 0."""
        v2 = self.y[:self.nv].reshape(self.n, self.q)
        p0 = all_relative_measurements(v2, self.L)
        payloads = []
        for i in range(self.n):
            payloads.append(self.agents[i].on_own_event(0.0, p0[i].copy()))
            self.mu[i] = self.agents[i].mu()
            self.events.add(i, CONSENSUS, 0, 0.0, math.nan)
            self._count_event(i, CONSENSUS)
        for i in range(self.n):
            for j in self.agents[i].out_neighbors:
                self.agents[j].on_neighbor_broadcast(0.0, i, payloads[i])
        for i in range(self.n):
            self.sched_t[i], self.sched_dt[i] = self.agents[i].next_trigger()

        if self.rts:
            d0 = self._rhs(self.y)
            for idx, rt in enumerate(self.rts):
                sig = rt.signals_global(self.y, d0)
                rt.plant.on_event(0.0, sig.x_bar)
                self.ubar[idx] = rt.plant.u_bar_held
                self.events.add(rt.agent, REGULATION, 0, 0.0, math.nan)
                self._count_event(rt.agent, REGULATION)

    def _refresh(self, t: float) -> None:
        """Recompute the derivative baseline and trigger signals at time t,
        firing any regulation trigger that is already non-negative (e.g.
        after a held input jumped)."""
        while True:
            self.k1 = self._rhs(self.y)
            for idx, rt in enumerate(self.rts):
                self.sigs[idx] = rt.signals_global(self.y, self.k1)
            due = [idx for idx, sg in enumerate(self.sigs)
                   if sg.g >= 0.0 and not sg.rest]
            if not due:
                return
            self._apply_regulation_event(self.rts[due[0]], t, self.sigs[due[0]])

    def _apply_regulation_event(self, rt: _PlantRt, t: float,
                                sig: _Signals) -> None:
        dt = t - rt.plant.t_last
        rt.plant.on_event(t, sig.x_bar)
        self.ubar[rt.agent] = rt.plant.u_bar_held
        self.events.add(rt.agent, REGULATION, rt.plant.k, t, dt)
        self._count_event(rt.agent, REGULATION)

    def _locate(self, rt: _PlantRt, seg_t: float, h_seg: float) -> float:
        """Bisection offset of the trigger crossing inside the segment,
        re-integrating only this agent's decoupled block."""
        yb0 = self._block_state(rt)
        f = self._block_rhs_fn(rt)
        q = self.q
        bx, bes = rt.bx, rt.bes

        def g_of(dt: float) -> float:
            yb = rk4_step(f, yb0, dt) if dt > 0.0 else yb0
            db = f(yb)
            sig = rt.signals(yb[:q], db[:q], yb[bx], db[bx],
                             [yb[s] for s in bes], [db[s] for s in bes])
            return sig.g

        return bisect_crossing(g_of, h_seg, BISECT_TOL_REL * (1.0 + seg_t))

    def _advance(self, t0: float, t1: float) -> None:
        """Integrate from t0 to t1 (no consensus event inside), localizing
        and applying regulation events on the way."""
        seg_t = t0
        while seg_t < t1:
            h_seg = t1 - seg_t
            y_new = integrate_step(self._rhs, self.y, h_seg, self.k1)
            if not self.rts:
                self.y = y_new
                self.k1 = self._rhs(y_new)
                return
            d_new = self._rhs(y_new)
            new_sigs = [rt.signals_global(y_new, d_new) for rt in self.rts]
            crossers = [idx for idx, rt in enumerate(self.rts)
                        if self.sigs[idx].g < 0.0 <= new_sigs[idx].g
                        and not new_sigs[idx].rest]
            if not crossers:
                self.y = y_new
                self.k1 = d_new
                self.sigs = new_sigs
                stuck = [idx for idx, sg in enumerate(new_sigs)
                         if sg.g >= 0.0 and not sg.rest]
                if stuck:
                    # never crossed from below (e.g. started at exactly 0):
                    # treat the boundary itself as the event time
                    self._refresh(t1)
                return
            best_dt = math.inf
            best_idx = crossers[0]
            for idx in crossers:
                dt_star = self._locate(self.rts[idx], seg_t, h_seg)
                if dt_star < best_dt:
                    best_dt = dt_star
                    best_idx = idx
            if best_dt > 0.0:
                self.y = integrate_step(self._rhs, self.y, best_dt, self.k1)
            t_star = seg_t + best_dt
            self.k1 = self._rhs(self.y)
            rt = self.rts[best_idx]
            sig = rt.signals_global(self.y, self.k1)
            if sig.rest:
                # crossing lands on a rest point: per the trigger rule no
                # event fires there; re-baseline and keep integrating
                for idx, rt2 in enumerate(self.rts):
                    self.sigs[idx] = rt2.signals_global(self.y, self.k1)
            else:
                self._apply_regulation_event(rt, t_star, sig)
                self._refresh(t_star)
            seg_t = t_star

    def _consensus_events(self, t: float) -> bool:
        fired = False
        while True:
            due = [i for i in range(self.n) if self.sched_t[i] <= t]
            if not due:
                return fired
            i = due[0]
            v2 = self.y[:self.nv].reshape(self.n, self.q)
            p_i = -(self.L[i] @ v2)
            payload = self.agents[i].on_own_event(t, p_i)
            self.mu[i] = self.agents[i].mu()
            self.events.add(i, CONSENSUS, self.agents[i].state.k, t,
                            self.sched_dt[i])
            self._count_event(i, CONSENSUS)
            for j in self.agents[i].out_neighbors:
                self.agents[j].on_neighbor_broadcast(t, i, payload)
                self.sched_t[j], self.sched_dt[j] = self.agents[j].next_trigger()
            self.sched_t[i], self.sched_dt[i] = self.agents[i].next_trigger()
            fired = True

    # --- logging --------------------------------------------------------------

    def _log_sample(self, t: float) -> None:
        n, q = self.n, self.q
        v2 = self.y[:self.nv].reshape(n, q)
        p_all = all_relative_measurements(v2, self.L)
        row = np.empty(len(self._columns))
        row[0] = t
        row[1:1 + self.ylen] = self.y
        pos = 1 + self.ylen
        row[pos:pos + n * q] = p_all.ravel()
        pos += n * q
        for i in range(self.n):
            row[pos:pos + q] = self.agents[i].state.p_held - p_all[i]
            pos += q
        row[pos:pos + n] = self.mu
        pos += n
        if self.rts:
            for idx in range(len(self.rts)):
                sg = self.sigs[idx]
                row[pos] = sg.e
                row[pos + 1] = sg.varpi
                row[pos + 2] = sg.q
                pos += 3
        row[pos] = lyapunov_V(p_all, self.design, self.scn.spectra)
        row[pos + 1] = math.sqrt(float((p_all * p_all).sum()))
        pos += 2
        if self.rts:
            v_inf = self.scn.spectra.r @ v2
            y_inf = float(self.scn.output_map(v_inf))
            outputs = np.array([self.y[rt.xsl][0] for rt in self.rts])
            row[pos] = float(np.max(np.abs(outputs - y_inf)))
        self._rows.append(row)

    # --- main loop ---------------------------------------------------------------

    def run(self) -> RunResult:
        scn = self.scn
        samples = _sample_times(scn.horizon, scn.step)
        self._init_events()
        self._refresh(0.0)
        self._log_sample(0.0)
        t = 0.0
        si = 1
        while t < scn.horizon:
            t_samp = samples[si]
            t_trig = float(self.sched_t.min())
            t_next = min(t_samp, t_trig)
            if t_next > t:
                self._advance(t, t_next)
            t = t_next
            if self._consensus_events(t):
                self._refresh(t)
            if t == t_samp:
                self._log_sample(t)
                si += 1
        trace = SimTrace(columns=self._columns, data=np.vstack(self._rows))
        metrics = compute_metrics(trace, self.events, self.n, bool(self.rts))
        return RunResult(trace=trace, events=self.events, metrics=metrics)


def _sample_times(horizon: float, step: float) -> list[float]:
    ts = []
    m = 0
    while True:
        tm = m * step
        if tm >= horizon - 1e-12 * max(1.0, horizon):
            break
        ts.append(tm)
        m += 1
    ts.append(horizon)
    return ts


def run_scenario(scn: Scenario) -> RunResult:
    """Simulate one scenario and return (trace, event log, metrics)."""
    return _Runner(scn).run()


def compute_metrics(trace: SimTrace, events: EventLog, n: int,
                    has_plants: bool) -> dict:
    """Headline numbers: terminal norms, per-agent event statistics and the
    count of Lyapunov-function increases between adjacent samples."""
    out: dict[str, float] = {}
    p_norm = trace["p_norm"]
    out["initial_p_norm"] = float(p_norm[0])
    out["final_p_norm"] = float(p_norm[-1])
    if has_plants:
        sync = trace["sync_err"]
        out["final_sync_error"] = float(sync[-1])
        tail = max(1, int(len(sync) * 0.9))
        out["tail_max_sync_error"] = float(np.max(sync[tail - 1:]))
    v_vals = trace["V"]
    out["v_increase_count"] = float(np.sum(np.diff(v_vals) > 0.0))

    families = [CONSENSUS] + ([REGULATION] if has_plants else [])
    for fam in families:
        fam_min = math.inf
        unit_max = 0
        for i in range(n):
            dts = events.intervals(i, fam)
            key = f"{fam}_agent{i + 1}"
            out[f"{key}_events"] = float(events.count(i, fam))
            if dts.size:
                out[f"{key}_min_interval"] = float(dts.min())
                out[f"{key}_mean_interval"] = float(dts.mean())
                fam_min = min(fam_min, float(dts.min()))
            else:
                out[f"{key}_min_interval"] = math.nan
                out[f"{key}_mean_interval"] = math.nan
            times = events.times(i, fam)
            if times.size:
                unit_max = max(unit_max,
                               int(np.bincount(times.astype(int)).max()))
        out[f"{fam}_min_interval"] = fam_min if fam_min < math.inf else math.nan
        out[f"{fam}_max_events_per_unit_time"] = float(unit_max)
    return out
