"""Reference-model consensus layer: gain design and broadcast triggering.

Design stage: pick the coupling strength ``lam`` and per-agent thresholds,
solve the Riccati equation for P, and derive the trigger constants
(rho, varphi, b1, b2 and the dwell-time floor b).

Run stage: each agent holds the relative measurement sampled at its last
own event, broadcasts it to out-neighbors, and schedules its next event
from a running integral whose integrand is piecewise constant between
neighbor broadcasts, floored by the timer b.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LambdaOutOfRange, ValidationError, VarphiNotLessThanOne
from .graph import DirectedGraph, GraphSpectra
from .numerics import solve_are, spectral_norm, symmetric_eigenvalues


@dataclass(frozen=True)
class ReferenceModelSpec:
    """Shared linear reference model ``v' = A v + B mu`` with scalar input.

    A must have simple, purely imaginary (or zero) eigenvalues so that the
    agreed trajectory neither decays nor blows up; B must be nonzero.
    """

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValidationError("B must have one entry per state of A")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValidationError("reference model matrices must be finite")
        if np.all(B == 0.0):
            raise ValidationError("B must be nonzero")
        eigs = np.linalg.eigvals(A)
        if np.max(np.abs(eigs.real)) > 1e-6:
            raise ValidationError(
                f"eigenvalues of A must have zero real parts; largest "
                f"real part magnitude is {np.max(np.abs(eigs.real)):.3e}")
        sep = 1e-7 * (1.0 + float(np.max(np.abs(eigs))))
        for i in range(len(eigs)):
            for j in range(i + 1, len(eigs)):
                if abs(eigs[i] - eigs[j]) <= sep:
                    raise ValidationError("eigenvalues of A must be simple")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def q(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class ConsensusDesign:
    """All design constants of the consensus layer.

    ``rho`` and ``varphi`` are ``None`` when the coupling strength sits at
    or above the spectral bound (only reachable in unchecked mode), in
    which case ``lambda_in_range`` records the violation.
    """

    n: int
    P: np.ndarray
    K: np.ndarray                      # row gain B^T P, stored 1-D
    g: np.ndarray
    lam: float
    beta: float
    eta_i: np.ndarray
    eta: float
    phi: float
    rho: float | None
    varphi: float | None
    b1: float
    b2: float
    b: float
    lambda_lg: float                   # spectral norm of L G
    lambda2_hat: float
    a_norm: float
    bbtp: np.ndarray = field(repr=False)   # B B^T P
    bbtp_norm: float = 0.0
    unchecked: bool = False
    beta_overridden: bool = False
    lambda_in_range: bool = True
    varphi_below_one: bool | None = None


def design_consensus(model: ReferenceModelSpec, spectra: GraphSpectra,
                     lam: float, eta_i, eta: float, phi: float, g,
                     unchecked: bool = False,
                     beta_override: float | None = None) -> ConsensusDesign:
    """Derive the full constant set of the consensus layer.

    In checked mode every hypothesis is enforced: ``0 < lam <
    lambda2_hat/n``, ``g_i >= r_i``, positive thresholds with
    ``eta >= max(eta_i)``, and ``varphi < 1``.  Unchecked mode skips the
    lam-bound and varphi gates (recording violation flags instead) and,
    with ``beta_override``, lets callers pin beta directly instead of
    computing ``1/min_eig(G R)``; both exist to reproduce externally
    published constant sets exactly.
    """
    n = spectra.r.shape[0]
    g = np.array(g, dtype=float).reshape(-1)
    eta_i = np.array(eta_i, dtype=float).reshape(-1)
    if g.shape[0] != n or eta_i.shape[0] != n:
        raise ValidationError(f"g and eta_i must have {n} entries")
    if np.any(g < spectra.r - 1e-15):
        bad = int(np.argmax(spectra.r - g))
        raise ValidationError(
            f"g[{bad}] = {g[bad]:.6g} must be >= r[{bad}] = {spectra.r[bad]:.6g}")
    if np.any(eta_i <= 0.0):
        raise ValidationError("all eta_i must be positive")
    if eta < float(eta_i.max()):
        raise ValidationError(
            f"eta = {eta:.6g} must dominate max eta_i = {eta_i.max():.6g}")
    if not phi > 0.0:
        raise ValidationError(f"phi must be positive, got {phi}")

    lam2 = spectra.lambda2_hat
    bound = lam2 / n
    lambda_in_range = 0.0 < lam < bound
    if not unchecked and not lambda_in_range:
        raise LambdaOutOfRange(
            f"need 0 < lam < lambda2_hat/n, got lam = {lam:.6g} with "
            f"lambda2_hat/n = {bound:.6g}")
    if lam <= 0.0:
        # Even unchecked mode cannot solve the Riccati equation then.
        raise LambdaOutOfRange(f"lam must be positive, got {lam:.6g}")

    if beta_override is not None:
        if not unchecked:
            raise ValidationError("beta override is only allowed in unchecked mode")
        beta = float(beta_override)
        if not beta > 0.0:
            raise ValidationError(f"beta must be positive, got {beta}")
    else:
        gr_eigs = symmetric_eigenvalues(np.diag(g * spectra.r))
        beta = 1.0 / float(gr_eigs[0])

    P = solve_are(model.A, model.B, lam, beta)
    K = model.B @ P                      # 1 x q row, stored flat
    bbtp = np.outer(model.B, K)
    a_norm = spectral_norm(model.A)
    bbtp_norm = spectral_norm(bbtp)
    LG = spectra.laplacian @ np.diag(g)
    lambda_lg = spectral_norm(LG)
    b1 = a_norm + lambda_lg * bbtp_norm
    b2 = lambda_lg * bbtp_norm

    radicand = bound - lam
    if radicand > 0.0:
        rho = spectral_norm(np.kron(spectra.R @ LG, K.reshape(1, -1)))
        rho /= math.sqrt(radicand)
        varphi = rho * rho * (eta * eta + n * phi * phi)
    else:
        rho = None
        varphi = None
    varphi_below_one = None if varphi is None else bool(varphi < 1.0)
    if not unchecked and not varphi_below_one:
        raise VarphiNotLessThanOne(
            f"varphi = {varphi:.6g} must be < 1; shrink eta/phi or lam")

    b = math.log(phi + 1.0) / (b1 + b2 * max(eta, phi) * math.sqrt(n))

    return ConsensusDesign(
        n=n, P=P, K=K, g=g, lam=lam, beta=beta, eta_i=eta_i, eta=float(eta),
        phi=float(phi), rho=rho, varphi=varphi, b1=b1, b2=b2, b=b,
        lambda_lg=lambda_lg, lambda2_hat=lam2, a_norm=a_norm, bbtp=bbtp,
        bbtp_norm=bbtp_norm, unchecked=unchecked,
        beta_overridden=beta_override is not None,
        lambda_in_range=lambda_in_range, varphi_below_one=varphi_below_one)


def consensus_control(design: ConsensusDesign, agent: int, p_held) -> float:
    """Broadcast controller value ``g_i * K * p_held``."""
    return float(design.g[agent] * (design.K @ np.asarray(p_held, dtype=float)))


def relative_measurement(v_all: np.ndarray, g: DirectedGraph, agent: int) -> np.ndarray:
    """Weighted sum of in-neighbor state differences for one agent."""
    w = g.weights[agent]
    p = np.zeros(v_all.shape[1])
    for j in range(g.n):
        if w[j] > 0.0:
            p += w[j] * (v_all[j] - v_all[agent])
    return p


def all_relative_measurements(v_all: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Stacked relative measurements, computed as ``-L v`` (row per agent)."""
    return -(L @ v_all)


def lyapunov_V(p, design: ConsensusDesign, spectra: GraphSpectra) -> float:
    """Quadratic form ``0.5 * sum_i g_i r_i p_i^T P p_i`` on the stacked
    relative measurement."""
    q = design.P.shape[0]
    p2 = np.asarray(p, dtype=float).reshape(design.n, q)
    total = 0.0
    for i in range(design.n):
        total += design.g[i] * spectra.r[i] * float(p2[i] @ design.P @ p2[i])
    return 0.5 * total


@dataclass
class AgentTriggerState:
    """Mutable trigger bookkeeping for one agent's broadcast schedule.

    ``integral_acc`` carries the running integral of the trigger integrand
    from ``t_acc`` backwards to the last own event; the integrand is
    constant between neighbor broadcasts, so the accrual is exact.
    ``tau_cross`` records the exact offset (from ``t_last``) at which the
    integral reached ``s_ik``, once that has happened; without it, a
    crossing overtaken by the timer floor could only be bounded by the
    next accrual time, which overestimates tau and can break the exact
    ``interval == b`` identity of timer-branch events by one ulp.
    """

    agent: int
    t_last: float
    p_held: np.ndarray
    s_ik: float
    w_ik: float
    integral_acc: float
    t_acc: float
    k: int
    neighbor_holds: dict[int, np.ndarray]
    tau_cross: float | None = None


class ConsensusAgent:
    """Event scheduling for one agent of the consensus layer."""

    def __init__(self, agent: int, design: ConsensusDesign,
                 model: ReferenceModelSpec, graph: DirectedGraph):
        self.idx = agent
        self.design = design
        self.a_norm = design.a_norm
        self.g_i = float(design.g[agent])
        self._eta_frac = float(design.eta_i[agent] / (1.0 + design.eta_i[agent]))
        w_row = graph.weights[agent]
        self.in_weight_sum = float(w_row.sum())
        self.weighted_gains = [(j, float(w_row[j] * design.g[j]))
                               for j in range(graph.n) if w_row[j] > 0.0]
        self.out_neighbors = graph.out_neighbors(agent)
        # matrix applied to the held measurement in the event constant w_ik
        self.hold_matrix = model.A - self.g_i * self.in_weight_sum * design.bbtp
        self.state = AgentTriggerState(
            agent=agent, t_last=0.0, p_held=np.zeros(model.q), s_ik=0.0,
            w_ik=0.0, integral_acc=0.0, t_acc=0.0, k=-1, neighbor_holds={})

    def on_own_event(self, t: float, p_now: np.ndarray) -> np.ndarray:
        """Sample and hold the local measurement; returns the broadcast payload."""
        st = self.state
        st.t_last = t
        st.p_held = np.array(p_now, dtype=float)
        st.k += 1
        st.integral_acc = 0.0
        st.t_acc = t
        st.tau_cross = None
        st.s_ik = self._eta_frac * float(np.linalg.norm(st.p_held))
        st.w_ik = float(np.linalg.norm(self.hold_matrix @ st.p_held))
        return st.p_held

    def on_neighbor_broadcast(self, t: float, sender: int, payload: np.ndarray):
        """Accrue the integral with the pre-update integrand, then replace
        the sender's held value (last writer wins at equal timestamps)."""
        self.accrue(t)
        self.state.neighbor_holds[sender] = payload

    def accrue(self, t: float):
        st = self.state
        if t > st.t_acc:
            st.integral_acc += self._segment_rate() * (t - st.t_acc)
        st.t_acc = t

    def w_i(self) -> float:
        """Norm of the coupling drive built from neighbors' held broadcasts."""
        holds = self.state.neighbor_holds
        acc = None
        for j, wg in self.weighted_gains:
            h = holds.get(j)
            if h is None:
                continue
            acc = wg * h if acc is None else acc + wg * h
        if acc is None:
            return 0.0
        return float(np.linalg.norm(self.design.bbtp @ acc))

    def _segment_rate(self) -> float:
        st = self.state
        return self.a_norm * st.s_ik + st.w_ik + self.w_i()

    def next_trigger(self) -> tuple[float, float]:
        """Provisional next event ``(time, interval)``: integral crossing of
        s_ik (closed form on the current constant segment), floored by the
        timer b, so ``interval = max(tau, b) >= b`` holds exactly.

        Must be re-queried after any neighbor broadcast; the simulator does
        so automatically.
        """
        st = self.state
        b = self.design.b
        if st.s_ik <= 0.0:
            return st.t_last + b, b
        if st.integral_acc >= st.s_ik:
            tau = st.t_acc - st.t_last
        else:
            rate = self._segment_rate()
            if rate <= 0.0:
                return math.inf, math.inf
            tau = (st.t_acc - st.t_last) + (st.s_ik - st.integral_acc) / rate
        interval = max(tau, b)
        return st.t_last + interval, interval

    def hold_error(self, p_now: np.ndarray) -> np.ndarray:
        """Deviation of the held broadcast from the live measurement."""
        return self.state.p_held - p_now

    def mu(self) -> float:
        return self.g_i * float(self.design.K @ self.state.p_held)
