"""Per-agent event-triggered output regulation.

Each plant is a lower-triangular nonlinear system with relative degree r.
A bank of linear internal-model stages (one per chain position) is turned
into implementable actuator/sensor compensators through a Sylvester
transform T.  The sampled control is ``u_bar = kappa(x_bar)`` held between
events, with events generated by the small-gain rule
``|varpi| = sigma(|q|)`` where ``varpi`` is the hold error of kappa and
``q`` its time derivative along the trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (NotControllable, NotHurwitz, NotObservable, SingularMatrix,
                     SingularT, ValidationError)
from .numerics import TOL, inverse, is_hurwitz, matrix_rank, max_abs, solve_sylvester

#: below this magnitude both trigger signals count as "at rest" and the
#: event rule is suspended (otherwise an equilibrium would trigger forever)
REST_THRESHOLD = 1e-12


@dataclass(frozen=True)
class RegulatorSolution:
    """User-supplied steady-state maps for exact tracking.

    ``z_ss(v, w)`` and ``x_ss[j](v, w)`` solve the regulator equations for
    the plant (``x_ss`` has r+1 entries, the last being the steady-state
    input).  ``vartheta[j](v, w)`` is the internal-model coordinate whose
    image under T gives the compensator steady state; it is only needed
    for the transformed-coordinate diagnostic.
    """

    z_ss: Callable
    x_ss: tuple[Callable, ...]
    vartheta: tuple[Callable, ...]


@dataclass(frozen=True)
class AgentModel:
    """Plugin contract for one lower-triangular plant.

    * ``f0(z, x1, w)`` returns the z-subsystem derivative (length m).
    * ``f[j-1](z, x, w)`` for j = 1..r returns the drift of the j-th chain
      state; ``x`` carries the first j chain states.
    * ``b[j-1](w)`` is the (positive) gain multiplying the next chain state
      (or the input for j = r).
    * ``c(v)`` / ``c_grad(v)`` map the reference state to the tracked
      output and its gradient.

    All drifts must vanish at the origin for every admissible w.
    """

    name: str
    m: int
    r: int
    f0: Callable
    f: tuple[Callable, ...]
    b: tuple[Callable, ...]
    c: Callable
    c_grad: Callable
    regulator: RegulatorSolution | None = None
    w_bounds: tuple[float, float] | None = None

    def validate_for(self, w) -> None:
        if self.w_bounds is not None:
            lo, hi = self.w_bounds
            wa = np.atleast_1d(np.asarray(w, dtype=float))
            if np.any(wa < lo) or np.any(wa > hi):
                raise ValidationError(
                    f"model '{self.name}': uncertainty w = {w} outside "
                    f"declared bounds [{lo}, {hi}]")
        z0 = np.zeros(self.m)
        if max_abs(np.asarray(self.f0(z0, 0.0, w), dtype=float)) > 1e-12:
            raise ValidationError(f"model '{self.name}': f0 must vanish at the origin")
        for j in range(self.r):
            x0 = np.zeros(j + 1)
            if abs(float(self.f[j](z0, x0, w))) > 1e-12:
                raise ValidationError(
                    f"model '{self.name}': f{j + 1} must vanish at the origin")
            if not float(self.b[j](w)) > 0.0:
                raise ValidationError(
                    f"model '{self.name}': b{j + 1}(w) must be positive")


@dataclass(frozen=True)
class GeneratorStage:
    """One internal-model stage and its Sylvester transform."""

    Psi: np.ndarray        # 1 x l observation row, stored flat
    Phi: np.ndarray        # l x l generator dynamics
    M: np.ndarray          # l x l Hurwitz compensator dynamics
    N: np.ndarray          # l injection column, stored flat
    T: np.ndarray
    T_inv: np.ndarray
    psi_T_inv: np.ndarray  # Psi @ T^-1, the compensator read-out row

    @property
    def dim(self) -> int:
        return self.M.shape[0]


@dataclass(frozen=True)
class SteadyStateGenerator:
    stages: tuple[GeneratorStage, ...]

    @property
    def eta_dims(self) -> list[int]:
        return [s.dim for s in self.stages]


def build_generator(stages: Sequence[tuple]) -> SteadyStateGenerator:
    """Solve ``M T + N Psi = T Phi`` for each stage and package the result.

    Preconditions checked per stage: (Psi, Phi) observable, (M, N)
    controllable, M Hurwitz, and the Sylvester system nonsingular with an
    invertible T.
    """
    built = []
    for idx, (psi, phi, m_mat, n_vec) in enumerate(stages):
        Psi = np.array(psi, dtype=float).reshape(-1)
        Phi = np.array(phi, dtype=float)
        M = np.array(m_mat, dtype=float)
        N = np.array(n_vec, dtype=float).reshape(-1)
        ell = Phi.shape[0]
        if Phi.shape != (ell, ell) or M.shape != (ell, ell):
            raise ValidationError(f"stage {idx + 1}: Phi and M must be square and equal-sized")
        if Psi.shape[0] != ell or N.shape[0] != ell:
            raise ValidationError(f"stage {idx + 1}: Psi and N must have length {ell}")

        obs = np.vstack([Psi @ np.linalg.matrix_power(Phi, k) for k in range(ell)])
        if matrix_rank(obs) < ell:
            raise NotObservable(f"stage {idx + 1}: (Psi, Phi) observability "
                                f"stack has rank {matrix_rank(obs)} < {ell}")
        ctr = np.column_stack([np.linalg.matrix_power(M, k) @ N for k in range(ell)])
        if matrix_rank(ctr) < ell:
            raise NotControllable(f"stage {idx + 1}: (M, N) controllability "
                                  f"stack has rank {matrix_rank(ctr)} < {ell}")
        if not is_hurwitz(M):
            raise NotHurwitz(f"stage {idx + 1}: M has an eigenvalue with "
                             "nonnegative real part")

        try:
            T = solve_sylvester(M, -Phi, -np.outer(N, Psi))
        except SingularMatrix as exc:
            raise SingularT(f"stage {idx + 1}: Sylvester system singular "
                            "(spectra of M and Phi intersect)") from exc
        resid = max_abs(M @ T + np.outer(N, Psi) - T @ Phi)
        if resid > TOL.sylvester_residual * (1.0 + max_abs(np.outer(N, Psi))):
            raise SingularT(f"stage {idx + 1}: transform residual {resid:.3e} too large")
        try:
            T_inv = inverse(T)
        except SingularMatrix as exc:
            raise SingularT(f"stage {idx + 1}: T is not invertible") from exc
        built.append(GeneratorStage(Psi=Psi, Phi=Phi, M=M, N=N, T=T,
                                    T_inv=T_inv, psi_T_inv=Psi @ T_inv))
    if not built:
        raise ValidationError("generator needs at least one stage")
    return SteadyStateGenerator(stages=tuple(built))


def make_linear_sigma(c_frac: float, gamma0: float) -> Callable[[float], float]:
    """Trigger gain ``sigma(s) = (c/gamma0) * s`` inverting a linear IOS
    gain ``gamma(s) = gamma0 * s`` at contraction factor c."""
    if not 0.0 < c_frac < 1.0:
        raise ValidationError(f"contraction factor must be in (0, 1), got {c_frac}")
    if not gamma0 > 0.0:
        raise ValidationError(f"gamma0 must be positive, got {gamma0}")
    slope = c_frac / gamma0
    return lambda s: slope * s


def tracking_error(x1: float, v, c: Callable) -> float:
    """Output tracking error ``x1 - c(v)``."""
    return float(x1) - float(c(np.asarray(v, dtype=float)))


class RegulationPlant:
    """One agent's plant plus compensators plus trigger holds.

    Continuous states (z, x, eta) live in the simulator's state vector;
    this object carries the static structure and the sampled holds
    (``u_bar_held``, ``x_bar_held``, ``t_last``).
    """

    def __init__(self, agent: int, model: AgentModel,
                 generator: SteadyStateGenerator, w,
                 kappa: Callable, kappa_grad: Callable,
                 sigma: Callable[[float], float]):
        if len(generator.stages) != model.r:
            raise ValidationError(
                f"agent {agent + 1}: generator has {len(generator.stages)} "
                f"stages but the model has relative degree {model.r}")
        model.validate_for(w)
        self.agent = agent
        self.model = model
        self.generator = generator
        self.w = w
        self.kappa = kappa
        self.kappa_grad = kappa_grad
        self.sigma = sigma
        self.b_vals = np.array([float(model.b[j](w)) for j in range(model.r)])
        self.u_bar_held = 0.0
        self.x_bar_held = np.zeros(model.r)
        self.t_last = 0.0
        self.k = -1

    def reset(self) -> None:
        self.u_bar_held = 0.0
        self.x_bar_held = np.zeros(self.model.r)
        self.t_last = 0.0
        self.k = -1

    # --- continuous-time structure -------------------------------------

    def control_input(self, eta_r: np.ndarray) -> float:
        """Actuator compensator output ``u = u_bar + Psi_r T_r^-1 eta_r``."""
        return self.u_bar_held + float(self.generator.stages[-1].psi_T_inv @ eta_r)

    def derivative(self, z: np.ndarray, x: np.ndarray,
                   etas: Sequence[np.ndarray]):
        """Plant + compensator derivative given the current holds.

        Returns ``(dz, dx, detas, u)``.  The chain is driven by
        ``b_j * x_{j+1}`` with the actual input u in the last slot; the
        r-th compensator integrates u, the lower ones integrate the next
        chain state.
        """
        model = self.model
        r = model.r
        u = self.control_input(etas[r - 1])
        dz = np.asarray(model.f0(z, float(x[0]), self.w), dtype=float)
        dx = np.empty(r)
        for j in range(r):
            drive = u if j == r - 1 else float(x[j + 1])
            dx[j] = float(model.f[j](z, x[:j + 1], self.w)) + self.b_vals[j] * drive
        detas = []
        for j, stage in enumerate(self.generator.stages):
            drive = u if j == r - 1 else float(x[j + 1])
            detas.append(stage.M @ etas[j] + stage.N * drive)
        return dz, dx, detas, u

    # --- sampled signals -------------------------------------------------

    def sensor_bar_x(self, x: np.ndarray, etas: Sequence[np.ndarray],
                     e: float) -> np.ndarray:
        """Compensated measurement: first entry is the tracking error, the
        rest subtract each lower compensator's read-out from the chain."""
        r = self.model.r
        xb = np.empty(r)
        xb[0] = e
        for j in range(1, r):
            xb[j] = float(x[j]) - float(self.generator.stages[j - 1].psi_T_inv @ etas[j - 1])
        return xb

    def x_bar_dot(self, dx: np.ndarray, detas: Sequence[np.ndarray],
                  e_dot: float) -> np.ndarray:
        xbd = np.empty(self.model.r)
        xbd[0] = e_dot
        for j in range(1, self.model.r):
            xbd[j] = float(dx[j]) - float(self.generator.stages[j - 1].psi_T_inv @ detas[j - 1])
        return xbd

    def varpi_and_q(self, x_bar: np.ndarray, x_bar_dot: np.ndarray) -> tuple[float, float]:
        """Hold error of the sampled control and its drift rate."""
        varpi = self.u_bar_held - float(self.kappa(x_bar))
        q = float(np.asarray(self.kappa_grad(x_bar), dtype=float) @ x_bar_dot)
        return varpi, q

    def trigger_value(self, varpi: float, q: float) -> float:
        """Event function ``|varpi| - sigma(|q|)``; events fire at its first
        upward zero crossing unless both signals are at rest."""
        return abs(varpi) - float(self.sigma(abs(q)))

    @staticmethod
    def at_rest(varpi: float, q: float) -> bool:
        return abs(varpi) <= REST_THRESHOLD and abs(q) <= REST_THRESHOLD

    def on_event(self, t: float, x_bar: np.ndarray) -> None:
        """Re-sample the control: hold x_bar and kappa(x_bar) from time t on."""
        self.x_bar_held = np.array(x_bar, dtype=float)
        self.u_bar_held = float(self.kappa(self.x_bar_held))
        self.t_last = t
        self.k += 1

    # --- diagnostics ------------------------------------------------------

    def transformed_coordinates(self, z: np.ndarray, x: np.ndarray,
                                etas: Sequence[np.ndarray], v: np.ndarray):
        """Deviation coordinates w.r.t. the steady-state manifold.

        Requires the model's regulator solution.  Only for logging and
        verification; never fed back into the dynamics.
        """
        reg = self.model.regulator
        if reg is None:
            raise ValidationError(
                f"model '{self.model.name}' ships no regulator solution")
        v = np.asarray(v, dtype=float)
        z0 = np.asarray(z, dtype=float) - np.asarray(reg.z_ss(v, self.w), dtype=float)
        e = tracking_error(float(x[0]), v, self.model.c)
        x_bar = self.sensor_bar_x(x, etas, e)
        z_js = []
        for j, stage in enumerate(self.generator.stages):
            theta = stage.T @ np.asarray(reg.vartheta[j](v, self.w), dtype=float)
            z_js.append(etas[j] - theta - stage.N * (x_bar[j] / self.b_vals[j]))
        return z0, z_js, x_bar
