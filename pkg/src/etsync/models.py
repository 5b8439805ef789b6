"""Built-in plant models and sampled-control laws, addressable from config
files by name."""
from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .regulation import AgentModel, RegulatorSolution


def _benchmark_f0(z, x1, w):
    return np.array([-z[0], -z[1] + 2.0 * x1])


def _benchmark_f1(z, x, w):
    x1 = float(x[0])
    return -z[1] + z[0] * x1 + w * x1


def benchmark_model() -> AgentModel:
    """Relative-degree-one plant with a two-state stable core.

        z' = -z + [0, 2]^T x
        x' = -z2 + z1 x + w x + u,   y = x,   |w| <= 1

    tracking the first reference coordinate.  Ships with its regulator
    solution z_ss = (0, v1 + v2), x_ss = v1, u_ss = (1 - w) v1 and the
    matching internal-model coordinate (1 - w) v.
    """
    regulator = RegulatorSolution(
        z_ss=lambda v, w: np.array([0.0, v[0] + v[1]]),
        x_ss=(lambda v, w: float(v[0]),
              lambda v, w: (1.0 - w) * float(v[0])),
        vartheta=(lambda v, w: (1.0 - w) * np.asarray(v, dtype=float),),
    )
    return AgentModel(
        name="benchmark",
        m=2,
        r=1,
        f0=_benchmark_f0,
        f=(_benchmark_f1,),
        b=(lambda w: 1.0,),
        c=lambda v: float(v[0]),
        c_grad=lambda v: np.array([1.0, 0.0]),
        regulator=regulator,
        w_bounds=(-1.0, 1.0),
    )


def benchmark_generator_stages() -> list[tuple]:
    """Internal-model data matching :func:`benchmark_model`: a harmonic
    generator observed through its first coordinate, stabilized by a
    diagonal Hurwitz pair."""
    psi = np.array([1.0, 0.0])
    phi = np.array([[0.0, -1.0], [1.0, 0.0]])
    m_mat = np.array([[-1.0, 0.0], [0.0, -2.0]])
    n_vec = np.array([1.0, 2.0])
    return [(psi, phi, m_mat, n_vec)]


def cubic_kappa():
    """Stabilizing sampled control ``kappa(e) = -30 e - e^3`` with its
    gradient, for relative-degree-one plants."""
    def kappa(x_bar):
        e = float(x_bar[0])
        return -30.0 * e - e ** 3

    def kappa_grad(x_bar):
        e = float(x_bar[0])
        return np.array([-30.0 - 3.0 * e * e])

    return kappa, kappa_grad


MODELS = {
    "benchmark": benchmark_model,
}

GENERATORS = {
    "benchmark": benchmark_generator_stages,
}

KAPPAS = {
    "cubic": cubic_kappa,
}


def resolve_model(name: str) -> AgentModel:
    try:
        return MODELS[name]()
    except KeyError:
        raise ValidationError(f"unknown model '{name}'; built-ins: "
                              f"{sorted(MODELS)}") from None


def resolve_generator_stages(name: str) -> list[tuple]:
    try:
        return GENERATORS[name]()
    except KeyError:
        raise ValidationError(f"unknown generator '{name}'; built-ins: "
                              f"{sorted(GENERATORS)}") from None


def resolve_kappa(name: str):
    try:
        return KAPPAS[name]()
    except KeyError:
        raise ValidationError(f"unknown kappa '{name}'; built-ins: "
                              f"{sorted(KAPPAS)}") from None
