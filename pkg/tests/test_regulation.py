import numpy as np
import pytest

from etsync.errors import (NotControllable, NotHurwitz, NotObservable,
                           SingularT, ValidationError)
from etsync.models import benchmark_generator_stages, benchmark_model, cubic_kappa
from etsync.numerics import max_abs
from etsync.regulation import (AgentModel, GeneratorStage, RegulationPlant,
                               SteadyStateGenerator, build_generator,
                               make_linear_sigma, tracking_error)


def make_plant(w=0.0) -> RegulationPlant:
    kappa, kappa_grad = cubic_kappa()
    return RegulationPlant(agent=0, model=benchmark_model(),
                           generator=build_generator(benchmark_generator_stages()),
                           w=w, kappa=kappa, kappa_grad=kappa_grad,
                           sigma=make_linear_sigma(0.99, 40.0))


# --- generator construction ---------------------------------------------------

def test_generator_benchmark_transform():
    gen = build_generator(benchmark_generator_stages())
    stage = gen.stages[0]
    assert np.allclose(stage.T, [[0.5, 0.5], [0.8, 0.4]], atol=1e-12)
    resid = stage.M @ stage.T + np.outer(stage.N, stage.Psi) - stage.T @ stage.Phi
    assert max_abs(resid) <= 1e-9


def test_generator_scalar_stage():
    # -T + 1 = 0  =>  T = 1
    gen = build_generator([(np.array([1.0]), np.array([[0.0]]),
                            np.array([[-1.0]]), np.array([1.0]))])
    assert gen.stages[0].T[0, 0] == pytest.approx(1.0, abs=1e-14)
    assert gen.stages[0].psi_T_inv[0] == pytest.approx(1.0, abs=1e-14)


def test_generator_rejects_unstable_m():
    psi, phi, _, n_vec = benchmark_generator_stages()[0]
    bad_m = np.diag([1.0, -2.0])
    with pytest.raises(NotHurwitz):
        build_generator([(psi, phi, bad_m, n_vec)])


def test_generator_rejects_unobservable_pair():
    _, phi, m_mat, n_vec = benchmark_generator_stages()[0]
    with pytest.raises(NotObservable):
        build_generator([(np.zeros(2), phi, m_mat, n_vec)])


def test_generator_rejects_uncontrollable_pair():
    psi, phi, m_mat, _ = benchmark_generator_stages()[0]
    with pytest.raises(NotControllable):
        build_generator([(psi, phi, m_mat, np.zeros(2))])


def test_generator_rejects_intersecting_spectra():
    # M and Phi share the eigenvalue -1, so the transform equation is singular
    psi = np.array([1.0, 1.0])
    phi = np.diag([-1.0, 5.0])
    m_mat = np.diag([-1.0, -2.0])
    n_vec = np.array([1.0, 1.0])
    with pytest.raises(SingularT):
        build_generator([(psi, phi, m_mat, n_vec)])


# --- plant structure -------------------------------------------------------------

def test_model_validation_bounds():
    with pytest.raises(ValidationError):
        make_plant(w=1.5)          # |w| <= 1 declared by the builtin model


def test_model_validation_origin():
    bad = AgentModel(name="bad", m=1, r=1,
                     f0=lambda z, x1, w: np.array([1.0]),   # nonzero at origin
                     f=(lambda z, x, w: 0.0,),
                     b=(lambda w: 1.0,),
                     c=lambda v: float(v[0]),
                     c_grad=lambda v: np.array([1.0, 0.0]))
    kappa, kappa_grad = cubic_kappa()
    with pytest.raises(ValidationError):
        RegulationPlant(agent=0, model=bad,
                        generator=build_generator(benchmark_generator_stages()[:1]),
                        w=0.0, kappa=kappa, kappa_grad=kappa_grad,
                        sigma=make_linear_sigma(0.5, 1.0))


def test_sigma_validation():
    with pytest.raises(ValidationError):
        make_linear_sigma(1.0, 40.0)
    with pytest.raises(ValidationError):
        make_linear_sigma(0.5, 0.0)
    sigma = make_linear_sigma(0.99, 40.0)
    assert sigma(1.0) == pytest.approx(0.99 / 40.0)


def test_sensor_bar_x_relative_degree_one():
    plant = make_plant()
    xb = plant.sensor_bar_x(np.array([0.7]), [np.zeros(2)], e=-0.3)
    assert xb.shape == (1,) and xb[0] == -0.3


def _two_stage_plant():
    """Synthetic relative-degree-two plant with identity transforms, for
    exercising the chain formulas directly."""
    model = AgentModel(name="chain2", m=1, r=2,
                       f0=lambda z, x1, w: np.array([-z[0]]),
                       f=(lambda z, x, w: 0.0, lambda z, x, w: 0.0),
                       b=(lambda w: 1.0, lambda w: 1.0),
                       c=lambda v: float(v[0]),
                       c_grad=lambda v: np.array([1.0, 0.0]))
    eye = np.eye(2)
    stage = GeneratorStage(Psi=np.array([1.0, 0.0]),
                           Phi=np.array([[0.0, -1.0], [1.0, 0.0]]),
                           M=np.diag([-1.0, -2.0]), N=np.array([1.0, 2.0]),
                           T=eye, T_inv=eye, psi_T_inv=np.array([1.0, 0.0]))
    gen = SteadyStateGenerator(stages=(stage, stage))
    kappa, kappa_grad = cubic_kappa()
    return RegulationPlant(agent=0, model=model, generator=gen, w=0.0,
                           kappa=lambda xb: -float(xb[0]) - float(xb[1]),
                           kappa_grad=lambda xb: np.array([-1.0, -1.0]),
                           sigma=make_linear_sigma(0.5, 1.0))


def test_sensor_bar_x_subtracts_compensator_readout():
    plant = _two_stage_plant()
    etas = [np.array([0.3, 0.0]), np.zeros(2)]
    xb = plant.sensor_bar_x(np.array([0.0, 1.0]), etas, e=0.1)
    assert xb[0] == 0.1
    assert xb[1] == pytest.approx(0.7)     # 1 - [1,0] . (0.3, 0)


def test_sensor_bar_x_zero_compensator_passthrough():
    plant = _two_stage_plant()
    xb = plant.sensor_bar_x(np.array([0.0, 1.0]), [np.zeros(2), np.zeros(2)],
                            e=0.1)
    assert xb[1] == 1.0


# --- closed-loop derivative -----------------------------------------------------------

def test_derivative_equilibrium_at_origin():
    plant = make_plant(w=0.7)
    plant.u_bar_held = 0.0
    dz, dx, detas, u = plant.derivative(np.zeros(2), np.zeros(1), [np.zeros(2)])
    assert u == 0.0
    assert np.allclose(dz, 0.0, atol=0.0) and np.allclose(dx, 0.0, atol=0.0)
    assert np.allclose(detas[0], 0.0, atol=0.0)


def test_derivative_held_input_drives_chain():
    # z = 0, x = 1, eta = 0, w = 0: the drift vanishes and dx = u = u_bar
    plant = make_plant(w=0.0)
    e = 1.0
    plant.u_bar_held = plant.kappa(np.array([e]))
    dz, dx, detas, u = plant.derivative(np.zeros(2), np.array([1.0]),
                                        [np.zeros(2)])
    assert u == plant.u_bar_held == pytest.approx(-31.0)
    assert dx[0] == pytest.approx(-31.0)


def test_derivative_compensator_filter_equilibrium():
    # with u frozen at c0, the compensator settles at eta* = -M^-1 N c0
    plant = make_plant(w=0.0)
    stage = plant.generator.stages[0]
    c0 = 2.0
    eta_star = -np.linalg.solve(stage.M, stage.N * c0)
    plant.u_bar_held = c0 - float(stage.psi_T_inv @ eta_star)
    _, _, detas, u = plant.derivative(np.zeros(2), np.zeros(1), [eta_star])
    assert u == pytest.approx(c0, rel=1e-12)
    assert np.allclose(detas[0], 0.0, atol=1e-12)


# --- trigger signals --------------------------------------------------------------------

def test_varpi_zero_at_event_instant():
    plant = make_plant()
    xb = np.array([0.37])
    plant.on_event(1.0, xb)
    varpi, _ = plant.varpi_and_q(xb, np.array([0.0]))
    assert varpi == 0.0


def test_q_chain_rule_cubic():
    plant = make_plant()
    varpi, q = plant.varpi_and_q(np.array([1.0]), np.array([0.5]))
    assert q == pytest.approx(-16.5)       # (-30 - 3) * 0.5


def test_q_linear_kappa_exact():
    plant = _two_stage_plant()             # kappa = -(xb1 + xb2), grad (-1, -1)
    _, q = plant.varpi_and_q(np.array([3.0, 1.0]), np.array([0.25, 0.5]))
    assert q == -0.75


def test_trigger_value_published_gain():
    plant = make_plant()
    assert plant.trigger_value(0.1, 1.0) == pytest.approx(0.07525)


def test_trigger_value_nonpositive_after_event():
    plant = make_plant()
    assert plant.trigger_value(0.0, 3.7) <= 0.0


def test_rest_exemption():
    plant = make_plant()
    assert plant.at_rest(0.0, 0.0)
    assert plant.at_rest(1e-13, -1e-13)
    assert not plant.at_rest(1e-6, 0.0)


def test_on_event_cubic_hold():
    plant = make_plant()
    plant.on_event(2.0, np.array([0.2]))
    assert plant.u_bar_held == pytest.approx(-6.008)
    assert plant.t_last == 2.0 and plant.k == 0


def test_on_event_idempotent_at_same_state():
    plant = make_plant()
    plant.on_event(2.0, np.array([0.2]))
    held = plant.u_bar_held
    plant.on_event(2.0, np.array([0.2]))
    assert plant.u_bar_held == held
    assert np.array_equal(plant.x_bar_held, [0.2])


# --- tracking error ------------------------------------------------------------------------

def test_tracking_error_cases():
    c = lambda v: float(v[0])
    assert tracking_error(1.5, np.array([1.5, 9.0]), c) == 0.0
    assert tracking_error(2.0, np.array([1.5, 0.0]), c) == pytest.approx(0.5)
    e = tracking_error(0.3, np.array([0.9, 0.0]), c)
    assert tracking_error(0.9, np.array([0.3, 0.0]), c) == pytest.approx(-e)


# --- steady-state diagnostic ----------------------------------------------------------------

def test_transformed_coordinates_vanish_on_manifold():
    plant = make_plant(w=0.5)
    v = np.array([0.7, -0.2])
    reg = plant.model.regulator
    z = np.asarray(reg.z_ss(v, plant.w))
    x = np.array([plant.model.c(v)])
    stage = plant.generator.stages[0]
    eta = stage.T @ np.asarray(reg.vartheta[0](v, plant.w))
    z0, z_js, x_bar = plant.transformed_coordinates(z, x, [eta], v)
    assert np.allclose(z0, 0.0, atol=1e-12)
    assert np.allclose(z_js[0], 0.0, atol=1e-12)
    assert np.allclose(x_bar, 0.0, atol=1e-12)


def test_transformed_coordinates_core_offset():
    plant = make_plant(w=0.5)
    v = np.array([0.7, -0.2])
    z_ss = np.array([0.0, v[0] + v[1]])
    delta = np.array([0.11, -0.03])
    z0, _, _ = plant.transformed_coordinates(z_ss + delta,
                                             np.array([plant.model.c(v)]),
                                             [plant.generator.stages[0].T @
                                              ((1 - plant.w) * v)], v)
    assert np.allclose(z0, delta, atol=1e-12)


def test_reset_clears_holds():
    plant = make_plant()
    plant.on_event(3.0, np.array([1.0]))
    plant.reset()
    assert plant.u_bar_held == 0.0 and plant.t_last == 0.0 and plant.k == -1
