"""Time marching, observation and the oscillation indicator."""

import numpy as np
import pytest

from plume.controls import ControlVector, to_nodal_control
from plume.forward import (ObservationOperator, TimeGrid, TransportModel,
                           add_measurement_noise, observe,
                           oscillation_indicator, solve, step)
from plume.mesh import PhysicalCoefficients, assemble, build_mesh


def test_time_grid_spacing_and_lookup():
    grid = TimeGrid(0.0, 10.0, 201)
    assert grid.dt == pytest.approx(0.05)
    assert len(grid.times) == 201
    assert grid.step_of(2.5) == 50
    with pytest.raises(ValueError):
        grid.step_of(11.0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 10.0, 1)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 5)


@pytest.fixture(scope="module")
def diffusion_model():
    """Pure diffusion: constant boundary data admits the constant solution."""
    mesh = build_mesh((0, 2), (0, 1), 9, 5)
    coeffs = PhysicalCoefficients(mu=0.5, sigma=0.0, nu=0.0, c_up=1.0)
    return TransportModel(assemble(mesh, coeffs), TimeGrid(0.0, 8.0, 81))


def test_constant_boundary_data_reaches_constant_steady_state(diffusion_model):
    m = diffusion_model
    control = np.zeros(m.mesh.n_nodes)
    control[m.mesh.gamma_h_nodes] = 1.0
    traj = solve(m.system, m.grid, m.c0, control, 1.0)
    assert np.allclose(traj.states[:, -1], 1.0, atol=1e-6)


def test_first_column_is_the_initial_condition(diffusion_model):
    m = diffusion_model
    c0 = np.zeros(m.mesh.n_nodes)
    traj = solve(m.system, m.grid, c0, np.zeros(m.mesh.n_nodes), 1.0)
    assert np.array_equal(traj.states[:, 0], c0)


def test_single_step_satisfies_the_implicit_euler_system(diffusion_model):
    m = diffusion_model
    rng = np.random.default_rng(3)
    n = m.mesh.n_nodes
    control = np.zeros(n)
    control[m.mesh.gamma_h_nodes] = rng.uniform(0, 2, len(m.mesh.gamma_h_nodes))
    state = rng.uniform(0, 1, n)
    dt = 0.1
    nxt = step(m.system, state, control, 1.0, dt)
    from plume.mesh import load_vector
    f = load_vector(m.system, control, 1.0)
    free = m.system.free_nodes
    lhs = (m.system.free_block("mass") + dt * m.system.free_block("operator"))
    rhs = m.system.free_block("mass") @ state[free] + dt * f[free]
    assert np.allclose(lhs @ nxt[free], rhs, atol=1e-10)
    g = m.system.boundary_values(control, 1.0)
    assert np.allclose(nxt[m.system.dirichlet_nodes],
                       g[m.system.dirichlet_nodes])


def test_prediction_is_affine_in_the_control(small_cfg, small_model, small_sub):
    m = small_model
    rng = np.random.default_rng(5)
    t1 = rng.uniform(0, 10, small_sub.n_segments)
    t2 = rng.uniform(0, 10, small_sub.n_segments)
    ctl = [to_nodal_control(ControlVector(small_sub, t), m.mesh)
           for t in (t1, t2, t1 + t2)]
    zero = m.predict(np.zeros(m.mesh.n_nodes))
    p1, p2, p12 = (m.predict(c) for c in ctl)
    assert np.allclose(p12 + zero, p1 + p2, rtol=1e-10, atol=1e-10)


def test_complex_control_round_trip(small_model):
    """Real part of a complex-perturbed march matches the real march."""
    m = small_model
    n = m.mesh.n_nodes
    control = np.zeros(n)
    control[m.mesh.gamma_h_nodes] = 3.0
    real = m.predict(control)
    pert = control.astype(complex)
    pert[m.mesh.gamma_h_nodes[0]] += 1e-30j
    mixed = m.predict(pert)
    assert np.allclose(mixed.real, real, atol=1e-12)


def test_solve_equivalent_accounting(small_model):
    m = small_model
    before_eq, before_n = m.solve_equivalents, m.n_solves
    m.predict(np.zeros(m.mesh.n_nodes))
    assert m.solve_equivalents == pytest.approx(before_eq + 1.0)
    m.predict(np.zeros(m.mesh.n_nodes), upto=(m.grid.n_times - 1) // 2)
    assert m.solve_equivalents == pytest.approx(before_eq + 1.5)
    assert m.n_solves == before_n + 2


def test_observation_picks_outflow_rows(diffusion_model):
    m = diffusion_model
    control = np.zeros(m.mesh.n_nodes)
    traj = solve(m.system, m.grid, m.c0, control, 1.0)
    obs = observe(traj, m.obs)
    assert obs.shape == (m.n_y, m.grid.n_times)
    assert np.array_equal(obs, traj.states[m.mesh.outflow_nodes, :])
    with pytest.raises(RuntimeError):
        observe(traj, ObservationOperator(np.array([10 ** 6])))


def test_measurement_noise_is_seeded_and_scaled():
    rng = np.random.default_rng(11)
    clean = np.zeros((4, 2000))
    noisy = add_measurement_noise(clean, 0.05, rng)
    assert np.std(noisy) == pytest.approx(np.sqrt(0.05), rel=0.05)
    again = add_measurement_noise(clean, 0.05, np.random.default_rng(11))
    assert np.array_equal(noisy, again)
    copy = add_measurement_noise(clean, 0.0, rng)
    assert np.array_equal(copy, clean) and copy is not clean


def test_oscillation_indicator_zero_without_forcing(diffusion_model):
    m = diffusion_model
    traj = solve(m.system, m.grid, m.c0, np.zeros(m.mesh.n_nodes), 0.0)
    assert oscillation_indicator(traj) == 0.0
