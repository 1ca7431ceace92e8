"""Implicit Euler time marching and outflow observation.

The system matrix is time independent, so one sparse factorization is
reused for the whole march.  Complex boundary data (for complex-step
sensitivities) is handled by solving real and imaginary parts against the
same real factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import FemSystem, StructuredMesh, load_vector


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform subdivision of [t0, tf] with (N-1)*dt = tf - t0."""

    t0: float
    tf: float
    n_times: int

    def __post_init__(self):
        if self.n_times < 2:
            raise ValueError("need at least two time levels")
        if self.tf <= self.t0:
            raise ValueError("empty time interval")

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / (self.n_times - 1)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_times)

    def step_of(self, t: float) -> int:
        """Nearest step index for a physical time."""
        k = round((t - self.t0) / self.dt)
        if not 0 <= k <= self.n_times - 1:
            raise ValueError(f"time {t} outside grid")
        return int(k)


@dataclass(frozen=True)
class Trajectory:
    """Nodal states, one column per time level of ``grid``."""

    states: np.ndarray
    grid: TimeGrid

    @property
    def n_times(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class ObservationOperator:
    """Projection onto the outflow-edge nodes, ordered bottom to top."""

    outflow_nodes: np.ndarray

    @classmethod
    def for_mesh(cls, mesh: StructuredMesh) -> "ObservationOperator":
        return cls(mesh.outflow_nodes.copy())

    @property
    def n_y(self) -> int:
        return len(self.outflow_nodes)


def _lu_solve(lu, rhs: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(rhs):
        return lu.solve(rhs.real) + 1j * lu.solve(rhs.imag)
    return lu.solve(rhs)


def step(system: FemSystem, state: np.ndarray, control, c_up, dt: float) -> np.ndarray:
    """One implicit Euler step (M + dt A) C+ = M C + dt F."""
    if dt <= 0:
        raise SolverError("time step must be positive")
    g = system.boundary_values(control, c_up)
    f = load_vector(system, control, c_up)
    free = system.free_nodes
    dirich = system.dirichlet_nodes
    lu = system.factorization(dt)
    m_ff = system.free_block("mass")
    rhs = m_ff @ state[free] + dt * f[free]
    nxt = np.zeros(system.n_nodes, dtype=np.result_type(rhs.dtype, g.dtype))
    nxt[free] = _lu_solve(lu, rhs)
    nxt[dirich] = g[dirich]
    return nxt


def solve(system: FemSystem, grid: TimeGrid, c0: np.ndarray, control, c_up,
          n_steps: int | None = None) -> Trajectory:
    """March the full trajectory (optionally only the first n_steps steps)."""
    total = grid.n_times - 1 if n_steps is None else int(n_steps)
    if not 1 <= total <= grid.n_times - 1:
        raise SolverError("invalid step count")
    g = system.boundary_values(control, c_up)
    f = load_vector(system, control, c_up)
    free = system.free_nodes
    dirich = system.dirichlet_nodes
    dt = grid.dt
    lu = system.factorization(dt)
    m_ff = system.free_block("mass")

    dtype = np.result_type(np.asarray(c0).dtype, g.dtype, float)
    states = np.zeros((system.n_nodes, total + 1), dtype=dtype)
    states[:, 0] = c0
    current = np.asarray(c0, dtype=dtype)[free]
    f_free = dt * f[free]
    for k in range(total):
        current = _lu_solve(lu, m_ff @ current + f_free)
        states[free, k + 1] = current
        states[dirich, k + 1] = g[dirich]
    return Trajectory(states, grid)


def observe(traj: Trajectory, op: ObservationOperator) -> np.ndarray:
    """Matrix of outflow concentrations, shape (n_y, n_times)."""
    if op.outflow_nodes.max() >= traj.states.shape[0]:
        raise SolverError("observation nodes outside trajectory")
    return traj.states[op.outflow_nodes, :]


class TransportModel:
    """Forward model bound to a mesh/coefficients/time grid.

    Tracks the cumulative number of full-horizon-equivalent forward solves
    (a solve of k steps counts k/(N-1)) for the cost accounting of the
    inverse algorithms.
    """

    def __init__(self, system: FemSystem, grid: TimeGrid,
                 c0: np.ndarray | None = None):
        self.system = system
        self.grid = grid
        self.mesh = system.mesh
        self.obs = ObservationOperator.for_mesh(system.mesh)
        self.c0 = np.zeros(system.n_nodes) if c0 is None else np.asarray(c0)
        self.solve_equivalents = 0.0
        self.n_solves = 0

    @property
    def n_y(self) -> int:
        return self.obs.n_y

    @property
    def c_up(self) -> float:
        return self.system.coeffs.c_up

    def trajectory(self, control, n_steps: int | None = None) -> Trajectory:
        total = self.grid.n_times - 1 if n_steps is None else n_steps
        self.solve_equivalents += total / (self.grid.n_times - 1)
        self.n_solves += 1
        return solve(self.system, self.grid, self.c0, control, self.c_up,
                     n_steps=total)

    def predict(self, control, upto: int | None = None) -> np.ndarray:
        """Observed outflow matrix (n_y, upto+1) for a nodal control."""
        n_steps = None if upto is None else upto
        return observe(self.trajectory(control, n_steps), self.obs)


def add_measurement_noise(observations: np.ndarray, variance: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Additive zero-mean Gaussian noise on every observed entry."""
    if variance == 0:
        return observations.copy()
    return observations + rng.normal(0.0, np.sqrt(variance), observations.shape)


def oscillation_indicator(traj: Trajectory) -> float:
    """Magnitude of the most negative nodal concentration over the run.

    With nonnegative boundary data the exact solution stays nonnegative,
    so any negative value flags spurious numerical oscillation.
    """
    low = float(traj.states.real.min())
    return max(0.0, -low)
