"""Snapshot collection, truncated POD basis, reduced dynamics and basis
staleness monitoring.

The reduction acts on the free degrees of freedom (Dirichlet values are
re-imposed when lifting), so the reduced system is a plain Galerkin
projection of the free-block mass/operator matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import TimeGrid, TransportModel, solve
from .mesh import FemSystem, load_vector


class PodError(RuntimeError):
    pass


@dataclass(frozen=True)
class SnapshotMatrix:
    """Free-dof states sampled every dtau on [0, t_m]."""

    columns: np.ndarray
    t_m: float
    dtau: float

    @property
    def n_snapshots(self) -> int:
        return self.columns.shape[1]


def collect_snapshots(system: FemSystem, grid: TimeGrid, c0, control, c_up,
                      t_m: float, dtau: float | None = None) -> SnapshotMatrix:
    """Solve the unreduced model on [0, t_m] and sample its states."""
    dtau = grid.dt if dtau is None else dtau
    if not grid.t0 < t_m < grid.tf:
        raise PodError("snapshot horizon must lie strictly inside the time grid")
    stride = dtau / grid.dt
    if abs(stride - round(stride)) > 1e-9:
        raise PodError("snapshot step must be a multiple of the time step")
    stride = int(round(stride))
    m_steps = grid.step_of(t_m)
    traj = solve(system, grid, c0, control, c_up, n_steps=m_steps)
    cols = traj.states[system.free_nodes, ::stride]
    return SnapshotMatrix(np.ascontiguousarray(cols.real), t_m, dtau)


@dataclass(frozen=True)
class PodBasis:
    """Truncated left singular vectors plus projected operators."""

    modes: np.ndarray
    singular_values: np.ndarray
    k: int
    reduced_mass: np.ndarray
    reduced_operator: np.ndarray

    def project(self, free_state: np.ndarray) -> np.ndarray:
        return self.modes.T @ free_state

    def lift(self, a: np.ndarray) -> np.ndarray:
        return self.modes @ a


def truncate(snapshots: SnapshotMatrix, system: FemSystem,
             rule: tuple[str, float]) -> PodBasis:
    """Build the rank-k basis by energy ratio or singular-value floor.

    rule = ("energy", tol): smallest k with cumulative squared singular
    value fraction >= tol; rule = ("sigma", tau): number of singular
    values above tau.
    """
    x = snapshots.columns
    if not np.any(x):
        raise PodError("all-zero snapshot matrix admits no basis")
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    kind, value = rule
    if kind == "energy":
        energy = np.cumsum(s ** 2) / np.sum(s ** 2)
        k = int(np.searchsorted(energy, value - 1e-14) + 1)
        k = min(k, int(np.sum(s > s[0] * 1e-14)))
    elif kind == "sigma":
        k = int(np.sum(s > value))
        if k == 0:
            raise PodError("threshold above the largest singular value")
    else:
        raise PodError(f"unknown truncation rule {kind!r}")
    u_k = u[:, :k]
    m_ff = system.free_block("mass")
    a_ff = system.free_block("operator")
    return PodBasis(u_k, s, k, u_k.T @ (m_ff @ u_k), u_k.T @ (a_ff @ u_k))


def reduced_solve(basis: PodBasis, system: FemSystem, dt: float, n_steps: int,
                  a0: np.ndarray, control, c_up) -> np.ndarray:
    """Implicit Euler on the k-dimensional system; returns (k, n_steps+1)."""
    f = load_vector(system, control, c_up)
    f_r = basis.modes.T @ f[system.free_nodes]
    lhs = basis.reduced_mass + dt * basis.reduced_operator
    try:
        lu = np.linalg.inv(lhs)
    except np.linalg.LinAlgError as exc:
        raise PodError("singular reduced mass matrix") from exc
    a = np.empty((basis.k, n_steps + 1), dtype=np.result_type(a0.dtype, f_r.dtype))
    a[:, 0] = a0
    cur = np.asarray(a0)
    for j in range(n_steps):
        cur = lu @ (basis.reduced_mass @ cur + dt * f_r)
        a[:, j + 1] = cur
    return a


def staleness_index(basis: PodBasis, system: FemSystem, grid: TimeGrid,
                    c0, control, c_up, n_bar: int = 5) -> float:
    """Mismatch between reduced and unreduced early dynamics.

    Runs both models n_bar steps from the initial state and evaluates
    (1/n_bar) * || sum_j (lifted reduced state - full state) ||^2 on the
    free degrees of freedom.
    """
    if n_bar < 1:
        raise PodError("comparison window must be positive")
    traj = solve(system, grid, c0, control, c_up, n_steps=n_bar)
    full = traj.states[system.free_nodes, 1:n_bar + 1].real
    a0 = basis.project(np.asarray(c0)[system.free_nodes])
    a = reduced_solve(basis, system, grid.dt, n_bar, a0, control, c_up)
    lifted = basis.lift(a[:, 1:n_bar + 1]).real
    diff = (lifted - full).sum(axis=1)
    return float(np.dot(diff, diff) / n_bar)


@dataclass
class PodConfig:
    t_m: float
    rule: tuple[str, float] = ("sigma", 0.01)
    dtau: float | None = None
    staleness_threshold: float = 0.1
    n_bar: int = 5


class ReducedTransportModel:
    """Drop-in prediction model marching the reduced dynamics.

    Snapshots of the unreduced model on [0, t_m] yield the basis; the
    whole horizon is then marched in the reduced space and lifted back to
    the outflow nodes.  The basis is refreshed from new snapshots whenever
    the staleness index for the requested control exceeds the threshold;
    old snapshots are discarded on refresh.
    """

    def __init__(self, full_model: TransportModel, config: PodConfig,
                 probes: list[np.ndarray] | None = None):
        self.full = full_model
        self.config = config
        self.grid = full_model.grid
        self.mesh = full_model.mesh
        self.obs = full_model.obs
        self.probes = [] if probes is None else list(probes)
        self.basis: PodBasis | None = None
        self.basis_updates = 0
        self._m_steps = self.grid.step_of(config.t_m)

    @property
    def n_y(self) -> int:
        return self.full.n_y

    @property
    def reduced_dimension(self) -> int:
        return self.basis.k if self.basis is not None else 0

    def refresh_basis(self, control) -> None:
        """Rebuild the basis from fresh snapshots at this control.

        Optional probe controls contribute extra snapshot columns so the
        basis keeps spanning the response directions of parameters that
        are still (near) zero in the current iterate.
        """
        columns = []
        snaps = None
        for ctl in [control, *self.probes]:
            snaps = collect_snapshots(self.full.system, self.grid,
                                      self.full.c0, ctl, self.full.c_up,
                                      self.config.t_m, self.config.dtau)
            self.full.solve_equivalents += self._m_steps / (self.grid.n_times - 1)
            columns.append(snaps.columns)
        merged = SnapshotMatrix(np.hstack(columns), snaps.t_m, snaps.dtau)
        self.basis = truncate(merged, self.full.system, self.config.rule)
        self.basis_updates += 1

    def check_staleness(self, control) -> float:
        """Refresh the basis for a new iterate if the old one went stale.

        Called once per optimizer iteration (the optimizer detects models
        carrying this method); predictions in between reuse the frozen
        basis so that costs stay comparable within an iteration.
        """
        control = control.real if np.iscomplexobj(control) else control
        if self.basis is None:
            self.refresh_basis(control)
            return 0.0
        idx = staleness_index(self.basis, self.full.system, self.grid,
                              self.full.c0, control, self.full.c_up,
                              self.config.n_bar)
        self.full.solve_equivalents += self.config.n_bar / (self.grid.n_times - 1)
        if idx > self.config.staleness_threshold:
            self.refresh_basis(control)
        return idx

    def predict(self, control, upto: int | None = None) -> np.ndarray:
        system = self.full.system
        grid = self.grid
        last = grid.n_times - 1 if upto is None else upto
        if self.basis is None:
            self.refresh_basis(control.real if np.iscomplexobj(control)
                               else control)
        self.full.n_solves += 1

        c0 = np.asarray(self.full.c0)
        a0 = self.basis.project(c0[system.free_nodes])
        a = reduced_solve(self.basis, system, grid.dt, last, a0, control,
                          self.full.c_up)
        obs = np.empty((self.n_y, last + 1),
                       dtype=np.result_type(a.dtype, c0.dtype))
        obs[:, 0] = c0[self.obs.outflow_nodes]
        obs[:, 1:] = self._lift_observed(a[:, 1:], control)
        return obs

    def _lift_observed(self, a: np.ndarray, control) -> np.ndarray:
        system = self.full.system
        full_states = np.zeros((system.n_nodes, a.shape[1]), dtype=a.dtype)
        full_states[system.free_nodes, :] = self.basis.modes @ a
        g = system.boundary_values(control, self.full.c_up)
        full_states[system.dirichlet_nodes, :] = g[system.dirichlet_nodes, None]
        return full_states[self.obs.outflow_nodes, :]


def projection_error(snapshots: SnapshotMatrix, basis: PodBasis) -> float:
    """Sum of squared snapshot-projection residuals (equals the tail
    singular-value energy)."""
    x = snapshots.columns
    proj = basis.modes @ (basis.modes.T @ x)
    return float(np.sum((x - proj) ** 2))
