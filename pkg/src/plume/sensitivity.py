"""Gauss-Newton ingredients: stacked residual, sensitivity matrix,
diagonal segment scaling and the truncated-SVD step solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controls import ActiveSet, ControlVector, Subdivision, to_nodal_control


class SensitivityError(ValueError):
    pass


Window = tuple[int, int]


def full_window(n_times: int) -> Window:
    """All observed steps except the initial condition."""
    return (1, n_times - 1)


def _check_window(window: Window, n_times: int) -> Window:
    j0, j1 = window
    if not (0 <= j0 <= j1 <= n_times - 1):
        raise SensitivityError(f"window {window} outside the time grid")
    return (int(j0), int(j1))


def stack(observations: np.ndarray, window: Window) -> np.ndarray:
    """Time-major stacking of observation columns j0..j1 inclusive."""
    j0, j1 = window
    return observations[:, j0:j1 + 1].T.ravel()


def _nodal(cv, mesh):
    if isinstance(cv, ControlVector):
        return to_nodal_control(cv, mesh, require_aligned=False)
    return np.asarray(cv)


def residual(model, cv, measurements: np.ndarray,
             window: Window | None = None,
             prediction: np.ndarray | None = None) -> np.ndarray:
    """Prediction error e = R(C_s) - R(predicted) on the window."""
    n_times = model.grid.n_times
    window = full_window(n_times) if window is None else _check_window(window, n_times)
    pred = prediction
    if pred is None:
        pred = model.predict(_nodal(cv, model.mesh), upto=window[1])
    return stack(measurements[:, :window[1] + 1], window) - stack(pred, window)


def _perturbed(cv: ControlVector, index: int, delta) -> np.ndarray:
    theta = cv.theta.astype(np.result_type(cv.theta.dtype, type(delta)))
    theta[index] = theta[index] + delta
    pert = ControlVector.__new__(ControlVector)
    pert.subdivision = cv.subdivision
    pert.theta = theta
    return pert


@dataclass
class SensitivityMatrix:
    """Jacobian of the stacked prediction w.r.t. the active parameters."""

    psi: np.ndarray
    active: ActiveSet
    window: Window


def jacobian_fd(model, cv: ControlVector, active: ActiveSet, delta: float,
                window: Window | None = None,
                base_prediction: np.ndarray | None = None) -> SensitivityMatrix:
    """Forward-difference sensitivity: one extra solve per active parameter."""
    if delta <= 0:
        raise SensitivityError("perturbation must be positive")
    n_times = model.grid.n_times
    window = full_window(n_times) if window is None else _check_window(window, n_times)
    if base_prediction is None:
        base_prediction = model.predict(_nodal(cv, model.mesh), upto=window[1])
    base = stack(base_prediction, window)
    cols = []
    for j in active:
        pert = _perturbed(cv, j, delta)
        pred = model.predict(_nodal(pert, model.mesh), upto=window[1])
        cols.append((stack(pred, window) - base) / delta)
    psi = np.column_stack(cols) if cols else np.zeros((len(base), 0))
    return SensitivityMatrix(psi, active, window)


def jacobian_cs(model, cv: ControlVector, active: ActiveSet, delta: float,
                window: Window | None = None) -> SensitivityMatrix:
    """Complex-step sensitivity, subtraction free."""
    if delta <= 0:
        raise SensitivityError("perturbation must be positive")
    n_times = model.grid.n_times
    window = full_window(n_times) if window is None else _check_window(window, n_times)
    cols = []
    for j in active:
        pert = _perturbed(cv, j, 1j * delta)
        pred = model.predict(_nodal(pert, model.mesh), upto=window[1])
        cols.append(stack(pred.imag, window) / delta)
    n_rows = (window[1] - window[0] + 1) * model.n_y
    psi = np.column_stack(cols) if cols else np.zeros((n_rows, 0))
    return SensitivityMatrix(psi, active, window)


def diagonal_scaling(sub: Subdivision, active: ActiveSet) -> np.ndarray:
    """d_i = (max active segment length) / (segment i length), d_i >= 1."""
    lengths = sub.segment_lengths()[list(active)]
    if len(lengths) == 0:
        return np.zeros(0)
    return lengths.max() / lengths


@dataclass
class TsvdInfo:
    rank: int
    cond: float          # full-spectrum condition number of the matrix
    singular_values: np.ndarray
    identifiable: bool


def tsvd_solve(psi: np.ndarray, e: np.ndarray,
               rel_tol: float = 1e-6, rank: int | None = None,
               ) -> tuple[np.ndarray, TsvdInfo]:
    """Minimum-norm least-squares step keeping triplets above the cutoff.

    The cutoff is relative to the largest singular value; a fixed rank may
    be requested instead.  With every singular value below the cutoff, the
    step is zero and the result is flagged unidentifiable.
    """
    if psi.size == 0:
        return np.zeros(psi.shape[1]), TsvdInfo(0, np.inf, np.zeros(0), False)
    u, s, vt = np.linalg.svd(psi, full_matrices=False)
    if s[0] == 0:
        return np.zeros(psi.shape[1]), TsvdInfo(0, np.inf, s, False)
    cutoff = max(rel_tol, 1e-8) * s[0]
    keep = int(np.sum(s >= cutoff))
    if rank is not None:
        keep = min(rank, len(s))
    if keep == 0:
        return np.zeros(psi.shape[1]), TsvdInfo(0, np.inf, s, False)
    coeffs = (u[:, :keep].T @ e) / s[:keep]
    step_vec = vt[:keep].T @ coeffs
    positive = s[s > 0]
    cond = float(positive[0] / positive[-1]) if len(positive) else np.inf
    return step_vec, TsvdInfo(keep, cond, s, True)
