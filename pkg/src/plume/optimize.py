"""Projected damped Gauss-Newton loop and the classical comparison
methods (Levenberg-Marquardt, steepest descent, iterated Tikhonov)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import ActiveSet, ControlVector, l1_errors
from .sensitivity import (Window, diagonal_scaling, full_window, jacobian_cs,
                          jacobian_fd, residual, tsvd_solve)

DAMPING_FLOOR = 2.0 ** -20


@dataclass(frozen=True)
class GnConfig:
    tol: float = 1e-10
    max_it: int = 20
    alpha_reg: float = 0.01          # LM / Tikhonov regularization
    jacobian: str = "fd"             # "fd" or "cs"
    fd_delta: float = 1e-3
    cs_delta: float = 1e-8
    tsvd_rel_tol: float = 1e-6
    scaling: bool = True

    def __post_init__(self):
        if self.tol <= 0 or self.max_it < 1:
            raise ValueError("tol must be positive and max_it >= 1")


@dataclass
class CostEvaluation:
    value: float
    per_step: np.ndarray
    prediction: np.ndarray | None = None


def evaluate_cost(model, cv, measurements: np.ndarray,
                  window: Window | None = None,
                  prediction: np.ndarray | None = None) -> CostEvaluation:
    """Mean squared outflow mismatch over the observed window steps."""
    n_times = model.grid.n_times
    window = full_window(n_times) if window is None else window
    j0, j1 = window
    if prediction is None:
        from .sensitivity import _nodal
        prediction = model.predict(_nodal(cv, model.mesh), upto=j1)
    diff = prediction[:, j0:j1 + 1] - measurements[:, j0:j1 + 1]
    per_step = np.sum(np.abs(diff) ** 2, axis=0)
    return CostEvaluation(float(per_step.mean()), per_step, prediction)


def _jacobian(model, cv, active, window, config: GnConfig,
              cache: dict | None = None):
    """Sensitivity matrix, with optional per-run column memoization.

    The prediction is affine in the segment intensities, so a column only
    depends on the segment's edge interval and the time window; within one
    run columns of surviving segments are reused across iterations.  The
    cache must stay off for reduced models, whose basis changes between
    iterations.
    """
    if cache is None:
        if config.jacobian == "cs":
            return jacobian_cs(model, cv, active, config.cs_delta, window)
        return jacobian_fd(model, cv, active, config.fd_delta, window)
    segs = cv.subdivision.segments()
    keys = [(segs[j], window) for j in active]
    for j, key in zip(active, keys):
        if key in cache:
            continue
        col = _synthesized_column(key, cache)
        if col is None:
            sens = _jacobian(model, cv, ActiveSet((j,)), window, config)
            col = sens.psi[:, 0]
            cache[key] = col
            # One solve covers the bisection pair: the sibling's column
            # follows from the parent's by linearity.
            sibling = _sibling_from_parent(key, cache)
            if sibling is not None:
                cache[sibling[0]] = sibling[1]
        else:
            cache[key] = col
    psi = (np.column_stack([cache[key] for key in keys]) if keys
           else np.zeros((0, 0)))
    from .sensitivity import SensitivityMatrix
    return SensitivityMatrix(psi, active, window)


def _synthesized_column(key, cache):
    """Derive a segment's column from a cached parent/sibling pair.

    Bisection keeps breakpoints dyadic, so the parent and sibling keys are
    exact; linearity gives column(parent) = column(left) + column(right).
    """
    (edge, a, b), window = key
    w = b - a
    for parent, sibling in ((((edge, a, b + w), window), ((edge, b, b + w), window)),
                            (((edge, a - w, b), window), ((edge, a - w, a), window))):
        if parent in cache and sibling in cache:
            return cache[parent] - cache[sibling]
    return None


def _sibling_from_parent(key, cache):
    """Column of the bisection sibling, if the parent is already cached."""
    (edge, a, b), window = key
    w = b - a
    for parent, sibling in ((((edge, a, b + w), window), ((edge, b, b + w), window)),
                            (((edge, a - w, b), window), ((edge, a - w, a), window))):
        if parent in cache and sibling not in cache:
            return sibling, cache[parent] - cache[key]
    return None


def _project(theta: np.ndarray) -> np.ndarray:
    return np.maximum(theta, 0.0)


def _apply_step(cv: ControlVector, active: ActiveSet, s: np.ndarray,
                alpha: float) -> ControlVector:
    theta = cv.theta.copy()
    idx = list(active)
    theta[idx] = theta[idx] + alpha * s
    return ControlVector(cv.subdivision, _project(theta))


def _solve_subset(psi: np.ndarray, e: np.ndarray,
                  scaling: np.ndarray | None, rel_tol: float):
    if scaling is not None and len(scaling):
        step_scaled, info = tsvd_solve(psi * scaling[None, :], e,
                                       rel_tol=rel_tol)
        return scaling * step_scaled, info
    return tsvd_solve(psi, e, rel_tol=rel_tol)


def _feasible_step(psi: np.ndarray, e: np.ndarray, theta_active: np.ndarray,
                   scaling: np.ndarray | None, rel_tol: float):
    """TSVD step kept feasible by re-solving instead of truncating.

    When the unconstrained step would drive components negative, the
    bound-constrained least-squares problem min ||Psi s - e|| subject to
    theta + s >= 0 is solved instead, so the full step still heads for
    the constrained optimum rather than a projected compromise.
    """
    s, info = _solve_subset(psi, e, scaling, rel_tol)
    if psi.size == 0 or not np.any(theta_active + s < 0):
        return s, info
    from scipy.optimize import lsq_linear
    if scaling is not None and len(scaling):
        res = lsq_linear(psi * scaling[None, :], e,
                         bounds=(-theta_active / scaling, np.inf))
        s = scaling * res.x
    else:
        res = lsq_linear(psi, e, bounds=(-theta_active, np.inf))
        s = res.x
    return np.maximum(s, -theta_active), info


def gauss_newton_step(model, cv: ControlVector, active: ActiveSet,
                      psi: np.ndarray, e: np.ndarray, scaling: np.ndarray | None,
                      measurements: np.ndarray, window: Window | None,
                      current_cost: float, config: GnConfig):
    """One regularized, projected, damped step.

    Solves (Psi D) s~ = e by TSVD, recovers s = D s~, keeps the step inside
    the nonnegative orthant and bisects the damping until the cost
    decreases.  Returns (new control, info dict).
    """
    theta_active = cv.theta[list(active)]
    s, info = _feasible_step(psi, e, theta_active, scaling,
                             config.tsvd_rel_tol)

    stagnated = False
    alpha = 1.0
    candidate = _apply_step(cv, active, s, alpha)
    ce = evaluate_cost(model, candidate, measurements, window)
    cost = ce.value
    if cost >= current_cost and np.any(s != 0):
        # The cost along a feasible step is exactly quadratic in the
        # damping (the prediction is affine), so the rejected full and
        # half steps pin down the best admissible damping directly
        # instead of bisecting all the way to the floor.
        c_full = cost
        alpha = 0.5
        candidate = _apply_step(cv, active, s, alpha)
        ce = evaluate_cost(model, candidate, measurements, window)
        cost = ce.value
        if cost >= current_cost:
            a = 2.0 * (current_cost + c_full - 2.0 * cost)
            b = c_full - current_cost - a
            alpha_star = -b / (2.0 * a) if a > 0 else 0.0
            alpha = min(max(alpha_star, DAMPING_FLOOR), 1.0)
            candidate = _apply_step(cv, active, s, alpha)
            ce = evaluate_cost(model, candidate, measurements, window)
            cost = ce.value
            if cost >= current_cost:
                stagnated = True
                candidate, cost, ce = cv, current_cost, None
    if not np.any(s != 0):
        stagnated = True
        candidate, cost, ce = cv, current_cost, None
    return candidate, {"cost": cost, "alpha": alpha, "cond": info.cond,
                       "rank": info.rank, "stagnated": stagnated,
                       "step": s,
                       "prediction": None if ce is None else ce.prediction}


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    l1_top: float
    l1_bottom: float
    cond: float
    alpha: float
    n_active: int


@dataclass
class OptimizerTrace:
    records: list[IterationRecord] = field(default_factory=list)
    stagnated: bool = False

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final_cost(self) -> float:
        return self.records[-1].cost if self.records else np.nan

    def max_cond(self) -> float:
        conds = [r.cond for r in self.records if np.isfinite(r.cond)]
        return max(conds) if conds else np.nan

    def mean_cond(self) -> float:
        conds = [r.cond for r in self.records if np.isfinite(r.cond)]
        return float(np.mean(conds)) if conds else np.nan


def _sync_reduced_basis(model, cv) -> bool:
    """Refresh a reduced model's basis at the iterate; True if it changed."""
    check = getattr(model, "check_staleness", None)
    if check is None:
        return False
    from .sensitivity import _nodal
    before = getattr(model, "basis_updates", 0)
    check(_nodal(cv, model.mesh))
    return getattr(model, "basis_updates", 0) != before


def run_pdgn(model, cv0: ControlVector, measurements: np.ndarray,
             config: GnConfig, active: ActiveSet | None = None,
             window: Window | None = None,
             truth: list | None = None,
             cache: dict | None = None,
             rel_tol: float | None = None) -> tuple[ControlVector, OptimizerTrace]:
    """Projected damped Gauss-Newton from cv0 until tol or max_it.

    With ``rel_tol`` set, the loop also stops once an iteration improves
    the cost by less than that fraction (useful for windowed sub-solves
    whose floor is set by unmodelled sources, not by the data).  Reduced
    prediction models are re-based at most once per iteration, before the
    residual/sensitivity evaluations.
    """
    cv = cv0.copy()
    if active is None:
        active = ActiveSet(tuple(range(cv.subdivision.n_segments)))
    trace = OptimizerTrace()
    _sync_reduced_basis(model, cv)
    ce = evaluate_cost(model, cv, measurements, window)
    cost, pred = ce.value, ce.prediction
    for it in range(1, config.max_it + 1):
        if cost < config.tol:
            break
        if _sync_reduced_basis(model, cv):
            ce = evaluate_cost(model, cv, measurements, window)
            cost, pred = ce.value, ce.prediction
        e = residual(model, cv, measurements, window, prediction=pred)
        sens = _jacobian(model, cv, active, window, config, cache)
        scale = diagonal_scaling(cv.subdivision, active) if config.scaling else None
        cv, info = gauss_newton_step(model, cv, active, sens.psi, e, scale,
                                     measurements, window, cost, config)
        prev_cost, cost = cost, info["cost"]
        if info["prediction"] is not None:
            pred = info["prediction"]
        err = l1_errors(cv, truth) if truth is not None else (np.nan, np.nan)
        trace.records.append(IterationRecord(it, cost, err[0], err[1],
                                             info["cond"], info["alpha"],
                                             len(active)))
        if info["stagnated"]:
            trace.stagnated = True
            break
        if rel_tol is not None and prev_cost - cost < rel_tol * prev_cost:
            break
    return cv, trace


def _comparison_step(method: str, psi, e, theta_active, config: GnConfig):
    if method == "lm":
        n = psi.shape[1]
        return np.linalg.solve(psi.T @ psi + config.alpha_reg * np.eye(n),
                               psi.T @ e)
    if method == "steepest":
        return psi.T @ e
    if method == "tikhonov":
        n = psi.shape[1]
        rhs = psi.T @ e - config.alpha_reg * theta_active
        return np.linalg.solve(psi.T @ psi + config.alpha_reg * np.eye(n), rhs)
    raise ValueError(f"unknown method {method!r}")


def run_comparisons(model, cv0: ControlVector, measurements: np.ndarray,
                    config: GnConfig, method: str,
                    active: ActiveSet | None = None,
                    window: Window | None = None,
                    truth: list | None = None) -> tuple[ControlVector, OptimizerTrace]:
    """Classical iterative strategies sharing the projection step.

    Steepest descent keeps the bisection line search; Levenberg-Marquardt
    and iterated Tikhonov take their regularized step as is (the damping
    loop still rejects steps that increase the cost).
    """
    cv = cv0.copy()
    if active is None:
        active = ActiveSet(tuple(range(cv.subdivision.n_segments)))
    trace = OptimizerTrace()
    cost = evaluate_cost(model, cv, measurements, window).value
    idx = list(active)
    for it in range(1, config.max_it + 1):
        if cost < config.tol:
            break
        e = residual(model, cv, measurements, window)
        sens = _jacobian(model, cv, active, window, config)
        s = _comparison_step(method, sens.psi, e, cv.theta[idx], config)
        sv = np.linalg.svd(sens.psi, compute_uv=False)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf

        alpha = 1.0
        candidate = _apply_step(cv, active, s, alpha)
        new_cost = evaluate_cost(model, candidate, measurements, window).value
        while new_cost >= cost and alpha >= DAMPING_FLOOR:
            alpha *= 0.5
            candidate = _apply_step(cv, active, s, alpha)
            new_cost = evaluate_cost(model, candidate, measurements, window).value
        if new_cost >= cost:
            trace.stagnated = True
            break
        cv, cost = candidate, new_cost
        err = l1_errors(cv, truth) if truth is not None else (np.nan, np.nan)
        trace.records.append(IterationRecord(it, cost, err[0], err[1],
                                             cond, alpha, len(active)))
    return cv, trace
