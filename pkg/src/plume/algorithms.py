"""Four source-identification drivers built on the projected damped
Gauss-Newton loop:

1. finest        -- all finest segments, full time window;
2. finest-time   -- finest segments, section-by-section local windows;
3. adaptive      -- coarse-to-fine subdivision, full time window;
4. adaptive-time -- coarse-to-fine subdivision with local windows.

Also the floating-point-operation cost model used to compare them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import (ActiveSet, ControlVector, Subdivision, coalesce,
                       distance_from_optimal, l1_errors, refine_by_threshold,
                       select_active)
from .optimize import (GnConfig, IterationRecord, OptimizerTrace, _jacobian,
                       evaluate_cost, gauss_newton_step, run_pdgn)
from .sensitivity import Window, diagonal_scaling, residual
from .timeloc import (SectionPartition, merge_edge_windows, select_windows,
                      zeta_curves)


class AlgorithmError(RuntimeError):
    pass


def _default_gn() -> GnConfig:
    # Unknown-location problems are badly conditioned on the finest
    # subdivision: use the subtraction-free complex-step sensitivities and
    # a spectral cutoff that only guards against roundoff-level triplets.
    return GnConfig(jacobian="cs", tsvd_rel_tol=1e-8)


@dataclass(frozen=True)
class AlgorithmConfig:
    """Shared knobs of the identification drivers."""

    gn: GnConfig = field(default_factory=_default_gn)
    eps1: float = 0.4            # refinement threshold
    eps2: float = 0.4            # active-set threshold
    eps3: float = 0.4            # carry-over threshold between sections
    eps4: float = 1e-3           # transition threshold on response slopes
    d_steps: int = 5             # window overlap, in time steps
    big_d_steps: int = 40        # length cap of the leftmost window
    max_outer: int = 10          # adaptive outer iterations / sweep cap
    max_bisections: int = 4      # refinements per outer iteration
    inner_rel_tol: float = 1e-3  # per-section convergence (relative cost drop)
    max_inner: int = 10          # per-section inner iterations
    skip_tol: float = 1e-6       # windowed cost below which a section is skipped


@dataclass
class RunReport:
    """Outcome and bookkeeping of one identification run."""

    variant: str
    control: ControlVector
    traces: list[OptimizerTrace]
    iterations: int
    outer_iterations: int
    final_cost: float
    solve_equivalents: float
    n_solves: int
    l1_top: float = np.nan
    l1_bottom: float = np.nan
    distance: tuple[int, int] | None = None
    raw_distance: tuple[int, int] | None = None   # before final coalescing
    windows: list[Window] | None = None

    @property
    def max_cond(self) -> float:
        conds = [r.cond for t in self.traces for r in t.records
                 if np.isfinite(r.cond)]
        return max(conds) if conds else np.nan

    @property
    def mean_cond(self) -> float:
        conds = [r.cond for t in self.traces for r in t.records
                 if np.isfinite(r.cond)]
        return float(np.mean(conds)) if conds else np.nan

    @property
    def n_parameters(self) -> int:
        return self.control.subdivision.n_segments


def _full_model(model):
    return getattr(model, "full", model)


def _finish(variant, model, cv, traces, outer, truth, initial, windows,
            counters0) -> RunReport:
    full = _full_model(model)
    iters = sum(t.iterations for t in traces)
    costs = [t.final_cost for t in traces if t.records]
    report = RunReport(
        variant=variant, control=cv, traces=traces, iterations=iters,
        outer_iterations=outer,
        final_cost=costs[-1] if costs else np.nan,
        solve_equivalents=full.solve_equivalents - counters0[0],
        n_solves=full.n_solves - counters0[1],
        windows=windows)
    if truth is not None:
        report.l1_top, report.l1_bottom = l1_errors(cv, truth)
        if initial is not None:
            try:
                report.distance = distance_from_optimal(
                    cv.subdivision, initial, truth)
            except Exception:
                report.distance = None
    return report


def _raw_distance(cv, initial, truth):
    if truth is None or initial is None:
        return None
    try:
        return distance_from_optimal(cv.subdivision, initial, truth)
    except Exception:
        return None


def _counters(model) -> tuple[float, int]:
    full = _full_model(model)
    return (full.solve_equivalents, full.n_solves)


def _new_cache(model) -> dict | None:
    """Sensitivity-column cache; disabled for reduced models."""
    return None if hasattr(model, "basis") else {}


def run_finest(model, measurements: np.ndarray, finest: Subdivision,
               config: AlgorithmConfig,
               truth: list | None = None) -> RunReport:
    """Variant 1: optimize every finest segment over the full window."""
    c0 = _counters(model)
    cv0 = ControlVector.zeros(finest)
    cv, trace = run_pdgn(model, cv0, measurements, config.gn, truth=truth,
                         cache=_new_cache(model))
    return _finish("finest", model, cv, [trace], trace.iterations,
                   truth, None, None, c0)


def compute_windows(model, partition: SectionPartition, finest: Subdivision,
                    config: AlgorithmConfig) -> list[Window]:
    """Per-section local windows from probe responses on both edges."""
    top = zeta_curves(model, partition, finest, edge="top")
    bottom = zeta_curves(model, partition, finest, edge="bottom")
    wins_top = select_windows(top, config.eps4, config.d_steps,
                              config.big_d_steps)
    wins_bottom = select_windows(bottom, config.eps4, config.d_steps,
                                 config.big_d_steps)
    return merge_edge_windows(wins_top, wins_bottom)


def run_finest_time(model, measurements: np.ndarray, finest: Subdivision,
                    partition: SectionPartition, config: AlgorithmConfig,
                    truth: list | None = None,
                    windows: list[Window] | None = None) -> RunReport:
    """Variant 2: finest segments, one local window per section.

    Sections are visited from the outflow backwards; parameters already
    identified above the carry-over threshold stay active in the remaining
    sections.  A section whose windowed mismatch is already negligible is
    skipped without a sensitivity computation.
    """
    if windows is None:
        windows = compute_windows(model, partition, finest, config)
    c0 = _counters(model)
    cv = ControlVector.zeros(finest)
    section_params = partition.parameter_map(finest)
    carry: set[int] = set()
    traces: list[OptimizerTrace] = []
    cache = _new_cache(model)
    outer = 0
    # Sweeps stop on the summed per-section mismatch: a single section can
    # keep "improving" its own window forever by undoing a neighbour's fit
    # through their overlap, but then the sweep total stops dropping.
    prev_sweep = np.inf
    for _ in range(config.max_outer):
        sweep_cost = 0.0
        for i in range(partition.n_sections - 1, -1, -1):
            outer += 1
            window = windows[i]
            cost = evaluate_cost(model, cv, measurements, window).value
            sweep_cost += cost
            if cost < config.skip_tol:
                continue
            active = ActiveSet(tuple(set(section_params[i]) | carry))
            cv, trace = run_pdgn(model, cv, measurements, config.gn,
                                 active=active, window=window, truth=truth,
                                 cache=cache, rel_tol=config.inner_rel_tol)
            traces.append(trace)
            carry.update(j for j in active if cv.theta[j] > config.eps3)
        if sweep_cost >= prev_sweep * (1 - config.inner_rel_tol):
            break
        prev_sweep = sweep_cost
    return _finish("finest-time", model, cv, traces, outer, truth, None,
                   windows, c0)


def _remap(indices, mapping) -> set[int]:
    out: set[int] = set()
    for j in indices:
        out.update(mapping[j])
    return out


def _adaptive_iteration(model, cv, measurements, window, active, config,
                        trace: OptimizerTrace, it: int, truth,
                        cache: dict | None = None, ce=None):
    """One damped Gauss-Newton step on the current active set.

    ``ce`` may carry the cost evaluation of the incoming iterate (still
    valid across refinement, which leaves the nodal control unchanged);
    the evaluation of the accepted step is handed back for reuse.
    """
    if ce is None:
        ce = evaluate_cost(model, cv, measurements, window)
    e = residual(model, cv, measurements, window, prediction=ce.prediction)
    sens = _jacobian(model, cv, active, window, config.gn, cache)
    scale = (diagonal_scaling(cv.subdivision, active)
             if config.gn.scaling else None)
    cv, info = gauss_newton_step(model, cv, active, sens.psi, e, scale,
                                 measurements, window, ce.value, config.gn)
    if info["prediction"] is not None:
        ce = evaluate_cost(model, cv, measurements, window,
                           prediction=info["prediction"])
    err = l1_errors(cv, truth) if truth is not None else (np.nan, np.nan)
    trace.records.append(IterationRecord(it, info["cost"], err[0], err[1],
                                         info["cond"], info["alpha"],
                                         len(active)))
    return cv, info, ce


def run_adaptive(model, measurements: np.ndarray, initial: Subdivision,
                 config: AlgorithmConfig,
                 truth: list | None = None) -> RunReport:
    """Variant 3: alternate one Gauss-Newton step with threshold refinement.

    Starts from the coarse subdivision; after each step every segment
    whose intensity exceeds eps1 is bisected (children inherit the value)
    until the mismatch tolerance is met or nothing changes anymore.
    """
    c0 = _counters(model)
    cv = ControlVector.zeros(initial)
    trace = OptimizerTrace()
    cache = _new_cache(model)
    ce = None
    outer = 0
    for it in range(1, config.max_outer + 1):
        outer = it
        active = select_active(cv, config.eps2)
        if len(active) == 0:
            active = ActiveSet(tuple(range(cv.subdivision.n_segments)))
        n_before = cv.subdivision.n_segments
        cv, info, ce = _adaptive_iteration(model, cv, measurements, None,
                                           active, config, trace, it, truth,
                                           cache, ce)
        _, cv, _ = refine_by_threshold(cv, config.eps1, config.max_bisections)
        refined = cv.subdivision.n_segments > n_before
        if info["cost"] < config.gn.tol and not refined:
            break
        if info["stagnated"] and not refined:
            trace.stagnated = True
            break
    # Report the minimal subdivision carrying the identified profile:
    # refinement leaves behind breakpoints between segments that ended up
    # (near) equal, which say nothing about the located sources.
    raw = _raw_distance(cv, initial, truth)
    cv = coalesce(cv, config.eps2)
    report = _finish("adaptive", model, cv, [trace], outer, truth, initial,
                     None, c0)
    report.raw_distance = raw
    return report


def run_adaptive_time(model, measurements: np.ndarray, initial: Subdivision,
                      finest: Subdivision, partition: SectionPartition,
                      config: AlgorithmConfig,
                      truth: list | None = None,
                      windows: list[Window] | None = None) -> RunReport:
    """Variant 4: adaptive refinement restricted to one section at a time.

    Sections are visited from the outflow backwards with their local
    windows; within a section the step/refine loop runs until the relative
    cost drop falls under ``inner_rel_tol`` with no further refinement.
    """
    if windows is None:
        windows = compute_windows(model, partition, finest, config)
    c0 = _counters(model)
    cv = ControlVector.zeros(initial)
    carry: set[int] = set()
    traces: list[OptimizerTrace] = []
    cache = _new_cache(model)
    outer = 0
    prev_sweep = np.inf
    for sweep in range(config.max_outer):
        sweep_cost = 0.0
        for i in range(partition.n_sections - 1, -1, -1):
            outer += 1
            window = windows[i]
            ce = evaluate_cost(model, cv, measurements, window)
            sweep_cost += ce.value
            if ce.value < config.skip_tol:
                continue
            cost = ce.value
            # From the second sweep on, a pass reconsiders the whole
            # section: only then are the other sections' sources modelled,
            # so segments zeroed under their cross-talk can come back.
            revisit = sweep > 0
            trace = OptimizerTrace()
            for it in range(1, config.max_inner + 1):
                section_params = partition.parameter_map(cv.subdivision)
                own = set(section_params[i])
                active_own = (own if it == 1 and revisit else
                              {j for j in own if cv.theta[j] > config.eps2}
                              or own)
                active = ActiveSet(tuple(active_own | carry))
                cv, info, ce = _adaptive_iteration(model, cv, measurements,
                                                   window, active, config,
                                                   trace, it, truth, cache, ce)
                new_cost = info["cost"]
                small_drop = (cost - new_cost) <= \
                    config.inner_rel_tol * max(cost, 1e-30)
                cost = new_cost
                # Refine only once the step/active-set loop has flattened at
                # the current resolution; splitting on transient smeared
                # iterates over-refines far beyond the true source support.
                if (cost < config.gn.tol or info["stagnated"] or small_drop):
                    section_params = partition.parameter_map(cv.subdivision)
                    new_sub, cv, mapping = refine_by_threshold(
                        cv, config.eps1, config.max_bisections,
                        restrict_to=section_params[i])
                    carry = _remap(carry, mapping)
                    if new_sub.n_segments == len(mapping):
                        trace.stagnated = info["stagnated"]
                        break
            traces.append(trace)
            section_params = partition.parameter_map(cv.subdivision)
            carry.update(j for j in section_params[i]
                         if cv.theta[j] > config.eps3)
        if sweep_cost >= prev_sweep * (1 - config.inner_rel_tol):
            break
        prev_sweep = sweep_cost
    raw = _raw_distance(cv, initial, truth)
    cv = coalesce(cv, config.eps2)
    report = _finish("adaptive-time", model, cv, traces, outer, truth, initial,
                     windows, c0)
    report.raw_distance = raw
    return report


# ---------------------------------------------------------------------------
# Cost model


def iteration_cost(n: int, w: int, n_h: int, n_y: int, n_times: int) -> float:
    """Floating-point operations of one Gauss-Newton iteration.

    n active parameters, a window of w time steps, n_h spatial unknowns,
    n_y observation points, n_times full-horizon steps.  Covers the n
    windowed sensitivity solves, the normal-equation algebra of the
    truncated SVD and one full-horizon forward solve.
    """
    return (n * w * n_h ** 3 + 4 * n_y ** 2 * w ** 2 * n
            + 8 * w * n_y * n ** 2 + 9 * n ** 3 + n_times * n_h ** 3)


def run_cost(n_iterations: int, n: int, w: int, n_h: int, n_y: int,
             n_times: int) -> float:
    """Total cost of a run with identical iterations."""
    return n_iterations * iteration_cost(n, w, n_h, n_y, n_times)


def reference_cost_exponents(n_h: int = 1071, n_y: int = 21,
                             n_times: int = 400) -> dict[str, int]:
    """Order-of-magnitude cost of the four variants on a reference setup.

    The finest variant runs one iteration per parameter over the whole
    horizon; the time-localized finest variant runs a short window per
    section; the adaptive variants use few parameters and few iterations.
    """
    n_f = 32
    costs = {
        "finest": n_f * run_cost(1, n_f, n_times, n_h, n_y, n_times),
        "finest-time": 16 * run_cost(1, 3, 150, n_h, n_y, n_times),
        "adaptive": run_cost(1, 5, n_times, n_h, n_y, n_times),
        "adaptive-time": run_cost(1, 3, 100, n_h, n_y, n_times),
    }
    return {k: int(np.floor(np.log10(v))) for k, v in costs.items()}
