"""Section partition of the channel and transitional time-window
selection from outflow response curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controls import Subdivision
from .mesh import nodal_control_from_segments


class TimeLocalizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SectionPartition:
    """Vertical slices [xi_j, xi_j+1] covering the whole channel."""

    xi: np.ndarray

    def __post_init__(self):
        if len(self.xi) < 2 or np.any(np.diff(self.xi) <= 0):
            raise TimeLocalizationError("section breakpoints must increase")

    @property
    def n_sections(self) -> int:
        return len(self.xi) - 1

    def section_of(self, a: float, b: float) -> int:
        """Section index (0-based) containing the segment [a, b]."""
        mid = 0.5 * (a + b)
        j = int(np.searchsorted(self.xi, mid) - 1)
        return min(max(j, 0), self.n_sections - 1)

    def parameter_map(self, sub: Subdivision) -> list[list[int]]:
        """Per-section lists of segment indices lying inside the section."""
        out: list[list[int]] = [[] for _ in range(self.n_sections)]
        for idx, (_, a, b) in enumerate(sub.segments()):
            out[self.section_of(a, b)].append(idx)
        return out


@dataclass(frozen=True)
class ZetaCurves:
    """Normalized mean-outflow response curves and their derivatives.

    curves[i] is the response to a unit probe in the leftmost finest
    segment of section i (top and bottom edges kept separately).
    """

    curves: np.ndarray          # (n_sections, n_times), peak-normalized
    derivatives: np.ndarray     # centered differences of the curves
    edge: str


def zeta_curves(model, partition: SectionPartition, finest: Subdivision,
                edge: str = "top", probe_value: float = 1.0) -> ZetaCurves:
    """Probe each section and record the mean outflow concentration."""
    n_times = model.grid.n_times
    curves = np.zeros((partition.n_sections, n_times))
    bp = finest.breakpoints(edge)
    for i in range(partition.n_sections):
        lo, hi = partition.xi[i], partition.xi[i + 1]
        inside = [(a, b) for a, b in zip(bp[:-1], bp[1:])
                  if a >= lo - 1e-12 and b <= hi + 1e-12]
        if not inside:
            raise TimeLocalizationError(
                f"section {i + 1} contains no finest segment on the {edge} edge")
        a, b = inside[0]
        control = nodal_control_from_segments(model.mesh,
                                              [(edge, a, b, probe_value)])
        obs = model.predict(control)
        curves[i] = obs.mean(axis=0)
    peaks = curves.max(axis=1)
    norm = np.where(peaks > 0, peaks, 1.0)
    curves = curves / norm[:, None]
    derivs = np.gradient(curves, model.grid.dt, axis=1)
    return ZetaCurves(curves, derivs, edge)


def _condition_support(derivs: np.ndarray, i: int, eps4: float,
                       refine: int = 20) -> tuple[float, float]:
    """First/last (fractional) step where curve i is transitional while
    curve i-1 is still flat.

    The curves are piecewise-linearly interpolated before thresholding:
    for neighboring sections the lag between responses can be shorter
    than one time step, so the condition may hold only between grid
    points.  The left neighbor of the first section is taken flat.
    """
    n_times = derivs.shape[1]
    coarse = np.arange(n_times)
    fine = np.linspace(0.0, n_times - 1, (n_times - 1) * refine + 1)
    cur = np.interp(fine, coarse, derivs[i])
    cur_peak = derivs[i].max()
    if cur_peak <= 0:
        raise TimeLocalizationError(
            f"section {i + 1}: response never rises "
            "(final time too short?)")
    rising = cur > eps4 * cur_peak
    if i == 0:
        prev_flat = np.ones_like(cur, dtype=bool)
    else:
        prev = np.interp(fine, coarse, derivs[i - 1])
        prev_flat = prev < eps4 * max(derivs[i - 1].max(), cur_peak * 1e-12)
    mask = rising & prev_flat
    if not mask.any():
        # Neighboring responses too synchronized to separate on this time
        # grid: fall back to the section's own transitional phase.
        mask = rising
    if not mask.any():
        raise TimeLocalizationError(
            f"section {i + 1}: response never crosses the threshold "
            "(final time too short?)")
    hits = fine[mask]
    return float(hits[0]), float(hits[-1])


def select_windows(zetas: ZetaCurves, eps4: float, d_steps: int,
                   big_d_steps: int) -> list[tuple[int, int]]:
    """Local time windows per section, ordered like the sections.

    Uses the threshold-crossing rule on the derivative curves, with the
    overlap parameter d and the length cap D expressed in steps; the cap
    applies to the leftmost section, whose transitional phase would
    otherwise extend to the end of the horizon.
    """
    derivs = zetas.derivatives
    n_s, n_times = derivs.shape
    last = n_times - 1

    first, last_hit = _condition_support(derivs, n_s - 1, eps4)
    if n_s == 1:
        t0 = int(np.floor(first))
        tf = min(int(np.ceil(last_hit)), t0 + big_d_steps, last)
        return [(t0, max(tf, t0 + 1))]

    windows: list[tuple[int, int] | None] = [None] * n_s
    t0_last = int(np.floor(first))
    windows[n_s - 1] = (t0_last, max(min(int(np.ceil(last_hit)), last),
                                     t0_last + 1))
    for i in range(n_s - 2, -1, -1):
        _, hit_end = _condition_support(derivs, i, eps4)
        tf_next = windows[i + 1][1]
        tf_i = int(np.ceil(hit_end))
        if i == 0:
            tf_i = min(tf_next + big_d_steps, tf_i)
        t0_i = tf_next - d_steps
        t0_i = max(0, min(t0_i, last - 1))
        tf_i = max(min(tf_i, last), t0_i + 1)
        windows[i] = (t0_i, tf_i)
    return [w for w in windows]


def merge_edge_windows(top: list[tuple[int, int]],
                       bottom: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Union hull of the per-edge windows, section by section."""
    return [(min(a0, b0), max(a1, b1))
            for (a0, a1), (b0, b1) in zip(top, bottom)]
