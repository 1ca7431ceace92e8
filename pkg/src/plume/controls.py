"""Piecewise-constant boundary control on the horizontal edges.

A subdivision keeps independent breakpoint lists for the top and bottom
edges; segments are indexed top-edge left-to-right first, then bottom
edge.  Refinement is by bisection, never below the finest step width, and
breakpoints only ever grow within one inverse run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import StructuredMesh

EDGES = ("top", "bottom")


class ControlError(ValueError):
    pass


@dataclass(frozen=True)
class Subdivision:
    """Breakpoints along each horizontal edge plus the finest step width."""

    top: np.ndarray
    bottom: np.ndarray
    dx_min: float

    def __post_init__(self):
        for bp in (self.top, self.bottom):
            if len(bp) < 2 or np.any(np.diff(bp) <= 0):
                raise ControlError("breakpoints must be strictly increasing")
        if not np.isclose(self.top[0], self.bottom[0]) or \
           not np.isclose(self.top[-1], self.bottom[-1]):
            raise ControlError("edges must span the same interval")

    @classmethod
    def uniform(cls, x_range, n_segments: int, dx_min: float) -> "Subdivision":
        bp = np.linspace(x_range[0], x_range[1], n_segments + 1)
        return cls(bp, bp.copy(), dx_min)

    @classmethod
    def from_breakpoints(cls, top, bottom, dx_min: float) -> "Subdivision":
        return cls(np.asarray(top, dtype=float), np.asarray(bottom, dtype=float),
                   dx_min)

    def breakpoints(self, edge: str) -> np.ndarray:
        return self.top if edge == "top" else self.bottom

    @property
    def n_top(self) -> int:
        return len(self.top) - 1

    @property
    def n_bottom(self) -> int:
        return len(self.bottom) - 1

    @property
    def n_segments(self) -> int:
        return self.n_top + self.n_bottom

    def segments(self) -> list[tuple[str, float, float]]:
        """(edge, a, b) triples in global segment order."""
        out = []
        for edge in EDGES:
            bp = self.breakpoints(edge)
            out.extend((edge, bp[i], bp[i + 1]) for i in range(len(bp) - 1))
        return out

    def segment_lengths(self) -> np.ndarray:
        return np.array([b - a for _, a, b in self.segments()])

    def edge_of(self, index: int) -> str:
        return "top" if index < self.n_top else "bottom"


@dataclass
class ControlVector:
    """Nonnegative intensity per segment of a subdivision."""

    subdivision: Subdivision
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if len(self.theta) != self.subdivision.n_segments:
            raise ControlError("theta length must match the segment count")
        if np.any(self.theta < 0):
            raise ControlError("control intensities must be nonnegative")

    @classmethod
    def zeros(cls, sub: Subdivision) -> "ControlVector":
        return cls(sub, np.zeros(sub.n_segments))

    def copy(self) -> "ControlVector":
        return ControlVector(self.subdivision, self.theta.copy())


@dataclass(frozen=True)
class ActiveSet:
    """Segment indices currently optimized."""

    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(sorted(set(self.indices))))

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def to_nodal_control(cv: ControlVector, mesh: StructuredMesh,
                     require_aligned: bool = True) -> np.ndarray:
    """Per-node boundary values on the horizontal edges.

    A node takes the value of its containing segment; nodes sitting on a
    breakpoint take the left segment's value.  Breakpoints must coincide
    with mesh nodes (within rounding) unless require_aligned is False.
    """
    tol = 1e-9 * (mesh.x_range[1] - mesh.x_range[0])
    if require_aligned:
        xs = np.linspace(mesh.x_range[0], mesh.x_range[1], mesh.nx)
        for edge in EDGES:
            bp = cv.subdivision.breakpoints(edge)
            off = np.min(np.abs(bp[:, None] - xs[None, :]), axis=1)
            if np.any(off > tol + 1e-12):
                raise ControlError("subdivision breakpoints not aligned with mesh nodes")

    control = np.zeros(mesh.n_nodes, dtype=cv.theta.dtype)
    for edge in EDGES:
        nodes = mesh.top_nodes if edge == "top" else mesh.bottom_nodes
        bp = cv.subdivision.breakpoints(edge)
        base = 0 if edge == "top" else cv.subdivision.n_top
        x = mesh.nodes[nodes, 0]
        # Left-ownership: a node on breakpoint bp[i] belongs to segment i-1.
        seg = np.searchsorted(bp, x - tol, side="left") - 1
        seg = np.clip(seg, 0, len(bp) - 2)
        control[nodes] = cv.theta[base + seg]
    return control


def bisect(sub: Subdivision, segment_index: int) -> tuple[Subdivision, bool]:
    """Insert the midpoint of one segment; no-op below the finest width."""
    segs = sub.segments()
    edge, a, b = segs[segment_index]
    if (b - a) <= sub.dx_min * (1 + 1e-9):
        return sub, False
    mid = 0.5 * (a + b)
    bp = sub.breakpoints(edge)
    new_bp = np.sort(np.append(bp, mid))
    if edge == "top":
        return Subdivision(new_bp, sub.bottom, sub.dx_min), True
    return Subdivision(sub.top, new_bp, sub.dx_min), True


def _segment_index_map(old: Subdivision, new: Subdivision) -> list[list[int]]:
    """For each old segment, the new segment indices covering it."""
    mapping: list[list[int]] = []
    new_segs = new.segments()
    for edge, a, b in old.segments():
        children = [i for i, (e2, a2, b2) in enumerate(new_segs)
                    if e2 == edge and a2 >= a - 1e-12 and b2 <= b + 1e-12]
        mapping.append(children)
    return mapping


def refine_by_threshold(cv: ControlVector, eps1: float,
                        max_bisections: int = 4,
                        restrict_to: "list[int] | None" = None,
                        ) -> tuple[Subdivision, ControlVector, list[list[int]]]:
    """Bisect every segment whose intensity exceeds eps1.

    At most ``max_bisections`` segments are refined per call, largest
    intensity first; children inherit the parent's value.  When
    ``restrict_to`` is given, only those segment indices are considered.
    Returns the new subdivision, the re-indexed control and the old-to-new
    index map.
    """
    sub = cv.subdivision
    allowed = set(range(sub.n_segments)) if restrict_to is None else set(restrict_to)
    lengths = sub.segment_lengths()
    splittable = lengths > sub.dx_min * (1 + 1e-9)
    candidates = [i for i in np.argsort(-cv.theta)
                  if cv.theta[i] > eps1 and i in allowed and splittable[i]
                  ][:max_bisections]
    new_sub = sub
    for idx in candidates:
        # Segment identities survive midpoint insertions elsewhere, so look
        # the segment up by its interval in the current subdivision.
        edge, a, b = sub.segments()[idx]
        segs = new_sub.segments()
        cur = next(i for i, (e2, a2, b2) in enumerate(segs)
                   if e2 == edge and np.isclose(a2, a) and np.isclose(b2, b))
        new_sub, _ = bisect(new_sub, cur)
    mapping = _segment_index_map(sub, new_sub)
    theta = np.zeros(new_sub.n_segments)
    for old_i, children in enumerate(mapping):
        for c in children:
            theta[c] = cv.theta[old_i]
    return new_sub, ControlVector(new_sub, theta), mapping


def coalesce(cv: ControlVector, tol: float) -> ControlVector:
    """Drop breakpoints separating segments of nearly equal intensity.

    Neighbouring segments whose values differ by at most ``tol`` are merged
    into one segment carrying their length-weighted average, so the final
    subdivision only keeps breakpoints that mark genuine jumps.  The
    comparison runs against the running merged value, left to right.
    """
    new_bp = {}
    vals: list[float] = []
    sub = cv.subdivision
    for edge in EDGES:
        bp = sub.breakpoints(edge)
        base = 0 if edge == "top" else sub.n_top
        keep = [bp[0]]
        cur_val = cv.theta[base]
        cur_len = bp[1] - bp[0]
        for i in range(1, len(bp) - 1):
            value, length = cv.theta[base + i], bp[i + 1] - bp[i]
            if abs(value - cur_val) <= tol:
                cur_val = (cur_val * cur_len + value * length) / (cur_len + length)
                cur_len += length
            else:
                keep.append(bp[i])
                vals.append(cur_val)
                cur_val, cur_len = value, length
        keep.append(bp[-1])
        vals.append(cur_val)
        new_bp[edge] = np.array(keep)
    merged = Subdivision(new_bp["top"], new_bp["bottom"], sub.dx_min)
    return ControlVector(merged, np.array(vals))


def select_active(cv: ControlVector, eps2: float) -> ActiveSet:
    """Indices with intensity above eps2."""
    return ActiveSet(tuple(int(i) for i in np.nonzero(cv.theta > eps2)[0]))


def profile_value(truth: list[tuple[str, float, float, float]], edge: str,
                  x: float) -> float:
    """True control value at position x on an edge (point-in-interval)."""
    for e, a, b, v in truth:
        if e == edge and a - 1e-12 <= x <= b + 1e-12:
            return v
    return 0.0


def _profile_constant_on(truth, edge, a, b) -> bool:
    xs = np.linspace(a, b, 17)[1:-1]
    vals = [profile_value(truth, edge, x) for x in xs]
    return max(vals) - min(vals) == 0


def optimal_subdivision(initial: Subdivision,
                        truth: list[tuple[str, float, float, float]],
                        ) -> Subdivision:
    """Minimal bisection-reachable subdivision resolving the true profile."""
    finest = initial.dx_min
    for edge, a, b, _ in truth:
        for endpoint in (a, b):
            steps = (endpoint - initial.breakpoints(edge)[0]) / finest
            if abs(steps - round(steps)) > 1e-9:
                raise ControlError("true source not representable on the finest grid")
    edges_bp = {}
    for edge in EDGES:
        bp = list(initial.breakpoints(edge))
        changed = True
        while changed:
            changed = False
            out = [bp[0]]
            for a, b in zip(bp[:-1], bp[1:]):
                if (b - a) > finest * (1 + 1e-9) and \
                        not _profile_constant_on(truth, edge, a, b):
                    out.append(0.5 * (a + b))
                    changed = True
                out.append(b)
            bp = out
        edges_bp[edge] = np.array(bp)
    return Subdivision(edges_bp["top"], edges_bp["bottom"], finest)


def distance_from_optimal(sub: Subdivision, initial: Subdivision,
                          truth: list[tuple[str, float, float, float]],
                          ) -> tuple[int, int]:
    """Signed breakpoint-count distance per edge vs the optimal subdivision."""
    opt = optimal_subdivision(initial, truth)
    return (len(sub.top) - len(opt.top), len(sub.bottom) - len(opt.bottom))


def l1_errors(cv: ControlVector,
              truth: list[tuple[str, float, float, float]]) -> tuple[float, float]:
    """Length-weighted L1 mismatch between estimate and truth, per edge."""
    errs = []
    for edge in EDGES:
        bp = set(cv.subdivision.breakpoints(edge).tolist())
        for e, a, b, _ in truth:
            if e == edge:
                bp.update((a, b))
        pts = np.array(sorted(bp))
        total = 0.0
        base = 0 if edge == "top" else cv.subdivision.n_top
        ebp = cv.subdivision.breakpoints(edge)
        for a, b in zip(pts[:-1], pts[1:]):
            mid = 0.5 * (a + b)
            seg = min(np.searchsorted(ebp, mid) - 1, len(ebp) - 2)
            est = cv.theta[base + max(seg, 0)]
            total += abs(est - profile_value(truth, edge, mid)) * (b - a)
        errs.append(total)
    return (errs[0], errs[1])
