"""Structured triangular mesh and P1 finite element assembly.

The domain is a rectangle whose left edge is the inflow, right edge the
outflow and whose top/bottom edges carry the (piecewise constant) boundary
control.  Dirichlet conditions on the inflow and horizontal edges are
enforced by row elimination with lifting, so the assembled matrices keep
the full node count and the boundary data enters through the load vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# Boundary tags.
TAG_UP = "up"
TAG_DOWN = "down"
TAG_H = "horizontal"


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class StructuredMesh:
    """Uniform triangulation of [x1,x2] x [y1,y2].

    Nodes are ordered row-major: index = j*nx + i with i along x.  Every
    rectangular cell is split into two triangles.  Corner nodes shared by
    the vertical edges and the horizontal edges belong to the vertical
    edges, so inflow/outflow conditions are never overridden by control
    values.
    """

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    nx: int
    ny: int
    nodes: np.ndarray
    elements: np.ndarray
    node_tags: dict[int, str]

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return (self.x_range[1] - self.x_range[0]) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y_range[1] - self.y_range[0]) / (self.ny - 1)

    def nodes_with_tag(self, tag: str) -> np.ndarray:
        return np.array(sorted(i for i, t in self.node_tags.items() if t == tag),
                        dtype=int)

    @property
    def upstream_nodes(self) -> np.ndarray:
        """Left edge, bottom to top."""
        return np.arange(self.ny) * self.nx

    @property
    def outflow_nodes(self) -> np.ndarray:
        """Right edge, bottom to top."""
        return np.arange(self.ny) * self.nx + (self.nx - 1)

    @property
    def top_nodes(self) -> np.ndarray:
        """Top-edge nodes carrying control values, left to right (no corners)."""
        return (self.ny - 1) * self.nx + np.arange(1, self.nx - 1)

    @property
    def bottom_nodes(self) -> np.ndarray:
        """Bottom-edge nodes carrying control values, left to right (no corners)."""
        return np.arange(1, self.nx - 1)

    @property
    def gamma_h_nodes(self) -> np.ndarray:
        """All control-boundary nodes, top edge first then bottom edge."""
        return np.concatenate([self.top_nodes, self.bottom_nodes])


def build_mesh(x_range, y_range, nx: int, ny: int) -> StructuredMesh:
    """Build the uniform structured triangulation.

    Raises MeshError for degenerate ranges or node counts below 2.
    """
    x1, x2 = float(x_range[0]), float(x_range[1])
    y1, y2 = float(y_range[0]), float(y_range[1])
    if not (x2 > x1 and y2 > y1):
        raise MeshError("degenerate domain ranges")
    if nx < 2 or ny < 2:
        raise MeshError("need at least 2 nodes per axis")

    xs = np.linspace(x1, x2, nx)
    ys = np.linspace(y1, y2, ny)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    elems = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx
            d = c + 1
            elems.append((a, b, d))
            elems.append((a, d, c))
    elements = np.array(elems, dtype=int)

    tags: dict[int, str] = {}
    for idx, (x, y) in enumerate(nodes):
        on_left = np.isclose(x, x1)
        on_right = np.isclose(x, x2)
        on_horiz = np.isclose(y, y1) or np.isclose(y, y2)
        if on_left:
            tags[idx] = TAG_UP
        elif on_right:
            tags[idx] = TAG_DOWN
        elif on_horiz:
            tags[idx] = TAG_H

    return StructuredMesh((x1, x2), (y1, y2), nx, ny, nodes, elements, tags)


def poiseuille_velocity(nu: float) -> Callable[[float, float], np.ndarray]:
    """Channel flow u = (-4*nu*y^2 + 4*nu*y, 0), zero at y = 0 and y = 1."""

    def u(x, y):
        return np.array([-4.0 * nu * y * y + 4.0 * nu * y, 0.0])

    return u


@dataclass(frozen=True)
class PhysicalCoefficients:
    """Constant diffusivity/reaction plus a stationary velocity field."""

    mu: float
    sigma: float
    nu: float = 0.0
    c_up: float = 0.0
    velocity: Callable[[float, float], np.ndarray] | None = None

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("diffusivity must be positive")
        if self.sigma < 0:
            raise ValueError("reaction coefficient must be nonnegative")

    def velocity_at(self, x: float, y: float) -> np.ndarray:
        if self.velocity is not None:
            return np.asarray(self.velocity(x, y), dtype=float)
        return poiseuille_velocity(self.nu)(x, y)


@dataclass
class FemSystem:
    """Assembled P1 system with Dirichlet lifting.

    ``operator`` is mu*stiffness + convection + sigma*mass.  The Dirichlet
    set is the inflow edge plus all horizontal-edge nodes; outflow nodes
    keep the natural (homogeneous Neumann) condition.
    """

    mesh: StructuredMesh
    coeffs: PhysicalCoefficients
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    convection: sp.csr_matrix
    operator: sp.csr_matrix
    dirichlet_nodes: np.ndarray
    free_nodes: np.ndarray
    _lu_cache: dict = field(default_factory=dict, repr=False)
    _free_blocks: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    def free_block(self, name: str) -> sp.csr_matrix:
        """Submatrix of `name` restricted to free rows/cols (cached)."""
        if name not in self._free_blocks:
            mat = getattr(self, name)
            f = self.free_nodes
            self._free_blocks[name] = mat[np.ix_(f, f)].tocsc()
        return self._free_blocks[name]

    def coupling_block(self) -> sp.csr_matrix:
        """operator[free, dirichlet], used by the lifting load vector."""
        if "coupling" not in self._free_blocks:
            self._free_blocks["coupling"] = (
                self.operator[np.ix_(self.free_nodes, self.dirichlet_nodes)].tocsr())
        return self._free_blocks["coupling"]

    def factorization(self, dt: float):
        """Sparse LU of (M_ff + dt*A_ff), reused across time steps."""
        key = float(dt)
        if key not in self._lu_cache:
            mat = (self.free_block("mass") + dt * self.free_block("operator")).tocsc()
            self._lu_cache[key] = spla.splu(mat)
        return self._lu_cache[key]

    def boundary_values(self, control: np.ndarray, c_up) -> np.ndarray:
        """Full-length vector of imposed Dirichlet values.

        ``control`` holds per-node values on the horizontal edges, either as
        a full n_nodes array (zero off Gamma_h) or in gamma_h_nodes order.
        Negative real control values are rejected (pollutant is injected).
        """
        control = np.asarray(control)
        gh = self.mesh.gamma_h_nodes
        dtype = np.result_type(control.dtype, type(c_up), float)
        g = np.zeros(self.n_nodes, dtype=dtype)
        if control.shape == (self.n_nodes,):
            g[gh] = control[gh]
        elif control.shape == (len(gh),):
            g[gh] = control
        else:
            raise ValueError("control must cover all horizontal-edge nodes")
        if not np.iscomplexobj(g) and np.any(g[gh] < 0):
            raise ValueError("boundary control must be nonnegative")
        g[self.mesh.upstream_nodes] = c_up
        return g


def _local_matrices(pts: np.ndarray, u_c: np.ndarray):
    """Exact P1 local mass/stiffness and centroid-velocity convection."""
    x = pts[:, 0]
    y = pts[:, 1]
    det = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
    area = 0.5 * det
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]]) / det
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]]) / det
    k_loc = area * (np.outer(b, b) + np.outer(c, c))
    m_loc = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
    conv_flux = u_c[0] * b + u_c[1] * c
    c_loc = area / 3.0 * np.tile(conv_flux, (3, 1))
    return area, m_loc, k_loc, c_loc


def assemble(mesh: StructuredMesh, coeffs: PhysicalCoefficients) -> FemSystem:
    """Assemble mass, stiffness and convection matrices with P1 elements.

    Quadrature is exact for P1 products with constant coefficients; the
    velocity is sampled at element centroids.
    """
    n = mesh.n_nodes
    nel = len(mesh.elements)
    rows = np.empty(9 * nel, dtype=int)
    cols = np.empty(9 * nel, dtype=int)
    m_vals = np.empty(9 * nel)
    k_vals = np.empty(9 * nel)
    c_vals = np.empty(9 * nel)

    for e, tri in enumerate(mesh.elements):
        pts = mesh.nodes[tri]
        centroid = pts.mean(axis=0)
        u_c = coeffs.velocity_at(centroid[0], centroid[1])
        area, m_loc, k_loc, c_loc = _local_matrices(pts, u_c)
        if area <= 0:
            raise MeshError("element with nonpositive area")
        sl = slice(9 * e, 9 * e + 9)
        rows[sl] = np.repeat(tri, 3)
        cols[sl] = np.tile(tri, 3)
        m_vals[sl] = m_loc.ravel()
        k_vals[sl] = k_loc.ravel()
        c_vals[sl] = c_loc.ravel()

    shape = (n, n)
    mass = sp.coo_matrix((m_vals, (rows, cols)), shape=shape).tocsr()
    stiffness = sp.coo_matrix((k_vals, (rows, cols)), shape=shape).tocsr()
    convection = sp.coo_matrix((c_vals, (rows, cols)), shape=shape).tocsr()
    operator = (coeffs.mu * stiffness + convection + coeffs.sigma * mass).tocsr()

    dirichlet = np.array(sorted(
        set(mesh.upstream_nodes) | set(mesh.gamma_h_nodes)), dtype=int)
    free = np.setdiff1d(np.arange(n), dirichlet)

    return FemSystem(mesh, coeffs, mass, stiffness, convection, operator,
                     dirichlet, free)


def load_vector(system: FemSystem, control: np.ndarray, c_up) -> np.ndarray:
    """Dirichlet lifting load vector F.

    Free rows receive -A[free, dir] @ g, Dirichlet rows carry the imposed
    value itself; F is linear in (control, c_up) and vanishes with zero
    boundary data.
    """
    g = system.boundary_values(control, c_up)
    f = np.zeros(system.n_nodes, dtype=g.dtype)
    f[system.free_nodes] = -(system.coupling_block() @ g[system.dirichlet_nodes])
    f[system.dirichlet_nodes] = g[system.dirichlet_nodes]
    return f


def nodal_control_from_segments(mesh: StructuredMesh,
                                segments: list[tuple[str, float, float, float]],
                                ) -> np.ndarray:
    """Per-node control values from (edge, a, b, value) source intervals.

    ``edge`` is "top" or "bottom"; nodes with x in [a, b] on that edge get
    the value.  Used for known-location sources that need not align with
    any subdivision.
    """
    control = np.zeros(mesh.n_nodes)
    tol = 1e-9 * (mesh.x_range[1] - mesh.x_range[0])
    for edge, a, b, value in segments:
        nodes = mesh.top_nodes if edge == "top" else mesh.bottom_nodes
        xs = mesh.nodes[nodes, 0]
        mask = (xs >= a - tol) & (xs <= b + tol)
        control[nodes[mask]] = value
    return control
