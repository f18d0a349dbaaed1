"""Structured triangulations of a rectangle and Taylor-Hood degree-of-freedom maps.

Vertices are numbered row-major, ``k = j*(nx+1) + i``.  Each cell is cut along
the diagonal from its lower-left to its upper-right corner.  Local P2 node
order per triangle is ``(v0, v1, v2, m01, m12, m20)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

SIDES = ("bottom", "top", "left", "right")
NOSLIP = "noslip"
FREESLIP = "freeslip"

# Rising bubble benchmark: no-slip on top/bottom, free-slip on the side walls.
BENCHMARK_BC = {"bottom": NOSLIP, "top": NOSLIP, "left": FREESLIP, "right": FREESLIP}
NOSLIP_BC = {side: NOSLIP for side in SIDES}


@dataclass(eq=False)
class Mesh2D:
    width: float
    height: float
    nx: int
    ny: int
    vertices: np.ndarray       # (nv, 2)
    triangles: np.ndarray      # (nt, 3), counter-clockwise
    edges: np.ndarray          # (ne, 2), sorted vertex pairs
    tri_edges: np.ndarray      # (nt, 3): edge ids of local edges (01, 12, 20)
    vertex_tags: dict = field(repr=False)   # side -> bool mask over vertices
    edge_tags: dict = field(repr=False)     # side -> bool mask over edges
    diam: np.ndarray = field(repr=False)    # (nt,)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_p2(self) -> int:
        return self.n_vertices + self.n_edges

    @property
    def area(self) -> float:
        return self.width * self.height

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @cached_property
    def p2_nodes(self) -> np.ndarray:
        return np.vstack([self.vertices, self.midpoints])

    @cached_property
    def p2_triangles(self) -> np.ndarray:
        return np.hstack([self.triangles, self.n_vertices + self.tri_edges])

    def p2_boundary_mask(self, side: str) -> np.ndarray:
        return np.concatenate([self.vertex_tags[side], self.edge_tags[side]])

    def interior_edge_counts(self) -> np.ndarray:
        """Number of triangles adjacent to each edge."""
        return np.bincount(self.tri_edges.ravel(), minlength=self.n_edges)


def build_rect_mesh(width: float, height: float, nx: int, ny: int) -> Mesh2D:
    """Triangulate ``(0, width) x (0, height)`` with ``2*nx*ny`` triangles."""
    if not (width > 0 and height > 0):
        raise ValueError("rectangle dimensions must be positive")
    if int(nx) < 1 or int(ny) < 1:
        raise ValueError("nx and ny must be at least 1")
    nx, ny = int(nx), int(ny)

    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    ii, jj = ii.ravel(), jj.ravel()
    vertices = np.column_stack([ii * (width / nx), jj * (height / ny)])

    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (cj * (nx + 1) + ci).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    # interleave the two triangles of each cell
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    local = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    tri_edges = inverse.reshape(-1, 3)

    vertex_tags = {
        "bottom": jj == 0,
        "top": jj == ny,
        "left": ii == 0,
        "right": ii == nx,
    }
    edge_tags = {side: mask[edges[:, 0]] & mask[edges[:, 1]]
                 for side, mask in vertex_tags.items()}

    p = vertices[triangles]
    lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    diam = lengths.max(axis=1)

    return Mesh2D(width=float(width), height=float(height), nx=nx, ny=ny,
                  vertices=vertices, triangles=triangles, edges=edges,
                  tri_edges=tri_edges, vertex_tags=vertex_tags,
                  edge_tags=edge_tags, diam=diam)


@dataclass(eq=False)
class DofMap:
    """Taylor-Hood numbering: P1 scalars on vertices, P2 vectors
    component-blocked as ``[u_x on all P2 nodes, u_y on all P2 nodes]``."""

    mesh: Mesh2D
    bc: dict
    n1: int
    n2: int
    dirichlet_mask: np.ndarray
    pressure_mean_constraint: bool = True

    @property
    def n_p2(self) -> int:
        return self.n2 // 2

    @property
    def free(self) -> np.ndarray:
        return ~self.dirichlet_mask

    @property
    def n_total(self) -> int:
        return self.n2 + 3 * self.n1

    def velocity_index(self, component: int, node):
        return component * self.n_p2 + np.asarray(node)

    def project(self, v: np.ndarray) -> np.ndarray:
        """Zero the constrained velocity components (homogeneous constraints)."""
        out = np.array(v, dtype=float, copy=True)
        out[self.dirichlet_mask] = 0.0
        return out


def build_dofmap(mesh: Mesh2D, bc: dict | None = None) -> DofMap:
    bc = dict(BENCHMARK_BC if bc is None else bc)
    for side in SIDES:
        if bc.get(side) not in (NOSLIP, FREESLIP):
            raise ValueError(f"boundary condition for {side!r} must be "
                             f"{NOSLIP!r} or {FREESLIP!r}, got {bc.get(side)!r}")
    n_p2 = mesh.n_p2
    mask = np.zeros(2 * n_p2, dtype=bool)
    for side in SIDES:
        nodes = mesh.p2_boundary_mask(side)
        normal = 1 if side in ("bottom", "top") else 0
        mask[normal * n_p2:(normal + 1) * n_p2] |= nodes
        if bc[side] == NOSLIP:
            tangent = 1 - normal
            mask[tangent * n_p2:(tangent + 1) * n_p2] |= nodes
    return DofMap(mesh=mesh, bc=bc, n1=mesh.n_vertices, n2=2 * n_p2,
                  dirichlet_mask=mask)
