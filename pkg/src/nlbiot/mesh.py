"""Structured triangulations of the L-shaped domain (0,1)^2 minus [0.5,1)x[0.5,1)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COARSE_H = 1.0 / 16.0


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with derived edge connectivity.

    ``edges`` holds every unique edge as a sorted vertex pair (lexicographic
    order), ``cell_edges[c, k]`` is the edge opposite local vertex ``k`` and
    ``edge_on_boundary`` flags edges owned by a single cell.
    """

    vertices: np.ndarray
    cells: np.ndarray
    h: float
    level: int = 0
    edges: np.ndarray = field(init=False, repr=False)
    cell_edges: np.ndarray = field(init=False, repr=False)
    edge_on_boundary: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        # local edge k is opposite local vertex k
        local = cells[:, [[1, 2], [2, 0], [0, 1]]]
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(
            pairs, axis=0, return_inverse=True, return_counts=True
        )
        for name, value in (
            ("vertices", vertices),
            ("cells", cells),
            ("edges", edges),
            ("cell_edges", inverse.reshape(-1, 3)),
            ("edge_on_boundary", counts == 1),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def boundary_edges(self) -> np.ndarray:
        return self.edges[self.edge_on_boundary]

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def edge_counts(self) -> np.ndarray:
        """Number of cells sharing each edge."""
        return np.bincount(self.cell_edges.ravel(), minlength=self.n_edges)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def write_text(self, path) -> None:
        """Dump as ``nv nc`` header, vertex lines ``x y``, cell lines ``i j k``."""
        with open(path, "w") as fh:
            fh.write(f"{self.n_vertices} {self.n_cells}\n")
            for x, y in self.vertices.tolist():
                fh.write(f"{x!r} {y!r}\n")
            for i, j, k in self.cells:
                fh.write(f"{i} {j} {k}\n")


def read_mesh_text(path, h: float | None = None) -> Mesh:
    with open(path) as fh:
        nv, nc = (int(t) for t in fh.readline().split())
        rows = [line.split() for line in fh if line.strip()]
    vertices = np.array(rows[:nv], dtype=float)
    cells = np.array(rows[nv : nv + nc], dtype=np.int64)
    if h is None:
        lengths = np.linalg.norm(vertices[cells[:, 1]] - vertices[cells[:, 0]], axis=1)
        h = float(lengths.min())
    return Mesh(vertices, cells, h)


def build_lshape(level: int = 0) -> Mesh:
    """Structured right-triangle mesh of the L-shape with h = 1/16 * 2**-level.

    Vertices are ordered lexicographically by (y, x), grid squares row-major,
    and every square is cut by its lower-left to upper-right diagonal.
    """
    if level < 0:
        raise ValueError(f"level must be non-negative, got {level}")
    n = 16 * 2**level
    half = n // 2
    jj, ii = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    keep = ~((ii > half) & (jj > half))
    index = np.full((n + 1) * (n + 1), -1, dtype=np.int64)
    index[keep] = np.arange(keep.sum())
    vertices = np.column_stack([ii[keep] / n, jj[keep] / n])

    sj, si = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    si, sj = si.ravel(), sj.ravel()
    inside = ~((si >= half) & (sj >= half))
    si, sj = si[inside], sj[inside]

    def vid(i, j):
        return index[j * (n + 1) + i]

    ll, lr = vid(si, sj), vid(si + 1, sj)
    ur, ul = vid(si + 1, sj + 1), vid(si, sj + 1)
    cells = np.empty((2 * len(si), 3), dtype=np.int64)
    cells[0::2] = np.column_stack([ll, lr, ur])
    cells[1::2] = np.column_stack([ll, ur, ul])
    return Mesh(vertices, cells, COARSE_H / 2**level, level)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Split every triangle into four congruent children through edge midpoints.

    New vertices are appended after the old ones in edge order; each parent
    is replaced by its three corner children followed by the middle one.
    """
    nv = mesh.n_vertices
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints()])
    v = mesh.cells
    m = mesh.cell_edges + nv  # m[:, k] is the midpoint opposite vertex k
    children = np.stack(
        [
            np.column_stack([v[:, 0], m[:, 2], m[:, 1]]),
            np.column_stack([m[:, 2], v[:, 1], m[:, 0]]),
            np.column_stack([m[:, 1], m[:, 0], v[:, 2]]),
            np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
        ],
        axis=1,
    ).reshape(-1, 3)
    return Mesh(vertices, children, mesh.h / 2, mesh.level + 1)


def in_removed_quadrant(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points)
    return (points[..., 0] > 0.5) & (points[..., 1] > 0.5)
