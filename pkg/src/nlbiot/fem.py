"""Lagrange P1/P2 spaces on triangles: quadrature, DOF maps, interpolation and norms."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np

from .mesh import Mesh

VECTOR_P2 = "VectorP2"
SCALAR_P1 = "ScalarP1"


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights normalised to sum to one."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _strang_fix_6() -> QuadratureRule:
    # closed forms of the symmetric 6-point degree-4 rule
    r = math.sqrt(38.0 - 44.0 * math.sqrt(0.4))
    a = (8.0 - math.sqrt(10.0) + r) / 18.0
    b = (8.0 - math.sqrt(10.0) - r) / 18.0
    s = math.sqrt(213125.0 - 53320.0 * math.sqrt(10.0))
    wa = (620.0 + s) / 3720.0
    wb = (620.0 - s) / 3720.0
    pts = []
    for t in (a, b):
        o = 1.0 - 2.0 * t
        pts += [(o, t, t), (t, o, t), (t, t, o)]
    return QuadratureRule(np.array(pts), np.array([wa] * 3 + [wb] * 3), 4)


def _collapsed_gauss(degree: int) -> QuadratureRule:
    m = (degree + 3) // 2
    xi, wi = np.polynomial.legendre.leggauss(m)
    s = 0.5 * (xi + 1.0)
    ws = 0.5 * wi
    # Duffy map of the unit square onto the reference triangle
    X, Y = np.meshgrid(s, s, indexing="ij")
    W = np.outer(ws, ws) * (1.0 - X)
    x = X.ravel()
    y = (Y * (1.0 - X)).ravel()
    pts = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(pts, 2.0 * W.ravel(), degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int = 4) -> QuadratureRule:
    """Quadrature exact for polynomials of total ``degree`` on triangles."""
    if degree <= 4:
        return _strang_fix_6()
    return _collapsed_gauss(degree)


# --------------------------------------------------------------------------
# reference basis functions in barycentric coordinates

def p1_values(bary: np.ndarray) -> np.ndarray:
    return np.array(bary, dtype=float)


def p2_values(bary: np.ndarray) -> np.ndarray:
    """P2 basis: vertex functions first, then edge k (opposite vertex k)."""
    lam = np.asarray(bary, dtype=float)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l1 * l2,
            4 * l2 * l0,
            4 * l0 * l1,
        ],
        axis=-1,
    )


def p2_bary_derivatives(bary: np.ndarray) -> np.ndarray:
    """d phi_i / d lambda_j for the P2 basis, shape (..., 6, 3)."""
    lam = np.asarray(bary, dtype=float)
    out = np.zeros(lam.shape[:-1] + (6, 3))
    for i in range(3):
        out[..., i, i] = 4 * lam[..., i] - 1
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        out[..., 3 + k, a] = 4 * lam[..., b]
        out[..., 3 + k, b] = 4 * lam[..., a]
    return out


class Geometry:
    """Affine cell maps of a mesh."""

    def __init__(self, mesh: Mesh):
        p = mesh.vertices[mesh.cells]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(det <= 0):
            raise ValueError("mesh contains cells with non-positive orientation")
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        # grad(lambda_1), grad(lambda_2) are the rows of J^{-1}
        g12 = inv
        g0 = -(g12[:, 0] + g12[:, 1])
        self.corner = p[:, 0]
        self.jac = J
        self.det = det
        self.area = 0.5 * det
        self.grad_bary = np.stack([g0, g12[:, 0], g12[:, 1]], axis=1)  # (nc, 3, 2)

    def map_points(self, bary: np.ndarray, corners: np.ndarray) -> np.ndarray:
        """Physical coordinates of barycentric points, shape (nc, nq, 2)."""
        return np.einsum("qk,ckd->cqd", bary, corners)


@dataclass(eq=False)
class FunctionSpace:
    kind: str
    mesh: Mesh
    n_nodes: int
    node_coords: np.ndarray
    node_map: np.ndarray
    boundary_nodes: np.ndarray

    @property
    def n_components(self) -> int:
        return 2 if self.kind == VECTOR_P2 else 1

    @property
    def degree(self) -> int:
        return 2 if self.kind == VECTOR_P2 else 1

    @property
    def dof_count(self) -> int:
        return self.n_components * self.n_nodes

    @cached_property
    def dof_map(self) -> np.ndarray:
        """Global DOFs per cell; vector spaces list all x-DOFs before all y-DOFs."""
        if self.n_components == 1:
            return self.node_map
        return np.hstack([self.node_map, self.node_map + self.n_nodes])

    @cached_property
    def dirichlet_dofs(self) -> np.ndarray:
        if self.kind != VECTOR_P2:
            return np.empty(0, dtype=np.int64)
        b = self.boundary_nodes
        return np.concatenate([b, b + self.n_nodes])

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.dof_count, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)

    @cached_property
    def geometry(self) -> Geometry:
        return Geometry(self.mesh)

    def tabulate(self, rule: QuadratureRule):
        """Scalar basis values (nq, nb) and physical gradients (nc, nq, nb, 2)."""
        return _tabulate(self, rule)


def _tabulate(space: FunctionSpace, rule: QuadratureRule):
    key = (rule.degree, rule.n_points)
    cache = space.__dict__.setdefault("_tab_cache", {})
    if key in cache:
        return cache[key]
    geo = space.geometry
    if space.degree == 1:
        vals = p1_values(rule.points)
        grads = np.broadcast_to(
            geo.grad_bary[:, None, :, :], (space.mesh.n_cells, rule.n_points, 3, 2)
        )
    else:
        vals = p2_values(rule.points)
        dphi = p2_bary_derivatives(rule.points)  # (nq, 6, 3)
        grads = np.einsum("qij,cjd->cqid", dphi, geo.grad_bary)
    cache[key] = (vals, grads)
    return vals, grads


def p1_space(mesh: Mesh) -> FunctionSpace:
    return FunctionSpace(
        kind=SCALAR_P1,
        mesh=mesh,
        n_nodes=mesh.n_vertices,
        node_coords=mesh.vertices,
        node_map=mesh.cells,
        boundary_nodes=mesh.boundary_vertices,
    )


def p2_vector_space(mesh: Mesh) -> FunctionSpace:
    nv = mesh.n_vertices
    node_map = np.hstack([mesh.cells, mesh.cell_edges + nv])
    coords = np.vstack([mesh.vertices, mesh.edge_midpoints()])
    bnodes = np.concatenate(
        [mesh.boundary_vertices, np.flatnonzero(mesh.edge_on_boundary) + nv]
    )
    return FunctionSpace(
        kind=VECTOR_P2,
        mesh=mesh,
        n_nodes=nv + mesh.n_edges,
        node_coords=coords,
        node_map=node_map,
        boundary_nodes=np.sort(bnodes),
    )


def taylor_hood(mesh: Mesh) -> tuple[FunctionSpace, FunctionSpace]:
    return p2_vector_space(mesh), p1_space(mesh)


@dataclass(eq=False)
class FEFunction:
    space: FunctionSpace
    coeffs: np.ndarray

    @classmethod
    def zeros(cls, space: FunctionSpace) -> "FEFunction":
        return cls(space, np.zeros(space.dof_count))

    def copy(self) -> "FEFunction":
        return FEFunction(self.space, self.coeffs.copy())

    def component_coeffs(self) -> np.ndarray:
        """Coefficients reshaped to (n_components, n_nodes)."""
        return self.coeffs.reshape(self.space.n_components, self.space.n_nodes)

    def values_at(self, rule: QuadratureRule) -> np.ndarray:
        """Values at quadrature points: (nc, nq) for scalar, (nc, nq, 2) for vector."""
        vals, _ = self.space.tabulate(rule)
        c = self.component_coeffs()[:, self.space.node_map]  # (ncomp, nc, nb)
        out = np.einsum("qb,kcb->cqk", vals, c)
        return out[..., 0] if self.space.n_components == 1 else out

    def gradients_at(self, rule: QuadratureRule) -> np.ndarray:
        """Gradients at quadrature points, shape (nc, nq, ncomp, 2)."""
        _, grads = self.space.tabulate(rule)
        c = self.component_coeffs()[:, self.space.node_map]
        return np.einsum("cqbd,kcb->cqkd", grads, c)

    def divergence_at(self, rule: QuadratureRule) -> np.ndarray:
        g = self.gradients_at(rule)
        return g[..., 0, 0] + g[..., 1, 1]


def quadrature_points(space: FunctionSpace, rule: QuadratureRule) -> np.ndarray:
    geo = space.geometry
    return geo.map_points(rule.points, space.mesh.vertices[space.mesh.cells])


def quadrature_weights(space: FunctionSpace, rule: QuadratureRule) -> np.ndarray:
    """Physical weights (nc, nq) including the cell area."""
    return space.geometry.area[:, None] * rule.weights[None, :]


def interpolate(space: FunctionSpace, field: Callable) -> FEFunction:
    """Nodal interpolant of ``field(x, y)``; vector fields return a pair."""
    x, y = space.node_coords[:, 0], space.node_coords[:, 1]
    vals = field(x, y)
    if space.n_components == 1:
        coeffs = np.broadcast_to(np.asarray(vals, dtype=float), x.shape).copy()
    else:
        coeffs = np.concatenate(
            [np.broadcast_to(np.asarray(v, dtype=float), x.shape) for v in vals]
        )
    return FEFunction(space, coeffs)


def eval_div_at_quadrature(u: FEFunction, cell: int, qpoint) -> float:
    """Divergence of a vector P2 function at one barycentric point of ``cell``."""
    bary = np.asarray(qpoint, dtype=float)
    dphi = p2_bary_derivatives(bary)  # (6, 3)
    grads = dphi @ u.space.geometry.grad_bary[cell]  # (6, 2)
    c = u.component_coeffs()[:, u.space.node_map[cell]]
    return float(c[0] @ grads[:, 0] + c[1] @ grads[:, 1])


def integrate(space: FunctionSpace, values: np.ndarray, rule: QuadratureRule) -> float:
    return float(np.sum(quadrature_weights(space, rule) * values))


def norms(f: FEFunction, rule: QuadratureRule | None = None) -> dict[str, float]:
    """L2 norm and H1 seminorm, integrated with a rule exact for degree 2k."""
    if rule is None:
        rule = triangle_rule(2 * f.space.degree)
    w = quadrature_weights(f.space, rule)
    v = f.values_at(rule)
    if v.ndim == 3:
        v2 = np.sum(v**2, axis=-1)
    else:
        v2 = v**2
    g = f.gradients_at(rule)
    g2 = np.sum(g**2, axis=(-2, -1))
    return {"l2": math.sqrt(np.sum(w * v2)), "h1_semi": math.sqrt(np.sum(w * g2))}


def mean_value(f: FEFunction, rule: QuadratureRule | None = None) -> float:
    rule = rule or triangle_rule(4)
    area = f.space.mesh.area()
    return integrate(f.space, f.values_at(rule), rule) / area


def l2_error(f: FEFunction, exact: Callable, rule: QuadratureRule | None = None,
             subtract_means: bool = False) -> float:
    """L2 distance between ``f`` and an analytic field sampled at quadrature points."""
    rule = rule or triangle_rule(7)
    pts = quadrature_points(f.space, rule)
    w = quadrature_weights(f.space, rule)
    ex = exact(pts[..., 0], pts[..., 1])
    v = f.values_at(rule)
    if f.space.n_components == 2:
        ex = np.stack([np.broadcast_to(e, w.shape) for e in ex], axis=-1)
        diff = v - ex
        if subtract_means:
            diff = diff - np.sum(w[..., None] * diff, axis=(0, 1)) / w.sum()
        return math.sqrt(np.sum(w[..., None] * diff**2))
    diff = v - ex
    if subtract_means:
        diff = diff - np.sum(w * diff) / w.sum()
    return math.sqrt(np.sum(w * diff**2))


def write_field_text(f: FEFunction, path) -> None:
    with open(path, "w") as fh:
        for i, v in enumerate(f.coeffs.tolist()):
            fh.write(f"{i} {v!r}\n")


def write_vtk(path, mesh: Mesh, point_data: dict[str, FEFunction] | None = None,
              cell_data: dict[str, np.ndarray] | None = None) -> None:
    """Legacy ASCII VTK unstructured grid; P2 functions are sampled at vertices."""
    point_data = point_data or {}
    cell_data = cell_data or {}
    nv, nc = mesh.n_vertices, mesh.n_cells
    lines = [
        "# vtk DataFile Version 3.0",
        "nlbiot field output",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices.tolist()]
    lines.append(f"CELLS {nc} {4 * nc}")
    lines += [f"3 {i} {j} {k}" for i, j, k in mesh.cells]
    lines.append(f"CELL_TYPES {nc}")
    lines += ["5"] * nc
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, f in point_data.items():
            c = f.component_coeffs()[:, :nv]
            if c.shape[0] == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [repr(float(v)) for v in c[0]]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{a!r} {b!r} 0.0" for a, b in c.T.tolist()]
    if cell_data:
        lines.append(f"CELL_DATA {nc}")
        for name, arr in cell_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in np.asarray(arr)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
