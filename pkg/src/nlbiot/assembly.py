"""Sparse operators and load vectors for the Taylor-Hood discretization.

Conventions (n_u displacement DOFs, n_p pressure DOFs):

* ``A``  elasticity, A[i, j] = (eps(w_j), eps(w_i)) + lam (div w_j, div w_i)
* ``B``  coupling, shape (n_u, n_p), B[i, j] = (q_j, div w_i)
* ``M``  P1 mass matrix, ``K(k)`` P1 stiffness weighted by a conductivity

The algebraic time-step system reads ``A u - B p = F`` and
``B^T u + (tau K(u) + S M) p = G``. Homogeneous Dirichlet DOFs of ``u`` are
eliminated symmetrically: their rows and columns are zeroed, the diagonal is
set to one and the load entry to zero.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import fem
from .fem import FEFunction, FunctionSpace
from .mesh import Mesh, build_lshape
from .physics import PermeabilityModel, eval_K


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: bool = False


def symmetry_defect(matrix) -> float:
    """max |A - A^T| relative to max |A|."""
    m = sp.csr_matrix(matrix)
    scale = abs(m).max()
    if scale == 0:
        return 0.0
    d = m - m.T
    return float(abs(d).max() / scale) if d.nnz else 0.0


def write_matrix_market(path, matrix) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix))


def _point_operator(n_rows, dofs, values, n_cols):
    """Sparse map from coefficients to values at quadrature points.

    ``dofs`` is (nc, nb) and ``values`` is (nc, nq, nb); row ``c*nq + q``.
    """
    nc, nq, nb = values.shape
    rows = np.repeat(np.arange(nc * nq), nb)
    cols = np.broadcast_to(dofs[:, None, :], (nc, nq, nb)).ravel()
    return sp.csr_matrix((values.ravel(), (rows, cols)), shape=(n_rows, n_cols))


class Discretization:
    """All parameter-independent operators on one mesh.

    Point operators map coefficients to values at the points of the
    degree-4 rule; bilinear forms are then products ``X^T W Y``.
    """

    def __init__(self, mesh: Mesh, rule: fem.QuadratureRule | None = None):
        self.mesh = mesh
        self.V, self.Q = fem.taylor_hood(mesh)
        self.rule = rule or fem.triangle_rule(4)
        V, Q, rule = self.V, self.Q, self.rule
        nc, nq = mesh.n_cells, rule.n_points
        self.n_u, self.n_p = V.dof_count, Q.dof_count
        self.weights = fem.quadrature_weights(V, rule)  # (nc, nq)
        self.points = fem.quadrature_points(V, rule)  # (nc, nq, 2)
        ncq = nc * nq

        vals2, grads2 = V.tabulate(rule)
        nodes = V.node_map
        xdofs, ydofs = V.dof_map[:, :6], V.dof_map[:, 6:]
        gx, gy = grads2[..., 0], grads2[..., 1]
        self.Dux_x = _point_operator(ncq, xdofs, gx, self.n_u)
        self.Dux_y = _point_operator(ncq, xdofs, gy, self.n_u)
        self.Duy_x = _point_operator(ncq, ydofs, gx, self.n_u)
        self.Duy_y = _point_operator(ncq, ydofs, gy, self.n_u)
        self.div = (self.Dux_x + self.Duy_y).tocsr()
        self.val_p2 = _point_operator(
            ncq, nodes, np.broadcast_to(vals2, (nc, nq, 6)), V.n_nodes
        )

        vals1, _ = Q.tabulate(rule)
        self.val_p1 = _point_operator(
            ncq, Q.node_map, np.broadcast_to(vals1, (nc, nq, 3)), self.n_p
        )
        self.W = sp.diags(self.weights.ravel())

        free = np.ones(self.n_u)
        free[V.dirichlet_dofs] = 0.0
        self._free_diag = sp.diags(free)
        self._fixed_diag = sp.diags(1.0 - free)
        self.free = V.free_dofs
        self.fixed = V.dirichlet_dofs

        # P1 element matrices; gradients are constant per cell
        g = Q.geometry.grad_bary  # (nc, 3, 2)
        area = Q.geometry.area
        self.grad_products = np.einsum("cid,cjd->cij", g, g)
        self.local_mass = area[:, None, None] * (np.ones((3, 3)) + np.eye(3)) / 12.0
        rows = np.repeat(Q.node_map, 3, axis=1).ravel()
        cols = np.tile(Q.node_map, (1, 3)).ravel()
        pattern = sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(self.n_p, self.n_p)
        )
        pattern.sort_indices()
        self._p_indptr = pattern.indptr
        self._p_indices = pattern.indices
        # position of every local entry inside the CSR value array
        start = pattern.indptr[rows]
        length = pattern.indptr[rows + 1] - start
        pos = np.empty(rows.size, dtype=np.int64)
        for r in np.unique(length):
            sel = length == r
            seg = pattern.indices[start[sel, None] + np.arange(r)]
            pos[sel] = start[sel] + np.argmax(seg == cols[sel, None], axis=1)
        self._p_scatter = pos

        self._elasticity = {}
        self._coupling = None
        self._mass = None

    # operators -----------------------------------------------------------
    def constrain(self, matrix) -> sp.csr_matrix:
        return (self._free_diag @ matrix @ self._free_diag + self._fixed_diag).tocsr()

    def elasticity(self, lam: float, constrained: bool = True) -> sp.csr_matrix:
        key = (float(lam), constrained)
        if key not in self._elasticity:
            W = self.W
            exy = 0.5 * (self.Dux_y + self.Duy_x)
            A = (
                self.Dux_x.T @ W @ self.Dux_x
                + self.Duy_y.T @ W @ self.Duy_y
                + 2.0 * (exy.T @ W @ exy)
                + lam * (self.div.T @ W @ self.div)
            ).tocsr()
            A = 0.5 * (A + A.T)
            self._elasticity[key] = self.constrain(A) if constrained else A.tocsr()
        return self._elasticity[key]

    def coupling(self) -> sp.csr_matrix:
        """B with Dirichlet rows removed."""
        if self._coupling is None:
            B = (self.div.T @ self.W @ self.val_p1).tocsr()
            self._coupling = (self._free_diag @ B).tocsr()
        return self._coupling

    def mass(self) -> sp.csr_matrix:
        if self._mass is None:
            self._mass = self._pressure_from_local(self.local_mass)
        return self._mass

    def _pressure_from_local(self, local) -> sp.csr_matrix:
        data = np.bincount(self._p_scatter, weights=local.ravel(),
                           minlength=self._p_indices.size)
        return sp.csr_matrix((data, self._p_indices.copy(), self._p_indptr.copy()),
                             shape=(self.n_p, self.n_p))

    def dilation(self, u_coeffs) -> np.ndarray:
        """div u at every quadrature point, shape (nc, nq)."""
        return (self.div @ u_coeffs).reshape(self.weights.shape)

    def conductivity(self, u_coeffs, model: PermeabilityModel) -> np.ndarray:
        return eval_K(model, self.dilation(u_coeffs))

    def conductivity_integrals(self, k_values) -> np.ndarray:
        """Per-cell integral of K; exact weight for a P1 stiffness entry."""
        return np.sum(self.weights * np.broadcast_to(k_values, self.weights.shape), axis=1)

    def weighted_laplace(self, k_values) -> sp.csr_matrix:
        kint = self.conductivity_integrals(k_values)
        return self._pressure_from_local(kint[:, None, None] * self.grad_products)

    def pressure_matrix(self, k_values, tau: float, S: float, L: float) -> sp.csr_matrix:
        """tau (K grad p, grad q) + (S + L)(p, q) from K sampled at quadrature points."""
        kint = self.conductivity_integrals(k_values)
        local = tau * kint[:, None, None] * self.grad_products + (S + L) * self.local_mass
        return self._pressure_from_local(local)

    # loads ---------------------------------------------------------------
    def mech_source(self, f) -> np.ndarray:
        """(f, w) with Dirichlet entries zeroed; ``f(x, y)`` returns a pair."""
        fx, fy = f(self.points[..., 0], self.points[..., 1])
        w = self.weights
        vals = [np.broadcast_to(c, w.shape) * w for c in (fx, fy)]
        F = np.concatenate([self.val_p2.T @ v.ravel() for v in vals])
        F[self.fixed] = 0.0
        return F

    def flow_source(self, g, zero_mean: bool = False) -> np.ndarray:
        """(g, q); optionally with the constant component removed."""
        vals = np.broadcast_to(g(self.points[..., 0], self.points[..., 1]), self.weights.shape)
        G = self.val_p1.T @ (self.weights * vals).ravel()
        if zero_mean:
            lumped = self.mass() @ np.ones(self.n_p)
            G = G - G.sum() / lumped.sum() * lumped
        return G


_CACHE: "weakref.WeakKeyDictionary[Mesh, Discretization]" = weakref.WeakKeyDictionary()


def discretization_for(mesh: Mesh) -> Discretization:
    disc = _CACHE.get(mesh)
    if disc is None:
        disc = _CACHE[mesh] = Discretization(mesh)
    return disc


@lru_cache(maxsize=4)
def discretization(level: int) -> Discretization:
    """Cached discretization of the structured L-shape mesh at ``level``."""
    return discretization_for(build_lshape(level))


def assemble_elasticity(space_u: FunctionSpace, lam: float, constrained: bool = True):
    return discretization_for(space_u.mesh).elasticity(lam, constrained)


def assemble_coupling(space_u: FunctionSpace, space_p: FunctionSpace):
    if space_u.mesh is not space_p.mesh:
        raise ValueError("spaces live on different meshes")
    return discretization_for(space_u.mesh).coupling()


def assemble_mass(space_p: FunctionSpace):
    return discretization_for(space_p.mesh).mass()


def assemble_pressure(space_p: FunctionSpace, u_current: FEFunction,
                      model: PermeabilityModel, tau: float, S: float, L: float):
    """tau (K(div u) grad p, grad q) + (S + L)(p, q).

    Raises ConductivityBreakdown if K is non-positive at a quadrature point.
    """
    disc = discretization_for(space_p.mesh)
    k = disc.conductivity(u_current.coeffs, model)
    return disc.pressure_matrix(k, tau, S, L)


def assemble_rhs_flow(space_p: FunctionSpace, g_data, u_prev_iter: FEFunction,
                      p_prev_iter: FEFunction, L: float) -> np.ndarray:
    """G + L M p^i - B^T u^i.

    ``g_data`` is either the assembled flow load G or a callable source.
    """
    disc = discretization_for(space_p.mesh)
    G = g_data if isinstance(g_data, np.ndarray) else disc.flow_source(g_data)
    out = G - disc.coupling().T @ u_prev_iter.coeffs
    if L:
        out = out + L * (disc.mass() @ p_prev_iter.coeffs)
    return out


def assemble_rhs_mech(space_u: FunctionSpace, f_data, p_new: FEFunction) -> np.ndarray:
    """F + B p with Dirichlet entries zero; ``f_data`` is a load vector or callable."""
    disc = discretization_for(space_u.mesh)
    F = f_data if isinstance(f_data, np.ndarray) else disc.mech_source(f_data)
    out = F + disc.coupling() @ p_new.coeffs
    out[disc.fixed] = 0.0
    return out
