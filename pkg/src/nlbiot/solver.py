"""Sparse symmetric positive definite solvers.

Every solve is checked against ||A x - b|| <= rel_tol ||b||. When the right
hand side is the small difference of large terms this bound can sit below
what float64 can represent, so a residual at the rounding floor
ROUNDOFF_FACTOR * eps * || |A| |x| || is also accepted.

The direct path is a symmetric-mode SuperLU factorization (no off-diagonal
pivoting, fill-reducing ordering on A + A^T). For an SPD matrix this is an
LU form of the Cholesky factorization, and a non-positive pivot on the
diagonal of U certifies that the matrix is not positive definite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DIRECT = "direct_cholesky"
ROUNDOFF_FACTOR = 8.0
EPS = np.finfo(float).eps
CG = "cg"


class SolverError(RuntimeError):
    """Factorization breakdown or unmet residual contract."""

    def __init__(self, message, pivot=None, residual=None):
        super().__init__(message)
        self.pivot = pivot
        self.residual = residual


class NonConvergence(SolverError):
    """Iterative method stopped at its iteration cap."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message, residual=residual)
        self.iterations = iterations


@dataclass(frozen=True)
class SolverConfig:
    method: str = DIRECT
    rel_tol: float = 1e-12
    max_iter: int = 20000
    refinement_steps: int = 3

    def __post_init__(self):
        if self.method not in (DIRECT, CG):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


DEFAULT_CONFIG = SolverConfig()


def _relative_residual(matrix, x, b, bnorm):
    return float(np.linalg.norm(matrix @ x - b)) / bnorm


class Factorization:
    """Reusable solver for one fixed matrix."""

    def __init__(self, matrix, config: SolverConfig = DEFAULT_CONFIG):
        self.matrix = sp.csr_matrix(matrix)
        self.config = config
        n, m = self.matrix.shape
        if n != m:
            raise ValueError("matrix must be square")
        self._lu = None
        self._abs = None
        self.last_residual = 0.0
        if config.method == DIRECT:
            self._lu = spla.splu(
                self.matrix.tocsc(),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
            diag = self._lu.U.diagonal()
            bad = np.flatnonzero(~(diag > 0))
            if bad.size:
                raise SolverError(
                    f"non-positive pivot {diag[bad[0]]:.3e} at position {bad[0]}",
                    pivot=int(bad[0]),
                )
        else:
            d = self.matrix.diagonal()
            if np.any(d <= 0):
                raise SolverError("Jacobi preconditioner needs a positive diagonal",
                                  pivot=int(np.flatnonzero(d <= 0)[0]))
            self._inv_diag = 1.0 / d

    def solve(self, rhs) -> np.ndarray:
        b = np.asarray(rhs, dtype=float)
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return np.zeros_like(b)
        tol = self.config.rel_tol
        if self._lu is not None:
            x = self._lu.solve(b)
            res = _relative_residual(self.matrix, x, b, bnorm)
            for _ in range(self.config.refinement_steps):
                if res <= tol:
                    break
                x = x + self._lu.solve(b - self.matrix @ x)
                res = _relative_residual(self.matrix, x, b, bnorm)
            if not res <= max(tol, self.rounding_floor(x) / bnorm):
                raise SolverError(f"direct solve residual {res:.3e} exceeds {tol:.1e}",
                                  residual=res)
            self.last_residual = res
            return x
        return self._cg(b, bnorm)

    def rounding_floor(self, x) -> float:
        if self._abs is None:
            self._abs = abs(self.matrix)
        return ROUNDOFF_FACTOR * EPS * float(np.linalg.norm(self._abs @ np.abs(x)))

    def _cg(self, b, bnorm):
        inv_diag = self._inv_diag
        precond = spla.LinearOperator(self.matrix.shape, matvec=lambda v: inv_diag * v)
        count = [0]

        def callback(_):
            count[0] += 1

        # preconditioned residuals can under-report the true one; tighten slightly
        x, info = spla.cg(self.matrix, b, rtol=0.5 * self.config.rel_tol, atol=0.0,
                          maxiter=self.config.max_iter, M=precond, callback=callback)
        res = _relative_residual(self.matrix, x, b, bnorm)
        self.last_residual = res
        if info > 0 or not res <= max(self.config.rel_tol, self.rounding_floor(x) / bnorm):
            raise NonConvergence(
                f"CG stopped after {count[0]} iterations with residual {res:.3e}",
                iterations=count[0], residual=res,
            )
        if info < 0:
            raise SolverError(f"CG breakdown (info={info})")
        return x


def factorize(matrix, config: SolverConfig = DEFAULT_CONFIG) -> Factorization:
    return Factorization(matrix, config)


def solve_spd(matrix, rhs, config: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A."""
    return Factorization(matrix, config).solve(rhs)
