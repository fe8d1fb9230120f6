"""Constants and contraction estimates for the stabilized splitting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from . import manufactured
from .mesh import Mesh
from .physics import DEFAULT_Z_RANGE, PermeabilityModel, assumption_constants
from .solver import factorize

MAX_DENSE_DOFS = 5000


@dataclass(frozen=True)
class TheoryConstants:
    d: int
    lam: float
    beta_s: float
    c_inf: float
    k_lip: float
    k_min: float
    L: float

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        vals = (self.lam, self.beta_s, self.c_inf, self.k_lip, self.k_min, self.L)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("theory constants must be finite")
        if not (self.beta_s > 0 and self.k_min > 0 and self.L > 0 and self.lam >= 0
                and self.c_inf >= 0 and self.k_lip >= 0):
            raise ValueError(f"invalid theory constants: {self}")

    @property
    def c_K(self) -> float:
        return 1.0 / math.sqrt(self.d)

    @property
    def c(self) -> float:
        return self.c_inf * self.k_lip

    @property
    def c0(self) -> float:
        return self.L / 2.0

    @property
    def c1(self) -> float:
        return self.L / 2.0 + 0.5 / (self.beta_s**-2 + self.lam)


def l_star(lam: float, d: int = 2) -> float:
    """Smallest stabilization covered by the theory, 1 / (1/d + lam)."""
    if lam < 0 or d not in (2, 3):
        raise ValueError("need lam >= 0 and d in {2, 3}")
    return 1.0 / (1.0 / d + lam)


def contraction_bound(tc: TheoryConstants, tau: float) -> float:
    """Upper bound for ||e_p^{i+1}|| / ||e_p^i||."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    ck2 = tc.c_K**2
    extra = tau / (4.0 * tc.k_min) * tc.c**2 / (ck2 + tc.lam) ** 2
    return math.sqrt((tc.c0 + extra) / tc.c1)


def displacement_factor(lam: float, d: int = 2) -> float:
    """Energy error of u is at most this factor times ||e_p|| of the same iterate."""
    return math.sqrt(1.0 / (1.0 / d + lam))


def quotient_c0_c1(lam: float, beta_s: float, L: float | None = None, d: int = 2):
    """Return (c0/c1 from the definitions, closed form valid for L = l_star).

    The closed form is 1 / (1 + (1/d + lam) / (beta_s^-2 + lam)); for d = 2 it
    equals 1 / (1 + (1 + 2 lam) / (2 beta_s^-2 + 2 lam)).
    """
    if L is None:
        L = l_star(lam, d)
    c0 = L / 2.0
    c1 = L / 2.0 + 0.5 / (beta_s**-2 + lam)
    closed = 1.0 / (1.0 + (1.0 / d + lam) / (beta_s**-2 + lam))
    return c0 / c1, closed


def small_tau_limit(lam: float, beta_s: float, d: int = 2) -> float:
    """Bound as tau -> 0 with L = l_star."""
    return math.sqrt(quotient_c0_c1(lam, beta_s, None, d)[1])


@lru_cache(maxsize=8)
def grad_p_sup(n: int = 2048) -> float:
    """max |grad p_ex| over an n x n grid of the closed L-shape."""
    t = np.linspace(0.0, 1.0, n)
    best = 0.0
    for chunk in np.array_split(t, 16):
        y, x = np.meshgrid(chunk, t, indexing="ij")
        keep = ~((x > 0.5) & (y > 0.5))
        gx, gy = manufactured.grad_p_exact(x[keep], y[keep])
        best = max(best, float(np.sqrt(gx * gx + gy * gy).max()))
    return best


def _schur_min_eigenvalue(mesh: Mesh, lam: float) -> float:
    from .assembly import discretization_for

    disc = discretization_for(mesh)
    n_p = disc.n_p
    if n_p > MAX_DENSE_DOFS:
        raise ValueError(f"{n_p} pressure DOFs exceed the dense limit {MAX_DENSE_DOFS}")
    E = factorize(disc.elasticity(lam))
    B = disc.coupling()
    S = np.empty((n_p, n_p))
    for cols in np.array_split(np.arange(n_p), max(1, n_p // 256)):
        X = np.column_stack([E.solve(B[:, j].toarray().ravel()) for j in cols])
        S[:, cols] = (B.T @ X)
    S = 0.5 * (S + S.T)
    ev = scipy.linalg.eigh(S, disc.mass().toarray(), eigvals_only=True)
    # the constant mode gives one (numerically) zero eigenvalue
    return float(max(np.sort(ev)[1], 0.0))


def estimate_inf_sup(mesh: Mesh, space_u=None, space_p=None) -> float:
    """Discrete Stokes inf-sup constant of the Taylor-Hood pair on ``mesh``.

    Square root of the smallest non-zero eigenvalue of B^T E^{-1} B q = mu M q
    with E the (eps(u), eps(w)) stiffness on H^1_0 and M the pressure mass
    matrix; constants span the kernel of B. Dense, so pressure spaces above
    MAX_DENSE_DOFS are refused.
    """
    return math.sqrt(_schur_min_eigenvalue(mesh, 0.0))


def weighted_inf_sup(mesh: Mesh, lam: float) -> float:
    """Largest beta with (beta^-2 + lam)^-1 ||q||^2 <= q^T B^T A_lam^{-1} B q.

    A_lam includes the lam (div, div) term. Because the divergence of a P2
    field is not a P1 function, this is smaller than the Stokes constant
    once lam > 0.
    """
    s = _schur_min_eigenvalue(mesh, lam)
    inv2 = 1.0 / s - lam
    return 1.0 / math.sqrt(inv2) if inv2 > 0 else math.inf


@lru_cache(maxsize=16)
def inf_sup_for_level(level: int = 0, lam: float | None = None) -> float:
    """Cached Stokes constant, or the lam-consistent one when ``lam`` is given."""
    from .assembly import discretization

    mesh = discretization(level).mesh
    return estimate_inf_sup(mesh) if lam is None else weighted_inf_sup(mesh, lam)


STOKES = "stokes"
WEIGHTED = "weighted"


def constants_for(model: PermeabilityModel, lam: float, L: float,
                  beta_s: float | None = None, z_range=DEFAULT_Z_RANGE,
                  d: int = 2, beta_mode: str = STOKES) -> TheoryConstants:
    """Range-restricted constants for a conductivity law and the manufactured pressure.

    Without an explicit ``beta_s`` the coarse-mesh estimate is used: the
    Stokes constant by default, the lam-consistent one for ``beta_mode='weighted'``.
    """
    ac = assumption_constants(model, *z_range)
    if beta_s is None:
        if beta_mode not in (STOKES, WEIGHTED):
            raise ValueError(f"unknown beta_mode {beta_mode!r}")
        beta_s = inf_sup_for_level(0, None if beta_mode == STOKES else float(lam))
    return TheoryConstants(d=d, lam=lam, beta_s=beta_s, c_inf=grad_p_sup(),
                           k_lip=ac.k_lip, k_min=ac.k_min, L=L)
