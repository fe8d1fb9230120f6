"""Manufactured solution on the L-shape and the corresponding right-hand sides.

phi = (sin 2 pi x sin 2 pi y)^2, p_ex = phi - 1/4, u_ex = 0.01 (phi_y, phi_x).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi
U_SCALE = 0.01
PHI_MEAN = 0.25  # integral of phi over the L-shape (3/16) divided by its area (3/4)


def _parts(x, y):
    sx2 = np.sin(TWO_PI * x) ** 2
    sy2 = np.sin(TWO_PI * y) ** 2
    a, b = np.sin(2 * TWO_PI * x), np.sin(2 * TWO_PI * y)
    ac, bc = np.cos(2 * TWO_PI * x), np.cos(2 * TWO_PI * y)
    return sx2, sy2, a, b, ac, bc


def phi(x, y):
    return (np.sin(TWO_PI * x) * np.sin(TWO_PI * y)) ** 2


def phi_derivatives(x, y) -> dict[str, np.ndarray]:
    """Partial derivatives of phi up to third order, keyed 'x', 'xy', 'xxy', ..."""
    k = TWO_PI
    sx2, sy2, a, b, ac, bc = _parts(x, y)
    return {
        "x": k * a * sy2,
        "y": k * sx2 * b,
        "xx": 2 * k**2 * ac * sy2,
        "yy": 2 * k**2 * sx2 * bc,
        "xy": k**2 * a * b,
        "xxx": -4 * k**3 * a * sy2,
        "yyy": -4 * k**3 * sx2 * b,
        "xxy": 2 * k**3 * ac * b,
        "xyy": 2 * k**3 * a * bc,
    }


def p_exact(x, y):
    return phi(x, y) - PHI_MEAN


def grad_p_exact(x, y):
    d = phi_derivatives(x, y)
    return d["x"], d["y"]


def laplace_p_exact(x, y):
    d = phi_derivatives(x, y)
    return d["xx"] + d["yy"]


def u_exact(x, y):
    d = phi_derivatives(x, y)
    return U_SCALE * d["y"], U_SCALE * d["x"]


def div_u_exact(x, y):
    return 2 * U_SCALE * phi_derivatives(x, y)["xy"]


def f_source(x, y, lam: float):
    """Body force -div(eps(u) + lam div(u) I) + grad p for the manufactured pair."""
    d = phi_derivatives(x, y)
    s = U_SCALE
    # eps(u) = s [[phi_xy, (phi_xx+phi_yy)/2], [., phi_xy]]
    div_eps_x = s * (d["xxy"] + 0.5 * (d["xxy"] + d["yyy"]))
    div_eps_y = s * (0.5 * (d["xxx"] + d["xyy"]) + d["xyy"])
    grad_div_x = 2 * s * d["xxy"]
    grad_div_y = 2 * s * d["xyy"]
    return (
        -div_eps_x - lam * grad_div_x + d["x"],
        -div_eps_y - lam * grad_div_y + d["y"],
    )


def g_source(x, y, tau: float, K0: float, S: float):
    """Flow source div(u) - tau K0 lap(p) + S p for the manufactured pair."""
    return div_u_exact(x, y) - tau * K0 * laplace_p_exact(x, y) + S * p_exact(x, y)


@dataclass(frozen=True)
class ManufacturedData:
    """Time-independent loads of the manufactured test; g already carries tau."""

    lam: float
    tau: float
    K0: float
    S: float
    zero_mean_flow: bool = True

    def f(self, x, y, step: int = 0):
        return f_source(x, y, self.lam)

    def g(self, x, y, step: int = 0):
        return g_source(x, y, self.tau, self.K0, self.S)


@dataclass(frozen=True)
class ZeroData:
    zero_mean_flow: bool = False

    def f(self, x, y, step: int = 0):
        z = np.zeros_like(x)
        return z, z

    def g(self, x, y, step: int = 0):
        return np.zeros_like(x)
