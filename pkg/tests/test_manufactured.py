"""Closed-form manufactured data checked against symbolic differentiation."""
import numpy as np
import pytest
import sympy as sp

from nlbiot import manufactured as mf

x, y = sp.symbols("x y")
PHI = (sp.sin(2 * sp.pi * x) * sp.sin(2 * sp.pi * y)) ** 2
U = sp.Matrix([sp.Rational(1, 100) * sp.diff(PHI, y), sp.Rational(1, 100) * sp.diff(PHI, x)])
P = PHI - sp.Rational(1, 4)

rng = np.random.default_rng(3)
PTS = rng.uniform(0, 1, (40, 2))


def sym_eval(expr):
    f = sp.lambdify((x, y), expr, "numpy")
    return np.broadcast_to(f(PTS[:, 0], PTS[:, 1]), (len(PTS),))


@pytest.mark.parametrize("key", ["x", "y", "xx", "yy", "xy", "xxx", "yyy", "xxy", "xyy"])
def test_phi_derivatives(key):
    expr = sp.diff(PHI, *[sp.Symbol(c) for c in key])
    got = mf.phi_derivatives(PTS[:, 0], PTS[:, 1])[key]
    assert np.allclose(got, sym_eval(expr), rtol=1e-12, atol=1e-9)


def test_div_u_and_pressure():
    div = sp.diff(U[0], x) + sp.diff(U[1], y)
    assert np.allclose(mf.div_u_exact(PTS[:, 0], PTS[:, 1]), sym_eval(div), atol=1e-12)
    assert np.allclose(mf.p_exact(PTS[:, 0], PTS[:, 1]), sym_eval(P), atol=1e-14)
    lap = sp.diff(P, x, 2) + sp.diff(P, y, 2)
    assert np.allclose(mf.laplace_p_exact(PTS[:, 0], PTS[:, 1]), sym_eval(lap), atol=1e-10)


@pytest.mark.parametrize("lam", [0.0, 10.0, 1e3])
def test_body_force(lam):
    grad = U.jacobian([x, y])
    eps = (grad + grad.T) / 2
    div = grad[0, 0] + grad[1, 1]
    sigma = eps + lam * div * sp.eye(2)
    f = [-(sp.diff(sigma[i, 0], x) + sp.diff(sigma[i, 1], y)) + sp.diff(P, [x, y][i]) for i in range(2)]
    fx, fy = mf.f_source(PTS[:, 0], PTS[:, 1], lam)
    assert np.allclose(fx, sym_eval(f[0]), rtol=1e-11, atol=1e-9)
    assert np.allclose(fy, sym_eval(f[1]), rtol=1e-11, atol=1e-9)


def test_flow_source_sign():
    tau, K0, S = 0.01, 1e-6, 1e-4
    div = sp.diff(U[0], x) + sp.diff(U[1], y)
    lap = sp.diff(P, x, 2) + sp.diff(P, y, 2)
    g = div - tau * K0 * lap + S * P
    assert np.allclose(mf.g_source(PTS[:, 0], PTS[:, 1], tau, K0, S), sym_eval(g), atol=1e-12)


def test_gradient_vanishes_on_boundary_lines():
    t = np.linspace(0, 1, 33)
    for xs, ys in [(t, 0 * t), (t, 0 * t + 1), (0 * t, t), (0 * t + 0.5, t), (t, 0 * t + 0.5)]:
        gx, gy = mf.grad_p_exact(xs, ys)
        assert np.max(np.abs(gx)) < 1e-12 and np.max(np.abs(gy)) < 1e-12
        ux, uy = mf.u_exact(xs, ys)
        assert np.max(np.abs(ux)) < 1e-14 and np.max(np.abs(uy)) < 1e-14
