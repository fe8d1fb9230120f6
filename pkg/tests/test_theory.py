import math

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from nlbiot import manufactured, theory
from nlbiot.assembly import discretization
from nlbiot.mesh import build_lshape
from nlbiot.physics import PermeabilityModel
from nlbiot.theory import TheoryConstants, contraction_bound, l_star, quotient_c0_c1

BETA0 = 0.3967  # Stokes estimate on h = 1/16, rounded


def constants(**kw):
    base = dict(d=2, lam=1e2, beta_s=0.4, c_inf=6.0, k_lip=1e-3, k_min=1e-6, L=l_star(1e2))
    base.update(kw)
    return TheoryConstants(**base)


@pytest.mark.parametrize("lam,d,expected", [(1e2, 2, 1 / 100.5), (0.0, 2, 2.0), (1.0, 3, 0.75)])
def test_l_star(lam, d, expected):
    assert l_star(lam, d) == pytest.approx(expected, rel=1e-15)


def test_l_star_rejects_bad_input():
    with pytest.raises(ValueError):
        l_star(-1.0)
    with pytest.raises(ValueError):
        l_star(1.0, d=4)


def test_bound_plug_in():
    # lam = 0, L = L* = 2 and beta_s^-2 = 1/2 give c0 = 1, c1 = 2
    tc = TheoryConstants(d=2, lam=0.0, beta_s=math.sqrt(2), c_inf=1.0, k_lip=0.0, k_min=1.0, L=2.0)
    assert (tc.c0, tc.c1) == (1.0, 2.0)
    assert contraction_bound(tc, 0.3) == pytest.approx(1 / math.sqrt(2), rel=1e-15)


def test_large_lambda_limit():
    lam = 1e8
    tc = TheoryConstants(d=2, lam=lam, beta_s=BETA0, c_inf=0.0, k_lip=0.0, k_min=1.0, L=l_star(lam))
    assert abs(contraction_bound(tc, 1.0) - 1 / math.sqrt(2)) < 1e-3


def test_quotient_examples():
    assert quotient_c0_c1(0.0, 1.0) == pytest.approx((2 / 3, 2 / 3), rel=1e-15)
    assert quotient_c0_c1(1e12, 0.5)[0] == pytest.approx(0.5, rel=1e-9)


def test_quotient_identity_random():
    rng = np.random.default_rng(11)
    for lam, beta in zip(10 ** rng.uniform(-4, 8, 100), rng.uniform(1e-3, 2.0, 100)):
        direct, closed = quotient_c0_c1(lam, beta)
        assert direct == pytest.approx(closed, rel=1e-14)
        # the d = 2 form with 2 beta^-2 + 2 lam in the denominator
        assert closed == pytest.approx(1 / (1 + (1 + 2 * lam) / (2 * beta**-2 + 2 * lam)), rel=1e-14)


def test_constants_invariants():
    tc = constants()
    assert 0 < tc.c0 < tc.c1
    assert tc.c_K**2 == pytest.approx(0.5, rel=1e-15)
    assert constants(d=3).c_K ** 2 == pytest.approx(1 / 3, rel=1e-15)
    for bad in ({"k_min": 0.0}, {"beta_s": -1.0}, {"L": 0.0}, {"c_inf": math.inf}, {"d": 1}):
        with pytest.raises(ValueError):
            constants(**bad)


@settings(max_examples=60, deadline=None)
@given(tau=st.floats(1e-6, 1.0), klip=st.floats(1e-8, 1e-1), kmin=st.floats(1e-8, 1e-1),
       lam=st.floats(0.0, 1e4))
def test_bound_monotone(tau, klip, kmin, lam):
    tc = constants(k_lip=klip, k_min=kmin, lam=lam, L=l_star(lam))
    b = contraction_bound(tc, tau)
    assert contraction_bound(tc, 2 * tau) >= b
    assert contraction_bound(constants(k_lip=2 * klip, k_min=kmin, lam=lam, L=l_star(lam)), tau) >= b
    assert contraction_bound(constants(k_lip=klip, k_min=2 * kmin, lam=lam, L=l_star(lam)), tau) <= b
    lam2 = 2 * lam + 1
    assert contraction_bound(constants(k_lip=klip, k_min=kmin, lam=lam2, L=l_star(lam2)), tau) <= b


def test_small_tau_limit():
    tc = constants()
    assert contraction_bound(tc, 1e-300) == pytest.approx(theory.small_tau_limit(1e2, 0.4), rel=1e-12)


def test_displacement_factor():
    assert theory.displacement_factor(1e2) == pytest.approx(math.sqrt(1 / 100.5), rel=1e-15)


def test_grad_p_sup_matches_optimizer():
    def neg(xy):
        gx, gy = manufactured.grad_p_exact(np.array(xy[0]), np.array(xy[1]))
        return -math.hypot(float(gx), float(gy))

    starts = [(a, b) for a in np.linspace(0.05, 0.95, 7) for b in np.linspace(0.05, 0.45, 4)]
    best = max(-scipy.optimize.minimize(neg, s, bounds=[(0, 1), (0, 0.5)]).fun for s in starts)
    assert theory.grad_p_sup() == pytest.approx(best, rel=1e-5)


def test_inf_sup_estimate():
    b0 = theory.inf_sup_for_level(0)
    b1 = theory.inf_sup_for_level(1)
    assert 0 < b0 <= 1 and 0 < b1 <= 1
    assert b0 == pytest.approx(BETA0, abs=1e-4)
    # stable pair: the estimate barely moves under refinement
    assert abs(b1 - b0) < 0.02 * b0


def test_inf_sup_refuses_large_meshes():
    with pytest.raises(ValueError):
        theory.estimate_inf_sup(build_lshape(3))


def test_weighted_inf_sup():
    stokes = theory.inf_sup_for_level(0)
    lam_beta = theory.inf_sup_for_level(0, 1e2)
    assert 0 < lam_beta < stokes
    assert theory.inf_sup_for_level(0, 0.0) == pytest.approx(stokes, rel=1e-10)
    # mesh independent as well
    assert theory.inf_sup_for_level(1, 1e2) == pytest.approx(lam_beta, rel=1e-3)


def test_model_i_bound_below_one():
    tc = theory.constants_for(PermeabilityModel("i", 1e-6, 0.1), 1e2, l_star(1e2))
    assert tc.c_inf == pytest.approx(2 * math.pi, rel=1e-4)
    assert contraction_bound(tc, 1e-4) < 1


def test_constants_for_beta_modes():
    model = PermeabilityModel("o", 1e-6)
    s = theory.constants_for(model, 1e2, l_star(1e2))
    m = theory.constants_for(model, 1e2, l_star(1e2), beta_mode=theory.WEIGHTED)
    assert m.beta_s < s.beta_s
    with pytest.raises(ValueError):
        theory.constants_for(model, 1e2, l_star(1e2), beta_mode="continuous")


def test_discrete_schur_spectrum_sets_linear_rate():
    # for the linear law the rate is governed by the smallest eigenvalue of B^T A^-1 B
    disc = discretization(0)
    lam_beta = theory.inf_sup_for_level(0, 1e2)
    predicted = theory.small_tau_limit(1e2, lam_beta)
    assert 0.75 < predicted < 1
    assert disc.n_p < theory.MAX_DENSE_DOFS
