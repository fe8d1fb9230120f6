import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from nlbiot import assembly, fem
from nlbiot.assembly import discretization, symmetry_defect
from nlbiot.fem import FEFunction
from nlbiot.physics import ConductivityBreakdown, PermeabilityModel

AREA = 0.75
# integrals of x^2 (and of y^2) over the L-shape
INT_X2 = 3.0 / 16.0


@pytest.fixture(scope="module")
def disc():
    return discretization(0)


def raw_coupling(d):
    return (d.div.T @ d.W @ d.val_p1).tocsr()


@pytest.mark.parametrize("lam", [0.0, 1e2])
def test_elasticity_symmetric_positive_definite(disc, lam):
    A = disc.elasticity(lam)
    assert symmetry_defect(A) < 1e-14
    assert np.linalg.eigvalsh(A.toarray()).min() > 0


@pytest.mark.parametrize("field", [lambda x, y: (1 + 0 * x, 0 * y), lambda x, y: (0 * x, 1 + 0 * y),
                                   lambda x, y: (-y, x)])
def test_rigid_motions_have_zero_energy(disc, field):
    u = fem.interpolate(disc.V, field).coeffs
    A = disc.elasticity(1e2, constrained=False)
    scale = np.abs(u) @ (abs(A) @ np.abs(u))
    assert abs(u @ (A @ u)) < 1e-14 * scale


@pytest.mark.parametrize("lam", [0.0, 3.0])
def test_energy_of_quadratic_field(disc, lam):
    # eps:eps = 5 x^2 + y^2 / 2 and div = 3 x for u = (x^2, x y)
    u = fem.interpolate(disc.V, lambda x, y: (x * x, x * y)).coeffs
    A = disc.elasticity(lam, constrained=False)
    exact = (5.0 + 0.5 + 9.0 * lam) * INT_X2
    assert u @ (A @ u) == pytest.approx(exact, rel=1e-12)


def test_dirichlet_elimination(disc):
    A = disc.elasticity(1.0)
    fixed = disc.fixed
    rows = A[fixed].toarray()
    expected = np.zeros_like(rows)
    expected[np.arange(fixed.size), fixed] = 1.0
    assert np.array_equal(rows, expected)
    assert symmetry_defect(A) < 1e-14


def test_coupling_divergence_integral(disc):
    B = raw_coupling(disc)
    w = fem.interpolate(disc.V, lambda x, y: (x, 0 * y)).coeffs
    assert w @ (B @ np.ones(disc.n_p)) == pytest.approx(AREA, rel=1e-13)
    rot = fem.interpolate(disc.V, lambda x, y: (-y, x)).coeffs
    assert abs(rot @ B @ np.random.default_rng(0).standard_normal(disc.n_p)) < 1e-12


def test_coupling_matches_quadrature(disc):
    rng = np.random.default_rng(1)
    u = np.zeros(disc.n_u)
    u[disc.free] = rng.standard_normal(disc.free.size)
    p = rng.standard_normal(disc.n_p)
    rule = disc.rule
    div = FEFunction(disc.V, u).divergence_at(rule)
    pv = FEFunction(disc.Q, p).values_at(rule)
    direct = fem.integrate(disc.Q, div * pv, rule)
    B = disc.coupling()
    assert B.shape == (disc.n_u, disc.n_p)
    assert u @ (B @ p) == pytest.approx(direct, rel=1e-12)
    assert p @ (B.T @ u) == pytest.approx(direct, rel=1e-12)
    assert np.all(B[disc.fixed].toarray() == 0)


def test_constants_in_kernel_of_coupling(disc):
    assert np.abs(disc.coupling() @ np.ones(disc.n_p)).max() < 1e-13


def test_mass_matrix(disc):
    M = disc.mass()
    one = np.ones(disc.n_p)
    assert one @ M @ one == pytest.approx(AREA, rel=1e-14)
    xs = disc.Q.mesh.vertices[:, 0]
    assert xs @ M @ xs == pytest.approx(INT_X2, rel=1e-13)
    assert np.linalg.eigvalsh(M.toarray()).min() > 0


def test_weighted_laplace_against_cell_loop(disc):
    # K linear in x: the cell integral equals area * K(centroid)
    k = 1.0 + disc.points[..., 0]
    got = disc.weighted_laplace(k).toarray()
    Q = disc.Q
    ref = np.zeros_like(got)
    g, area = Q.geometry.grad_bary, Q.geometry.area
    verts = Q.mesh.vertices[Q.node_map]
    for c, nodes in enumerate(Q.node_map):
        kc = 1.0 + verts[c, :, 0].mean()
        ref[np.ix_(nodes, nodes)] += kc * area[c] * g[c] @ g[c].T
    assert np.abs(got - ref).max() < 1e-13 * np.abs(ref).max()
    assert np.abs(got @ np.ones(disc.n_p)).max() < 1e-12


def test_pressure_matrix_combination(disc):
    model = PermeabilityModel("i", 1e-6, 0.1)
    u = fem.interpolate(disc.V, lambda x, y: (x * y * (1 - x), 0 * y))
    P = assembly.assemble_pressure(disc.Q, u, model, tau=0.01, S=1e-4, L=0.02)
    k = disc.conductivity(u.coeffs, model)
    ref = 0.01 * disc.weighted_laplace(k) + (1e-4 + 0.02) * disc.mass()
    assert abs(P - ref).max() < 1e-15
    assert symmetry_defect(P) < 1e-14
    assert np.linalg.eigvalsh(P.toarray()).min() > 0


def test_constant_law_gives_scaled_laplacian(disc):
    model = PermeabilityModel("o", 2.5e-3)
    u = fem.interpolate(disc.V, lambda x, y: (x * x, y))
    P = assembly.assemble_pressure(disc.Q, u, model, tau=1.0, S=0.0, L=1e-12)
    lap = disc.weighted_laplace(np.ones(disc.weights.shape))
    assert abs(P - 2.5e-3 * lap - 1e-12 * disc.mass()).max() < 1e-16


def test_pressure_breakdown(disc):
    u = fem.interpolate(disc.V, lambda x, y: (x, 0 * y))  # div u = 1
    with pytest.raises(ConductivityBreakdown):
        assembly.assemble_pressure(disc.Q, u, PermeabilityModel("ii", 1.0, -1.0), 1.0, 0.0, 1.0)


def test_mech_source(disc):
    rng = np.random.default_rng(4)
    F = disc.mech_source(lambda x, y: (np.sin(x), x * y))
    assert np.all(F[disc.fixed] == 0)
    w = np.zeros(disc.n_u)
    w[disc.free] = rng.standard_normal(disc.free.size)
    rule = fem.triangle_rule(8)
    vals = FEFunction(disc.V, w).values_at(rule)
    pts = fem.quadrature_points(disc.V, rule)
    direct = fem.integrate(disc.V, vals[..., 0] * np.sin(pts[..., 0])
                           + vals[..., 1] * pts[..., 0] * pts[..., 1], rule)
    assert F @ w == pytest.approx(direct, rel=1e-8)


def test_flow_source(disc):
    G = disc.flow_source(lambda x, y: 1.0 + x)
    # integral of x over the L-shape is 1/2 - 3/16
    assert G.sum() == pytest.approx(AREA + 5 / 16, rel=1e-13)
    G0 = disc.flow_source(lambda x, y: 1.0 + x, zero_mean=True)
    assert abs(G0.sum()) < 1e-14


def test_rhs_wrappers(disc):
    rng = np.random.default_rng(5)
    u = FEFunction(disc.V, rng.standard_normal(disc.n_u))
    p = FEFunction(disc.Q, rng.standard_normal(disc.n_p))
    G = rng.standard_normal(disc.n_p)
    got = assembly.assemble_rhs_flow(disc.Q, G, u, p, L=0.3)
    ref = G + 0.3 * (disc.mass() @ p.coeffs) - disc.coupling().T @ u.coeffs
    assert np.allclose(got, ref, rtol=0, atol=1e-14)
    F = disc.mech_source(lambda x, y: (x, y))
    rhs = assembly.assemble_rhs_mech(disc.V, F, p)
    assert np.allclose(rhs, F + disc.coupling() @ p.coeffs, atol=1e-15)
    assert np.all(rhs[disc.fixed] == 0)


def test_named_wrappers_share_operators(disc):
    assert assembly.assemble_elasticity(disc.V, 1e2) is disc.elasticity(1e2)
    assert assembly.assemble_coupling(disc.V, disc.Q) is disc.coupling()
    assert assembly.assemble_mass(disc.Q) is disc.mass()
    other = discretization(1)
    with pytest.raises(ValueError):
        assembly.assemble_coupling(disc.V, other.Q)


def test_matrix_market_round_trip(disc, tmp_path):
    path = tmp_path / "mass.mtx"
    assembly.write_matrix_market(path, disc.mass())
    back = sp.csr_matrix(scipy.io.mmread(str(path)))
    assert abs(back - disc.mass()).max() < 1e-15
