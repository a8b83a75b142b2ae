import numpy as np
import pytest

import viscowear as vw
from viscowear.fem import GAUSS2, _tri_geometry

from conftest import TAGS, default_params, unit_square

# Degree-5 Dunavant rule used as the independent dense quadrature oracle.
_DUNAVANT5_W = np.array([0.225,
                         0.132394152788506, 0.132394152788506, 0.132394152788506,
                         0.125939180544827, 0.125939180544827, 0.125939180544827])
_DUNAVANT5_A = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [0.059715871789770, 0.470142064105115, 0.470142064105115],
    [0.470142064105115, 0.059715871789770, 0.470142064105115],
    [0.470142064105115, 0.470142064105115, 0.059715871789770],
    [0.797426985353087, 0.101286507323456, 0.101286507323456],
    [0.101286507323456, 0.797426985353087, 0.101286507323456],
    [0.101286507323456, 0.101286507323456, 0.797426985353087],
])


def _oracle_integral(mesh, func):
    """High-order quadrature of a scalar function over the mesh."""
    total = 0.0
    for tri in mesh.triangles:
        pts = mesh.vertices[tri]
        area, _ = _tri_geometry(pts)
        quad_pts = _DUNAVANT5_A @ pts
        total += area * float(np.dot(_DUNAVANT5_W, func(quad_pts, tri, pts)))
    return total


def _p1_value(bary_pts, nodal):
    return bary_pts @ nodal


def test_dofmap_1x1_counts(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    assert dm.n_dofs == 8
    assert dm.constrained.size == 4
    assert dm.n_free == 4


def test_dofmap_2x1_counts():
    mesh = unit_square(nx=2, ny=1, lx=2.0, ly=1.0)
    dm = vw.build_dofmap(mesh)
    assert dm.n_dofs == 12
    assert dm.constrained.size == 4
    # constrained vertices are exactly the two on the clamped left side
    left = mesh.vertices_with_tag(vw.BoundaryTag.DIRICHLET)
    assert sorted(dm.constrained) == sorted(np.concatenate([2 * left, 2 * left + 1]))


def test_mass_partition_of_unity(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    M = vw.assemble_mass(mesh1x1, dm, rho=1.0)
    u = np.zeros(dm.n_dofs)
    u[0::2] = 1.0
    assert u @ (M @ u) == pytest.approx(1.0, abs=1e-14)


def test_mass_linear_in_density(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    M1 = vw.assemble_mass(mesh1x1, dm, rho=1.0)
    M2 = vw.assemble_mass(mesh1x1, dm, rho=2.0)
    u = np.zeros(dm.n_dofs)
    u[0::2] = 1.0
    assert u @ (M2 @ u) == pytest.approx(2.0 * (u @ (M1 @ u)), rel=1e-14)


def test_mass_matches_dense_quadrature_oracle():
    mesh = unit_square(nx=2, ny=2)
    dm = vw.build_dofmap(mesh)
    M = vw.assemble_mass(mesh, dm, rho=1.0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        u = rng.standard_normal(dm.n_dofs)
        v = rng.standard_normal(dm.n_dofs)

        def integrand(quad_pts, tri, pts):
            ux = _p1_value(_DUNAVANT5_A, u[2 * tri])
            uy = _p1_value(_DUNAVANT5_A, u[2 * tri + 1])
            vx = _p1_value(_DUNAVANT5_A, v[2 * tri])
            vy = _p1_value(_DUNAVANT5_A, v[2 * tri + 1])
            return ux * vx + uy * vy

        assert u @ (M @ v) == pytest.approx(_oracle_integral(mesh, integrand), abs=1e-12)


def test_single_vertex_patch_mass():
    # support at one interior vertex: mass equals the vertex-patch integral
    mesh = unit_square(nx=2, ny=2)
    dm = vw.build_dofmap(mesh)
    M = vw.assemble_mass(mesh, dm, rho=1.0)
    center = int(np.argmin(np.linalg.norm(mesh.vertices - [0.5, 0.5], axis=1)))
    u = np.zeros(dm.n_dofs)
    u[2 * center] = 1.0

    def integrand(quad_pts, tri, pts):
        nodal = u[2 * tri]
        phi = _p1_value(_DUNAVANT5_A, nodal)
        return phi * phi

    assert u @ (M @ u) == pytest.approx(_oracle_integral(mesh, integrand), abs=1e-13)


def test_elastic_kills_rigid_motions(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    params = default_params()
    A = vw.assemble_elastic(mesh1x1, dm, params)
    B = vw.assemble_viscous(mesh1x1, dm, params)
    n = dm.n_dofs
    tx = np.zeros(n); tx[0::2] = 1.0
    ty = np.zeros(n); ty[1::2] = 1.0
    rot = np.zeros(n)
    rot[0::2] = -mesh1x1.vertices[:, 1]
    rot[1::2] = mesh1x1.vertices[:, 0]
    for mat in (A, B):
        for u in (tx, ty, rot):
            assert np.abs(mat @ u).max() <= 1e-13


def test_rigid_kernel_dimension_is_three(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    A = vw.assemble_elastic(mesh1x1, dm, default_params()).toarray()
    assert np.linalg.matrix_rank(A, tol=1e-10) == dm.n_dofs - 3


def test_elastic_energy_matches_hand_value(mesh1x1):
    # mu=1, lambda=0; hat function at vertex 0 of the unit square.
    dm = vw.build_dofmap(mesh1x1)
    params = vw.MaterialParams(mu_elastic=1.0, lam_elastic=0.0, mu_viscous=1.0)
    A = vw.assemble_elastic(mesh1x1, dm, params)
    u = np.zeros(dm.n_dofs)
    u[0] = 1.0  # x-displacement at vertex (0,0)

    def integrand(quad_pts, tri, pts):
        # elementwise constant strain of the P1 field
        _, g = _tri_geometry(pts)
        gradx = np.array([u[2 * tri] @ g[:, 0], u[2 * tri] @ g[:, 1]])
        grady = np.array([u[2 * tri + 1] @ g[:, 0], u[2 * tri + 1] @ g[:, 1]])
        eps = 0.5 * np.array([[2 * gradx[0], gradx[1] + grady[0]],
                              [gradx[1] + grady[0], 2 * grady[1]]])
        return np.full(len(quad_pts), 2.0 * np.sum(eps * eps))

    assert u @ (A @ u) == pytest.approx(_oracle_integral(mesh1x1, integrand), abs=1e-12)


def test_viscous_equals_elastic_for_equal_pairs(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    params = vw.MaterialParams(mu_elastic=1.3, lam_elastic=0.4, mu_viscous=1.3, lam_viscous=0.4)
    A = vw.assemble_elastic(mesh1x1, dm, params)
    B = vw.assemble_viscous(mesh1x1, dm, params)
    assert np.abs((A - B).toarray()).max() <= 1e-14


def test_viscous_positive_semidefinite():
    mesh = unit_square(nx=3, ny=2)
    dm = vw.build_dofmap(mesh)
    B = vw.assemble_viscous(mesh, dm, default_params())
    rng = np.random.default_rng(1)
    for _ in range(50):
        u = rng.standard_normal(dm.n_dofs)
        assert u @ (B @ u) >= -1e-12 * (u @ u)


def test_symmetry_of_assembled_matrices(sys2x2):
    for mat in (sys2x2.M, sys2x2.A_mat, sys2x2.B_mat, sys2x2.V_gram):
        d = np.abs((mat - mat.T).toarray()).max()
        assert d <= 1e-12 * np.abs(mat.toarray()).max()


def test_coercive_on_free_dofs(sys2x2):
    f = sys2x2.dofmap.free
    for mat in (sys2x2.M, sys2x2.A_mat, sys2x2.B_mat, sys2x2.V_gram):
        sub = mat[np.ix_(f, f)].toarray()
        assert np.linalg.eigvalsh(sub).min() > 0


def test_load_zero_fields(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    assert np.all(vw.assemble_load(mesh1x1, dm, None, None) == 0.0)


def test_load_constant_volume_force(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    load = vw.assemble_load(mesh1x1, dm, np.array([0.0, -1.0]), None)
    # partition of unity: the y-components sum to the total force
    assert load[1::2].sum() == pytest.approx(-1.0, abs=1e-14)
    assert load[0::2].sum() == pytest.approx(0.0, abs=1e-14)


def test_load_constant_traction():
    mesh = unit_square(nx=2, ny=1, lx=2.0, ly=1.0)  # Neumann part: top and right
    dm = vw.build_dofmap(mesh)
    load = vw.assemble_load(mesh, dm, None, np.array([1.0, 0.0]))
    L = mesh.boundary_length(vw.BoundaryTag.NEUMANN)
    assert load[0::2].sum() == pytest.approx(L, abs=1e-13)
    assert load[1::2].sum() == pytest.approx(0.0, abs=1e-13)


def test_load_callback_fields(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    f = lambda pts: np.column_stack([pts[:, 0], np.zeros(len(pts))])
    load = vw.assemble_load(mesh1x1, dm, f, None)
    # sum over x-dofs equals int_Omega x dx = 1/2 (midpoint rule is exact)
    assert load[0::2].sum() == pytest.approx(0.5, abs=1e-14)


def test_average_load_constant(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    c = vw.assemble_load(mesh1x1, dm, np.array([0.3, -0.7]), None)
    for k in (1, 3):
        avg = vw.average_load(lambda t: c, k, 0.25)
        assert np.allclose(avg, c, atol=1e-15)


def test_average_load_linear_profile(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    c = vw.assemble_load(mesh1x1, dm, np.array([0.0, -1.0]), None)
    load_at = lambda t: t * c
    avg = vw.average_load(load_at, 1, 1.0)
    assert np.allclose(avg, 0.5 * c, rtol=1e-14)
    avg = vw.average_load(load_at, 2, 0.5)
    assert np.allclose(avg, 0.75 * c, rtol=1e-14)


def test_average_load_rejects_bad_args(mesh1x1):
    with pytest.raises(ValueError):
        vw.average_load(lambda t: np.zeros(2), 0, 0.1)
    with pytest.raises(ValueError):
        vw.average_load(lambda t: np.zeros(2), 1, 0.0)


def test_material_params_validation():
    with pytest.raises(ValueError):
        vw.MaterialParams(mu_elastic=0.0)
    with pytest.raises(ValueError):
        vw.MaterialParams(mu_elastic=1.0, mu_viscous=-1.0)
    with pytest.raises(ValueError):
        vw.MaterialParams(mu_elastic=1.0, rho=0.0)
    with pytest.raises(ValueError):
        vw.MaterialParams(mu_elastic=1.0, rho=1.0, rho_star=2.0)
    p = vw.MaterialParams(mu_elastic=1.0, mu_viscous=0.7, rho=np.array([1.0, 2.0]))
    assert p.rho_star == 1.0
    assert p.viscous_monotonicity == pytest.approx(1.4)


def test_strain_gram_is_elastic_with_identity_tensor(mesh1x1):
    dm = vw.build_dofmap(mesh1x1)
    params = vw.MaterialParams(mu_elastic=0.5, lam_elastic=0.0, mu_viscous=1.0)
    A = vw.assemble_elastic(mesh1x1, dm, params)
    V = vw.assemble_strain_gram(mesh1x1, dm)
    assert np.abs((A - V).toarray()).max() <= 1e-15


def test_assembly_deterministic(sys2x2):
    again = vw.assemble_system(sys2x2.mesh, sys2x2.params)
    for a, b in ((sys2x2.M, again.M), (sys2x2.A_mat, again.A_mat),
                 (sys2x2.B_mat, again.B_mat), (sys2x2.V_gram, again.V_gram)):
        assert np.array_equal(a.toarray(), b.toarray())
