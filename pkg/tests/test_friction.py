import numpy as np
import pytest

import viscowear as vw
from viscowear.friction import (
    ContactData,
    build_contact_data,
    eval_j,
    eval_j_many,
    eval_j_reg,
    trace_decompose,
    wear_field,
)

from conftest import contact_friction, default_params, unit_square

GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def single_edge_contact(length=1.0, normal=(0.0, -1.0)):
    """One contact edge from (0,0) to (length,0) in a 2-vertex dof layout."""
    pa = np.array([0.0, 0.0])
    pb = np.array([length, 0.0])
    normal = np.asarray(normal, dtype=float)
    return ContactData(
        n_dofs=4,
        edges=np.array([[0, 1]]),
        dofs=np.array([[[0, 1], [2, 3]]]),
        lengths=np.array([float(length)]),
        normals=normal[None, :],
        tangents=np.array([[-normal[1], normal[0]]]),
        gauss_points=pa[None, None, :] + GAUSS2[None, :, None] * (pb - pa)[None, None, :],
        wear_vertices=np.array([0, 1]),
        wear_normals=np.array([normal, normal]),
    )


def both_vertices(vec):
    """Dof vector with the same 2D value at both vertices of the edge."""
    v = np.asarray(vec, dtype=float)
    return np.array([v[0], v[1], v[0], v[1]])


def test_trace_decompose_simple_cases():
    c = single_edge_contact()
    nu = np.array([0.0, -1.0])
    tr = trace_decompose(both_vertices(nu), c)
    assert tr.u_n == pytest.approx(np.ones((1, 2)))
    assert np.abs(tr.u_t).max() <= 1e-15
    tr = trace_decompose(both_vertices([1.0, 0.0]), c)
    assert np.abs(tr.u_n).max() <= 1e-15
    assert np.linalg.norm(tr.u_t, axis=2) == pytest.approx(np.ones((1, 2)))


def test_trace_decompose_hand_value():
    c = single_edge_contact()
    tr = trace_decompose(both_vertices([3.0, 4.0]), c)
    assert tr.u_n == pytest.approx(-4.0 * np.ones((1, 2)))
    assert tr.u_t[0, 0] == pytest.approx([3.0, 0.0])


def test_trace_reconstruction_identity():
    mesh = unit_square(nx=3, ny=2)
    dm = vw.build_dofmap(mesh)
    c = build_contact_data(mesh, dm)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(dm.n_dofs)
    tr = trace_decompose(u, c)
    nodes = u[c.dofs]
    recon = tr.u_n[:, :, None] * c.normals[:, None, :] + tr.u_t
    assert np.abs(recon - nodes).max() <= 1e-12
    assert np.abs(np.einsum("npc,nc->np", tr.u_t, c.normals)).max() <= 1e-12


def test_eval_j_zero_weight():
    c = single_edge_contact()
    fr = contact_friction(beta=1.0, mu=0.7, v_star=(0.0, 0.0))
    v = both_vertices([0.3, -0.2])
    assert eval_j(np.zeros(4), v, fr, c) == 0.0


def test_eval_j_normal_term_hand_value():
    # length 1, beta=1, mu=0, g_n = 1, v_n = 2 -> j = 2
    c = single_edge_contact()
    fr = vw.FrictionData(beta=1.0, mu=0.0, v_star=(0.0, 0.0), eps_reg=1e-6)
    g = both_vertices([0.0, -1.0])
    v = both_vertices([0.0, -2.0])
    assert eval_j(g, v, fr, c) == pytest.approx(2.0, abs=1e-14)


def test_eval_j_friction_term_hand_value():
    # length 2, beta=1/2, mu=1, v*=0, g_n = -2, |v_t| = 3, v_n = 0 -> j = 6
    c = single_edge_contact(length=2.0)
    fr = vw.FrictionData(beta=0.5, mu=1.0, v_star=(0.0, 0.0), eps_reg=1e-6)
    g = both_vertices([0.0, 2.0])
    v = both_vertices([3.0, 0.0])
    assert eval_j(g, v, fr, c) == pytest.approx(6.0, abs=1e-13)


def test_eval_j_reg_zero_weight():
    c = single_edge_contact()
    fr = contact_friction(beta=1.0, mu=0.7)
    val, grad = eval_j_reg(np.zeros(4), both_vertices([0.5, 0.5]), fr, c)
    assert val == 0.0
    assert np.all(grad == 0.0)


def test_eval_j_reg_smoothing_error_bound():
    # value below the exact one by at most int beta*|g_n|*mu*eps
    c = single_edge_contact(length=2.0)
    g = both_vertices([0.0, 2.0])
    v = both_vertices([3.0, 0.0])
    exact = 6.0
    for eps in (1e-1, 1e-2, 1e-4):
        fr = vw.FrictionData(beta=0.5, mu=1.0, v_star=(0.0, 0.0), eps_reg=eps)
        val, _ = eval_j_reg(g, v, fr, c)
        assert val <= exact + 1e-14
        assert exact - val <= 0.5 * 2.0 * 1.0 * eps * 2.0 + 1e-14


def test_eval_j_reg_monotone_in_width():
    c = single_edge_contact()
    fr0 = contact_friction(beta=0.8, mu=0.6, v_star=(0.1, 0.0))
    rng = np.random.default_rng(3)
    g = rng.standard_normal(4)
    v = rng.standard_normal(4)
    vals = [eval_j_reg(g, v, fr0, c, eps=eps)[0] for eps in (1e-1, 1e-2, 1e-3, 1e-5)]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(eval_j(g, v, fr0, c), abs=1e-4)


def test_eval_j_reg_rejects_bad_width():
    c = single_edge_contact()
    fr = contact_friction()
    with pytest.raises(ValueError):
        eval_j_reg(np.zeros(4), np.zeros(4), fr, c, eps=0.0)
    with pytest.raises(ValueError):
        vw.FrictionData(beta=1.0, mu=0.0, v_star=(0.0, 0.0), eps_reg=-1.0)


def test_eval_j_reg_gradient_matches_finite_differences():
    mesh = unit_square(nx=2, ny=2)
    dm = vw.build_dofmap(mesh)
    c = build_contact_data(mesh, dm)
    fr = vw.FrictionData(beta=0.7, mu=0.5, v_star=(0.08, 0.0), eps_reg=1e-3)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        g = rng.standard_normal(dm.n_dofs)
        v = rng.standard_normal(dm.n_dofs)
        _, grad = eval_j_reg(g, v, fr, c)
        d = rng.standard_normal(dm.n_dofs)
        h = 1e-6
        fp = eval_j_reg(g, v + h * d, fr, c)[0]
        fm = eval_j_reg(g, v - h * d, fr, c)[0]
        fd = (fp - fm) / (2 * h)
        an = float(grad @ d)
        denom = max(abs(fd), abs(an), 1e-12)
        worst = max(worst, abs(fd - an) / denom)
    assert worst <= 1e-6


def test_wear_field_values():
    c = single_edge_contact()
    u = both_vertices([0.0, -0.3])  # u_n = 0.3
    w = wear_field(u, c)
    assert w == pytest.approx([-0.3, -0.3])
    u = np.array([0.0, 0.3, 0.0, -0.1])
    w = wear_field(u, c)
    assert w == pytest.approx([0.3, -0.1])
    assert np.all(wear_field(np.zeros(4), c) == 0.0)
    # u = normal on the contact part -> u_n = 1 -> w = -1
    w = wear_field(both_vertices([0.0, -1.0]), c)
    assert w == pytest.approx([-1.0, -1.0])


def test_convexity_in_second_argument():
    mesh = unit_square(nx=2, ny=2)
    dm = vw.build_dofmap(mesh)
    c = build_contact_data(mesh, dm)
    fr = contact_friction(beta=0.6, mu=0.8, v_star=(0.1, 0.05))
    rng = np.random.default_rng(5)
    for _ in range(200):
        g = rng.standard_normal(dm.n_dofs)
        v1 = rng.standard_normal(dm.n_dofs)
        v2 = rng.standard_normal(dm.n_dofs)
        lam = rng.uniform()
        lhs = eval_j(g, lam * v1 + (1 - lam) * v2, fr, c)
        rhs = lam * eval_j(g, v1, fr, c) + (1 - lam) * eval_j(g, v2, fr, c)
        assert lhs <= rhs + 1e-12 * (1 + abs(rhs))


def test_positive_homogeneity_in_first_argument():
    mesh = unit_square(nx=2, ny=1, lx=2.0, ly=1.0)
    dm = vw.build_dofmap(mesh)
    c = build_contact_data(mesh, dm)
    fr = contact_friction(beta=0.6, mu=0.8, v_star=(0.1, 0.0))
    rng = np.random.default_rng(6)
    for _ in range(50):
        g = rng.standard_normal(dm.n_dofs)
        v = rng.standard_normal(dm.n_dofs)
        alpha = rng.uniform(-3, 3)
        assert eval_j(alpha * g, v, fr, c) == pytest.approx(
            abs(alpha) * eval_j(g, v, fr, c), rel=1e-12, abs=1e-13)


def test_eval_j_many_matches_scalar():
    mesh = unit_square(nx=2, ny=2)
    dm = vw.build_dofmap(mesh)
    c = build_contact_data(mesh, dm)
    fr = contact_friction(beta=0.6, mu=0.8, v_star=(0.1, 0.0))
    rng = np.random.default_rng(8)
    G = rng.standard_normal((7, dm.n_dofs))
    V = rng.standard_normal((7, dm.n_dofs))
    batched = eval_j_many(G, V, fr, c)
    single = [eval_j(G[i], V[i], fr, c) for i in range(7)]
    assert batched == pytest.approx(single, rel=1e-13)


def test_friction_data_validation():
    with pytest.raises(ValueError):
        vw.FrictionData(beta=-0.1, mu=0.0, v_star=(0, 0), eps_reg=1e-6)
    with pytest.raises(ValueError):
        vw.FrictionData(beta=0.1, mu=-0.5, v_star=(0, 0), eps_reg=1e-6)
    with pytest.raises(ValueError):
        vw.FrictionData(beta=0.1, mu=0.0, v_star=(0, 0), eps_reg=1e-6, beta_star=0.2)
    mesh = unit_square()
    c = build_contact_data(mesh, vw.build_dofmap(mesh))
    fr = vw.FrictionData(beta=lambda p: 0.5 + p[:, 0], mu=0.0, v_star=(0, 0),
                         eps_reg=1e-6, beta_star=0.5)
    beta_q, _ = fr.coeffs(c)
    assert np.all(beta_q >= 0.5)
    bad = vw.FrictionData(beta=lambda p: p[:, 0], mu=0.0, v_star=(0, 0),
                          eps_reg=1e-6, beta_star=0.5)
    with pytest.raises(ValueError, match="lower bound"):
        bad.coeffs(c)


def test_contact_data_on_mesh():
    mesh = unit_square(nx=4, ny=2, lx=2.0, ly=1.0)
    dm = vw.build_dofmap(mesh)
    c = build_contact_data(mesh, dm)
    assert c.n_edges == 4
    assert c.lengths == pytest.approx(np.full(4, 0.5))
    assert np.all(c.normals == [0.0, -1.0])
    assert c.wear_vertices.size == 5
    assert c.gauss_weights.sum() == pytest.approx(2.0)
