"""Contact-boundary traces, the frictional contact functional and wear.

The contact functional couples the sliding-velocity magnitude against a
weight built from the normal trace of its first argument:

    j(g, v) = int_{contact} beta*|g_n| * (mu*|v_t - v_star| + v_n)

evaluated edgewise with 2-point Gauss quadrature.  The inner solver needs
a smooth version; only the second-argument norm |v_t - v_star| is
regularized (the first argument is frozen by the outer fixed point), so
the smoothed functional stays convex in v and converges to j monotonically
from below as the width shrinks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryTag, TriMesh

__all__ = [
    "FrictionData",
    "ContactData",
    "ContactTrace",
    "build_contact_data",
    "trace_decompose",
    "eval_j",
    "eval_j_many",
    "eval_j_reg",
    "wear_field",
]

# 2-point Gauss rule on [0, 1] and the P1 edge shape values there,
# PHI[q, endpoint].
_GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_PHI = np.column_stack([1.0 - _GAUSS2, _GAUSS2])


@dataclass(frozen=True)
class FrictionData:
    """Contact-law data on the contact boundary.

    ``beta`` (wear/adhesion coefficient) and ``mu`` (friction coefficient)
    are constants or callbacks ``f(pts) -> (n,)`` evaluated at contact
    quadrature points.  ``v_star`` is the constant foundation velocity and
    ``eps_reg`` the regularization width (velocity units) used by smoothed
    evaluations.  ``beta_star`` is the declared lower bound of beta; when
    positive it is enforced wherever beta is sampled.
    """

    beta: object = 0.0
    mu: object = 0.0
    v_star: np.ndarray = (0.0, 0.0)
    eps_reg: float = 1e-6
    beta_star: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "v_star", np.asarray(self.v_star, dtype=float))
        if self.v_star.shape != (2,):
            raise ValueError(f"v_star must be a 2-vector, got shape {self.v_star.shape}")
        if self.eps_reg <= 0:
            raise ValueError(f"eps_reg must be > 0, got {self.eps_reg}")
        if self.beta_star < 0:
            raise ValueError(f"beta_star must be >= 0, got {self.beta_star}")
        for name in ("beta", "mu"):
            val = getattr(self, name)
            if not callable(val) and float(val) < 0:
                raise ValueError(f"{name} must be >= 0, got {val}")
        if not callable(self.beta) and float(self.beta) < self.beta_star:
            raise ValueError(f"beta={self.beta} violates declared lower bound beta_star={self.beta_star}")

    def coeffs(self, contact: "ContactData") -> tuple:
        """(beta, mu) sampled at the contact Gauss points, shape (n_e, 2)."""
        pts = contact.gauss_points.reshape(-1, 2)

        def sample(f, name):
            if callable(f):
                out = np.asarray(f(pts), dtype=float).reshape(contact.n_edges, 2)
            else:
                out = np.full((contact.n_edges, 2), float(f))
            if np.any(out < 0):
                raise ValueError(f"{name} is negative at a contact quadrature point")
            return out

        beta_q = sample(self.beta, "beta")
        mu_q = sample(self.mu, "mu")
        if self.beta_star > 0 and np.any(beta_q < self.beta_star):
            raise ValueError("beta drops below its declared lower bound beta_star on the contact part")
        return beta_q, mu_q


@dataclass(frozen=True)
class ContactData:
    """Quadrature data of the contact part: one entry per contact edge.

    ``dofs`` has shape (n_e, 2, 2): [edge, endpoint, component].  Traces
    are always taken edgewise with the edge's constant normal; vertex
    normals are never averaged.  ``wear_vertices`` lists the distinct
    contact vertices (with the normal of their first incident edge) on
    which the wear field lives.
    """

    n_dofs: int
    edges: np.ndarray
    dofs: np.ndarray
    lengths: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    gauss_points: np.ndarray
    wear_vertices: np.ndarray
    wear_normals: np.ndarray

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def gauss_weights(self) -> np.ndarray:
        """Quadrature weights, shape (n_e, 2); both points weigh length/2."""
        return np.repeat(self.lengths[:, None], 2, axis=1) * 0.5

    def values_at_gauss(self, u: np.ndarray) -> np.ndarray:
        """Trace of the P1 field ``u`` at all Gauss points, (n_e, 2, 2)."""
        nodes = np.asarray(u)[self.dofs]  # (n_e, endpoint, component)
        return np.einsum("qp,npc->nqc", _PHI, nodes)


def build_contact_data(mesh: TriMesh, dofmap) -> ContactData:
    """Collect quadrature data for all CONTACT-tagged edges."""
    idx = mesh.edges_with_tag(BoundaryTag.CONTACT)
    edges = mesh.boundary_edges[idx]
    normals = mesh.normals[idx]
    tangents = mesh.tangents[idx]
    pa = mesh.vertices[edges[:, 0]] if len(idx) else np.zeros((0, 2))
    pb = mesh.vertices[edges[:, 1]] if len(idx) else np.zeros((0, 2))
    lengths = np.linalg.norm(pb - pa, axis=1)
    gauss = pa[:, None, :] + _GAUSS2[None, :, None] * (pb - pa)[:, None, :]
    # Vertex v owns dofs (2v, 2v+1); same convention as DofMap.vertex_dofs.
    dofs = np.empty((len(idx), 2, 2), dtype=int)
    for ep in range(2):
        dofs[:, ep, 0] = 2 * edges[:, ep]
        dofs[:, ep, 1] = 2 * edges[:, ep] + 1
    seen: dict = {}
    for e, (a, b) in enumerate(edges):
        for v in (int(a), int(b)):
            if v not in seen:
                seen[v] = normals[e]
    wear_vertices = np.array(sorted(seen), dtype=int)
    wear_normals = (np.array([seen[v] for v in wear_vertices])
                    if len(seen) else np.zeros((0, 2)))
    return ContactData(
        n_dofs=dofmap.n_dofs,
        edges=edges,
        dofs=dofs,
        lengths=lengths,
        normals=normals,
        tangents=tangents,
        gauss_points=gauss,
        wear_vertices=wear_vertices,
        wear_normals=wear_normals,
    )


@dataclass(frozen=True)
class ContactTrace:
    """Normal/tangential decomposition at the endpoints of contact edges.

    ``u_n`` has shape (n_e, 2): scalar normal component per edge endpoint;
    ``u_t`` has shape (n_e, 2, 2): the tangential part as a geometric
    vector.  The decomposition satisfies u = u_n*normal + u_t exactly.
    """

    u_n: np.ndarray
    u_t: np.ndarray


def trace_decompose(u: np.ndarray, contact: ContactData) -> ContactTrace:
    """Split a dof vector into normal and tangential traces, edgewise."""
    nodes = np.asarray(u)[contact.dofs]  # (n_e, endpoint, component)
    u_n = np.einsum("npc,nc->np", nodes, contact.normals)
    u_t = nodes - u_n[:, :, None] * contact.normals[:, None, :]
    return ContactTrace(u_n=u_n, u_t=u_t)


def _normal_trace_gauss(u: np.ndarray, contact: ContactData) -> np.ndarray:
    gp = contact.values_at_gauss(u)
    return np.einsum("nqc,nc->nq", gp, contact.normals)


def _split_gauss(v: np.ndarray, contact: ContactData) -> tuple:
    """(v_n, v_t) of a dof vector at all Gauss points."""
    gp = contact.values_at_gauss(v)
    v_n = np.einsum("nqc,nc->nq", gp, contact.normals)
    v_t = gp - v_n[:, :, None] * contact.normals[:, None, :]
    return v_n, v_t


def eval_j(g_state: np.ndarray, v_state: np.ndarray, friction: FrictionData,
           contact: ContactData) -> float:
    """Exact contact functional j(g, v) by edgewise 2-point Gauss quadrature."""
    if contact.n_edges == 0:
        return 0.0
    beta_q, mu_q = friction.coeffs(contact)
    g_n = _normal_trace_gauss(g_state, contact)
    v_n, v_t = _split_gauss(v_state, contact)
    slide = np.linalg.norm(v_t - friction.v_star[None, None, :], axis=2)
    integrand = beta_q * np.abs(g_n) * (mu_q * slide + v_n)
    return float(np.sum(contact.gauss_weights * integrand))


def eval_j_many(G: np.ndarray, V: np.ndarray, friction: FrictionData,
                contact: ContactData) -> np.ndarray:
    """Batched j: rows of G and V are dof vectors; returns one value per row."""
    G = np.atleast_2d(G)
    V = np.atleast_2d(V)
    m = max(G.shape[0], V.shape[0])
    if contact.n_edges == 0:
        return np.zeros(m)
    beta_q, mu_q = friction.coeffs(contact)
    g_gp = np.einsum("qp,mnpc->mnqc", _PHI, G[:, contact.dofs])
    v_gp = np.einsum("qp,mnpc->mnqc", _PHI, V[:, contact.dofs])
    g_n = np.einsum("mnqc,nc->mnq", g_gp, contact.normals)
    v_n = np.einsum("mnqc,nc->mnq", v_gp, contact.normals)
    v_t = v_gp - v_n[..., None] * contact.normals[None, :, None, :]
    slide = np.linalg.norm(v_t - friction.v_star, axis=-1)
    integrand = beta_q * np.abs(g_n) * (mu_q * slide + v_n)
    return np.einsum("nq,mnq->m", contact.gauss_weights, integrand)


def frozen_weights(g_state: np.ndarray, friction: FrictionData,
                   contact: ContactData) -> np.ndarray:
    """Quadrature weights w*beta*|g_n| of the frozen first argument, (n_e, 2)."""
    beta_q, _ = friction.coeffs(contact)
    g_n = _normal_trace_gauss(g_state, contact)
    return contact.gauss_weights * beta_q * np.abs(g_n)


def _smooth_norm(w_vec: np.ndarray, eps: float) -> tuple:
    """sqrt(|w|^2 + eps^2) - eps and the full sqrt, elementwise over (..., 2)."""
    s_full = np.sqrt(np.einsum("...c,...c->...", w_vec, w_vec) + eps * eps)
    return s_full - eps, s_full


def frozen_value_grad(omega: np.ndarray, mu_q: np.ndarray, contact: ContactData,
                      v_state: np.ndarray, v_star: np.ndarray, eps: float) -> tuple:
    """Value and dof gradient of sum_q omega*(mu*s_eps(v_t - v_star) + v_n).

    ``omega`` already contains the quadrature weight and the frozen-argument
    factor.  With eps > 0 the norm is smoothed; eps == 0 evaluates the exact
    functional and a valid subgradient (zero at kinks).
    """
    grad = np.zeros(contact.n_dofs)
    if contact.n_edges == 0:
        return 0.0, grad
    v_n, v_t = _split_gauss(v_state, contact)
    w_vec = v_t - v_star[None, None, :]
    if eps > 0:
        s_val, s_full = _smooth_norm(w_vec, eps)
        w_hat = w_vec / s_full[..., None]
    else:
        s_full = np.linalg.norm(w_vec, axis=2)
        s_val = s_full
        with np.errstate(invalid="ignore", divide="ignore"):
            w_hat = np.where(s_full[..., None] > 0, w_vec / np.maximum(s_full, 1e-300)[..., None], 0.0)
    value = float(np.sum(omega * (mu_q * s_val + v_n)))
    # d/dv at a Gauss point: mu*P*w_hat + normal, with P the tangential projector.
    w_hat_t = w_hat - np.einsum("nqc,nc->nq", w_hat, contact.normals)[..., None] * contact.normals[:, None, :]
    g_gp = omega[..., None] * (mu_q[..., None] * w_hat_t + contact.normals[:, None, :])
    contrib = np.einsum("qp,nqc->npc", _PHI, g_gp)
    np.add.at(grad, contact.dofs.ravel(), contrib.ravel())
    return value, grad


def frozen_hessian(omega: np.ndarray, mu_q: np.ndarray, contact: ContactData,
                   v_state: np.ndarray, v_star: np.ndarray, eps: float) -> sp.csr_matrix:
    """Dof Hessian of the smoothed frozen functional (positive semidefinite)."""
    n = contact.n_dofs
    if contact.n_edges == 0 or eps <= 0:
        raise ValueError("hessian requires contact edges and eps > 0")
    v_n, v_t = _split_gauss(v_state, contact)
    w_vec = v_t - v_star[None, None, :]
    _, s_full = _smooth_norm(w_vec, eps)
    w_hat = w_vec / s_full[..., None]
    eye = np.eye(2)
    # Hessian of s_eps at the Gauss point: (I - w_hat w_hat')/s, then
    # projected tangentially on both sides.
    h_gp = (eye[None, None] - np.einsum("nqa,nqb->nqab", w_hat, w_hat)) / s_full[..., None, None]
    proj = eye[None] - np.einsum("na,nb->nab", contact.normals, contact.normals)
    h_gp = np.einsum("nab,nqbc,ncd->nqad", proj, h_gp, proj)
    h_gp = (omega * mu_q)[..., None, None] * h_gp
    # Scatter (edge, q) blocks onto the 4 dofs of the edge.
    blocks = np.einsum("qp,qr,nqad->npard", _PHI, _PHI, h_gp)  # (n_e, ep, comp, ep, comp)
    dofs_flat = contact.dofs.reshape(contact.n_edges, 4)
    rows = np.repeat(dofs_flat, 4, axis=1).ravel()
    cols = np.tile(dofs_flat, (1, 4)).ravel()
    vals = blocks.reshape(contact.n_edges, 4, 4).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def eval_j_reg(g_state: np.ndarray, v_state: np.ndarray, friction: FrictionData,
               contact: ContactData, eps: float | None = None) -> tuple:
    """Smoothed contact functional and its gradient with respect to v_state.

    Only the sliding norm |v_t - v_star| is smoothed (width ``eps``,
    defaulting to the friction data's eps_reg); the frozen-argument weight
    |g_n| stays exact.  The value increases monotonically to eval_j as the
    width shrinks, and the gap is at most the integral of beta*|g_n|*mu*eps.
    """
    eps = friction.eps_reg if eps is None else float(eps)
    if eps <= 0:
        raise ValueError(f"regularization width must be > 0, got {eps}")
    if contact.n_edges == 0:
        return 0.0, np.zeros(contact.n_dofs)
    _, mu_q = friction.coeffs(contact)
    omega = frozen_weights(g_state, friction, contact)
    return frozen_value_grad(omega, mu_q, contact, v_state, friction.v_star, eps)


def wear_field(u: np.ndarray, contact: ContactData) -> np.ndarray:
    """Wear values w = -u_n at the contact vertices (meters).

    Entries align with ``contact.wear_vertices``; each vertex uses the
    normal of its first incident contact edge.
    """
    if contact.wear_vertices.size == 0:
        return np.zeros(0)
    u = np.asarray(u)
    ux = u[2 * contact.wear_vertices]
    uy = u[2 * contact.wear_vertices + 1]
    u_n = ux * contact.wear_normals[:, 0] + uy * contact.wear_normals[:, 1]
    return -u_n
