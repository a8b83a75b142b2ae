"""Vector P1 finite elements: dof maps, operator assembly and load vectors.

Assembles the density-weighted mass matrix, the elastic and viscous
stiffness operators for isotropic Kelvin-Voigt material tensors, the plain
strain Gram matrix that defines the energy norm, and volume/traction load
vectors.  Quadrature orders are fixed (triangle: 3-point edge-midpoint,
boundary edge: 2-point Gauss, time averaging: 2-point Gauss), which is
exact for every polynomial integrand these elements produce.

Assembly accumulates element contributions through a COO triplet list in a
fixed order, so repeated assembly of the same inputs is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryTag, TriMesh
from .friction import ContactData, build_contact_data

__all__ = [
    "DofMap",
    "MaterialParams",
    "AssembledSystem",
    "build_dofmap",
    "assemble_mass",
    "assemble_elastic",
    "assemble_viscous",
    "assemble_strain_gram",
    "assemble_load",
    "average_load",
    "assemble_system",
    "norm_V",
    "norm_H",
]

# 2-point Gauss rule on [0, 1]; exact for cubics.
GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


@dataclass(frozen=True)
class DofMap:
    """Maps vertices to dof pairs and splits dofs into free/constrained.

    Vertex v owns dofs (2v, 2v+1) for its x and y displacement components.
    A dof is constrained iff its vertex lies on a clamped (DIRICHLET) edge.
    """

    n_dofs: int
    free: np.ndarray
    constrained: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "free", np.asarray(self.free, dtype=int))
        object.__setattr__(self, "constrained", np.asarray(self.constrained, dtype=int))
        self.free.setflags(write=False)
        self.constrained.setflags(write=False)

    @property
    def n_free(self) -> int:
        return self.free.size

    def vertex_dofs(self, v: int) -> tuple:
        return 2 * v, 2 * v + 1

    def lift(self, x_free: np.ndarray) -> np.ndarray:
        """Embed a free-dof vector into a full dof vector (zeros elsewhere)."""
        full = np.zeros(self.n_dofs)
        full[self.free] = x_free
        return full

    def restrict(self, x_full: np.ndarray) -> np.ndarray:
        return np.asarray(x_full)[self.free]


def build_dofmap(mesh: TriMesh) -> DofMap:
    """Dof map for the vector P1 space with zero displacement on the clamped part."""
    n_dofs = 2 * mesh.n_vertices
    clamped_vertices = mesh.vertices_with_tag(BoundaryTag.DIRICHLET)
    constrained = np.sort(np.concatenate([2 * clamped_vertices, 2 * clamped_vertices + 1]))
    mask = np.ones(n_dofs, dtype=bool)
    mask[constrained] = False
    return DofMap(n_dofs=n_dofs, free=np.flatnonzero(mask), constrained=constrained)


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic Kelvin-Voigt material data.

    ``mu_elastic``/``lam_elastic`` are the elastic Lame pair (Pa),
    ``mu_viscous``/``lam_viscous`` the viscous pair (Pa*s).  ``rho`` is the
    mass density, either a constant or one value per triangle; it must stay
    above the positive lower bound ``rho_star``.
    """

    mu_elastic: float
    lam_elastic: float = 0.0
    mu_viscous: float = 1.0
    lam_viscous: float = 0.0
    rho: float | np.ndarray = 1.0
    rho_star: float | None = None

    def __post_init__(self):
        if self.mu_elastic <= 0 or self.lam_elastic < 0:
            raise ValueError("elastic Lame pair must satisfy mu > 0, lambda >= 0")
        if self.mu_viscous <= 0 or self.lam_viscous < 0:
            raise ValueError("viscous Lame pair must satisfy mu > 0, lambda >= 0")
        rho = np.asarray(self.rho, dtype=float)
        rho_min = float(rho.min()) if rho.ndim else float(rho)
        star = self.rho_star if self.rho_star is not None else rho_min
        object.__setattr__(self, "rho_star", float(star))
        if not (0 < self.rho_star <= rho_min):
            raise ValueError(f"density must satisfy rho >= rho_star > 0, got min rho {rho_min}, rho_star {star}")

    @property
    def viscous_monotonicity(self) -> float:
        """Smallest eigenvalue of the viscous tensor on symmetric matrices."""
        return 2.0 * self.mu_viscous


def _tri_geometry(pts: np.ndarray) -> tuple:
    """Area and P1 basis gradients (3, 2) of one triangle."""
    d1 = pts[1] - pts[0]
    d2 = pts[2] - pts[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    area = 0.5 * det
    # grad lambda_i, rows follow the local vertex order.
    g = np.array([
        [pts[1][1] - pts[2][1], pts[2][0] - pts[1][0]],
        [pts[2][1] - pts[0][1], pts[0][0] - pts[2][0]],
        [pts[0][1] - pts[1][1], pts[1][0] - pts[0][0]],
    ]) / det
    return area, g


def _tri_dofs(tri: np.ndarray) -> np.ndarray:
    """Local-to-global dof indices of one triangle, (x0, y0, x1, y1, x2, y2)."""
    out = np.empty(6, dtype=int)
    out[0::2] = 2 * tri
    out[1::2] = 2 * tri + 1
    return out


def _accumulate(rows, cols, vals, dofs, K):
    for a in range(len(dofs)):
        for b in range(len(dofs)):
            rows.append(dofs[a])
            cols.append(dofs[b])
            vals.append(K[a, b])


def _to_csr(rows, cols, vals, n) -> sp.csr_matrix:
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    # Element matrices are symmetric; symmetrizing removes the last-ulp
    # asymmetry of float accumulation.
    return (mat + mat.T) * 0.5


def assemble_mass(mesh: TriMesh, dofmap: DofMap, rho: float | np.ndarray = 1.0) -> sp.csr_matrix:
    """Density-weighted mass matrix of the vector P1 space.

    Uses the 3-point edge-midpoint rule per triangle, exact for the
    quadratic integrand rho*phi_i*phi_j when rho is constant per triangle.
    """
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (mesh.n_triangles,))
    # Edge-midpoint rule gives the exact consistent P1 mass matrix.
    m_local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    rows, cols, vals = [], [], []
    for t, tri in enumerate(mesh.triangles):
        area, _ = _tri_geometry(mesh.vertices[tri])
        K = np.zeros((6, 6))
        K[0::2, 0::2] = rho[t] * area * m_local
        K[1::2, 1::2] = rho[t] * area * m_local
        _accumulate(rows, cols, vals, _tri_dofs(tri), K)
    return _to_csr(rows, cols, vals, dofmap.n_dofs)


def _assemble_isotropic_stiffness(mesh: TriMesh, dofmap: DofMap, mu: float, lam: float) -> sp.csr_matrix:
    """Stiffness of the bilinear form int 2*mu*eps(u):eps(v) + lam*tr(u)*tr(v)."""
    d_mat = np.array([
        [2.0 * mu + lam, lam, 0.0],
        [lam, 2.0 * mu + lam, 0.0],
        [0.0, 0.0, mu],
    ])
    rows, cols, vals = [], [], []
    for tri in mesh.triangles:
        area, g = _tri_geometry(mesh.vertices[tri])
        # Voigt strain (e_xx, e_yy, 2 e_xy) of each local basis vector.
        B = np.zeros((3, 6))
        for a in range(3):
            B[0, 2 * a] = g[a, 0]
            B[1, 2 * a + 1] = g[a, 1]
            B[2, 2 * a] = g[a, 1]
            B[2, 2 * a + 1] = g[a, 0]
        K = area * (B.T @ d_mat @ B)
        _accumulate(rows, cols, vals, _tri_dofs(tri), K)
    return _to_csr(rows, cols, vals, dofmap.n_dofs)


def assemble_elastic(mesh: TriMesh, dofmap: DofMap, params: MaterialParams) -> sp.csr_matrix:
    """Elastic stiffness for the isotropic tensor 2*mu_e*eps + lam_e*tr(eps)*I."""
    return _assemble_isotropic_stiffness(mesh, dofmap, params.mu_elastic, params.lam_elastic)


def assemble_viscous(mesh: TriMesh, dofmap: DofMap, params: MaterialParams) -> sp.csr_matrix:
    """Viscous stiffness, same form as the elastic one with the viscous pair."""
    return _assemble_isotropic_stiffness(mesh, dofmap, params.mu_viscous, params.lam_viscous)


def assemble_strain_gram(mesh: TriMesh, dofmap: DofMap) -> sp.csr_matrix:
    """Gram matrix of eps(u):eps(v); defines the energy norm of the space."""
    return _assemble_isotropic_stiffness(mesh, dofmap, 0.5, 0.0)


def _eval_field(f, pts: np.ndarray) -> np.ndarray:
    if f is None:
        return np.zeros((pts.shape[0], 2))
    if callable(f):
        out = np.asarray(f(pts), dtype=float)
        if out.shape != (pts.shape[0], 2):
            raise ValueError(f"field callback returned shape {out.shape}, expected {(pts.shape[0], 2)}")
        return out
    out = np.asarray(f, dtype=float)
    if out.shape != (2,):
        raise ValueError(f"constant field must be a 2-vector, got shape {out.shape}")
    return np.broadcast_to(out, (pts.shape[0], 2))


def assemble_load(mesh: TriMesh, dofmap: DofMap, f0_at_t=None, g_at_t=None) -> np.ndarray:
    """Load vector of a volume force on the domain and a traction on the
    NEUMANN part.

    Both fields may be None (zero), a constant 2-vector, or a callback
    evaluated at quadrature points, ``f(pts) -> (n, 2)``.  Volume terms use
    the 3-point edge-midpoint rule, boundary terms 2-point Gauss per edge.
    """
    load = np.zeros(dofmap.n_dofs)
    if f0_at_t is not None:
        for tri in mesh.triangles:
            pts = mesh.vertices[tri]
            area, _ = _tri_geometry(pts)
            mids = 0.5 * (pts[[0, 1, 2]] + pts[[1, 2, 0]])
            fvals = _eval_field(f0_at_t, mids)
            w = area / 3.0
            # phi_a at midpoint m (between local vertices m, m+1) is 1/2 for
            # a in {m, m+1} and 0 otherwise.
            for m in range(3):
                for a in (m, (m + 1) % 3):
                    dx, dy = 2 * tri[a], 2 * tri[a] + 1
                    load[dx] += w * 0.5 * fvals[m, 0]
                    load[dy] += w * 0.5 * fvals[m, 1]
    if g_at_t is not None:
        for i in mesh.edges_with_tag(BoundaryTag.NEUMANN):
            a, b = mesh.boundary_edges[i]
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            length = float(np.linalg.norm(pb - pa))
            pts = pa[None, :] + GAUSS2[:, None] * (pb - pa)[None, :]
            gvals = _eval_field(g_at_t, pts)
            for q, s in enumerate(GAUSS2):
                w = 0.5 * length
                for v, phi in ((a, 1.0 - s), (b, s)):
                    load[2 * v] += w * phi * gvals[q, 0]
                    load[2 * v + 1] += w * phi * gvals[q, 1]
    return load


def average_load(load_at: Callable[[float], np.ndarray], k: int, tau: float) -> np.ndarray:
    """Time average of an assembled load vector over the k-th step.

    Computes the mean of ``load_at(t)`` over (t_{k-1}, t_k] with 2-point
    Gauss quadrature in time, exact for loads affine in t.
    """
    if k < 1:
        raise ValueError(f"step index must be >= 1, got {k}")
    if tau <= 0:
        raise ValueError(f"time step must be > 0, got {tau}")
    t0 = (k - 1) * tau
    ta, tb = t0 + GAUSS2[0] * tau, t0 + GAUSS2[1] * tau
    return 0.5 * (np.asarray(load_at(ta)) + np.asarray(load_at(tb)))


@dataclass(frozen=True)
class AssembledSystem:
    """All mesh-bound operators of one discretization.

    ``M`` is the density-weighted mass, ``A_mat``/``B_mat`` the elastic and
    viscous stiffness operators, ``V_gram`` the strain Gram matrix defining
    the energy norm, and ``contact`` the contact-boundary quadrature data.
    Immutable after construction.
    """

    mesh: TriMesh
    dofmap: DofMap
    params: MaterialParams
    M: sp.csr_matrix
    A_mat: sp.csr_matrix
    B_mat: sp.csr_matrix
    V_gram: sp.csr_matrix
    contact: ContactData

    @property
    def n_free(self) -> int:
        return self.dofmap.n_free

    def restrict(self, mat: sp.csr_matrix) -> sp.csr_matrix:
        """Restrict an operator to the free dofs (Dirichlet elimination)."""
        f = self.dofmap.free
        return mat[np.ix_(f, f)].tocsr()


def assemble_system(mesh: TriMesh, params: MaterialParams) -> AssembledSystem:
    """Assemble every operator the stepping and analysis code needs."""
    dofmap = build_dofmap(mesh)
    return AssembledSystem(
        mesh=mesh,
        dofmap=dofmap,
        params=params,
        M=assemble_mass(mesh, dofmap, params.rho),
        A_mat=assemble_elastic(mesh, dofmap, params),
        B_mat=assemble_viscous(mesh, dofmap, params),
        V_gram=assemble_strain_gram(mesh, dofmap),
        contact=build_contact_data(mesh, dofmap),
    )


def norm_V(u: np.ndarray, V_gram: sp.spmatrix) -> float:
    """Energy norm sqrt(u' V u) of a dof vector."""
    u = np.asarray(u)
    return float(np.sqrt(max(u @ (V_gram @ u), 0.0)))


def norm_H(u: np.ndarray, M: sp.spmatrix) -> float:
    """Mass norm sqrt(u' M u): the density-weighted L2 norm."""
    u = np.asarray(u)
    return float(np.sqrt(max(u @ (M @ u), 0.0)))
