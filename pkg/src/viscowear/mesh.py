"""Structured 2D triangular meshes with a three-part tagged boundary.

The solver works on rectangular domains meshed by a crossed-diagonal
triangulation (the diagonal direction alternates checkerboard-wise, which
makes uniform refinements nested).  The boundary is split into a clamped
part, a traction part and a contact part; every edge carries its outward
unit normal and a unit tangent.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "BoundaryTag",
    "TriMesh",
    "build_rect_mesh",
    "validate_mesh",
    "write_vtk",
]

SIDES = ("left", "right", "bottom", "top")


class BoundaryTag(IntEnum):
    """Boundary part labels: clamped, traction and contact parts."""

    DIRICHLET = 1
    NEUMANN = 2
    CONTACT = 3


_TAG_NAMES = {
    "dirichlet": BoundaryTag.DIRICHLET,
    "neumann": BoundaryTag.NEUMANN,
    "contact": BoundaryTag.CONTACT,
}


def _as_tag(value) -> BoundaryTag:
    if isinstance(value, BoundaryTag):
        return value
    if isinstance(value, str) and value.lower() in _TAG_NAMES:
        return _TAG_NAMES[value.lower()]
    raise ValueError(f"unknown boundary tag {value!r}; expected one of {sorted(_TAG_NAMES)}")


@dataclass(frozen=True)
class TriMesh:
    """Immutable 2D triangulation with tagged boundary edges.

    Attributes
    ----------
    vertices : (n_v, 2) float array
        Vertex coordinates in meters.
    triangles : (n_t, 3) int array
        Vertex index triples, positively oriented (counterclockwise).
    boundary_edges : (n_be, 2) int array
        Endpoint vertex pairs of boundary edges.
    boundary_tags : (n_be,) int array
        One BoundaryTag value per boundary edge.
    normals : (n_be, 2) float array
        Outward unit normal per boundary edge.
    tangents : (n_be, 2) float array
        Unit tangent per boundary edge (normal rotated by +90 degrees).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray

    def __post_init__(self):
        for name in ("vertices", "normals", "tangents"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("triangles", "boundary_edges", "boundary_tags"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=int))
        # Shared read-only views keep the instance safe across threads.
        for name in ("vertices", "triangles", "boundary_edges", "boundary_tags",
                     "normals", "tangents"):
            getattr(self, name).setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_areas(self) -> np.ndarray:
        """Signed areas of all triangles (positive for valid meshes)."""
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        """Lengths of the boundary edges."""
        p = self.vertices[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def edges_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        """Indices (into boundary_edges) of edges carrying ``tag``."""
        return np.flatnonzero(self.boundary_tags == int(tag))

    def boundary_length(self, tag: BoundaryTag | None = None) -> float:
        """Total length of the boundary, or of one tagged part."""
        lengths = self.edge_lengths()
        if tag is None:
            return float(lengths.sum())
        return float(lengths[self.edges_with_tag(tag)].sum())

    def vertices_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        """Sorted vertex ids incident to edges carrying ``tag``."""
        idx = self.edges_with_tag(tag)
        return np.unique(self.boundary_edges[idx])


def build_rect_mesh(nx: int, ny: int, lx: float, ly: float, tag_rule: dict) -> TriMesh:
    """Mesh the rectangle [0, lx] x [0, ly] with nx-by-ny crossed-diagonal cells.

    Each cell is split into two triangles along a diagonal whose direction
    alternates checkerboard-wise, so refining nx, ny by an integer factor
    produces a nested triangulation.  ``tag_rule`` maps each of the four
    sides ("left", "right", "bottom", "top") to a BoundaryTag (or its
    lowercase name); at least one side must be DIRICHLET so the clamped
    part has positive measure.

    Returns a TriMesh with (nx+1)*(ny+1) vertices and 2*nx*ny triangles.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"nx, ny must be >= 1, got nx={nx}, ny={ny}")
    if lx <= 0 or ly <= 0:
        raise ValueError(f"lx, ly must be > 0, got lx={lx}, ly={ly}")
    if set(tag_rule) != set(SIDES):
        raise ValueError(f"tag_rule must assign exactly the sides {SIDES}, got {sorted(tag_rule)}")
    tags = {side: _as_tag(tag_rule[side]) for side in SIDES}
    if BoundaryTag.DIRICHLET not in tags.values():
        raise ValueError("tag_rule has no DIRICHLET side; the clamped part must have positive measure")

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            n00, n10 = vid(i, j), vid(i + 1, j)
            n01, n11 = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                tris.append((n00, n10, n11))
                tris.append((n00, n11, n01))
            else:
                tris.append((n10, n11, n01))
                tris.append((n10, n01, n00))
    triangles = np.asarray(tris, dtype=int)

    edges, edge_tags, normals = [], [], []
    for i in range(nx):
        edges.append((vid(i, 0), vid(i + 1, 0)))
        edge_tags.append(tags["bottom"])
        normals.append((0.0, -1.0))
    for j in range(ny):
        edges.append((vid(nx, j), vid(nx, j + 1)))
        edge_tags.append(tags["right"])
        normals.append((1.0, 0.0))
    for i in range(nx):
        edges.append((vid(i + 1, ny), vid(i, ny)))
        edge_tags.append(tags["top"])
        normals.append((0.0, 1.0))
    for j in range(ny):
        edges.append((vid(0, j + 1), vid(0, j)))
        edge_tags.append(tags["left"])
        normals.append((-1.0, 0.0))

    normals = np.asarray(normals, dtype=float)
    tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
    return TriMesh(
        vertices=vertices,
        triangles=triangles,
        boundary_edges=np.asarray(edges, dtype=int),
        boundary_tags=np.asarray([int(t) for t in edge_tags], dtype=int),
        normals=normals,
        tangents=tangents,
    )


def _edge_key(a: int, b: int) -> tuple:
    return (a, b) if a < b else (b, a)


def validate_mesh(mesh: TriMesh) -> list:
    """Check every TriMesh invariant; return a report of violations.

    An empty list means the mesh is valid.  Each entry names the offending
    entity (triangle or edge index) and the violated invariant.
    """
    report = []

    areas = mesh.triangle_areas()
    for t in np.flatnonzero(areas <= 0):
        report.append(f"negative area, triangle {t}")

    # Edge -> incident-triangle count over the whole triangulation.
    counts: dict = {}
    for tri in mesh.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = _edge_key(int(a), int(b))
            counts[key] = counts.get(key, 0) + 1
    for key, c in counts.items():
        if c > 2:
            report.append(f"edge {key} shared by {c} triangles")
    geometric_boundary = {key for key, c in counts.items() if c == 1}

    tagged = [_edge_key(int(a), int(b)) for a, b in mesh.boundary_edges]
    tagged_set = set(tagged)
    if len(tagged) != len(tagged_set):
        report.append("boundary tags do not partition: duplicate tagged edge")
    for key in geometric_boundary - tagged_set:
        report.append(f"boundary edge {key} is untagged")
    for i, key in enumerate(tagged):
        if key not in geometric_boundary:
            report.append(f"tagged edge {i} {key} is not a boundary edge")

    valid_tags = {int(t) for t in BoundaryTag}
    for i, t in enumerate(mesh.boundary_tags):
        if int(t) not in valid_tags:
            report.append(f"tagged edge {i} carries unknown tag {int(t)}")

    if mesh.boundary_length(BoundaryTag.DIRICHLET) <= 0.0:
        report.append("clamped boundary part has zero measure")

    # Unit length and outward orientation of the stored normals.
    norms = np.linalg.norm(mesh.normals, axis=1)
    for i in np.flatnonzero(np.abs(norms - 1.0) > 1e-12):
        report.append(f"normal of edge {i} has non-unit length {norms[i]:.3e}")
    owner_centroid = {}
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    for t, tri in enumerate(mesh.triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = _edge_key(int(a), int(b))
            if counts.get(key) == 1:
                owner_centroid[key] = centroids[t]
    for i, (a, b) in enumerate(mesh.boundary_edges):
        key = _edge_key(int(a), int(b))
        if key not in owner_centroid:
            continue
        midpoint = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
        if np.dot(mesh.normals[i], owner_centroid[key] - midpoint) >= 0:
            report.append(f"normal of edge {i} does not point out of the domain")

    return report


def write_vtk(mesh: TriMesh, path, point_data: dict | None = None, title: str = "viscowear mesh"):
    """Write the mesh (and optional per-vertex fields) as legacy ASCII VTK.

    ``point_data`` maps field names to arrays of shape (n_v,) for scalars
    or (n_v, 2) for vector fields; vectors are padded with a zero z
    component as the legacy format requires.
    """
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    nv = mesh.n_vertices
    lines.append(f"POINTS {nv} double")
    for x, y in mesh.vertices:
        lines.append(f"{x:.17g} {y:.17g} 0")
    nt = mesh.n_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(f"{v:.17g}" for v in values)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{v[0]:.17g} {v[1]:.17g} 0" for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
