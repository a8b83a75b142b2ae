"""Time stepping of the semi-discrete and fully discrete schemes.

The driver advances velocities nu^k through the per-step QVI solver on a
uniform grid, accumulating displacements u^k = u^{k-1} + tau*nu^k and
accelerations z^k = (nu^k - nu^{k-1})/tau, and records the wear snapshot
on the contact boundary at every step.  Piecewise affine and piecewise
constant reconstructions in time are provided for the convergence
harnesses.

A single run is sequential in k; independent runs share no mutable state
and may execute concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .fem import (
    AssembledSystem,
    MaterialParams,
    assemble_load,
    assemble_system,
    average_load,
    norm_H,
    norm_V,
    _tri_geometry,
)
from .friction import FrictionData, wear_field
from .mesh import TriMesh, write_vtk
from .vi_step import ConvergenceError, SolverOptions, StepProblem, fixed_point_h

__all__ = [
    "TimeGrid",
    "Trajectory",
    "run_semi_discrete",
    "run_fully_discrete",
    "interp_affine",
    "interp_constant",
    "ZeroField",
    "ConstantField",
    "SmoothBumpField",
    "project_field",
    "nodal_interpolate",
    "write_trajectory_csv",
    "write_wear_csv",
    "write_vtk_series",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into N steps of width tau = T/N."""

    T: float
    N: int

    def __post_init__(self):
        if self.T <= 0 or self.N < 1:
            raise ValueError(f"need T > 0 and N >= 1, got T={self.T}, N={self.N}")

    @property
    def tau(self) -> float:
        return self.T / self.N

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.N + 1)


@dataclass
class Trajectory:
    """Discrete solution history: one row per time node k = 0..N.

    ``u``, ``nu`` and ``z`` hold full dof vectors; ``wear`` the contact
    wear snapshots aligned with the system's contact vertices.  The
    difference identities u^k = u^{k-1} + tau*nu^k and
    z^k = (nu^k - nu^{k-1})/tau hold by construction; z^0 is set to z^1 by
    convention (the scheme never defines it).
    """

    grid: TimeGrid
    u: np.ndarray
    nu: np.ndarray
    z: np.ndarray
    wear: np.ndarray
    reports: list
    system: AssembledSystem
    friction: FrictionData | None = None
    max_nu_V: float = np.nan
    max_z_H: float = np.nan

    @property
    def n_steps(self) -> int:
        return self.grid.N


_WHICH = {"u": "u", "nu": "nu", "z": "z"}


def _validate_initial(dofmap, vec, name) -> np.ndarray:
    if vec is None:
        return np.zeros(dofmap.n_dofs)
    vec = np.array(vec, dtype=float)
    if vec.shape != (dofmap.n_dofs,):
        raise ValueError(f"{name} must have {dofmap.n_dofs} entries, got {vec.shape}")
    bad = np.abs(vec[dofmap.constrained])
    if bad.size and bad.max() > 1e-14:
        raise ValueError(f"{name} must vanish on the clamped boundary (max violation {bad.max():.3e})")
    vec[dofmap.constrained] = 0.0
    return vec


def run_semi_discrete(system: AssembledSystem, friction: FrictionData,
                      load_at: Callable[[float], np.ndarray] | None,
                      grid: TimeGrid, u0=None, v0=None,
                      options: SolverOptions | None = None,
                      consts=None) -> Trajectory:
    """Advance the implicit velocity scheme over the whole time grid.

    ``load_at`` maps a time to the assembled load vector (full dofs); the
    per-step right side uses its 2-point Gauss time average.  ``u0`` and
    ``v0`` are full dof vectors vanishing on the clamped part (None means
    zero).  Solver failures propagate with the step index attached.
    """
    options = options or SolverOptions()
    dofmap = system.dofmap
    tau = grid.tau
    free = dofmap.free
    n = dofmap.n_dofs

    u = np.zeros((grid.N + 1, n))
    nu = np.zeros((grid.N + 1, n))
    z = np.zeros((grid.N + 1, n))
    u[0] = _validate_initial(dofmap, u0, "u0")
    nu[0] = _validate_initial(dofmap, v0, "v0")
    n_wear = system.contact.wear_vertices.size
    wear = np.zeros((grid.N + 1, n_wear))
    wear[0] = wear_field(u[0], system.contact)

    if load_at is None:
        load_at = lambda t: np.zeros(n)

    cache: dict = {}
    reports = []
    u_prev = u[0][free].copy()
    v_prev = nu[0][free].copy()
    for k in range(1, grid.N + 1):
        f_k = average_load(load_at, k, tau)[free]
        prob = StepProblem.from_state(system, friction, tau, f_k, u_prev, v_prev,
                                      options=options, consts=consts, cache=cache)
        try:
            nu_k, report = fixed_point_h(prob)
        except ConvergenceError as err:
            raise ConvergenceError(f"step {k} failed: {err}", getattr(err, "report", None)) from err
        reports.append(report)
        u_k = u_prev + tau * nu_k
        z_k = (nu_k - v_prev) / tau
        nu[k, free] = nu_k
        u[k, free] = u_k
        z[k, free] = z_k
        wear[k] = wear_field(u[k], system.contact)
        u_prev, v_prev = u_k, nu_k
    z[0] = z[1]
    traj = Trajectory(grid=grid, u=u, nu=nu, z=z, wear=wear, reports=reports,
                      system=system, friction=friction)
    traj.max_nu_V = max(norm_V(nu[k], system.V_gram) for k in range(1, grid.N + 1))
    traj.max_z_H = max(norm_H(z[k], system.M) for k in range(1, grid.N + 1))
    return traj


def run_fully_discrete(mesh: TriMesh, params: MaterialParams, friction: FrictionData,
                       load_fields: Callable[[float], tuple] | None, grid: TimeGrid,
                       u0=None, v0=None, options: SolverOptions | None = None,
                       consts=None) -> Trajectory:
    """Assemble the P1 space on ``mesh`` and run the same stepping there.

    ``load_fields`` maps a time t to a pair (volume field, traction field)
    accepted by assemble_load.  Initial data may be dof vectors, field
    objects (projected onto the discrete space through the strain Gram),
    or None.  With identical discrete inputs this reproduces
    run_semi_discrete bit for bit; it exists to pair coarse/fine runs.
    """
    system = assemble_system(mesh, params)
    u0_vec = _prepare_initial(system, u0)
    v0_vec = _prepare_initial(system, v0)
    if load_fields is None:
        load_at = None
    else:
        def load_at(t: float) -> np.ndarray:
            f0_field, g_field = load_fields(t)
            return assemble_load(mesh, system.dofmap, f0_field, g_field)
    return run_semi_discrete(system, friction, load_at, grid, u0_vec, v0_vec,
                             options=options, consts=consts)


def _prepare_initial(system: AssembledSystem, init):
    if init is None or isinstance(init, np.ndarray):
        return init
    return project_field(system.mesh, system.dofmap, system.V_gram, init)


def _locate(traj: Trajectory, t: float) -> int:
    grid = traj.grid
    if t < -1e-12 or t > grid.T * (1 + 1e-12):
        raise ValueError(f"time {t} outside [0, {grid.T}]")
    if t <= 0:
        return 0
    kf = t / grid.tau
    k = int(np.ceil(kf))
    if abs(kf - round(kf)) < 1e-9:
        k = int(round(kf))
    return min(max(k, 0), grid.N)


def interp_affine(traj: Trajectory, t: float, which: str = "u") -> np.ndarray:
    """Piecewise affine reconstruction at time t of u, nu or z."""
    X = getattr(traj, _WHICH[which])
    k = _locate(traj, t)
    if k == 0:
        return X[0].copy()
    t_k = k * traj.grid.tau
    return X[k] + ((t - t_k) / traj.grid.tau) * (X[k] - X[k - 1])


def interp_constant(traj: Trajectory, t: float, which: str = "u") -> np.ndarray:
    """Piecewise constant reconstruction: the value at index k on (t_{k-1}, t_k].

    At t = 0 the initial value is returned (for z this is the z^0 := z^1
    convention stored in the trajectory).
    """
    X = getattr(traj, _WHICH[which])
    return X[_locate(traj, t)].copy()


# -- initial data fields -------------------------------------------------


@dataclass(frozen=True)
class ZeroField:
    """Identically zero initial field."""

    def value(self, pts: np.ndarray) -> np.ndarray:
        return np.zeros((pts.shape[0], 2))

    def grad(self, pts: np.ndarray) -> np.ndarray:
        return np.zeros((pts.shape[0], 2, 2))


@dataclass(frozen=True)
class ConstantField:
    """Spatially constant field; realized by clamped nodal interpolation.

    A nonzero constant is not admissible (it cannot vanish on the clamped
    part), so this field is interpolated nodally and zeroed on the clamped
    vertices instead of strain-projected (its strain projection would be
    identically zero).
    """

    amplitude: tuple = (0.0, 0.0)

    def value(self, pts: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.amplitude, dtype=float), (pts.shape[0], 2)).copy()

    interpolate_only = True


@dataclass(frozen=True)
class SmoothBumpField:
    """Product-of-sines bump, amplitude * sin(pi mx x/lx) * sin(pi my y/ly).

    Vanishes on the whole rectangle boundary, so it lies in the admissible
    space for any clamping choice; its gradient is closed form, which the
    strain projection needs.
    """

    amplitude: tuple
    lx: float
    ly: float
    modes: tuple = (1, 1)

    def _waves(self, pts):
        ax = np.pi * self.modes[0] / self.lx
        ay = np.pi * self.modes[1] / self.ly
        return ax, ay, np.sin(ax * pts[:, 0]), np.sin(ay * pts[:, 1]), np.cos(ax * pts[:, 0]), np.cos(ay * pts[:, 1])

    def value(self, pts: np.ndarray) -> np.ndarray:
        _, _, sx, sy, _, _ = self._waves(pts)
        amp = np.asarray(self.amplitude, dtype=float)
        return np.outer(sx * sy, amp)

    def grad(self, pts: np.ndarray) -> np.ndarray:
        ax, ay, sx, sy, cx, cy = self._waves(pts)
        amp = np.asarray(self.amplitude, dtype=float)
        out = np.zeros((pts.shape[0], 2, 2))
        for c in range(2):
            out[:, c, 0] = amp[c] * ax * cx * sy
            out[:, c, 1] = amp[c] * ay * sx * cy
        return out


def nodal_interpolate(mesh: TriMesh, dofmap, field) -> np.ndarray:
    """P1 nodal interpolant of a field, zeroed on the clamped vertices."""
    vals = field.value(mesh.vertices)
    vec = np.zeros(dofmap.n_dofs)
    vec[0::2] = vals[:, 0]
    vec[1::2] = vals[:, 1]
    vec[dofmap.constrained] = 0.0
    return vec


def project_field(mesh: TriMesh, dofmap, V_gram, field) -> np.ndarray:
    """Strain-Gram (energy) projection of a smooth field onto the space.

    Solves (eps(P u0), eps(phi)) = (eps(u0), eps(phi)) for all free basis
    functions, with the right side integrated by the 3-point edge-midpoint
    rule.  Fields flagged ``interpolate_only`` (or lacking a gradient) fall
    back to clamped nodal interpolation.
    """
    if field is None:
        return np.zeros(dofmap.n_dofs)
    if getattr(field, "interpolate_only", False) or not hasattr(field, "grad"):
        return nodal_interpolate(mesh, dofmap, field)
    rhs = np.zeros(dofmap.n_dofs)
    for tri in mesh.triangles:
        pts = mesh.vertices[tri]
        area, g = _tri_geometry(pts)
        mids = 0.5 * (pts[[0, 1, 2]] + pts[[1, 2, 0]])
        grads = field.grad(mids)  # (3, 2, 2), d u_i / d x_j
        eps = 0.5 * (grads + np.transpose(grads, (0, 2, 1)))
        eps_bar = eps.mean(axis=0)
        for a in range(3):
            rhs[2 * tri[a]] += area * (eps_bar[0, 0] * g[a, 0] + eps_bar[0, 1] * g[a, 1])
            rhs[2 * tri[a] + 1] += area * (eps_bar[1, 0] * g[a, 0] + eps_bar[1, 1] * g[a, 1])
    free = dofmap.free
    vec = np.zeros(dofmap.n_dofs)
    V_ff = V_gram[np.ix_(free, free)].tocsc()
    vec[free] = spla.spsolve(V_ff, rhs[free])
    return vec


# -- exports ---------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_trajectory_csv(traj: Trajectory, path):
    """Per-step norms, energies and iteration counts as CSV."""
    sysm = traj.system
    header = ("k,t,norm_u_V,norm_nu_V,norm_z_H,energy_kinetic,energy_elastic,"
              "h_iterations,g_iterations,newton_iterations")
    lines = [header]
    for k in range(traj.grid.N + 1):
        rep = traj.reports[k - 1] if k >= 1 else None
        kin = 0.5 * float(traj.nu[k] @ (sysm.M @ traj.nu[k]))
        ela = 0.5 * float(traj.u[k] @ (sysm.A_mat @ traj.u[k]))
        row = [
            str(k), _fmt(k * traj.grid.tau),
            _fmt(norm_V(traj.u[k], sysm.V_gram)),
            _fmt(norm_V(traj.nu[k], sysm.V_gram)),
            _fmt(norm_H(traj.z[k], sysm.M)),
            _fmt(kin), _fmt(ela),
            str(rep.h_iterations if rep else 0),
            str(rep.g_iterations if rep else 0),
            str(rep.inner_iterations if rep else 0),
        ]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_wear_csv(traj: Trajectory, path, stride: int = 1):
    """Wear history per contact vertex; the last column is the final wear."""
    contact = traj.system.contact
    ks = list(range(0, traj.grid.N + 1, stride))
    if ks[-1] != traj.grid.N:
        ks.append(traj.grid.N)
    header = "vertex,x,y," + ",".join(f"w_{k:04d}" for k in ks)
    lines = [header]
    for i, v in enumerate(contact.wear_vertices):
        x, y = traj.system.mesh.vertices[v]
        vals = ",".join(_fmt(traj.wear[k, i]) for k in ks)
        lines.append(f"{v},{_fmt(x)},{_fmt(y)},{vals}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_vtk_series(traj: Trajectory, out_dir, stride: int = 1, basename: str = "field"):
    """Legacy ASCII VTK snapshots (displacement, velocity, wear) per stride."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    mesh = traj.system.mesh
    contact = traj.system.contact
    nv = mesh.n_vertices
    paths = []
    for k in range(0, traj.grid.N + 1, stride):
        disp = np.column_stack([traj.u[k, 0::2], traj.u[k, 1::2]])
        velo = np.column_stack([traj.nu[k, 0::2], traj.nu[k, 1::2]])
        wear = np.zeros(nv)
        if contact.wear_vertices.size:
            wear[contact.wear_vertices] = traj.wear[k]
        path = os.path.join(out_dir, f"{basename}_{k:04d}.vtk")
        write_vtk(mesh, path,
                  point_data={"displacement": disp, "velocity": velo, "wear": wear},
                  title=f"viscowear step {k} t={k * traj.grid.tau:.17g}")
        paths.append(path)
    return paths
