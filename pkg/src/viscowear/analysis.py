"""Constants estimation, solvability checks, oracles and convergence studies.

Estimates the coercivity/Lipschitz constants of the assembled operators as
generalized extreme eigenvalues against the strain Gram matrix, checks the
solvability and contraction inequalities built from them, provides a
brute-force oracle for the per-step solver, and runs the temporal and
spatial convergence studies together with the discrete Gronwall utility
and per-step energy bookkeeping.

Constants are computed on the discrete spaces; only those govern the
implemented iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    AssembledSystem,
    MaterialParams,
    average_load,
    norm_V,
)
from .friction import FrictionData, eval_j, eval_j_many
from .mesh import TriMesh, build_rect_mesh
from .timestepper import TimeGrid, Trajectory, run_fully_discrete
from .vi_step import ConvergenceError, SolverOptions, StepProblem, vi_residual

__all__ = [
    "ConstantsEstimate",
    "ConditionCheck",
    "ConditionReport",
    "RateTable",
    "Scenario",
    "TimeStudyResult",
    "estimate_constants",
    "check_conditions",
    "brute_force_step_oracle",
    "cauchy_convergence_study",
    "spatial_convergence_study",
    "discrete_gronwall_check",
    "energy_diagnostics",
    "hypothesis_suite",
    "run_scenario",
]


# -- constants estimation ----------------------------------------------------


@dataclass
class ConstantsEstimate:
    """Numerically estimated operator and friction constants.

    ``M_A``/``L_A`` bound the elastic operator against the energy norm,
    ``M_B``/``L_B`` the viscous one; ``c_gamma`` is the discrete contact
    trace constant and ``L_j = C_j = c_gamma^2 * |beta|_inf * (|mu|_inf + 1)``
    the friction functional constants.  ``m_A_tensor`` is the pointwise
    strong monotonicity constant of the viscous material tensor (None when
    unknown, e.g. for hand-constructed estimates).
    """

    M_A: float
    L_A: float
    M_B: float
    L_B: float
    L_j: float
    C_j: float
    c_gamma: float
    m_A_tensor: float | None = None
    method: str = "power-iteration"


def _gen_eig_extreme(A: sp.spmatrix, M: sp.spmatrix, largest: bool,
                     tol: float = 1e-8, maxit: int = 20000, seed: int = 0) -> float:
    """Extreme generalized eigenvalue of (A, M) by (inverse) power iteration.

    Forward iteration x <- M^{-1} A x converges to the largest eigenvalue,
    inverse iteration x <- A^{-1} M x to the smallest; convergence is
    declared when the Rayleigh quotient stops moving in relative terms.
    """
    n = A.shape[0]
    if n == 1:
        return float(A[0, 0] / M[0, 0])
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    solve = spla.factorized((M if largest else A).tocsc())
    rho_prev = None
    for _ in range(maxit):
        xm = M @ x
        denom = float(x @ xm)
        rho = float(x @ (A @ x)) / denom
        if rho_prev is not None and abs(rho - rho_prev) <= tol * max(abs(rho), 1e-300):
            return rho
        rho_prev = rho
        y = solve((A @ x) if largest else xm)
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            return rho
        x = y / ny
    raise ConvergenceError(f"eigen-iteration did not converge to {tol:.1e} in {maxit} iterations")


def _contact_boundary_mass(system: AssembledSystem) -> sp.csr_matrix:
    """Mass matrix of the contact boundary, int_{Gamma3} u.v, full dofs."""
    n = system.dofmap.n_dofs
    contact = system.contact
    rows, cols, vals = [], [], []
    e_local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    for e in range(contact.n_edges):
        L = contact.lengths[e]
        for c in range(2):
            d = contact.dofs[e, :, c]
            for a in range(2):
                for b in range(2):
                    rows.append(d[a])
                    cols.append(d[b])
                    vals.append(L * e_local[a, b])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _sup_coeff(value, contact) -> float:
    if callable(value):
        if contact.n_edges == 0:
            return 0.0
        return float(np.max(np.asarray(value(contact.gauss_points.reshape(-1, 2)))))
    return float(value)


def estimate_constants(system: AssembledSystem, friction: FrictionData,
                       tol: float = 1e-8, maxit: int = 20000, seed: int = 0) -> ConstantsEstimate:
    """Estimate all abstract constants on the free-dof subspace.

    Operator bounds are the extreme generalized eigenvalues against the
    strain Gram matrix; the trace constant squared is the largest
    generalized eigenvalue of the contact boundary mass against the Gram;
    the friction constants combine it with the sup of beta and mu.
    """
    f = system.dofmap.free
    ix = np.ix_(f, f)
    A_ff = system.A_mat[ix].tocsr()
    B_ff = system.B_mat[ix].tocsr()
    V_ff = system.V_gram[ix].tocsr()
    M_A = _gen_eig_extreme(A_ff, V_ff, largest=False, tol=tol, maxit=maxit, seed=seed)
    L_A = _gen_eig_extreme(A_ff, V_ff, largest=True, tol=tol, maxit=maxit, seed=seed + 1)
    M_B = _gen_eig_extreme(B_ff, V_ff, largest=False, tol=tol, maxit=maxit, seed=seed + 2)
    L_B = _gen_eig_extreme(B_ff, V_ff, largest=True, tol=tol, maxit=maxit, seed=seed + 3)
    if system.contact.n_edges:
        Mb_ff = _contact_boundary_mass(system)[ix].tocsr()
        c_gamma_sq = _gen_eig_extreme(Mb_ff, V_ff, largest=True, tol=tol, maxit=maxit, seed=seed + 4)
        c_gamma = float(np.sqrt(max(c_gamma_sq, 0.0)))
    else:
        c_gamma = 0.0
    beta_sup = _sup_coeff(friction.beta, system.contact)
    mu_sup = _sup_coeff(friction.mu, system.contact)
    L_j = c_gamma ** 2 * beta_sup * (mu_sup + 1.0)
    return ConstantsEstimate(
        M_A=M_A, L_A=L_A, M_B=M_B, L_B=L_B, L_j=L_j, C_j=L_j, c_gamma=c_gamma,
        m_A_tensor=system.params.viscous_monotonicity,
        method="power-iteration",
    )


# -- condition checks --------------------------------------------------------


@dataclass
class ConditionCheck:
    """One strict inequality lhs < rhs with its margin and verdict."""

    name: str
    statement: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def verdict(self) -> str:
        if not np.isfinite(self.lhs) or not np.isfinite(self.rhs):
            return "FAIL"
        if self.margin <= 0.0:
            return "FAIL"
        scale = max(abs(self.lhs), abs(self.rhs), 1e-300)
        return "NEAR" if self.margin <= 0.05 * scale else "PASS"


@dataclass
class ConditionReport:
    """Verdicts of every solvability/contraction inequality; warnings only."""

    checks: list
    notes: list = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return all(c.verdict != "FAIL" for c in self.checks)

    def by_name(self, name: str) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def format_text(self) -> str:
        lines = []
        for c in self.checks:
            lines.append(f"{c.verdict:4s}  {c.name}: {c.statement}  "
                         f"lhs={c.lhs:.6g} rhs={c.rhs:.6g} margin={c.margin:.6g}")
        lines.extend(f"NOTE  {n}" for n in self.notes)
        return "\n".join(lines)


def check_conditions(consts: ConstantsEstimate, tau: float) -> ConditionReport:
    """Evaluate the three solvability/contraction inequality families.

    Checks L_j < M_B < 2*C_j, the step contraction ratio
    tau*L_A/(M_B - L_j) < 1, and the viscous-tensor dominance
    L_j < m_A_tensor when the tensor constant is known.  Verdicts are
    PASS, NEAR (within 5% of the boundary) or FAIL; boundary equality
    fails (the inequalities are strict).  Never blocks a run.
    """
    checks = [
        ConditionCheck("friction_vs_viscous_coercivity", "L_j < M_B",
                       consts.L_j, consts.M_B),
        ConditionCheck("viscous_window_upper", "M_B < 2*C_j",
                       consts.M_B, 2.0 * consts.C_j),
    ]
    if consts.M_B > consts.L_j:
        ratio = tau * consts.L_A / (consts.M_B - consts.L_j)
    else:
        ratio = np.inf
    checks.append(ConditionCheck("step_contraction", "tau*L_A/(M_B - L_j) < 1", ratio, 1.0))
    notes = []
    if consts.m_A_tensor is not None:
        checks.append(ConditionCheck("trace_product_vs_viscous_tensor",
                                     "c_gamma^2*|beta|*(|mu|+1) < m_A_tensor",
                                     consts.L_j, consts.m_A_tensor))
    else:
        notes.append("trace_product_vs_viscous_tensor: UNKNOWN (no viscous tensor constant)")
    return ConditionReport(checks=checks, notes=notes)


# -- brute-force step oracle --------------------------------------------------


def _contact_sampling(prob: StepProblem):
    """Dense per-Gauss-point sampling operators restricted to free dofs.

    Returns (S, P, nu_rows, weights) with S of shape (n_q, 2, n_free) the
    trace sampler, P the tangential projectors (n_q, 2, 2), nu_rows the
    normal rows and weights the quadrature weights, flattened over
    (edge, gauss point).
    """
    contact = prob.contact
    n_free = prob.free.size
    full_to_free = -np.ones(prob.n_dofs, dtype=int)
    full_to_free[prob.free] = np.arange(n_free)
    n_q = contact.n_edges * 2
    S = np.zeros((n_q, 2, n_free))
    P = np.zeros((n_q, 2, 2))
    nu_rows = np.zeros((n_q, 2))
    w = np.zeros(n_q)
    from .friction import _PHI  # shape values at the 2 Gauss points

    q_idx = 0
    for e in range(contact.n_edges):
        nrm = contact.normals[e]
        proj = np.eye(2) - np.outer(nrm, nrm)
        for q in range(2):
            for ep in range(2):
                for c in range(2):
                    j = full_to_free[contact.dofs[e, ep, c]]
                    if j >= 0:
                        S[q_idx, c, j] += _PHI[q, ep]
            P[q_idx] = proj
            nu_rows[q_idx] = nrm
            w[q_idx] = contact.gauss_weights[e, q]
            q_idx += 1
    return S, P, nu_rows, w


def _oracle_weights(prob, S, nu_rows, w, beta_q, u_free):
    """omega = w*beta*|g_n| per Gauss point for the frozen argument u."""
    g_n = np.einsum("qc,qc->q", np.einsum("qcj,j->qc", S, u_free), nu_rows)
    return w * beta_q * np.abs(g_n)


def brute_force_step_oracle(prob: StepProblem, friction: FrictionData | None = None,
                            target: float = 1e-7, n_starts: int = 64,
                            n_dirs: int = 10_000, seed: int = 0,
                            frozen_g: np.ndarray | None = None) -> np.ndarray:
    """Independent solve of the full per-step nonsmooth problem (desk scale).

    Runs batched subgradient descent with diminishing steps from
    ``n_starts`` random starts on the coupled problem (the contact weight
    not frozen), then polishes the best iterate with an outer
    frozen-weight loop whose inner convex problems are solved by ADMM with
    closed-form shrinkage steps (no smoothing, no Newton).  The result is
    certified by the exact-functional inequality residual over ``n_dirs``
    random unit directions; failing the ``target`` raises.

    ``frozen_g`` switches to the frozen-weight problem j(frozen_g, .)
    throughout, which some closed-form test problems require.
    """
    friction = prob.friction if friction is None else friction
    n_free = prob.F_tau.size
    if n_free > 12:
        raise ValueError(f"oracle is desk-scale only (<= 12 free dofs), got {n_free}")
    rng = np.random.default_rng(seed)
    K = (prob.M / prob.tau + prob.B + prob.tau * prob.A).toarray()
    F = prob.F_tau.copy()
    contact = prob.contact
    have_contact = contact.n_edges > 0
    if have_contact:
        beta_full, mu_full = friction.coeffs(contact)
        beta_q, mu_q = beta_full.ravel(), mu_full.ravel()
        S, P, nu_rows, w = _contact_sampling(prob)
        sum_active = float(np.max(beta_q)) > 0.0
    else:
        sum_active = False
    if not sum_active:
        return np.linalg.solve(K, F)
    v_star = friction.v_star
    omega_frozen = None
    if frozen_g is not None:
        from .friction import frozen_weights as _frozen_weights

        omega_frozen = _frozen_weights(np.asarray(frozen_g), friction, contact).ravel()

    def weights_for(u):
        if omega_frozen is not None:
            return omega_frozen
        return _oracle_weights(prob, S, nu_rows, w, beta_q, u)

    # Phase 1: diminishing-step subgradient descent, batched over starts.
    u_smooth = np.linalg.solve(K, F)
    spread = 0.5 * (1.0 + np.linalg.norm(u_smooth))
    U = u_smooth[None, :] + spread * rng.standard_normal((n_starts, n_free))
    alpha0 = 1.0 / max(np.linalg.norm(K, 2), 1e-12)
    for it in range(1500):
        alpha = alpha0 / (1.0 + it / 30.0)
        gp = np.einsum("qcj,mj->mqc", S, U)
        if omega_frozen is not None:
            omega = omega_frozen[None, :]
        else:
            g_n = np.einsum("mqc,qc->mq", gp, nu_rows)
            omega = w[None, :] * beta_q[None, :] * np.abs(g_n)
        v_t = np.einsum("qab,mqb->mqa", P, gp)
        w_vec = v_t - v_star[None, None, :]
        s = np.linalg.norm(w_vec, axis=2)
        with np.errstate(invalid="ignore"):
            w_hat = np.where(s[..., None] > 0, w_vec / np.maximum(s, 1e-300)[..., None], 0.0)
        # subgradient of the contact part at v = u
        gq = omega[..., None] * (mu_q[None, :, None] * np.einsum("qab,mqb->mqa", P, w_hat)
                                 + nu_rows[None, :, :])
        sub = np.einsum("qcj,mqc->mj", S, gq)
        G = U @ K.T - F[None, :] + sub
        U -= alpha * G

    best = _oracle_pick_best(prob, U, K, F, S, P, nu_rows, w, beta_q, mu_q,
                             v_star, frozen_g, rng)

    # Phase 2: frozen-weight outer loop with exact ADMM inner solves.
    u = best
    E = np.einsum("qab,qbj->qaj", P, S)  # tangential samplers
    EtE = np.einsum("qaj,qak->jk", E, E)
    rho = max(np.trace(K) / n_free, 1e-8)
    KK = K + rho * EtE
    KK_inv = np.linalg.inv(KK)
    outer_tol = 1e-11 * prob.scale
    for _ in range(500):
        omega = weights_for(u)
        c_q = omega * mu_q
        lin = np.einsum("qcj,qc->j", S, omega[:, None] * nu_rows)
        r_eff = F - lin
        if float(c_q.max()) == 0.0:
            u_new = np.linalg.solve(K, r_eff)
        else:
            u_new = _admm_inner(KK_inv, K, r_eff, E, c_q, v_star, rho, u, prob.scale)
        du = prob.norm_V(u_new - u)
        u = u_new
        if du <= outer_tol or frozen_g is not None:
            break
    else:
        raise ConvergenceError("oracle frozen-weight loop did not converge")

    resid = vi_residual(prob, u, n_dirs=n_dirs, rng=np.random.default_rng(seed + 1),
                        normalized=False, frozen_g=frozen_g)
    if resid > target:
        raise ConvergenceError(
            f"oracle residual {resid:.3e} above target {target:.1e}")
    return u


def _admm_inner(KK_inv, K, r_eff, E, c_q, v_star, rho, u0, scale):
    """ADMM on 0.5 u'Ku - r'u + sum_q c_q |E_q u - v_star|; closed-form steps."""
    n_q = E.shape[0]
    u = u0.copy()
    y = np.einsum("qaj,j->qa", E, u) - v_star[None, :]
    lam = np.zeros_like(y)
    tol = 1e-13 * scale
    for _ in range(20000):
        rhs = r_eff + rho * np.einsum("qaj,qa->j", E, v_star[None, :] + y - lam)
        u = KK_inv @ rhs
        z = np.einsum("qaj,j->qa", E, u) - v_star[None, :] + lam
        zn = np.linalg.norm(z, axis=1)
        shrink = np.maximum(1.0 - (c_q / rho) / np.maximum(zn, 1e-300), 0.0)
        y_new = shrink[:, None] * z
        prim = np.einsum("qaj,j->qa", E, u) - v_star[None, :] - y_new
        dual = rho * np.einsum("qaj,qa->j", E, y_new - y)
        lam += prim
        y = y_new
        if max(np.abs(prim).max(initial=0.0), np.abs(dual).max(initial=0.0)) <= tol:
            break
    return u


def _oracle_pick_best(prob, U, K, F, S, P, nu_rows, w, beta_q, mu_q, v_star,
                      frozen_g, rng, n_probe: int = 128):
    """Pick the subgradient iterate with the smallest probe residual."""
    best_u, best_r = None, np.inf
    for m in range(U.shape[0]):
        r = vi_residual(prob, U[m], n_dirs=n_probe, rng=np.random.default_rng(1234),
                        normalized=False, frozen_g=frozen_g)
        if r < best_r:
            best_u, best_r = U[m].copy(), r
    return best_u


# -- convergence studies -------------------------------------------------------


@dataclass
class RateRow:
    resolution: float
    error: float
    order: float = np.nan


@dataclass
class RateTable:
    """Errors and observed orders over a refinement sequence."""

    label: str
    rows: list
    degenerate: bool = False

    @classmethod
    def from_errors(cls, label: str, resolutions, errors, degenerate: bool = False) -> "RateTable":
        rows = []
        for i, (r, e) in enumerate(zip(resolutions, errors)):
            if i == 0 or errors[i - 1] <= 0 or e <= 0:
                order = np.nan
            else:
                order = float(np.log(errors[i - 1] / e) / np.log(r / resolutions[i - 1]))
            rows.append(RateRow(resolution=float(r), error=float(e), order=order))
        return cls(label=label, rows=rows, degenerate=degenerate)

    @property
    def orders(self) -> list:
        return [r.order for r in self.rows[1:]]

    @property
    def final_order(self) -> float:
        return self.rows[-1].order if len(self.rows) > 1 else np.nan

    def to_csv_lines(self) -> list:
        lines = [f"{self.label},{r.resolution:.17g},{r.error:.17g},{r.order:.17g}"
                 for r in self.rows]
        return lines

    def format_text(self) -> str:
        out = [f"[{self.label}]" + ("  (degenerate: zero errors)" if self.degenerate else "")]
        for r in self.rows:
            out.append(f"  res={r.resolution:<8g} error={r.error:.6e} order={r.order:.3f}")
        return "\n".join(out)


def write_rate_tables_csv(tables: list, path):
    lines = ["metric,level,error,order"]
    for t in tables:
        lines.extend(t.to_csv_lines())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class Scenario:
    """Everything needed to (re)build and run one simulation setup."""

    nx: int
    ny: int
    lx: float
    ly: float
    tags: dict
    params: MaterialParams
    friction: FrictionData
    load_fields: Callable[[float], tuple] | None
    T: float
    N: int
    u0: object = None
    v0: object = None
    options: SolverOptions = field(default_factory=SolverOptions)


def run_scenario(scn: Scenario, N: int | None = None, mesh_mult: int = 1,
                 consts=None) -> Trajectory:
    """Build the scenario's mesh (optionally refined) and run it."""
    mesh = build_rect_mesh(scn.nx * mesh_mult, scn.ny * mesh_mult, scn.lx, scn.ly, scn.tags)
    grid = TimeGrid(scn.T, N if N is not None else scn.N)
    return run_fully_discrete(mesh, scn.params, scn.friction, scn.load_fields,
                              grid, u0=scn.u0, v0=scn.v0, options=scn.options,
                              consts=consts)


def _interp_affine_many(traj: Trajectory, ts: np.ndarray, which: str) -> np.ndarray:
    """Vectorized piecewise affine reconstruction at many times."""
    X = getattr(traj, which)
    tau = traj.grid.tau
    kf = ts / tau
    k = np.ceil(kf).astype(int)
    snap = np.abs(kf - np.round(kf)) < 1e-9
    k[snap] = np.round(kf[snap]).astype(int)
    k = np.clip(k, 0, traj.grid.N)
    km1 = np.maximum(k - 1, 0)
    theta = (ts - k * tau) / tau
    theta[k == 0] = 0.0
    return X[k] + theta[:, None] * (X[k] - X[km1])


@dataclass
class TimeStudyResult:
    """Tables of the time-step Cauchy study: affine u gap and constant nu gap."""

    u_table: RateTable
    nu_table: RateTable
    degenerate: bool = False

    @property
    def tables(self) -> list:
        return [self.u_table, self.nu_table]


def cauchy_convergence_study(scn: Scenario, N_list) -> TimeStudyResult:
    """Gaps between consecutive time refinements on a fixed mesh.

    For each consecutive (N, 2N) computes the max over a shared sampling
    grid (64*max(N) intervals) of the energy-norm gap of the affine
    displacement reconstructions, and the L2-in-time energy-norm gap of
    the piecewise-constant velocity reconstructions (computed exactly on
    the union grid).  Observed orders go with the coarser N of each pair.
    """
    N_list = [int(n) for n in N_list]
    if len(N_list) < 2:
        raise ValueError("need at least two N values")
    for a, b in zip(N_list, N_list[1:]):
        if b != 2 * a:
            raise ValueError(f"N list must strictly double, got {a} -> {b}")
    trajs = [run_scenario(scn, N=n) for n in N_list]
    V = trajs[0].system.V_gram
    n_samp = 64 * N_list[-1]
    ts = np.linspace(0.0, scn.T, n_samp + 1)

    def vnorms(D):
        return np.sqrt(np.maximum(np.einsum("ij,ij->i", (V @ D.T).T, D), 0.0))

    errs_u, errs_nu = [], []
    for t1, t2 in zip(trajs, trajs[1:]):
        U1 = _interp_affine_many(t1, ts, "u")
        U2 = _interp_affine_many(t2, ts, "u")
        errs_u.append(float(vnorms(U1 - U2).max()))
        # exact L2(I;V) gap of the piecewise-constant velocities on the
        # finer grid: both are constant on each fine interval
        Nf = t2.grid.N
        j = np.arange(1, Nf + 1)
        D = t1.nu[(j + 1) // 2] - t2.nu[j]
        errs_nu.append(float(np.sqrt((scn.T / Nf) * np.sum(vnorms(D) ** 2))))

    scale = max(traj.max_nu_V if np.isfinite(traj.max_nu_V) else 0.0 for traj in trajs)
    degenerate = max(errs_u + errs_nu) <= 1e-14 * max(scale, 1.0)
    res = N_list[:-1]
    return TimeStudyResult(
        u_table=RateTable.from_errors("time_u_maxV", res, errs_u, degenerate),
        nu_table=RateTable.from_errors("time_nu_L2V", res, errs_nu, degenerate),
        degenerate=degenerate,
    )


def _p1_eval_structured(nx: int, ny: int, lx: float, ly: float,
                        u: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate a P1 dof vector of a crossed-diagonal rect mesh at points."""
    hx, hy = lx / nx, ly / ny
    ix = np.clip((pts[:, 0] / hx).astype(int), 0, nx - 1)
    iy = np.clip((pts[:, 1] / hy).astype(int), 0, ny - 1)
    xi = pts[:, 0] / hx - ix
    eta = pts[:, 1] / hy - iy

    def vid(i, j):
        return j * (nx + 1) + i

    out = np.zeros((pts.shape[0], 2))
    for c in range(2):
        u00 = u[2 * vid(ix, iy) + c]
        u10 = u[2 * vid(ix + 1, iy) + c]
        u01 = u[2 * vid(ix, iy + 1) + c]
        u11 = u[2 * vid(ix + 1, iy + 1) + c]
        even = (ix + iy) % 2 == 0
        lower_e = eta <= xi
        val_e = np.where(lower_e,
                         u00 + xi * (u10 - u00) + eta * (u11 - u10),
                         u00 + xi * (u11 - u01) + eta * (u01 - u00))
        lower_o = xi + eta <= 1.0
        val_o = np.where(lower_o,
                         u00 + xi * (u10 - u00) + eta * (u01 - u00),
                         (u01 - u11 + u10) + xi * (u11 - u01) + eta * (u11 - u10))
        out[:, c] = np.where(even, val_e, val_o)
    return out


def prolong_p1(u_coarse: np.ndarray, coarse_dims: tuple, fine_mesh: TriMesh,
               lx: float, ly: float) -> np.ndarray:
    """P1-interpolate a coarse dof vector onto the vertices of a nested fine mesh."""
    nxc, nyc = coarse_dims
    vals = _p1_eval_structured(nxc, nyc, lx, ly, u_coarse, fine_mesh.vertices)
    out = np.zeros(2 * fine_mesh.n_vertices)
    out[0::2] = vals[:, 0]
    out[1::2] = vals[:, 1]
    return out


def spatial_convergence_study(scn: Scenario, level_mults, ref_mult: int,
                              N_time: int | None = None) -> RateTable:
    """max-over-steps energy-norm error against a fine nested reference.

    Runs the scenario on meshes refined by each multiplier in
    ``level_mults`` plus the reference refined by ``ref_mult`` (at least 4x
    the finest level, i.e. two doublings), all with the same time grid.
    Coarse solutions are prolonged to the reference mesh by P1
    interpolation (exact inclusion for nested crossed-diagonal meshes).
    """
    level_mults = [int(m) for m in level_mults]
    if len(level_mults) < 2:
        raise ValueError("need at least two refinement levels")
    for a, b in zip(level_mults, level_mults[1:]):
        if b <= a or b % a:
            raise ValueError(f"levels must refine by integer factors, got {a} -> {b}")
    if ref_mult < 4 * level_mults[-1] or ref_mult % level_mults[-1]:
        raise ValueError(
            f"reference multiplier {ref_mult} must be a >=4x multiple of the finest level "
            f"{level_mults[-1]} (two refinements)")
    ref = run_scenario(scn, N=N_time, mesh_mult=ref_mult)
    V_ref = ref.system.V_gram
    errors = []
    for m in level_mults:
        traj = run_scenario(scn, N=N_time, mesh_mult=m)
        dims = (scn.nx * m, scn.ny * m)
        worst = 0.0
        for k in range(traj.grid.N + 1):
            diff = prolong_p1(traj.u[k], dims, ref.system.mesh, scn.lx, scn.ly) - ref.u[k]
            worst = max(worst, norm_V(diff, V_ref))
        if worst <= 0.0:
            raise ValueError(
                f"degenerate spatial study: level x{m} reproduces the reference exactly "
                "(compare against a strictly finer reference)")
        errors.append(worst)
    return RateTable.from_errors("space_u_maxV", level_mults, errors)


# -- discrete Gronwall utility -------------------------------------------------


@dataclass
class GronwallVerdict:
    hypothesis_ok: bool
    failing_index: int | None
    bound_constant: float
    measured_ratio: float
    passed: bool
    message: str


def discrete_gronwall_check(e, g, tau: float, c: float) -> GronwallVerdict:
    """Verify the summed recurrence hypothesis and its uniform bound.

    Checks e_n <= c*g_n + tau*sum_{k<n} e_k for every n; when it holds,
    asserts max e <= C*max g with the sufficient explicit constant
    C = c*(1+tau)^N and reports the measured ratio.
    """
    e = np.asarray(e, dtype=float)
    g = np.asarray(g, dtype=float)
    if e.shape != g.shape or e.ndim != 1 or e.size == 0:
        raise ValueError("e and g must be equal-length 1D sequences")
    if np.any(e <= 0) or np.any(g <= 0) or tau <= 0 or c <= 0:
        raise ValueError("sequences, tau and c must be positive")
    run = 0.0
    for n in range(e.size):
        rhs = c * g[n] + tau * run
        if e[n] > rhs * (1.0 + 1e-9):
            return GronwallVerdict(
                hypothesis_ok=False, failing_index=n + 1,
                bound_constant=np.nan, measured_ratio=np.nan, passed=False,
                message=f"hypothesis fails at n={n + 1}: e_n={e[n]:.6g} > c*g_n + tau*sum = {rhs:.6g}")
        run += e[n]
    bound = c * (1.0 + tau) ** e.size
    ratio = float(e.max() / g.max())
    passed = ratio <= bound * (1.0 + 1e-12)
    return GronwallVerdict(
        hypothesis_ok=True, failing_index=None, bound_constant=bound,
        measured_ratio=ratio, passed=passed,
        message=f"max e / max g = {ratio:.6g} vs sufficient constant {bound:.6g}")


# -- energy diagnostics ---------------------------------------------------------


@dataclass
class EnergyReport:
    """Per-step energy bookkeeping of a trajectory.

    ``balance_residual[k]`` is (stored energy change) + dissipation - work
    over step k; the implicit scheme makes it nonpositive up to solver
    tolerances (its magnitude is the numerical dissipation).
    """

    kinetic: np.ndarray
    elastic: np.ndarray
    viscous_increment: np.ndarray
    friction_increment: np.ndarray
    work_increment: np.ndarray
    balance_residual: np.ndarray

    @property
    def stored(self) -> np.ndarray:
        return self.kinetic + self.elastic

    @property
    def initial_energy(self) -> float:
        return float(self.stored[0])

    def stored_nonincreasing(self, slack: float = 0.0) -> bool:
        s = self.stored
        return bool(np.all(np.diff(s) <= slack))

    def max_residual(self) -> float:
        return float(self.balance_residual[1:].max(initial=0.0))


def energy_diagnostics(traj: Trajectory, system: AssembledSystem,
                       loads: Callable[[float], np.ndarray] | None) -> EnergyReport:
    """Kinetic/elastic energies and per-step dissipation/work increments."""
    N = traj.grid.N
    tau = traj.grid.tau
    kin = np.zeros(N + 1)
    ela = np.zeros(N + 1)
    visc = np.zeros(N + 1)
    fric = np.zeros(N + 1)
    work = np.zeros(N + 1)
    resid = np.zeros(N + 1)
    for k in range(N + 1):
        kin[k] = 0.5 * float(traj.nu[k] @ (system.M @ traj.nu[k]))
        ela[k] = 0.5 * float(traj.u[k] @ (system.A_mat @ traj.u[k]))
    friction = traj.friction
    if friction is None:
        raise ValueError("trajectory carries no friction data")
    for k in range(1, N + 1):
        nu_k = traj.nu[k]
        visc[k] = tau * float(nu_k @ (system.B_mat @ nu_k))
        fric[k] = tau * eval_j(nu_k, nu_k, friction, system.contact)
        if loads is not None:
            f_k = average_load(loads, k, tau)
            work[k] = tau * float(f_k @ nu_k)
        resid[k] = (kin[k] + ela[k]) - (kin[k - 1] + ela[k - 1]) + visc[k] + fric[k] - work[k]
    return EnergyReport(kinetic=kin, elastic=ela, viscous_increment=visc,
                        friction_increment=fric, work_increment=work,
                        balance_residual=resid)


# -- hypothesis suite ------------------------------------------------------------


@dataclass
class HypothesisResult:
    name: str
    max_violation: float
    passed: bool


def hypothesis_suite(system: AssembledSystem, friction: FrictionData,
                     consts: ConstantsEstimate, n_samples: int = 1000,
                     seed: int = 0, slack: float = 1e-10) -> list:
    """Check the operator/functional inequalities on random samples.

    Runs the strong monotonicity and boundedness bounds of both operators
    (with the estimated constants), operator symmetry, the four-term and
    one-sided Lipschitz bounds of the contact functional, and its
    second-argument convexity.  Violations are measured relative to the
    magnitude of the compared quantities.  Note the first-argument
    Lipschitz bound only holds when the foundation velocity vanishes.
    """
    rng = np.random.default_rng(seed)
    f = system.dofmap.free
    ix = np.ix_(f, f)
    A = system.A_mat[ix].tocsr()
    B = system.B_mat[ix].tocsr()
    V = system.V_gram[ix].tocsc()
    V_solve = spla.factorized(V)
    n = f.size
    results = []

    def rel(viol, scale):
        return viol / np.maximum(scale, 1e-300)

    def record(name, violations):
        v = float(np.max(violations, initial=0.0))
        results.append(HypothesisResult(name=name, max_violation=v, passed=v <= slack))

    X = rng.standard_normal((n_samples, n))
    Y = rng.standard_normal((n_samples, n))

    def vnorm2(Z, mat):
        return np.maximum(np.einsum("ij,ij->i", (mat @ Z.T).T, Z), 0.0)

    # coercivity and boundedness of both operators against the energy norm
    for name, op, m_low, m_up in (("viscous", B, consts.M_B, consts.L_B),
                                  ("elastic", A, consts.M_A, consts.L_A)):
        D = X - Y
        quad = vnorm2(D, op)
        nrm2 = vnorm2(D, V)
        record(f"{name}_strong_monotonicity", rel(m_low * nrm2 - quad, np.abs(quad) + m_low * nrm2))
        opx = (op @ X.T).T
        dual2 = np.einsum("ij,ij->i", V_solve(opx.T).T, opx)
        nx2 = vnorm2(X, V)
        record(f"{name}_boundedness", rel(dual2 - m_up ** 2 * nx2, np.abs(dual2) + m_up ** 2 * nx2))
    # symmetry of the elastic operator
    ax = np.einsum("ij,ij->i", (A @ X.T).T, Y)
    ay = np.einsum("ij,ij->i", (A @ Y.T).T, X)
    record("elastic_symmetry", rel(np.abs(ax - ay), np.abs(ax) + np.abs(ay) + 1.0))

    # contact functional bounds, on full dof vectors
    def lift_rows(Z):
        out = np.zeros((Z.shape[0], system.dofmap.n_dofs))
        out[:, f] = Z
        return out

    G1, G2 = lift_rows(X), lift_rows(Y)
    V1 = lift_rows(rng.standard_normal((n_samples, n)))
    V2 = lift_rows(rng.standard_normal((n_samples, n)))
    c = system.contact
    j_g1v2 = eval_j_many(G1, V2, friction, c)
    j_g2v1 = eval_j_many(G2, V1, friction, c)
    j_g1v1 = eval_j_many(G1, V1, friction, c)
    j_g2v2 = eval_j_many(G2, V2, friction, c)
    dv = np.sqrt(vnorm2(V1[:, f] - V2[:, f], V))
    dg = np.sqrt(vnorm2(X - Y, V))
    lhs4 = j_g1v2 + j_g2v1 - j_g1v1 - j_g2v2
    rhs4 = consts.L_j * dg * dv
    record("friction_four_term_lipschitz", rel(lhs4 - rhs4, np.abs(lhs4) + rhs4 + 1.0))
    ng = np.sqrt(vnorm2(X, V))
    rhs7 = consts.C_j * ng * dv
    record("friction_second_arg_lipschitz", rel((j_g1v1 - j_g1v2) - rhs7,
                                                rhs7 + np.abs(j_g1v1) + 1.0))
    if float(np.linalg.norm(friction.v_star)) == 0.0:
        nh = np.sqrt(vnorm2(V1[:, f], V))
        jh1 = eval_j_many(G1, V1, friction, c)
        jh2 = eval_j_many(G2, V1, friction, c)
        rhs7b = consts.C_j * nh * dg
        record("friction_first_arg_lipschitz", rel((jh1 - jh2) - rhs7b, rhs7b + np.abs(jh1) + 1.0))
    lam = rng.uniform(0.0, 1.0, n_samples)
    Vmix = lam[:, None] * V1 + (1 - lam[:, None]) * V2
    j_mix = eval_j_many(G1, Vmix, friction, c)
    j_comb = lam * j_g1v1 + (1 - lam) * j_g1v2
    record("friction_convexity", rel(j_mix - j_comb, np.abs(j_comb) + 1.0))
    return results
