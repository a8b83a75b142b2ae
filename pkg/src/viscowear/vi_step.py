"""Per-time-step elliptic QVI solves via two nested contraction fixed points.

Each time step requires a velocity nu solving

    <M nu/tau + B nu + tau A nu - F, v - nu> + j(nu, v) - j(nu, nu) >= 0

for all admissible v.  The solve nests two contractive loops: the outer one
freezes the trial operator argument h of A, the inner one freezes the first
argument g of j; with both frozen the problem is a convex minimization,
solved here by damped Newton on a smoothed energy with a halving
continuation of the smoothing width.  Ratio bounds for both loops follow
from the coercivity/Lipschitz constants: the g-loop contracts like
L_j/M_B, the h-loop like tau*L_A/(M_B - L_j).

Identical inputs and tolerances produce bit-identical outputs; everything
here is sequential and allocation order is fixed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import AssembledSystem
from .friction import (
    ContactData,
    FrictionData,
    eval_j,
    frozen_hessian,
    frozen_value_grad,
    frozen_weights,
)

__all__ = [
    "ConvergenceError",
    "SolverOptions",
    "SolverReport",
    "StepProblem",
    "NonlinearViscous",
    "contraction_bounds",
    "solve_inner_vi",
    "fixed_point_g",
    "fixed_point_h",
    "vi_residual",
]


class ConvergenceError(RuntimeError):
    """Raised when an iteration cap is exceeded; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolverOptions:
    """Tolerances and caps of the nested step solver.

    Loop tolerances scale with the right side: tol = tol_rel*(1 + |F|),
    and likewise for the inner Newton tolerance.  ``eps_reg_final`` is the
    last smoothing width of the continuation; None picks
    1e-8*max(1, |v_star|).
    """

    tol_rel: float = 1e-9
    newton_tol_rel: float = 1e-11
    max_outer: int = 200
    max_newton: int = 200
    eps_reg_final: float | None = None
    armijo: float = 1e-4
    max_backtrack: int = 60


@dataclass
class NonlinearViscous:
    """Hook for a user-supplied nonlinear viscous operator.

    ``energy`` must be the potential whose gradient is ``apply``;
    ``hessian`` returns the (sparse, free-dof) derivative at the given
    point.  The operator must be Lipschitz and strongly monotone for the
    nested contraction arguments to apply.  Only the linear path is
    covered by the default test suite.
    """

    energy: Callable[[np.ndarray], float]
    apply: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], sp.spmatrix]


@dataclass
class ContractionBounds:
    """Theoretical ratio bounds of the two fixed-point loops."""

    g_bound: float
    h_bound: float

    @property
    def contractive(self) -> bool:
        return self.g_bound < 1.0 and self.h_bound < 1.0


def contraction_bounds(M_B: float, L_j: float, L_A: float, tau: float) -> ContractionBounds:
    """Evaluate the loop contraction factors L_j/M_B and tau*L_A/(M_B - L_j)."""
    g_bound = L_j / M_B if M_B > 0 else np.inf
    h_bound = tau * L_A / (M_B - L_j) if M_B > L_j else np.inf
    return ContractionBounds(g_bound=g_bound, h_bound=h_bound)


@dataclass
class SolverReport:
    """Iteration counts, residuals and measured contraction ratios of one step."""

    h_iterations: int = 0
    g_iterations: int = 0
    inner_iterations: int = 0
    g_ratios: list = field(default_factory=list)
    h_ratios: list = field(default_factory=list)
    final_g_diff: float = np.nan
    final_h_diff: float = np.nan
    tol_g: float = np.nan
    tol_h: float = np.nan
    composed_tol: float = np.nan
    converged: bool = False
    message: str = ""


@dataclass
class StepProblem:
    """One per-step problem, restricted to the free dofs.

    ``F_tau`` is the step right side  f_k + M v_prev/tau - A u_prev.  The
    matrices are the free-dof restrictions; ``B`` may instead be a
    NonlinearViscous hook.  ``consts`` optionally carries a constants
    estimate used for contraction precondition warnings.
    """

    tau: float
    F_tau: np.ndarray
    M: sp.csr_matrix
    B: object
    A: sp.csr_matrix
    V: sp.csr_matrix
    friction: FrictionData
    contact: ContactData
    free: np.ndarray
    n_dofs: int
    v_prev: np.ndarray
    options: SolverOptions = field(default_factory=SolverOptions)
    consts: object = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"time step must be > 0, got {self.tau}")
        self.F_tau = np.asarray(self.F_tau, dtype=float)
        self.v_prev = np.asarray(self.v_prev, dtype=float)
        self.scale = 1.0 + float(np.linalg.norm(self.F_tau))
        self._linear_B = sp.issparse(self.B)
        if self._linear_B:
            self.Q = (self.M / self.tau + self.B).tocsc()
            self._q_solve = spla.factorized(self.Q)
        else:
            self.Q = None
            self._q_solve = None
        if self.contact.n_edges:
            beta_q, mu_q = self.friction.coeffs(self.contact)
            self.beta_q, self.mu_q = beta_q, mu_q
            self.j_inactive = float(beta_q.max()) == 0.0
        else:
            self.beta_q = self.mu_q = None
            self.j_inactive = True

    @classmethod
    def from_state(cls, system: AssembledSystem, friction: FrictionData, tau: float,
                   f_k: np.ndarray, u_prev: np.ndarray, v_prev: np.ndarray,
                   options: SolverOptions | None = None, consts=None,
                   cache: dict | None = None) -> "StepProblem":
        """Build the step problem from the previous state (free-dof vectors).

        ``cache`` may hold the free-dof matrix restrictions from a previous
        step on the same system; it is filled on first use.
        """
        if cache is None:
            cache = {}
        if "M" not in cache:
            cache["M"] = system.restrict(system.M)
            cache["A"] = system.restrict(system.A_mat)
            cache["B"] = system.restrict(system.B_mat)
            cache["V"] = system.restrict(system.V_gram)
        M, A = cache["M"], cache["A"]
        F_tau = np.asarray(f_k) + M @ v_prev / tau - A @ u_prev
        prob = cls(
            tau=tau, F_tau=F_tau, M=M, B=cache["B"], A=A, V=cache["V"],
            friction=friction, contact=system.contact,
            free=system.dofmap.free, n_dofs=system.dofmap.n_dofs,
            v_prev=np.asarray(v_prev), options=options or SolverOptions(),
            consts=consts,
        )
        if "Q" in cache:
            prob.Q, prob._q_solve = cache["Q"], cache["q_solve"]
        else:
            cache["Q"], cache["q_solve"] = prob.Q, prob._q_solve
        return prob

    # -- small helpers -----------------------------------------------------
    def lift(self, x_free: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_dofs)
        full[self.free] = x_free
        return full

    def norm_V(self, x_free: np.ndarray) -> float:
        return float(np.sqrt(max(x_free @ (self.V @ x_free), 0.0)))

    def tol_loops(self) -> float:
        return self.options.tol_rel * self.scale

    def tol_newton(self) -> float:
        return self.options.newton_tol_rel * self.scale

    def eps_final(self) -> float:
        if self.options.eps_reg_final is not None:
            return self.options.eps_reg_final
        return 1e-8 * max(1.0, float(np.linalg.norm(self.friction.v_star)))

    def _b_energy(self, u):
        return 0.5 * float(u @ (self.B @ u)) if self._linear_B else self.B.energy(u)

    def _b_apply(self, u):
        return self.B @ u if self._linear_B else self.B.apply(u)

    def _b_hessian(self, u):
        return self.B if self._linear_B else self.B.hessian(u)


def solve_inner_vi(g: np.ndarray, h: np.ndarray, prob: StepProblem,
                   tol: float | None = None) -> tuple:
    """Solve the doubly frozen inner problem; returns (u, newton_iterations).

    Minimizes E(u) = u'Mu/(2 tau) + B-energy(u) + j_reg(g, u) - (F - tau*A*h)'u
    over the free dofs to gradient norm <= tol, using damped Newton with a
    halving continuation of the smoothing width.  ``g`` is a full dof
    vector (it only enters through its frozen contact trace weight); ``h``
    is a free-dof vector.
    """
    tol = prob.tol_newton() if tol is None else float(tol)
    rhs = prob.F_tau - prob.tau * (prob.A @ np.asarray(h))

    if prob.j_inactive or prob.contact.n_edges == 0:
        omega = None
    else:
        omega = frozen_weights(np.asarray(g), prob.friction, prob.contact)
        if float(np.abs(omega).max()) == 0.0:
            omega = None

    if omega is None and prob._linear_B:
        if not np.any(rhs):
            return np.zeros_like(rhs), 0
        return prob._q_solve(rhs), 0

    m_over_tau = prob.M / prob.tau
    v_star = prob.friction.v_star
    free = prob.free

    def stage_solve(u, eps, iters):
        for _ in range(prob.options.max_newton):
            if omega is not None:
                jv, jg_full = frozen_value_grad(omega, prob.mu_q, prob.contact,
                                                prob.lift(u), v_star, eps)
                jg = jg_full[free]
            else:
                jv, jg = 0.0, 0.0
            grad = m_over_tau @ u + prob._b_apply(u) - rhs + jg
            gnorm = float(np.linalg.norm(grad))
            if gnorm <= tol:
                return u, iters
            H = m_over_tau + prob._b_hessian(u)
            if omega is not None and eps > 0:
                Hj = frozen_hessian(omega, prob.mu_q, prob.contact,
                                    prob.lift(u), v_star, eps)
                H = H + Hj[np.ix_(free, free)]
            d = spla.spsolve(H.tocsc(), -grad)
            slope = float(grad @ d)

            def energy(x):
                val = 0.5 * float(x @ (m_over_tau @ x)) + prob._b_energy(x) - float(rhs @ x)
                if omega is not None:
                    val += frozen_value_grad(omega, prob.mu_q, prob.contact,
                                             prob.lift(x), v_star, eps)[0]
                return val

            e0 = energy(u)
            # Below the float resolution of the energy the Armijo test is
            # meaningless noise; the full Newton step is safe there.
            if -slope <= 1e-12 * max(abs(e0), 1.0):
                u = u + d
            else:
                step = 1.0
                for _ in range(prob.options.max_backtrack):
                    trial = u + step * d
                    if energy(trial) <= e0 + prob.options.armijo * step * slope:
                        u = trial
                        break
                    step *= 0.5
                else:
                    raise ConvergenceError("inner line search failed to find descent")
            iters += 1
        raise ConvergenceError(
            f"inner Newton did not reach tol {tol:.3e} in {prob.options.max_newton} iterations")

    u = prob.v_prev.copy()
    iters = 0
    eps_final = prob.eps_final()
    if omega is None:
        u, iters = stage_solve(u, 0.0, iters)
        return u, iters
    eps = max(prob.friction.eps_reg, eps_final)
    u, iters = stage_solve(u, eps, iters)
    while eps > eps_final:
        eps = max(0.5 * eps, eps_final)
        u, iters = stage_solve(u, eps, iters)
    return u, iters


@dataclass
class GLoopResult:
    u: np.ndarray
    iterations: int
    inner_iterations: int
    ratios: list
    final_diff: float


def fixed_point_g(h: np.ndarray, prob: StepProblem, tol_g: float | None = None) -> GLoopResult:
    """Contract over the frozen first argument of j: iterate g <- u_{g,h}.

    Starts from the previous step's velocity; successive-difference ratios
    are recorded while the differences sit safely above the tolerance, and
    are expected below L_j/M_B (plus slack) when the constants hold.
    """
    tol_g = prob.tol_loops() if tol_g is None else float(tol_g)
    if prob.consts is not None and not (prob.consts.M_B > prob.consts.L_j):
        warnings.warn(
            f"estimated constants violate M_B > L_j "
            f"(M_B={prob.consts.M_B:.3e}, L_j={prob.consts.L_j:.3e}); "
            "the frozen-argument loop may not contract", stacklevel=2)
    g = prob.v_prev.copy()
    inner_total = 0
    diffs = []
    ratio_floor = 10.0 * tol_g
    for m in range(1, prob.options.max_outer + 1):
        u, n_inner = solve_inner_vi(prob.lift(g), h, prob, tol=None)
        inner_total += n_inner
        diff = prob.norm_V(u - g)
        diffs.append(diff)
        if prob.j_inactive or diff <= tol_g:
            ratios = _diff_ratios(diffs, ratio_floor)
            return GLoopResult(u=u, iterations=m, inner_iterations=inner_total,
                               ratios=ratios, final_diff=diff)
        g = u
    raise ConvergenceError(
        f"frozen-argument loop did not contract below {tol_g:.3e} in "
        f"{prob.options.max_outer} iterations; last ratios {_diff_ratios(diffs, 0.0)[-5:]}")


def _diff_ratios(diffs: list, floor: float) -> list:
    ratios = []
    for prev, cur in zip(diffs, diffs[1:]):
        if prev > max(floor, 0.0) and prev > 0:
            ratios.append(cur / prev)
    return ratios


def fixed_point_h(prob: StepProblem, tol_h: float | None = None) -> tuple:
    """Contract over the frozen trial argument of A; returns (nu, report).

    Iterates h <- u_h (each u_h from fixed_point_g) from the previous
    velocity until the fixed-point residual drops below tol_h.  When a
    constants estimate is attached and tau*L_A/(M_B - L_j) >= 1 a warning
    is emitted but the iteration still runs (it may contract anyway).
    """
    tol_h = prob.tol_loops() if tol_h is None else float(tol_h)
    report = SolverReport(tol_g=prob.tol_loops(), tol_h=tol_h)
    if prob.consts is not None:
        b = contraction_bounds(prob.consts.M_B, prob.consts.L_j,
                               prob.consts.L_A, prob.tau)
        if not b.h_bound < 1.0:
            warnings.warn(
                f"step contraction bound tau*L_A/(M_B - L_j) = {b.h_bound:.3g} >= 1; "
                "the step map is not certified contractive (it may still converge)",
                stacklevel=2)
    h = prob.v_prev.copy()
    diffs = []
    ratio_floor = 10.0 * tol_h
    for m in range(1, prob.options.max_outer + 1):
        try:
            res = fixed_point_g(h, prob)
        except ConvergenceError as err:
            report.h_iterations = m
            report.h_ratios = _diff_ratios(diffs, ratio_floor)
            raise ConvergenceError(str(err), report=report) from err
        report.g_iterations += res.iterations
        report.inner_iterations += res.inner_iterations
        report.g_ratios.extend(res.ratios)
        report.final_g_diff = res.final_diff
        diff = prob.norm_V(res.u - h)
        diffs.append(diff)
        report.h_iterations = m
        if diff <= tol_h:
            report.h_ratios = _diff_ratios(diffs, ratio_floor)
            report.final_h_diff = diff
            report.converged = True
            report.composed_tol = _composed_tol(prob, res.u)
            return res.u, report
        h = res.u
    report.h_ratios = _diff_ratios(diffs, ratio_floor)
    report.final_h_diff = diffs[-1]
    raise ConvergenceError(
        f"step fixed point did not contract below {tol_h:.3e} in "
        f"{prob.options.max_outer} iterations", report=report)


def _composed_tol(prob: StepProblem, u: np.ndarray) -> float:
    """Conservative residual budget of the returned step solution."""
    tol = 2.0 * prob.tol_loops() + 10.0 * prob.tol_newton()
    if not prob.j_inactive and prob.contact.n_edges:
        # Smoothing gap of the final width: at most sum omega*mu*eps.
        omega = frozen_weights(prob.lift(u), prob.friction, prob.contact)
        tol += float(np.sum(omega * prob.mu_q)) * prob.eps_final()
    return tol


def vi_residual(prob: StepProblem, u: np.ndarray, n_dirs: int = 200,
                rng: np.random.Generator | None = None,
                normalized: bool = True, frozen_g: np.ndarray | None = None) -> float:
    """Largest violation of the step inequality at u over random directions.

    Tests v = u + d for random Gauss directions d of unit energy norm with
    the exact nonsmooth functional (first argument u itself, or the full
    dof vector ``frozen_g`` when given); returns max(0, -LHS), divided by
    (1 + |v|_V) when ``normalized``.  Solver-independent certificate.
    """
    from .friction import eval_j_many

    rng = np.random.default_rng(0) if rng is None else rng
    n = u.size
    smooth = prob.M @ u / prob.tau + prob._b_apply(u) + prob.tau * (prob.A @ u) - prob.F_tau
    D = rng.standard_normal((n_dirs, n))
    nrm = np.sqrt(np.maximum(np.einsum("ij,ij->i", (prob.V @ D.T).T, D), 1e-300))
    D /= nrm[:, None]
    V_rows = np.tile(prob.lift(u), (n_dirs, 1))
    V_rows[:, prob.free] += D
    g_full = prob.lift(u) if frozen_g is None else np.asarray(frozen_g)
    j_uu = eval_j(g_full, prob.lift(u), prob.friction, prob.contact)
    j_v = eval_j_many(g_full[None, :], V_rows, prob.friction, prob.contact)
    lhs = D @ smooth + (j_v - j_uu)
    viol = np.maximum(0.0, -lhs)
    if normalized:
        X = u[None, :] + D
        nv = np.sqrt(np.maximum(np.einsum("ij,ij->i", (prob.V @ X.T).T, X), 0.0))
        viol = viol / (1.0 + nv)
    return float(viol.max()) if n_dirs else 0.0
