"""Dynamic viscoelastic frictional contact with wear.

A 2D P1 finite-element solver for a Kelvin-Voigt body in sliding contact
with a moving foundation, where the contact functional couples Coulomb
friction with a wear weight built from the normal velocity trace.  Time
stepping is the implicit velocity scheme whose per-step problems are
solved by two nested contraction fixed points around a regularized convex
minimization; an analysis layer estimates the governing constants, checks
the solvability conditions and measures convergence orders.
"""

from .mesh import BoundaryTag, TriMesh, build_rect_mesh, validate_mesh, write_vtk
from .fem import (
    AssembledSystem,
    DofMap,
    MaterialParams,
    assemble_elastic,
    assemble_load,
    assemble_mass,
    assemble_strain_gram,
    assemble_system,
    assemble_viscous,
    average_load,
    build_dofmap,
    norm_H,
    norm_V,
)
from .friction import (
    ContactData,
    ContactTrace,
    FrictionData,
    build_contact_data,
    eval_j,
    eval_j_many,
    eval_j_reg,
    trace_decompose,
    wear_field,
)
from .vi_step import (
    ContractionBounds,
    ConvergenceError,
    NonlinearViscous,
    SolverOptions,
    SolverReport,
    StepProblem,
    contraction_bounds,
    fixed_point_g,
    fixed_point_h,
    solve_inner_vi,
    vi_residual,
)
from .timestepper import (
    ConstantField,
    SmoothBumpField,
    TimeGrid,
    Trajectory,
    ZeroField,
    interp_affine,
    interp_constant,
    nodal_interpolate,
    project_field,
    run_fully_discrete,
    run_semi_discrete,
    write_trajectory_csv,
    write_vtk_series,
    write_wear_csv,
)
from .analysis import (
    ConditionCheck,
    ConditionReport,
    ConstantsEstimate,
    RateTable,
    Scenario,
    TimeStudyResult,
    brute_force_step_oracle,
    cauchy_convergence_study,
    check_conditions,
    discrete_gronwall_check,
    energy_diagnostics,
    estimate_constants,
    hypothesis_suite,
    run_scenario,
    spatial_convergence_study,
)

__version__ = "0.1.0"
