"""HDG solver for Stokes flow with strongly enforced stress symmetry.

The mixed unknown is the scaled Voigt strain, so the symmetry of the stress
tensor is built into the storage rather than imposed weakly.  Static
condensation reduces everything to face traces of the velocity plus one
boundary-pressure mean per element, and an element-local postprocessing step
lifts the velocity one degree with superconvergent accuracy.
"""

from .analysis import (
    DEFAULT_TAU,
    ManufacturedSolution,
    compute_errors,
    convergence_study,
    exp_flow_3d,
    expected_trace_dofs,
    fit_rate,
    identity_residual_sweep,
    interpolate,
    l2_error,
    polynomial_solution,
    resolve_problem,
    tau_sweep,
    wang_flow,
)
from .global_solver import (
    SolutionFields,
    TraceSystem,
    assemble_global,
    build_dof_map,
    enforce_pure_dirichlet,
    reconstruct_all,
    solve_stokes,
    solve_trace_system,
)
from .local_solver import (
    FactorizationError,
    assemble_local,
    condense,
    element_context,
    reconstruct,
)
from .mesh import (
    DIRICHLET,
    NEUMANN,
    Face,
    Mesh,
    classify_boundary,
    generate_cartesian_mesh,
)
from .postprocess import PostprocessedField, postprocess_all, postprocess_element
from .ref_element import (
    GeometryError,
    QuadratureRule,
    ReferenceElement,
    build_quadrature,
    build_reference_element,
    map_physical,
)
from .voigt import VoigtOps, gauss_residual, stokes_residual

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_TAU",
    "DIRICHLET",
    "NEUMANN",
    "Face",
    "FactorizationError",
    "GeometryError",
    "ManufacturedSolution",
    "Mesh",
    "PostprocessedField",
    "QuadratureRule",
    "ReferenceElement",
    "SolutionFields",
    "TraceSystem",
    "VoigtOps",
    "assemble_global",
    "assemble_local",
    "build_dof_map",
    "build_quadrature",
    "build_reference_element",
    "classify_boundary",
    "compute_errors",
    "condense",
    "convergence_study",
    "element_context",
    "enforce_pure_dirichlet",
    "exp_flow_3d",
    "expected_trace_dofs",
    "fit_rate",
    "gauss_residual",
    "generate_cartesian_mesh",
    "identity_residual_sweep",
    "interpolate",
    "l2_error",
    "map_physical",
    "polynomial_solution",
    "postprocess_all",
    "postprocess_element",
    "reconstruct",
    "reconstruct_all",
    "resolve_problem",
    "solve_stokes",
    "solve_trace_system",
    "stokes_residual",
    "tau_sweep",
    "wang_flow",
]
