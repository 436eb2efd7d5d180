"""Shape functionals of convex integral energies and their shape derivatives.

The package computes J(Omega) = -inf over admissible u of the integral of
f(grad u) + g(u), together with first and second derivatives of J along
deformations of the domain, on quadratic (P2) triangular finite elements.

The usual entry points: build a mesh (``generate_disk`` and friends), pick an
integrand pair (``make_torsion``, ``make_p_torsion``, ``make_anisotropic``),
solve the state problem (``solve_state``), then evaluate derivative routes
directly or through ``full_report`` / ``fd_sweep``.
"""

from .config import (
    RunConfig,
    build_field,
    build_mesh,
    build_pair,
    load_config,
    parse_config,
    save_config,
    serialize_config,
)
from .errors import (
    ConfigError,
    ConjugateUnavailable,
    InvertedElement,
    NonNormalDeformation,
    ShapehessError,
    SolverBreakdown,
    SupportViolation,
    UnsupportedCombination,
    WrongPair,
)
from .integrands import ConvexPair, make_anisotropic, make_p_torsion, make_torsion
from .mesh import (
    DeformationField,
    Mesh2D,
    analytic_field,
    deform,
    dilation_field,
    generate_annulus,
    generate_disk,
    generate_ellipse,
    generate_rectangle,
    normal_field,
    polynomial_field,
    radial_bump_field,
    read_mesh_text,
    tangential_spin_field,
    translation_field,
    write_mesh_text,
)
from .shape_calculus import (
    DerivativeReport,
    check_divA,
    check_divB,
    field_B,
    field_C,
    first_derivative_boundary,
    first_derivative_volume,
    l2_form,
    second_derivative_boundary,
    second_derivative_ptorsion,
    second_derivative_torsion,
    second_derivative_volume,
    tensor_A,
)
from .solver import (
    NewtonReport,
    OptimalityReport,
    StateSolution,
    optimality_diagnostics,
    solve_state,
)
from .validation import FdSweep, ReportOptions, fd_sweep, full_report, gamma_limit_check

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConjugateUnavailable",
    "ConvexPair",
    "DeformationField",
    "DerivativeReport",
    "FdSweep",
    "InvertedElement",
    "Mesh2D",
    "NewtonReport",
    "NonNormalDeformation",
    "OptimalityReport",
    "ReportOptions",
    "RunConfig",
    "ShapehessError",
    "SolverBreakdown",
    "StateSolution",
    "SupportViolation",
    "UnsupportedCombination",
    "WrongPair",
    "analytic_field",
    "build_field",
    "build_mesh",
    "build_pair",
    "check_divA",
    "check_divB",
    "deform",
    "dilation_field",
    "fd_sweep",
    "field_B",
    "field_C",
    "first_derivative_boundary",
    "first_derivative_volume",
    "full_report",
    "gamma_limit_check",
    "generate_annulus",
    "generate_disk",
    "generate_ellipse",
    "generate_rectangle",
    "l2_form",
    "load_config",
    "make_anisotropic",
    "make_p_torsion",
    "make_torsion",
    "normal_field",
    "optimality_diagnostics",
    "parse_config",
    "polynomial_field",
    "radial_bump_field",
    "read_mesh_text",
    "save_config",
    "second_derivative_boundary",
    "second_derivative_ptorsion",
    "second_derivative_torsion",
    "second_derivative_volume",
    "serialize_config",
    "solve_state",
    "tangential_spin_field",
    "tensor_A",
    "translation_field",
    "write_mesh_text",
]
