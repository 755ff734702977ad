"""Finite element building blocks: shape functions, spaces, assembly, norms."""
from .assembly import (
    QuadratureWarning,
    assemble_local,
    assemble_matrix,
    assemble_vector,
    advection_matrix,
    coupling_matrix,
    load_vector,
    local_advection,
    local_mass,
    local_stiffness,
    mass_matrix,
    stiffness_matrix,
)
from .basis import lagrange_basis, reference_nodes
from .constraints import ConstraintError, ConstraintSet, apply_constraints, apply_dirichlet
from .norms import integrate, l2_qp, norm
from .quadrature import QuadRule, gauss_rule, gauss_rule_1d
from .space import (
    Field,
    Geometry,
    Space,
    evaluate_at,
    evaluate_on_facets,
    facet_quadrature,
    geometry,
    interpolate,
    locate,
    transfer,
)

__all__ = [
    "ConstraintError",
    "ConstraintSet",
    "Field",
    "Geometry",
    "QuadRule",
    "QuadratureWarning",
    "Space",
    "advection_matrix",
    "apply_constraints",
    "apply_dirichlet",
    "assemble_local",
    "assemble_matrix",
    "assemble_vector",
    "coupling_matrix",
    "evaluate_at",
    "evaluate_on_facets",
    "facet_quadrature",
    "gauss_rule",
    "gauss_rule_1d",
    "geometry",
    "integrate",
    "interpolate",
    "l2_qp",
    "lagrange_basis",
    "load_vector",
    "local_advection",
    "local_mass",
    "local_stiffness",
    "locate",
    "mass_matrix",
    "norm",
    "reference_nodes",
    "stiffness_matrix",
    "transfer",
]
