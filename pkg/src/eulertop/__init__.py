"""Deformed Euler tops that keep their first integrals.

Build a deformed vector field from deformation functions, integrate it, and
check that the deformed first integrals are conserved.

>>> from eulertop import builtin, synthesize
>>> spec, closed = builtin("cube_root_deform", coupling=1.0)
>>> v = synthesize(spec)
>>> v((1.0, 1.0, 1.0))
array([0., 0., 0.])
"""

from .expr import parse, to_text, differentiate, simplify, evaluate, compile_expressions
from .field import (
    BUILTINS, DeformationSpec, VectorField, build_deformed_3d, build_deformed_nd, builtin,
    closed_form_field, equilibria_scan, normalize_rigid_body, rigid_body_field, synthesize,
)
from .integrate import (
    IntegratorConfig, Trajectory, integrate, integrate_reparametrized, project_onto_invariants,
)
from .diagnose import InvariantReport, drift_report, field_identity_suite, independence_check
from .oracle import reduce, reference_solution

__version__ = "0.1.0"

__all__ = [
    "parse", "to_text", "differentiate", "simplify", "evaluate", "compile_expressions",
    "BUILTINS", "DeformationSpec", "VectorField", "build_deformed_3d", "build_deformed_nd",
    "builtin", "closed_form_field", "equilibria_scan", "normalize_rigid_body",
    "rigid_body_field", "synthesize", "IntegratorConfig", "Trajectory", "integrate",
    "integrate_reparametrized", "project_onto_invariants", "InvariantReport", "drift_report",
    "field_identity_suite", "independence_check", "reduce", "reference_solution",
]
