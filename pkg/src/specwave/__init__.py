"""specwave: spectral-element time-domain solver for coupled acoustic-elastic
ultrasound propagation on hexahedral meshes."""

from .gll_basis import GllRule, LagrangeTable, derivative_matrix, gll_rule, lagrange_eval

__version__ = "0.1.0"

__all__ = [
    "GllRule",
    "LagrangeTable",
    "gll_rule",
    "lagrange_eval",
    "derivative_matrix",
    "__version__",
]
