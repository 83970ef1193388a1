"""Neighbour-count dependent thinning of Poisson point processes."""

from .analytic import Model, g_curve, g_exact, intensity_homogeneous
from .geometry import Window, omega
from .rules import (
    ClusterFavouring,
    Constant,
    CountFavouring,
    Geometric,
    Logistic,
    MaternI,
    Parity,
    RetentionRule,
    Table,
    rule_from_dict,
)

__all__ = [
    "ClusterFavouring",
    "Constant",
    "CountFavouring",
    "Geometric",
    "Logistic",
    "MaternI",
    "Model",
    "Parity",
    "RetentionRule",
    "Table",
    "Window",
    "g_curve",
    "g_exact",
    "intensity_homogeneous",
    "omega",
    "rule_from_dict",
]
__version__ = "0.1.0"
