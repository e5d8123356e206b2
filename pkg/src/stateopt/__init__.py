"""Optimal control of the Poisson equation under state constraints.

The constraints enter the cost as infinite-valued indicator penalties and
are handled by minimal-norm Clarke-subgradient descent.
"""

from .constraints import (
    INFEASIBLE,
    Box,
    InfeasibleError,
    TotalCoverage,
    WeightedIntegral,
    coverage,
    is_feasible,
    min_norm_subgradient,
    normal_cone_box,
    penalized_cost,
    weighted_value,
)
from .grid import DomainSpec, Field, Grid, Shape, build_grid, inner_product, norm
from .optimizer import (
    DescentParams,
    DescentTrace,
    NoFeasibleStart,
    Status,
    armijo_search,
    descend,
    find_feasible_start,
    kkt_residual,
    smooth_gradient,
)
from .pde import DiscreteOperator, SolverFailure, build_target

__all__ = [
    "INFEASIBLE",
    "Box",
    "DescentParams",
    "DescentTrace",
    "DiscreteOperator",
    "DomainSpec",
    "Field",
    "Grid",
    "InfeasibleError",
    "NoFeasibleStart",
    "Shape",
    "SolverFailure",
    "Status",
    "TotalCoverage",
    "WeightedIntegral",
    "armijo_search",
    "build_grid",
    "build_target",
    "coverage",
    "descend",
    "find_feasible_start",
    "inner_product",
    "is_feasible",
    "kkt_residual",
    "min_norm_subgradient",
    "norm",
    "normal_cone_box",
    "penalized_cost",
    "smooth_gradient",
    "weighted_value",
]
