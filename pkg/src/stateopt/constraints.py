"""State constraints, their normal cones and minimal-norm subgradient selections.

Every constraint is encoded through an indicator function: the penalized cost
is the tracking functional on the feasible set and :data:`INFEASIBLE` (an
infinite value) everywhere else.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from .grid import Field, inner_product, norm

ACTIVE_RTOL = 1e-6


class InfeasibleError(ValueError):
    """A point handed to a routine that requires feasibility is infeasible."""


class _Infeasible:
    """The value ``+inf`` of an indicator function outside its set."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFEASIBLE"

    def __float__(self):
        return math.inf

    def __bool__(self):
        return False


INFEASIBLE = _Infeasible()


def _check_bounds(a, b, allow_vacuous=False):
    a, b = float(a), float(b)
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if not allow_vacuous and math.isinf(a) and math.isinf(b):
        raise ValueError("at most one bound may be infinite")
    return a, b


@dataclass(frozen=True)
class Box:
    """``a <= psi(x) <= b`` at every interior node."""

    a: float = -math.inf
    b: float = math.inf

    def __post_init__(self):
        # both bounds infinite is allowed here: the vacuous constraint
        _check_bounds(self.a, self.b, allow_vacuous=True)


@dataclass(frozen=True, eq=False)
class WeightedIntegral:
    """``a <= <w, psi> <= b``."""

    w: Field
    a: float = -math.inf
    b: float = math.inf

    def __post_init__(self):
        _check_bounds(self.a, self.b)


@dataclass(frozen=True, eq=False)
class TotalCoverage:
    """``a <= psi <= b`` on at least the fraction ``c`` of the zone ``Z``.

    ``zone`` is a boolean array over the interior nodes.
    """

    zone: np.ndarray
    a: float
    b: float
    c: float

    def __post_init__(self):
        _check_bounds(self.a, self.b)
        if not 0.0 < self.c < 1.0:
            raise ValueError(f"coverage fraction must lie in (0, 1), got {self.c}")
        zone = np.asarray(self.zone, dtype=bool)
        if not zone.any():
            raise ValueError("coverage zone is empty")
        object.__setattr__(self, "zone", zone)


def active_tolerance(con):
    a, b = con.a, con.b
    if math.isinf(a) or math.isinf(b):
        return ACTIVE_RTOL
    return ACTIVE_RTOL * (b - a)


@dataclass(frozen=True)
class ConeInterval:
    """A closed convex cone in R: ``{0}``, ``(-inf, 0]`` or ``[0, inf)``."""

    lo: float
    hi: float

    def __contains__(self, x):
        return self.lo <= x <= self.hi

    def project(self, x):
        return np.clip(x, self.lo, self.hi)


ZERO_CONE = ConeInterval(0.0, 0.0)
NONPOSITIVE = ConeInterval(-math.inf, 0.0)
NONNEGATIVE = ConeInterval(0.0, math.inf)
WHOLE_LINE = ConeInterval(-math.inf, math.inf)


def normal_cone_box(x, a, b, tol):
    """Normal cone of ``[a, b]`` at ``x``, with activity decided up to ``tol``."""
    if x < a - tol or x > b + tol:
        raise InfeasibleError(f"{x} lies outside [{a}, {b}]")
    lower = x <= a + tol
    upper = x >= b - tol
    if lower and upper:
        return WHOLE_LINE
    if lower:
        return NONPOSITIVE
    if upper:
        return NONNEGATIVE
    return ZERO_CONE


class Activity(enum.IntEnum):
    INACTIVE = 0
    LOWER = 1
    UPPER = 2


@dataclass(frozen=True)
class ActiveSet:
    tags: np.ndarray
    tol_active: float

    @classmethod
    def of(cls, values, a, b, tol):
        values = np.asarray(values, float)
        tags = np.full(values.shape, Activity.INACTIVE, dtype=np.int8)
        tags[values >= b - tol] = Activity.UPPER
        tags[values <= a + tol] = Activity.LOWER
        return cls(tags, tol)

    @property
    def lower(self):
        return self.tags == Activity.LOWER

    @property
    def upper(self):
        return self.tags == Activity.UPPER

    @property
    def any(self):
        return bool(np.any(self.tags != Activity.INACTIVE))


@dataclass(frozen=True)
class FeasibilityReport:
    """``max_overshoot`` is the largest distance outside ``[a, b]`` seen;
    ``violating_measure`` is the measure of violating nodes (box, coverage)."""

    feasible: bool
    max_overshoot: float = 0.0
    violating_measure: float = 0.0
    value: float = math.nan

    def __bool__(self):
        return self.feasible


def _overshoot(values, a, b):
    return np.maximum(a - values, 0.0) + np.maximum(values - b, 0.0)


def weighted_value(con, psi):
    return inner_product(con.w, psi)


def coverage(con, psi):
    """Fraction of the zone's measure where ``a <= psi <= b``."""
    wts = psi.grid.quad_weight[con.zone]
    vals = psi.values[con.zone]
    ok = (vals >= con.a) & (vals <= con.b)
    return float(wts[ok].sum() / wts.sum())


def is_feasible(con, psi):
    if isinstance(con, Box):
        over = _overshoot(psi.values, con.a, con.b)
        bad = over > 0
        return FeasibilityReport(
            not bad.any(),
            float(over.max(initial=0.0)),
            float(psi.grid.quad_weight[bad].sum()),
        )
    if isinstance(con, WeightedIntegral):
        val = weighted_value(con, psi)
        over = float(_overshoot(np.array(val), con.a, con.b))
        return FeasibilityReport(over == 0.0, over, 0.0, val)
    if isinstance(con, TotalCoverage):
        wts = psi.grid.quad_weight[con.zone]
        over = _overshoot(psi.values[con.zone], con.a, con.b)
        bad = over > 0
        zone_measure = wts.sum()
        covered = zone_measure - wts[bad].sum()
        ok = covered >= con.c * zone_measure * (1.0 - 1e-12)
        return FeasibilityReport(
            bool(ok), float(over.max(initial=0.0)), float(wts[bad].sum()), covered / zone_measure
        )
    raise TypeError(f"unknown constraint {con!r}")


def coverage_active(con, psi):
    """True when one more violating node in the zone would break feasibility."""
    wts = psi.grid.quad_weight[con.zone]
    vals = psi.values[con.zone]
    covered = wts[(vals >= con.a) & (vals <= con.b)].sum()
    return covered - wts.min() < con.c * wts.sum() * (1.0 - 1e-12)


def penalized_cost(con, psi, q, target, alpha):
    """Tracking cost on the feasible set, :data:`INFEASIBLE` off it."""
    if not is_feasible(con, psi):
        return INFEASIBLE
    return 0.5 * norm(psi - target) ** 2 + 0.5 * alpha * norm(q) ** 2


class SubgradientCache:
    """Adjoint solves that do not depend on the iterate, kept for one run.

    Holds ``E*(w)`` for weighted-integral constraints and ``E*(e_j)`` columns
    for box constraints.  ``solves`` counts the adjoint solves issued here.
    """

    def __init__(self):
        self.adjoint_weight = None
        self.columns = {}
        self.solves = 0

    def weight_adjoint(self, con, op):
        if self.adjoint_weight is None:
            self.adjoint_weight = op.solve_adjoint(con.w)
            self.solves += 1
        return self.adjoint_weight

    def column(self, j, op):
        col = self.columns.get(j)
        if col is None:
            e = np.zeros(op.grid.size)
            e[j] = 1.0
            col = op.solve_adjoint(Field(op.grid, e)).values
            self.solves += 1
            self.columns[j] = col
        return col


def _box_selection(con, psi, g, op, beta, cache):
    # rho = E*(eta) with eta supported on the active nodes, eta_j in N_[a,b](psi_j)
    act = ActiveSet.of(psi.values, con.a, con.b, active_tolerance(con))
    nodes = np.flatnonzero(act.tags)
    if nodes.size == 0:
        return psi.grid.field()
    M = np.column_stack([cache.column(j, op) for j in nodes])
    lo = np.where(act.upper[nodes], 0.0, -np.inf)
    hi = np.where(act.lower[nodes], 0.0, np.inf)
    sw = np.sqrt(psi.grid.quad_weight)
    lhs = sw[:, None] * M
    rhs = -sw * g.values
    if beta > 0:
        lhs = np.vstack([lhs, np.sqrt(beta) * np.diag(sw[nodes])])
        rhs = np.concatenate([rhs, np.zeros(nodes.size)])
    # bvls needs a bound per variable but tolerates infinite ones
    sol = lsq_linear(lhs, rhs, bounds=(lo, hi), method="bvls", tol=1e-15)
    eta = np.clip(sol.x, lo, hi)
    return Field(psi.grid, M @ eta)


def _clamped_scalar(cone, x):
    return float(cone.project(x))


def _wi_selection(con, psi, g, op, beta, cache, feas_tol=0.0):
    val = weighted_value(con, psi)
    cone = normal_cone_box(val, con.a, con.b, max(active_tolerance(con), feas_tol))
    if cone == ZERO_CONE:
        return psi.grid.field()
    m = cache.weight_adjoint(con, op)
    r = _clamped_scalar(cone, -inner_product(m, g) / (norm(m) ** 2 + beta))
    return r * m


def _coverage_selection(con, psi, g, op, beta, cache):
    if not coverage_active(con, psi):
        return psi.grid.field()
    vals = psi.values
    outside = (vals < con.a) | (vals > con.b)
    m = op.solve_adjoint(Field(psi.grid, (outside & con.zone).astype(float))).values
    cache.solves += 1
    tol = active_tolerance(con)
    inband = con.zone & ~outside
    upper = inband & (vals >= con.b - tol)
    lower = inband & (vals <= con.a + tol) & ~upper
    s = np.zeros_like(vals)
    denom = m**2 + beta
    raw = np.divide(-g.values * m, denom, out=np.zeros_like(m), where=denom > 0)
    s[upper] = np.maximum(raw[upper], 0.0)
    s[lower] = np.minimum(raw[lower], 0.0)
    return Field(psi.grid, s * m)


def min_norm_subgradient(con, psi, g, op, beta=1e-8, cache=None):
    """Element ``rho`` of the constraint's subgradient set minimizing
    ``0.5*||rho + g||^2 + 0.5*beta*||multiplier||^2``.

    ``g`` is the smooth gradient ``E*(psi - target) + alpha*q``.  For box and
    weighted-integral constraints ``rho = E*(eta)`` with ``eta`` in the normal
    cone of the state (resp. of ``<w, psi>``), and ``beta`` penalizes ``eta``.
    For total coverage the selection is nodewise, ``rho_i = s_i * m_i`` with
    ``m = E*(1_violating)``, and only runs while the coverage constraint is
    active.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return select_subgradient(con, psi, g, op, beta, cache)


def select_subgradient(con, psi, g, op, beta, cache=None, feas_tol=0.0):
    """As :func:`min_norm_subgradient` but also accepts ``beta == 0`` and
    states overshooting a bound by at most ``feas_tol``."""
    report = is_feasible(con, psi)
    if not report and report.max_overshoot > feas_tol:
        raise InfeasibleError("subgradient requested at an infeasible state")
    if cache is None:
        cache = SubgradientCache()
    if isinstance(con, Box):
        return _box_selection(con, psi, g, op, beta, cache)
    if isinstance(con, WeightedIntegral):
        return _wi_selection(con, psi, g, op, beta, cache, feas_tol)
    if isinstance(con, TotalCoverage):
        return _coverage_selection(con, psi, g, op, beta, cache)
    raise TypeError(f"unknown constraint {con!r}")
