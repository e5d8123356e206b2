"""Subgradient descent under infinite-valued (exact) penalization.

Each iteration computes the state and classical adjoint, selects the
minimal-norm element ``rho`` of the constraint's subgradient set, and runs a
backtracking Armijo search along ``d = -(rho + g)``.  Trial points that leave
the feasible set have infinite cost and are rejected like any other failed
sufficient-decrease test, so every accepted iterate is feasible.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .constraints import (
    INFEASIBLE,
    ZERO_CONE,
    ActiveSet,
    Box,
    InfeasibleError,
    SubgradientCache,
    WeightedIntegral,
    active_tolerance,
    coverage_active,
    is_feasible,
    normal_cone_box,
    penalized_cost,
    select_subgradient,
    weighted_value,
)
from .grid import Field, inner_product, norm
from .pde import SolverFailure

log = logging.getLogger(__name__)

# relative shortfall of the boundary-hitting step, keeps rounding on the feasible side
_CAP_MARGIN = 1e-8


class NoFeasibleStart(RuntimeError):
    pass


class Status(enum.Enum):
    MIN_NORM_BELOW_TOL = "MinNormBelowTol"
    STEP_BELOW_TOL = "StepBelowTol"
    MAX_ITERS = "MaxIters"
    SOLVER_FAILURE = "SolverFailure"


@dataclass(frozen=True)
class DescentParams:
    """Algorithm parameters.

    ``t0=None`` starts the first line search at ``1/alpha``, the inverse of
    the smallest curvature of the reduced cost.  With ``step_rule="bb"`` later
    searches start at the Barzilai-Borwein step ``<s, s> / <s, y>`` built from
    the last control change ``s`` and smooth-gradient change ``y``; with
    ``"fixed"`` every search starts at ``t0``.
    """

    alpha: float = 1e-3
    tol: float = 1e-5
    beta: float = 0.0
    c1: float = 1e-4
    shrink: float = 0.5
    t0: float | None = None
    max_backtracks: int = 60
    max_iters: int = 200
    boundary_cap: bool = True
    step_rule: str = "bb"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.c1 < 1:
            raise ValueError("c1 must lie in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.step_rule not in ("bb", "fixed"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @property
    def initial_step(self):
        return 1.0 / self.alpha if self.t0 is None else self.t0


@dataclass(frozen=True)
class IterationRecord:
    k: int
    cost: float
    min_norm: float
    step: float
    t: float
    trials: int
    active: bool
    feasible: bool
    constraint_solves: int
    solves: int


@dataclass
class DescentTrace:
    records: list[IterationRecord] = field(default_factory=list)
    status: Status | None = None
    gradient_evaluations: int = 0
    line_search_trials: int = 0
    constraint_solves: int = 0
    start_solves: int = 0

    @property
    def iterations(self):
        return len(self.records)

    @property
    def costs(self):
        return np.array([r.cost for r in self.records])

    @property
    def final_cost(self):
        return self.records[-1].cost if self.records else math.nan

    @property
    def total_solves(self):
        return self.records[-1].solves - self.start_solves if self.records else 0


@dataclass(frozen=True)
class LineSearchResult:
    q: Field
    t: float
    trials: int
    state: Field | None = None
    cost: float = math.nan


def smooth_gradient(q, op, target, alpha):
    """State ``psi = E q`` and gradient ``E*(psi - target) + alpha*q`` (two solves)."""
    psi = op.solve_state(q)
    lam = op.solve_adjoint(psi - target)
    return psi, lam + alpha * q


def _boundary_step(con, psi, rate):
    """Largest ``t`` keeping ``psi + t*rate`` feasible, for constraints linear in the state."""
    if isinstance(con, Box):
        vals, r = psi.values, rate.values
    elif isinstance(con, WeightedIntegral):
        vals, r = np.array([weighted_value(con, psi)]), np.array([inner_product(con.w, rate)])
    else:
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(r > 0, (con.b - vals) / r, math.inf)
        down = np.where(r < 0, (con.a - vals) / r, math.inf)
    return float(max(min(up.min(initial=math.inf), down.min(initial=math.inf)), 0.0))


def armijo_search(q, d, con, op, target, params, cost=None, state=None, t0=None):
    """Backtrack from ``t0`` by ``shrink`` until the penalized cost decreases
    by ``c1 * t * ||d||^2``.  Each trial costs one state solve.  Returns
    ``t = 0`` (and ``q`` unchanged) when all ``max_backtracks`` trials fail.

    With ``params.boundary_cap`` and a state ``state = E q`` at hand, an
    infeasible first trial of a box or weighted-integral constraint is
    followed by the step that ends on the constraint boundary (the state is
    affine in ``t``, so this needs no extra solve); backtracking continues
    from there.
    """
    if cost is None:
        state = op.solve_state(q)
        cost = penalized_cost(con, state, q, target, params.alpha)
    if cost is INFEASIBLE:
        raise InfeasibleError("line search started from an infeasible control")
    dd = norm(d) ** 2
    t = params.initial_step if t0 is None else t0
    capped = not params.boundary_cap or state is None
    for trial in range(1, params.max_backtracks + 1):
        qt = q + t * d
        psi = op.solve_state(qt)
        c = penalized_cost(con, psi, qt, target, params.alpha)
        if c is not INFEASIBLE and c <= cost - params.c1 * t * dd:
            return LineSearchResult(qt, t, trial, psi, c)
        if c is INFEASIBLE and not capped:
            capped = True
            tb = _boundary_step(con, state, (psi - state) / t) * (1.0 - _CAP_MARGIN)
            if tb == 0.0:
                # already on the boundary and d points outward
                return LineSearchResult(q, 0.0, trial)
            if tb < t:
                t = tb
                continue
        t *= params.shrink
    return LineSearchResult(q, 0.0, params.max_backtracks)


def _bb_step(s, y, fallback):
    sy = inner_product(s, y)
    if not sy > 0:
        return fallback
    return min(norm(s) ** 2 / sy, fallback)


def _is_active(con, psi):
    if isinstance(con, Box):
        return ActiveSet.of(psi.values, con.a, con.b, active_tolerance(con)).any
    if isinstance(con, WeightedIntegral):
        cone = normal_cone_box(weighted_value(con, psi), con.a, con.b, active_tolerance(con))
        return cone != ZERO_CONE
    return coverage_active(con, psi)


def descend(q0, con, op, target, params=None, callback=None):
    """Run the subgradient descent from the feasible control ``q0``.

    Returns ``(q, trace)``.  Stops when the minimal-norm residual
    ``||rho + g||`` or the accepted step ``t*||d||`` drops to ``params.tol``,
    or after ``params.max_iters`` iterations.  A linear-solver failure ends
    the run with ``Status.SOLVER_FAILURE`` and the last accepted control.
    """
    params = params or DescentParams()
    trace = DescentTrace(start_solves=op.solve_count)
    cache = SubgradientCache()
    q = q0
    psi, g = smooth_gradient(q, op, target, params.alpha)
    trace.gradient_evaluations += 1
    cost = penalized_cost(con, psi, q, target, params.alpha)
    if cost is INFEASIBLE:
        raise InfeasibleError("initial control is infeasible")

    t0 = params.initial_step
    trace.status = Status.MAX_ITERS
    try:
        for k in range(params.max_iters):
            before = cache.solves
            rho = select_subgradient(con, psi, g, op, params.beta, cache)
            csolves = cache.solves - before
            trace.constraint_solves += csolves
            d = -(rho + g)
            residual = norm(d)
            active = _is_active(con, psi)
            if residual <= params.tol:
                trace.records.append(
                    IterationRecord(k, cost, residual, 0.0, 0.0, 0, active, True, csolves, op.solve_count)
                )
                trace.status = Status.MIN_NORM_BELOW_TOL
                break
            ls = armijo_search(q, d, con, op, target, params, cost, psi, t0)
            trace.line_search_trials += ls.trials
            step = ls.t * residual
            q_prev, g_prev = q, g
            if ls.t > 0:
                q, cost = ls.q, ls.cost
            trace.records.append(
                IterationRecord(k, cost, residual, step, ls.t, ls.trials, active, True, csolves, op.solve_count)
            )
            if callback is not None:
                callback(trace.records[-1], q)
            log.debug("k=%d cost=%.10g res=%.3e t=%.3e trials=%d", k, cost, residual, ls.t, ls.trials)
            if step <= params.tol:
                trace.status = Status.STEP_BELOW_TOL
                break
            psi, g = smooth_gradient(q, op, target, params.alpha)
            trace.gradient_evaluations += 1
            if params.step_rule == "bb":
                t0 = _bb_step(q - q_prev, g - g_prev, params.initial_step)
    except SolverFailure as exc:
        log.warning("linear solver failed: %s", exc)
        trace.status = Status.SOLVER_FAILURE
    return q, trace


def kkt_residual(q, con, op, target, alpha, feas_tol=0.0):
    """Distance from 0 to ``g + S`` where ``S`` is the constraint's subgradient set at ``q``.

    ``feas_tol`` admits states that overshoot a bound by rounding only, such
    as controls computed by an external solver.
    """
    psi, g = smooth_gradient(q, op, target, alpha)
    report = is_feasible(con, psi)
    if not report and report.max_overshoot > feas_tol:
        raise InfeasibleError("KKT residual requested at an infeasible control")
    rho = select_subgradient(con, psi, g, op, 0.0, feas_tol=feas_tol)
    return norm(rho + g)


def _probe_value(con, psi):
    """Signed feasibility along the probe: -1 below, +1 above, 0 feasible."""
    if isinstance(con, WeightedIntegral):
        v = weighted_value(con, psi)
    elif isinstance(con, Box):
        v = float(psi.values.max())
        if v > con.b:
            return 1
        v = float(psi.values.min())
    else:
        v = float(psi.values[con.zone].mean())
    if v < con.a:
        return -1
    if v > con.b:
        return 1
    return 0


def find_feasible_start(con, op, target=None, max_bisections=60):
    """Feasible control: zero if that works, else ``s * A(1)`` with ``s`` found by bisection.

    ``A(1)`` is the manufactured control whose state is identically one on
    the interior nodes, so the state along the probe is the constant ``s``
    (up to solver error) and the constraint quantity is monotone in ``s``.
    """
    grid = op.grid
    zero = grid.field()
    if is_feasible(con, op.solve_state(zero)):
        return zero
    probe = op.apply_A(grid.field(np.ones(grid.size)))

    def side(s):
        return _probe_value(con, op.solve_state(s * probe))

    # bracket along the sign that moves the constraint value towards [a, b]
    sign = 1.0 if side(0.0) < 0 else -1.0
    lo, hi = 0.0, sign
    for _ in range(max_bisections):
        sh = side(hi)
        if sh == 0:
            q = hi * probe
            if is_feasible(con, op.solve_state(q)):
                return q
        if sh * side(lo) < 0 or sh == 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NoFeasibleStart("could not bracket a feasible scaling of the probe control")

    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        sm = side(mid)
        if sm == 0:
            q = mid * probe
            if is_feasible(con, op.solve_state(q)):
                return q
        if sm == side(lo):
            lo = mid
        else:
            hi = mid
    raise NoFeasibleStart("bisection on the probe control did not reach a feasible point")
