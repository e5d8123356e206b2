"""Experiment runner: config-driven solves, refinement sweeps and reports.

Usage::

    python -m stateopt run experiment.ini [--out DIR] [--seed N]
    python -m stateopt check experiment.ini

Exit codes: 0 all runs converged, 1 bad config, 2 some run hit the
iteration cap, 3 linear solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraints import Box, TotalCoverage, WeightedIntegral, coverage, weighted_value
from .grid import DomainSpec, build_grid, inner_product
from .optimizer import DescentParams, Status, descend, find_feasible_start, kkt_residual
from .pde import DiscreteOperator, SolverFailure, build_target

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_MAXITER, EXIT_SOLVER = 0, 1, 2, 3
REPORT_HEADER = ["node_count", "opt_cost", "iters", "pde_solves", "kkt_residual", "constraint_value"]


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bound(text):
    """A number, ``inf``/``-inf``, or ``<factor>*target`` (scaled ``<w, target>``)."""
    text = text.strip().replace(" ", "")
    if text.endswith("target"):
        factor = text[: -len("target")].rstrip("*")
        return ("target", float(factor) if factor else 1.0)
    return float(text)


@dataclass
class ExperimentConfig:
    domain: DomainSpec
    sizes: list[int]
    constraint: dict
    params: DescentParams
    solver_tol: float = 1e-10
    out_dir: Path = Path("out")
    seed: int = 0

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            cp.read(path)
            return cls.from_parser(cp)
        except (configparser.Error, KeyError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    @classmethod
    def from_parser(cls, cp):
        dom = cp["domain"]
        shape = dom.get("shape", "disk").lower()
        if shape == "disk":
            spec = DomainSpec.disk(dom.getfloat("radius", 1.0), _floats(dom.get("center", "0 0")))
        elif shape == "lshape":
            spec = DomainSpec.lshape(dom.get("quadrant", "lower_right"))
        elif shape == "rectangle":
            spec = DomainSpec.rectangle(_floats(dom.get("lower", "0 0")), _floats(dom.get("upper", "1 1")))
        elif shape == "interval":
            lo, hi = _floats(dom.get("bounds", "0 1"))
            spec = DomainSpec.interval(lo, hi)
        else:
            raise ConfigError(f"unknown domain shape {shape!r}")

        sizes = [int(v) for v in _floats(cp["grid"]["sizes"])]
        if not sizes:
            raise ConfigError("at least one grid size is required")

        sec = cp["constraint"]
        kind = sec.get("type", "weighted_integral").lower()
        con = {"type": kind, "a": _bound(sec.get("a", "-inf")), "b": _bound(sec.get("b", "inf"))}
        if kind == "weighted_integral":
            con["weight"] = sec.get("weight", "ball").lower()
            if con["weight"] == "ball":
                con["weight_center"] = _floats(sec.get("weight_center", "0 0"))
                con["weight_radius"] = sec.getfloat("weight_radius", 0.25)
            elif con["weight"] == "rectangle":
                con["weight_lower"] = _floats(sec["weight_lower"])
                con["weight_upper"] = _floats(sec["weight_upper"])
            else:
                raise ConfigError(f"unknown weight {con['weight']!r}")
        elif kind == "total_coverage":
            con["zone_lower"] = _floats(sec["zone_lower"])
            con["zone_upper"] = _floats(sec["zone_upper"])
            con["c"] = sec.getfloat("c")
        elif kind != "box":
            raise ConfigError(f"unknown constraint type {kind!r}")

        opt = cp["optimizer"] if cp.has_section("optimizer") else {}
        arm = cp["armijo"] if cp.has_section("armijo") else {}
        t0 = arm.get("t0", "").strip() if arm else ""
        params = DescentParams(
            alpha=float(opt.get("alpha", 1e-3)),
            tol=float(opt.get("tol", 1e-5)),
            beta=float(opt.get("beta", 0.0)),
            max_iters=int(opt.get("max_iters", 200)),
            step_rule=opt.get("step_rule", "bb"),
            boundary_cap=str(opt.get("boundary_cap", "yes")).lower() in ("1", "yes", "true", "on"),
            c1=float(arm.get("c1", 1e-4)),
            shrink=float(arm.get("shrink", 0.5)),
            t0=float(t0) if t0 else None,
            max_backtracks=int(arm.get("max_backtracks", 60)),
        )
        out = cp["output"] if cp.has_section("output") else {}
        return cls(
            spec,
            sizes,
            con,
            params,
            solver_tol=float(opt.get("solver_tol", 1e-10)),
            out_dir=Path(out.get("directory", "out")),
            seed=int(out.get("seed", 0)),
        )


def _weight_field(grid, con):
    if con["weight"] == "ball":
        (cx, cy), r = con["weight_center"], con["weight_radius"]
        return grid.indicator(lambda x, y: (x - cx) ** 2 + (y - cy) ** 2 <= r**2 * (1 + 1e-12))
    (x0, y0), (x1, y1) = con["weight_lower"], con["weight_upper"]
    return grid.indicator(lambda x, y: (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1))


def _weight_outline(con, npts=200):
    """Boundary polyline of the support of ``w``."""
    if con["weight"] == "ball":
        (cx, cy), r = con["weight_center"], con["weight_radius"]
        th = np.linspace(0.0, 2 * np.pi, npts + 1)
        return np.column_stack([cx + r * np.cos(th), cy + r * np.sin(th)])
    (x0, y0), (x1, y1) = con["weight_lower"], con["weight_upper"]
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]])


def build_constraint(config, grid, target):
    spec = config.constraint
    kind = spec["type"]
    w = _weight_field(grid, spec) if kind == "weighted_integral" else None

    def resolve(bound):
        if isinstance(bound, tuple):
            if w is None:
                raise ConfigError("'*target' bounds are only defined for weighted_integral")
            return bound[1] * inner_product(w, target)
        return bound

    a, b = resolve(spec["a"]), resolve(spec["b"])
    if kind == "box":
        return Box(a, b)
    if kind == "weighted_integral":
        return WeightedIntegral(w, a, b)
    (x0, y0), (x1, y1) = spec["zone_lower"], spec["zone_upper"]
    x, y = grid.coords.T
    zone = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    return TotalCoverage(zone, a, b, spec["c"])


def constraint_value(con, psi):
    if isinstance(con, WeightedIntegral):
        return weighted_value(con, psi)
    if isinstance(con, TotalCoverage):
        return coverage(con, psi)
    return float(psi.values.max())


@dataclass
class RunRow:
    node_count: int
    opt_cost: float
    iters: int
    pde_solves: int
    kkt_residual: float
    constraint_value: float
    status: Status
    tracking_cost: float = math.nan


@dataclass
class RunReport:
    rows: list[RunRow] = field(default_factory=list)

    @property
    def exit_code(self):
        if any(r.status is Status.SOLVER_FAILURE for r in self.rows):
            return EXIT_SOLVER
        if any(r.status is Status.MAX_ITERS for r in self.rows):
            return EXIT_MAXITER
        return EXIT_OK


def _fmt(v):
    return f"{v:.17g}"


def write_field(path, grid, values):
    """One line per interior node: coordinates then value, 17 significant digits."""
    with open(path, "w") as fh:
        for xy, v in zip(grid.coords, values):
            fh.write(" ".join(_fmt(c) for c in xy) + " " + _fmt(v) + "\n")


def write_convergence(path, trace):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "cost", "min_norm", "step", "solves"])
        for r in trace.records:
            wr.writerow([r.k, _fmt(r.cost), _fmt(r.min_norm), _fmt(r.step), r.solves - trace.start_solves])


def solve_one(config, n, out_dir=None):
    """Build, solve and (optionally) dump one grid size; returns ``(row, q, psi, con)``."""
    grid = build_grid(config.domain, n)
    op = DiscreteOperator(grid, solver_tol=config.solver_tol)
    target = build_target(op)
    con = build_constraint(config, grid, target)
    q0 = find_feasible_start(con, op, target)
    q, trace = descend(q0, con, op, target, config.params)
    psi = op.solve_state(q)
    res = kkt_residual(q, con, op, target, config.params.alpha)
    tracking = 0.5 * inner_product(psi - target, psi - target)
    row = RunRow(
        grid.size,
        trace.final_cost,
        trace.iterations,
        trace.total_solves,
        res,
        constraint_value(con, psi),
        trace.status,
        tracking,
    )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_convergence(out_dir / "convergence.csv", trace)
        write_field(out_dir / "control.dat", grid, q.values)
        write_field(out_dir / "state.dat", grid, psi.values)
        write_field(out_dir / "target.dat", grid, target.values)
        write_field(out_dir / "residual.dat", grid, np.abs(psi.values - target.values))
        if isinstance(con, WeightedIntegral):
            np.savetxt(out_dir / "w_boundary.dat", _weight_outline(config.constraint), fmt="%.17g")
    return row, q, psi, con


def run_experiment(config, out_dir=None):
    out_dir = Path(out_dir) if out_dir is not None else config.out_dir
    report = RunReport()
    for n in config.sizes:
        log.info("solving on %d nodes per axis", n)
        row, *_ = solve_one(config, n, out_dir / f"n{n}")
        report.rows.append(row)
    return report


def emit_report(report, csv_path=None, stream=None):
    """Print an aligned table and write the CSV report."""
    if not report.rows:
        raise ValueError("report has no rows")
    stream = stream or sys.stdout
    cols = REPORT_HEADER + ["tracking_cost", "status"]
    lines = []
    for r in report.rows:
        lines.append(
            [
                str(r.node_count),
                f"{r.opt_cost:.6g}",
                str(r.iters),
                str(r.pde_solves),
                f"{r.kkt_residual:.3e}",
                f"{r.constraint_value:.8g}",
                f"{r.tracking_cost:.6g}",
                r.status.value,
            ]
        )
    widths = [max(len(c), *(len(l[i]) for l in lines)) for i, c in enumerate(cols)]
    print("  ".join(c.rjust(w) for c, w in zip(cols, widths)), file=stream)
    for l in lines:
        print("  ".join(v.rjust(w) for v, w in zip(l, widths)), file=stream)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(REPORT_HEADER)
            for r in report.rows:
                wr.writerow(
                    [r.node_count, _fmt(r.opt_cost), r.iters, r.pde_solves, _fmt(r.kkt_residual), _fmt(r.constraint_value)]
                )


def build_parser():
    parser = argparse.ArgumentParser(prog="stateopt", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("config")
    run.add_argument("--out", default=None, help="output directory (overrides the config)")
    run.add_argument("--seed", type=int, default=None)
    chk = sub.add_parser("check", help="validate a config without solving")
    chk.add_argument("config")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = ExperimentConfig.from_file(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "check":
        print(f"ok: {config.domain.shape.value}, sizes {config.sizes}, {config.constraint['type']}")
        return EXIT_OK
    if args.seed is not None:
        config.seed = args.seed
    out_dir = Path(args.out) if args.out else config.out_dir
    try:
        report = run_experiment(config, out_dir)
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir.mkdir(parents=True, exist_ok=True)
    emit_report(report, out_dir / "report.csv")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
