"""Brute-force reference solvers for small problems.

These work on dense matrices built directly from the grid (the Laplacian is
assembled here and inverted with LAPACK) and never touch the iterative
solver, so they serve as independent ground truth for the descent method.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .grid import INTERIOR


class EmptyFeasible(ValueError):
    """No candidate satisfies the constraint."""


def dense_laplacian(grid):
    """Dense ``-Delta_h`` on the interior nodes, assembled node by node."""
    n = grid.size
    L = np.zeros((n, n))
    pos = np.argwhere(grid.mask == INTERIOR)
    for p in pos:
        i = grid.index[tuple(p)]
        for axis in range(grid.ndim):
            for step in (-1, 1):
                nb = p.copy()
                nb[axis] += step
                L[i, i] += 1.0
                j = grid.index[tuple(nb)]
                if j >= 0:
                    L[i, j] -= 1.0
    return L / grid.h**2


@dataclass(frozen=True, eq=False)
class DenseProblem:
    """``min 0.5*|E q - target|_W^2 + 0.5*alpha*|q|_W^2`` with a state constraint.

    ``weights`` are the quadrature weights ``W``; ``a``/``b`` bound the state
    (box, coverage) or ``<w, E q>`` (weighted integral, ``w`` given).
    """

    E: np.ndarray
    target: np.ndarray
    weights: np.ndarray
    alpha: float
    a: float = -np.inf
    b: float = np.inf
    w: np.ndarray | None = None

    @classmethod
    def from_grid(cls, grid, target, alpha, a=-np.inf, b=np.inf, w=None):
        E = np.linalg.inv(dense_laplacian(grid))
        return cls(
            E,
            np.asarray(target, float),
            grid.quad_weight.copy(),
            float(alpha),
            float(a),
            float(b),
            None if w is None else np.asarray(w, float),
        )

    @property
    def size(self):
        return len(self.target)

    @property
    def hessian(self):
        W = self.weights
        return self.E.T @ (W[:, None] * self.E) + self.alpha * np.diag(W)

    @property
    def linear_term(self):
        return self.E.T @ (self.weights * self.target)

    def cost(self, q):
        """Tracking cost; ``q`` may be a batch of shape (m, N)."""
        q = np.asarray(q, float)
        r = q @ self.E.T - self.target
        return 0.5 * (r**2 @ self.weights) + 0.5 * self.alpha * (q**2 @ self.weights)

    def gradient(self, q):
        """Gradient with respect to the weighted inner product."""
        r = self.E @ q - self.target
        return self.E.T @ (self.weights * r) / self.weights + self.alpha * q

    def unconstrained(self):
        return np.linalg.solve(self.hessian, self.linear_term)


def _equality_qp(p, C, d):
    """Minimize the tracking cost subject to ``C q = d`` via the KKT system."""
    n, m = p.size, len(d)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = p.hessian
    K[:n, n:] = C.T
    K[n:, :n] = C
    sol = np.linalg.solve(K, np.concatenate([p.linear_term, d]))
    return sol[:n], sol[n:]


def enumerate_box_qp(p, feas_tol=1e-10):
    """Global minimizer under ``a <= E q <= b`` by trying all 3**N activity patterns.

    Each pattern fixes some states to ``a`` or ``b``; the resulting equality
    constrained QP is solved exactly and the cheapest feasible candidate wins
    (global by convexity).
    """
    n = p.size
    if n > 10:
        raise ValueError(f"enumeration is limited to N <= 10, got {n}")
    scale = max(1.0, abs(p.a) if np.isfinite(p.a) else 0.0, abs(p.b) if np.isfinite(p.b) else 0.0)
    best, best_cost = None, np.inf
    choices = [0]
    if np.isfinite(p.a):
        choices.append(1)
    if np.isfinite(p.b):
        choices.append(2)
    for pattern in itertools.product(choices, repeat=n):
        pattern = np.array(pattern)
        rows = np.flatnonzero(pattern)
        if rows.size:
            d = np.where(pattern[rows] == 1, p.a, p.b)
            try:
                q, _ = _equality_qp(p, p.E[rows], d)
            except np.linalg.LinAlgError:
                continue
        else:
            q = p.unconstrained()
        psi = p.E @ q
        if np.any(psi < p.a - feas_tol * scale) or np.any(psi > p.b + feas_tol * scale):
            continue
        c = p.cost(q)
        if c < best_cost:
            best, best_cost = q, c
    if best is None:
        raise EmptyFeasible("no activity pattern gives a feasible state")
    return best


def box_multiplier(p, q):
    """State-space multiplier ``eta`` with ``E*(E q - target) + alpha q + E* eta = 0``.

    Equivalently ``A lam + (psi - target) + eta = 0`` with ``lam = alpha q``.
    """
    A = np.linalg.inv(p.E)
    psi = p.E @ q
    return -(psi - p.target) - p.alpha * (A @ q)


def wi_qp_oracle(p):
    """Minimizer under ``a <= <w, E q> <= b``: three candidates, closed form each."""
    if p.w is None:
        raise ValueError("weighted-integral oracle needs w")
    if p.size > 1000:
        raise ValueError(f"dense oracle is limited to N <= 1000, got {p.size}")
    q = p.unconstrained()
    row = (p.weights * p.w) @ p.E
    val = row @ q
    if p.a <= val <= p.b:
        return q
    if not np.any(row):
        raise EmptyFeasible("w = 0 and the bounds exclude zero")
    bound = p.a if val < p.a else p.b
    q, _ = _equality_qp(p, row[None, :], np.array([bound]))
    return q


def wi_multiplier(p, q):
    """Scalar ``r`` with ``E*(E q - target) + alpha q + r * E*(w) = 0`` (least squares)."""
    g = p.gradient(q)
    m = p.E.T @ (p.weights * p.w) / p.weights
    W = p.weights
    return -float((W * m) @ g / ((W * m) @ m))


@dataclass(frozen=True)
class ScanResult:
    q: np.ndarray
    cost: float
    spacing: float
    gap: float


def coverage_scan_oracle(p, c, zone=None, k=21, chunk=200_000):
    """Best lattice control satisfying the coverage constraint.

    The lattice has ``k`` points per axis over a box of half-width three times
    ``max |q|`` of the unconstrained solution, centered at that solution.
    ``gap`` bounds how much the cost can drop between a lattice point and any
    control within half a lattice cell of it (gradient plus curvature term),
    so ``scan.cost - scan.gap`` is a lower bound for lattice-neighborhood optima.
    """
    n = p.size
    if n > 6:
        raise ValueError(f"lattice scan is limited to N <= 6, got {n}")
    if not p.a < p.b:
        raise EmptyFeasible("empty band [a, b]")
    zone = np.ones(n, bool) if zone is None else np.asarray(zone, bool)
    center = p.unconstrained()
    half = 3.0 * np.max(np.abs(center))
    if half == 0:
        half = 1.0
    axis = np.linspace(-half, half, k)
    spacing = axis[1] - axis[0]
    zw = p.weights[zone]
    need = c * zw.sum() * (1.0 - 1e-12)

    best_q, best_cost = None, np.inf
    total = k**n
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        digits = np.stack(np.unravel_index(idx, (k,) * n), axis=1)
        Q = center + axis[digits]
        psi = Q @ p.E.T
        inband = (psi[:, zone] >= p.a) & (psi[:, zone] <= p.b)
        ok = inband @ zw >= need
        if not ok.any():
            continue
        costs = p.cost(Q[ok])
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost, best_q = float(costs[i]), Q[ok][i]
    if best_q is None:
        raise EmptyFeasible("no lattice point satisfies the coverage constraint")

    # half-cell offsets measured in the weighted norm
    radius = 0.5 * spacing * np.sqrt(p.weights.sum())
    gnorm = np.sqrt(p.gradient(best_q) ** 2 @ p.weights)
    sw = np.sqrt(p.weights)
    curv = np.linalg.eigvalsh(p.hessian / np.outer(sw, sw)).max()
    gap = gnorm * radius + 0.5 * curv * radius**2
    return ScanResult(best_q, best_cost, spacing, float(gap))
