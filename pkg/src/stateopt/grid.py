"""Masked uniform grids and the discrete L2 geometry on them.

Nodes live on a uniform Cartesian lattice covering the bounding box of the
domain.  A node strictly inside the domain is ``INTERIOR`` and carries an
unknown; a node outside (or on) the boundary that touches an interior node
along an axis is ``DIRICHLET`` and carries the value zero; everything else is
``EXTERIOR``.  Integrals use the midpoint rule with weight ``h**ndim`` per
interior node.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

INTERIOR = 0
DIRICHLET = 1
EXTERIOR = 2

# Points closer than this (relative to h) to the boundary count as on it.
_EDGE_TOL = 1e-9


class Shape(enum.Enum):
    UNIT_DISK = "disk"
    LSHAPE = "lshape"
    RECTANGLE = "rectangle"
    INTERVAL = "interval"


_QUADRANTS = {
    # removed closed quadrant as (x sign, y sign)
    "lower_right": (1, -1),
    "upper_right": (1, 1),
    "upper_left": (-1, 1),
    "lower_left": (-1, -1),
}


@dataclass(frozen=True)
class DomainSpec:
    """Geometry of the computational domain.

    ``UNIT_DISK`` uses ``center`` and ``radius``; ``RECTANGLE`` uses
    ``lower``/``upper`` corners; ``LSHAPE`` is ``[-1, 1]^2`` with one closed
    quadrant removed; ``INTERVAL`` is the 1-D segment ``[lower[0], upper[0]]``.
    """

    shape: Shape
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    lower: tuple[float, ...] = (0.0, 0.0)
    upper: tuple[float, ...] = (1.0, 1.0)
    quadrant: str = "lower_right"

    def __post_init__(self):
        if self.shape is Shape.UNIT_DISK and not self.radius > 0:
            raise ValueError(f"disk radius must be positive, got {self.radius}")
        if self.shape is Shape.LSHAPE and self.quadrant not in _QUADRANTS:
            raise ValueError(f"unknown quadrant {self.quadrant!r}")
        if self.shape in (Shape.RECTANGLE, Shape.INTERVAL):
            dim = 1 if self.shape is Shape.INTERVAL else 2
            if len(self.lower) < dim or len(self.upper) < dim:
                raise ValueError("corner coordinates have too few components")
            if any(lo >= hi for lo, hi in zip(self.lower[:dim], self.upper[:dim])):
                raise ValueError("lower corner must be below upper corner")

    @classmethod
    def disk(cls, radius=1.0, center=(0.0, 0.0)):
        return cls(Shape.UNIT_DISK, center=tuple(center), radius=float(radius))

    @classmethod
    def lshape(cls, quadrant="lower_right"):
        return cls(Shape.LSHAPE, quadrant=quadrant)

    @classmethod
    def rectangle(cls, lower=(0.0, 0.0), upper=(1.0, 1.0)):
        return cls(Shape.RECTANGLE, lower=tuple(map(float, lower)), upper=tuple(map(float, upper)))

    @classmethod
    def interval(cls, lower=0.0, upper=1.0):
        return cls(Shape.INTERVAL, lower=(float(lower),), upper=(float(upper),))

    @property
    def ndim(self):
        return 1 if self.shape is Shape.INTERVAL else 2

    def bounding_box(self):
        if self.shape is Shape.UNIT_DISK:
            cx, cy = self.center
            r = self.radius
            return np.array([cx - r, cy - r]), np.array([cx + r, cy + r])
        if self.shape is Shape.LSHAPE:
            return np.array([-1.0, -1.0]), np.array([1.0, 1.0])
        dim = self.ndim
        return np.array(self.lower[:dim], float), np.array(self.upper[:dim], float)

    def area(self):
        """Exact measure of the domain."""
        if self.shape is Shape.UNIT_DISK:
            return np.pi * self.radius**2
        if self.shape is Shape.LSHAPE:
            return 3.0
        lo, hi = self.bounding_box()
        return float(np.prod(hi - lo))

    def contains(self, points, tol=0.0):
        """Strict interior test; ``points`` has shape (..., ndim)."""
        points = np.asarray(points, float)
        lo, hi = self.bounding_box()
        if self.shape is Shape.UNIT_DISK:
            d = points - np.asarray(self.center)
            return np.sqrt(np.sum(d**2, axis=-1)) < self.radius - tol
        inside = np.all((points > lo + tol) & (points < hi - tol), axis=-1)
        if self.shape is Shape.LSHAPE:
            sx, sy = _QUADRANTS[self.quadrant]
            x, y = points[..., 0], points[..., 1]
            removed = (sx * x >= -tol) & (sy * y >= -tol)
            inside &= ~removed
        return inside


@dataclass(frozen=True, eq=False)
class Grid:
    """Masked lattice.  Arrays are indexed ``[j, i]`` (y, x) in 2-D."""

    spec: DomainSpec
    shape: tuple[int, ...]
    h: float
    origin: np.ndarray
    mask: np.ndarray
    index: np.ndarray
    coords: np.ndarray
    quad_weight: np.ndarray = field(repr=False)

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def nx(self):
        return self.shape[-1]

    @property
    def ny(self):
        return self.shape[0] if self.ndim == 2 else 1

    @property
    def size(self):
        """Number of interior unknowns."""
        return len(self.coords)

    @property
    def measure(self):
        return float(self.quad_weight.sum())

    def field(self, values=None):
        if values is None:
            values = np.zeros(self.size)
        return Field(self, values)

    def sample(self, func):
        """Evaluate ``func(x)`` or ``func(x, y)`` at the interior nodes."""
        return Field(self, np.broadcast_to(func(*self.coords.T), (self.size,)).astype(float))

    def indicator(self, pred):
        """0/1 field of interior nodes where ``pred(x[, y])`` holds."""
        return Field(self, np.asarray(pred(*self.coords.T), dtype=float))

    def neighbor_pairs(self):
        """Yield ``(axis, shift, interior_idx, neighbor_idx)`` for all axis neighbors.

        ``neighbor_idx`` is -1 where the neighbor is a Dirichlet node.
        """
        interior = self.mask == INTERIOR
        for axis in range(self.ndim):
            for shift in (-1, 1):
                nb = np.roll(self.index, -shift, axis=axis)
                yield axis, shift, self.index[interior], nb[interior]


class Field:
    """Nodal scalar function on the interior nodes of a grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.size,):
            raise ValueError(f"field needs {grid.size} values, got shape {values.shape}")
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"Field(n={self.grid.size}, norm={norm(self):.6g})"

    def _check(self, other):
        if isinstance(other, Field):
            if other.grid is not self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._check(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._check(other))

    def __rsub__(self, other):
        return Field(self.grid, self._check(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._check(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._check(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def copy(self):
        return Field(self.grid, self.values.copy())


def build_grid(spec, n):
    """Build the masked grid with ``n`` nodes per axis over the domain's bounding box.

    ``n`` counts lattice nodes along the longest side of the bounding box,
    endpoints included.  Raises ``ValueError`` if no interior node exists.
    """
    n = int(n)
    dim = spec.ndim
    if n < 3:
        raise ValueError(f"need at least 3 nodes, got {n}")
    lo, hi = spec.bounding_box()
    spans = hi - lo
    h = float(spans.max() / (n - 1))
    counts = tuple(int(round(s / h)) + 1 for s in spans)
    axes = [lo[k] + h * np.arange(counts[k]) for k in range(dim)]
    if dim == 1:
        pts = axes[0][:, None]
        shape = (counts[0],)
    else:
        xx, yy = np.meshgrid(axes[0], axes[1])
        pts = np.stack([xx, yy], axis=-1)
        shape = (counts[1], counts[0])

    inside = spec.contains(pts, tol=_EDGE_TOL * h)
    # lattice edge nodes are always boundary, so np.roll never wraps an interior node
    edge = np.zeros(shape, bool)
    for axis in range(dim):
        sl = [slice(None)] * dim
        sl[axis] = 0
        edge[tuple(sl)] = True
        sl[axis] = -1
        edge[tuple(sl)] = True
    inside &= ~edge
    if not inside.any():
        raise ValueError("grid has no interior nodes; increase n")

    touches = np.zeros(shape, bool)
    for axis in range(dim):
        for shift in (-1, 1):
            touches |= np.roll(inside, shift, axis=axis)
    mask = np.full(shape, EXTERIOR, dtype=np.int8)
    mask[touches & ~inside] = DIRICHLET
    mask[inside] = INTERIOR

    index = np.full(shape, -1, dtype=np.int64)
    index[inside] = np.arange(int(inside.sum()))
    coords = pts[inside].reshape(-1, dim)
    weights = np.full(len(coords), h**dim)
    return Grid(spec, shape, h, lo, mask, index, coords, weights)


def inner_product(u, v):
    """Discrete L2 inner product ``sum_i w_i u_i v_i``."""
    if u.grid is not v.grid:
        raise ValueError("fields live on different grids")
    return float(np.dot(u.grid.quad_weight * u.values, v.values))


def norm(u):
    return float(np.sqrt(inner_product(u, u)))
