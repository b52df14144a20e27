"""Uniform grids, vertex fields, bilinear interpolation and the jump-size
quadrature used by the finite-difference solver."""
import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Vertices ``(i*h1, j*h2)`` on ``[0, x1_max] x [0, x2_max]``.

    One-dimensional grids have ``dim == 1`` and ignore the second axis.
    """

    x1_max: float = 1.0
    n1: int = 100
    x2_max: float = 1.0
    n2: int = 100
    dim: int = 2

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.n1 < 2 or (self.dim == 2 and self.n2 < 2):
            raise ValueError("need at least 2 cells per axis")
        if not self.x1_max > 0 or (self.dim == 2 and not self.x2_max > 0):
            raise ValueError("extents must be positive")

    @classmethod
    def line(cls, x_max=1.0, n=100):
        return cls(x1_max=x_max, n1=n, x2_max=1.0, n2=2, dim=1)

    @property
    def h1(self):
        return self.x1_max / self.n1

    @property
    def h2(self):
        return self.x2_max / self.n2 if self.dim == 2 else 1.0

    @property
    def shape(self):
        return (self.n1 + 1, self.n2 + 1) if self.dim == 2 else (self.n1 + 1,)

    @property
    def x1(self):
        return np.arange(self.n1 + 1) * self.h1

    @property
    def x2(self):
        return np.arange(self.n2 + 1) * self.h2 if self.dim == 2 else np.zeros(1)

    def mesh(self):
        """Vertex coordinates with index order ``[i, j]``."""
        if self.dim == 1:
            return self.x1, np.zeros(self.n1 + 1)
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def clamp(self, x1, x2=None):
        x1 = np.clip(x1, 0.0, self.x1_max)
        if self.dim == 1 or x2 is None:
            return x1, (None if x2 is None else np.zeros_like(np.asarray(x2, float)))
        return x1, np.clip(x2, 0.0, self.x2_max)


@dataclass
class Field:
    """One value per grid vertex."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")

    @classmethod
    def from_function(cls, grid, func):
        X1, X2 = grid.mesh()
        vals = func(X1) if grid.dim == 1 else func(X1, X2)
        return cls(grid, np.broadcast_to(vals, grid.shape).copy())

    def __call__(self, x1, x2=0.0):
        return interpolate(self, (x1, x2))

    def to_csv(self, path, columns=None):
        """Write ``i,j,x1,x2,<columns>`` rows, j outer and i inner."""
        columns = columns or {"value": self.values}
        write_vertex_csv(path, self.grid, columns)


@dataclass(frozen=True)
class JumpQuadrature:
    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.nodes)


def build_quadrature(dist, M):
    """Left-node rectangle rule on the jump support, renormalised to mass 1."""
    if M < 1:
        raise ValueError("M must be >= 1")
    dz = (dist.z_hi - dist.z_lo) / M
    nodes = dist.z_lo + (dist.z_hi - dist.z_lo) * np.arange(M) / M
    if M == 1 or dz == 0:
        return JumpQuadrature(nodes[:1].copy(), np.ones(1))
    raw = np.asarray(dist.density(nodes), dtype=float) * dz
    if np.any(raw < 0):
        raise ValueError("density must be nonnegative")
    total = raw.sum()
    if not total > 0:
        raise ValueError("degenerate jump density: all quadrature weights are zero")
    weights = raw / total
    # on the 2**-52 lattice every partial sum up to 1 is exact, so the weights
    # sum to exactly 1 in any order; the residue goes to the largest weight
    units = np.rint(weights * 2.0 ** 52).astype(np.int64)
    units[np.argmax(units)] += 2 ** 52 - units.sum()
    weights = units / 2.0 ** 52
    return JumpQuadrature(nodes, weights)


def cell_index(x, h, n):
    """Lower vertex index and local coordinate of the enclosing cell.

    Points on a cell boundary belong to the lower-index cell.
    """
    s = np.asarray(x, dtype=float) / h
    i0 = np.clip(np.ceil(s) - 1, 0, n - 1).astype(np.int64)
    w = np.clip(s - i0, 0.0, 1.0)
    return i0, w


def interpolate(field, point):
    """Bilinear (linear in 1D) interpolation, clamping points into the box."""
    grid = field.grid
    x1, x2 = point if isinstance(point, tuple) and len(point) == 2 else (point, 0.0)
    x1 = np.clip(np.asarray(x1, dtype=float), 0.0, grid.x1_max)
    i0, wx = cell_index(x1, grid.h1, grid.n1)
    V = field.values
    if grid.dim == 1:
        out = (1 - wx) * V[i0] + wx * V[i0 + 1]
    else:
        x2 = np.clip(np.asarray(x2, dtype=float), 0.0, grid.x2_max)
        j0, wy = cell_index(x2, grid.h2, grid.n2)
        out = ((1 - wx) * (1 - wy) * V[i0, j0] + wx * (1 - wy) * V[i0 + 1, j0]
               + (1 - wx) * wy * V[i0, j0 + 1] + wx * wy * V[i0 + 1, j0 + 1])
    return out if np.ndim(out) else float(out)


def jump_target(state, model, z, grid):
    """Post-jump state ``x_i + b_i(x) z``, clamped into the grid box."""
    x1, x2 = state if model.dim == 2 else (state if np.ndim(state) == 0 else state[0], 0.0)
    b1, b2 = model.jump_gain(x1, x2)
    t1 = np.clip(x1 + b1 * z, 0.0, grid.x1_max)
    if model.dim == 1:
        return t1
    return t1, np.clip(x2 + b2 * z, 0.0, grid.x2_max)


def fmt(v):
    return format(float(v), ".17g")


def write_vertex_csv(path, grid, columns):
    names = list(columns)
    cols = [np.asarray(columns[k], dtype=float).reshape(grid.shape) for k in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "x1", "x2"] + names)
        if grid.dim == 1:
            for i in range(grid.n1 + 1):
                w.writerow([i, 0, fmt(i * grid.h1), fmt(0.0)] + [fmt(c[i]) for c in cols])
            return
        for j in range(grid.n2 + 1):
            for i in range(grid.n1 + 1):
                w.writerow([i, j, fmt(i * grid.h1), fmt(j * grid.h2)]
                           + [fmt(c[i, j]) for c in cols])


def read_vertex_csv(path, grid, column="value"):
    out = np.empty(grid.shape)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            i, j = int(row["i"]), int(row["j"])
            if grid.dim == 1:
                out[i] = float(row[column])
            else:
                out[i, j] = float(row[column])
    return Field(grid, out)
