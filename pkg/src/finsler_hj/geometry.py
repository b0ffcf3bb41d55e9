"""Uniform rectangular grids, discrete fields, and a dual gradient/divergence pair.

The discretization pairs nodal scalars with cell-centered vectors.  The cell
gradient averages the forward differences on opposite cell edges, which is
exact on affine functions and evaluates quadratics exactly at cell centers.
The divergence residual is assembled with the exact algebraic transpose of
that stencil, so summation by parts

    sum_i eta_i r_i = sum_cells Theta . (grad eta) h^2 - sum_i eta_i rho_i m_i

is an identity for every nodal test function ``eta``, not an approximation.
In particular the residual restricted to boundary nodes is the discrete
normal-trace measure Theta.n defined by Green's formula, and the residual of
an optimal flux vanishes at interior nodes.

Node masses ``m_i`` come from the trapezoidal rule (h^2 times 1, 1/2, 1/4 for
interior, edge and corner nodes), which makes ``integrate`` exact on bilinear
fields and consistent with the residual's source term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class GridMismatch(ValueError):
    """Two fields that must share a grid do not."""


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular node grid with square cells of spacing ``h``.

    Nodes are indexed row-major: flat index ``iy * nx + ix`` with
    ``x = origin[0] + ix * h`` and ``y = origin[1] + iy * h``.  Boundary nodes
    are enumerated counterclockwise starting from the origin corner, which
    fixes the serialization order of boundary measures.
    """

    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs nx, ny >= 3, got {self.nx}x{self.ny}")
        if not self.h > 0:
            raise ValueError(f"grid spacing must be positive, got {self.h}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def n_cells(self) -> int:
        return (self.nx - 1) * (self.ny - 1)

    @property
    def extent(self) -> tuple[float, float]:
        return ((self.nx - 1) * self.h, (self.ny - 1) * self.h)

    @property
    def diameter(self) -> float:
        w, d = self.extent
        return float(np.hypot(w, d))

    @cached_property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    @cached_property
    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    @cached_property
    def node_points(self) -> np.ndarray:
        """Node coordinates, shape (ny, nx, 2)."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.stack([X, Y], axis=-1)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        """Cell-center coordinates, shape (ny-1, nx-1, 2)."""
        cx = self.origin[0] + self.h * (np.arange(self.nx - 1) + 0.5)
        cy = self.origin[1] + self.h * (np.arange(self.ny - 1) + 0.5)
        X, Y = np.meshgrid(cx, cy)
        return np.stack([X, Y], axis=-1)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Flat indices of boundary nodes in counterclockwise order."""
        nx, ny = self.nx, self.ny
        bottom = np.arange(nx)
        right = nx - 1 + nx * np.arange(1, ny)
        top = nx * (ny - 1) + np.arange(nx - 2, -1, -1)
        left = nx * np.arange(ny - 2, 0, -1)
        return np.concatenate([bottom, right, top, left])

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """Boolean node mask of the boundary, shape (ny, nx)."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask

    @cached_property
    def node_mass(self) -> np.ndarray:
        """Trapezoidal quadrature weights per node, shape (ny, nx)."""
        wx = np.full(self.nx, self.h)
        wx[[0, -1]] = self.h / 2
        wy = np.full(self.ny, self.h)
        wy[[0, -1]] = self.h / 2
        return np.outer(wy, wx)

    def boundary_points(self) -> np.ndarray:
        """Coordinates of boundary nodes in boundary order, shape (nb, 2)."""
        return self.node_points.reshape(-1, 2)[self.boundary_nodes]

    def same_as(self, other: "Grid") -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and np.isclose(self.h, other.h)
            and np.allclose(self.origin, other.origin)
        )


def _check_grids(a, b):
    if not a.grid.same_as(b.grid):
        raise GridMismatch("fields live on different grids")


@dataclass
class ScalarField:
    """Node-valued scalar field on a grid."""

    grid: Grid
    values: np.ndarray
    units: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape == (self.grid.n_nodes,):
            self.values = self.values.reshape(self.grid.shape)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"scalar field shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field contains non-finite values")

    @classmethod
    def constant(cls, grid: Grid, value: float, units: str = "") -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)), units)

    @classmethod
    def from_function(cls, grid: Grid, fn, units: str = "") -> "ScalarField":
        pts = grid.node_points
        return cls(grid, np.asarray(fn(pts[..., 0], pts[..., 1]), dtype=float), units)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def boundary_values(self) -> np.ndarray:
        """Values at boundary nodes in boundary order."""
        return self.flat[self.grid.boundary_nodes]


@dataclass
class VectorField:
    """Cell-centered vector field, shape (ny-1, nx-1, 2)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        want = (self.grid.ny - 1, self.grid.nx - 1, 2)
        if self.values.shape != want:
            raise ValueError(f"vector field shape {self.values.shape}, expected {want}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("vector field contains non-finite values")

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((grid.ny - 1, grid.nx - 1, 2)))

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.values[..., 0], self.values[..., 1])


@dataclass
class BoundaryMeasure:
    """Signed weights on boundary nodes, in the grid's boundary order."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        nb = len(self.grid.boundary_nodes)
        if self.weights.shape != (nb,):
            raise ValueError(f"boundary measure needs {nb} weights, got {self.weights.shape}")

    def positive_part(self) -> np.ndarray:
        return np.maximum(self.weights, 0.0)

    def negative_part(self) -> np.ndarray:
        """The nonnegative weights of theta^- so that theta = theta^+ - theta^-."""
        return np.maximum(-self.weights, 0.0)

    def total(self) -> float:
        return float(self.weights.sum())


def cell_gradient(u: ScalarField) -> VectorField:
    """Cell-centered gradient: edge-averaged forward differences, exact on affine u."""
    v = u.values
    h = u.grid.h
    gx = (v[:-1, 1:] - v[:-1, :-1] + v[1:, 1:] - v[1:, :-1]) / (2 * h)
    gy = (v[1:, :-1] - v[:-1, :-1] + v[1:, 1:] - v[:-1, 1:]) / (2 * h)
    return VectorField(u.grid, np.stack([gx, gy], axis=-1))


def gradient_transpose(grid: Grid, theta: np.ndarray) -> np.ndarray:
    """Exact adjoint of ``cell_gradient`` scaled by cell area, as a (ny, nx) array.

    Returns the nodal vector r with sum_i eta_i r_i = sum_cells theta . grad(eta) h^2.
    """
    tx = theta[..., 0]
    ty = theta[..., 1]
    s = grid.h / 2.0  # (1 / (2h)) * h^2
    acc = np.zeros(grid.shape)
    acc[:-1, :-1] += (-tx - ty) * s
    acc[:-1, 1:] += (tx - ty) * s
    acc[1:, :-1] += (-tx + ty) * s
    acc[1:, 1:] += (tx + ty) * s
    return acc


def divergence_residual(theta: VectorField, rho: ScalarField) -> ScalarField:
    """Nodal residual of -div(theta) = rho in transpose-gradient form.

    At interior nodes of an optimal flux the residual vanishes; at boundary
    nodes it equals the discrete normal-trace measure theta.n.  Summed over
    all nodes the gradient term telescopes to zero, so the residual total is
    minus the integral of rho.
    """
    _check_grids(theta, rho)
    r = gradient_transpose(theta.grid, theta.values)
    r -= rho.values * rho.grid.node_mass
    return ScalarField(theta.grid, r)


def boundary_part(residual: ScalarField) -> BoundaryMeasure:
    """Residual weights at boundary nodes, i.e. the discrete theta.n measure."""
    return BoundaryMeasure(residual.grid, residual.flat[residual.grid.boundary_nodes])


def integrate(f: ScalarField) -> float:
    """Trapezoidal quadrature of a nodal field; exact on bilinear fields."""
    return float(np.sum(f.values * f.grid.node_mass))


# ---------------------------------------------------------------------------
# CSV serialization.  Numeric output uses 17 significant digits so re-runs
# with identical inputs are byte-identical.
# ---------------------------------------------------------------------------

_HEADER = "nx,ny,h,ox,oy"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _grid_header(grid: Grid) -> str:
    return ",".join(
        [str(grid.nx), str(grid.ny), _fmt(grid.h), _fmt(grid.origin[0]), _fmt(grid.origin[1])]
    )


def _parse_grid_header(lines: list[str]) -> Grid:
    if not lines or lines[0].strip() != _HEADER:
        raise ValueError(f"expected header line '{_HEADER}'")
    parts = lines[1].split(",")
    return Grid(int(parts[0]), int(parts[1]), float(parts[2]), (float(parts[3]), float(parts[4])))


def write_scalar_csv(path, f: ScalarField) -> None:
    rows = [_HEADER, _grid_header(f.grid)]
    rows.extend(_fmt(v) for v in f.flat)
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def read_scalar_csv(path) -> ScalarField:
    with open(path) as fh:
        lines = fh.read().strip().split("\n")
    grid = _parse_grid_header(lines)
    values = np.array([float(s) for s in lines[2:]])
    return ScalarField(grid, values.reshape(grid.shape))


def write_vector_csv(path, f: VectorField) -> None:
    rows = [_HEADER, _grid_header(f.grid)]
    flat = f.values.reshape(-1, 2)
    rows.extend(f"{_fmt(a)},{_fmt(b)}" for a, b in flat)
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def read_vector_csv(path) -> VectorField:
    with open(path) as fh:
        lines = fh.read().strip().split("\n")
    grid = _parse_grid_header(lines)
    vals = np.array([[float(a) for a in line.split(",")] for line in lines[2:]])
    return VectorField(grid, vals.reshape(grid.ny - 1, grid.nx - 1, 2))


def write_boundary_csv(path, m: BoundaryMeasure) -> None:
    rows = [_HEADER, _grid_header(m.grid)]
    rows.extend(f"{idx},{_fmt(w)}" for idx, w in zip(m.grid.boundary_nodes, m.weights))
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def read_boundary_csv(path) -> BoundaryMeasure:
    with open(path) as fh:
        lines = fh.read().strip().split("\n")
    grid = _parse_grid_header(lines)
    pairs = [line.split(",") for line in lines[2:]]
    idx = np.array([int(p[0]) for p in pairs])
    if not np.array_equal(idx, grid.boundary_nodes):
        raise ValueError("boundary node order does not match the grid")
    return BoundaryMeasure(grid, np.array([float(p[1]) for p in pairs]))
