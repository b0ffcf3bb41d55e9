"""Intrinsic Finsler distances by shortest paths on the lattice graph.

Curve length under a metric H is discretized on the grid graph whose edges
join each node to its 16-neighborhood (8 axis/diagonal moves plus 8 knight
moves), with edge weight H evaluated at the edge midpoint on the edge vector.
Graph distances overestimate the continuous ones by at most the metrication
factor 1/cos(gamma/2) - 1, where gamma is the largest angular gap between
stencil directions (about 2.75 percent for 16 neighbors); axis-aligned
geodesics are exact.  Asymmetric metrics are handled by explicit edge
orientation: distances from a source use the forward graph, distances to a
source run on the reversed graph.

Shortest paths are delegated to scipy's compiled Dijkstra.  Offsets on
multi-source runs (boundary data entering min over y of psi(y) + d(y, x))
are realized by a virtual super-source wired to the sources with the offset
weights, shifted to keep every edge strictly positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .geometry import Grid, ScalarField, read_scalar_csv, write_scalar_csv
from .metric import FinslerMetric

STENCIL_8 = (
    (1, 0), (0, 1), (-1, 0), (0, -1),
    (1, 1), (-1, 1), (-1, -1), (1, -1),
)
STENCIL_16 = STENCIL_8 + (
    (2, 1), (1, 2), (-1, 2), (-2, 1),
    (-2, -1), (-1, -2), (1, -2), (2, -1),
)


class EmptySource(ValueError):
    """A distance run needs at least one source node."""


class IncompatibleData(RuntimeError):
    """Boundary data fail the compatibility condition beyond stencil tolerance."""


def stencil_relative_error(offsets=STENCIL_16) -> float:
    """Worst-case metrication overestimate of the stencil, 1/cos(gap/2) - 1."""
    angles = np.sort(np.arctan2([o[1] for o in offsets], [o[0] for o in offsets]))
    gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))
    return float(1.0 / np.cos(gaps.max() / 2.0) - 1.0)


def build_lattice_graph(metric: FinslerMetric, grid: Grid, offsets=STENCIL_16) -> csr_matrix:
    """Directed edge-weight matrix W[i, j] = H(midpoint(i, j), x_j - x_i)."""
    ny, nx = grid.shape
    pts = grid.node_points
    idx = np.arange(grid.n_nodes).reshape(ny, nx)
    rows, cols, weights = [], [], []
    for ox, oy in offsets:
        sx = slice(max(0, -ox), nx - max(0, ox))
        sy = slice(max(0, -oy), ny - max(0, oy))
        src = idx[sy, sx]
        dst = idx[max(0, oy): ny - max(0, -oy), max(0, ox): nx - max(0, -ox)]
        mid = 0.5 * (pts[sy, sx] + pts[max(0, oy): ny - max(0, -oy), max(0, ox): nx - max(0, -ox)])
        vec = np.array([ox * grid.h, oy * grid.h])
        w = metric.primal(mid.reshape(-1, 2), np.broadcast_to(vec, (src.size, 2)))
        rows.append(src.reshape(-1))
        cols.append(dst.reshape(-1))
        weights.append(w)
    return csr_matrix(
        (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_nodes, grid.n_nodes),
    )


class Direction(Enum):
    FROM_SOURCE = "from_source"
    TO_SOURCE = "to_source"


@dataclass
class DistanceField:
    """Per-node distances d_H(source, .) or d_H(., source)."""

    grid: Grid
    source: np.ndarray
    values: np.ndarray
    direction: Direction
    offsets: tuple

    def as_scalar_field(self) -> ScalarField:
        return ScalarField(self.grid, self.values.reshape(self.grid.shape), units="length")


def write_distance_field(path, field: DistanceField) -> None:
    """Values as a scalar-field CSV plus a JSON sidecar with the run metadata."""
    path = Path(path)
    write_scalar_csv(path, field.as_scalar_field())
    sidecar = {
        "source": [int(i) for i in np.atleast_1d(field.source)],
        "direction": field.direction.value,
        "stencil": [list(o) for o in field.offsets],
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_distance_field(path) -> DistanceField:
    path = Path(path)
    f = read_scalar_csv(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    return DistanceField(
        f.grid,
        np.asarray(meta["source"], dtype=int),
        f.values.reshape(-1),
        Direction(meta["direction"]),
        tuple(tuple(o) for o in meta["stencil"]),
    )


def finsler_dijkstra(
    metric: FinslerMetric,
    grid: Grid,
    source,
    direction: Direction | str = Direction.FROM_SOURCE,
    offsets=STENCIL_16,
    source_offsets: np.ndarray | None = None,
    graph: csr_matrix | None = None,
) -> DistanceField:
    """Single or multi-source shortest-path distances on the lattice graph.

    With ``source_offsets`` the result is min over sources y of
    offset(y) + d(y, x), the envelope used by the boundary-data oracles.
    """
    direction = Direction(direction)
    source = np.atleast_1d(np.asarray(source, dtype=int))
    if source.size == 0:
        raise EmptySource("source node set is empty")
    W = build_lattice_graph(metric, grid, offsets) if graph is None else graph
    if direction is Direction.TO_SOURCE:
        W = W.T.tocsr()

    if source_offsets is None:
        d = _csgraph_dijkstra(W, directed=True, indices=source, min_only=source.size > 1)
        values = d if source.size > 1 else d[0]
    else:
        values = _offset_envelope(W, source, np.asarray(source_offsets, dtype=float), grid)
    return DistanceField(grid, source, np.asarray(values), direction, tuple(offsets))


def _offset_envelope(W: csr_matrix, source, offsets_vals, grid: Grid) -> np.ndarray:
    # Virtual super-source; the constant shift keeps augmented weights > 0
    # and is subtracted afterwards (every path uses exactly one such edge).
    n = W.shape[0]
    base = float(offsets_vals.min())
    shift = grid.h
    coo = W.tocoo()
    rows = np.concatenate([coo.row, np.full(source.size, n)])
    cols = np.concatenate([coo.col, source])
    data = np.concatenate([coo.data, offsets_vals - base + shift])
    aug = csr_matrix((data, (rows, cols)), shape=(n + 1, n + 1))
    d = _csgraph_dijkstra(aug, directed=True, indices=n)
    return d[:n] - shift + base


class Compatibility(Enum):
    STRICT = "strict"
    NONSTRICT = "nonstrict"
    VIOLATED = "violated"


@dataclass
class CompatibilityResult:
    status: Compatibility
    margin: float
    witness: tuple[int, int]  # boundary node pair (y, x) attaining the margin
    tol: float
    sampled: bool


def compatibility_tolerance(metric: FinslerMetric, grid: Grid, offsets=STENCIL_16) -> float:
    """Discretization slack separating true violations from metrication noise."""
    _, b = metric.bounds(grid)
    return 2.0 * stencil_relative_error(offsets) * grid.diameter * b


def check_compatibility(
    metric: FinslerMetric,
    grid: Grid,
    phi: np.ndarray,
    psi: np.ndarray,
    offsets=STENCIL_16,
    max_sources: int = 1024,
    graph: csr_matrix | None = None,
) -> CompatibilityResult:
    """Classify min over boundary pairs (x, y) of d_H(y, x) - (phi(x) - psi(y)).

    Strictly positive margins admit the obstacle problem directly, margins
    within tolerance of zero require the approximation offset, and negative
    margins beyond tolerance mean no admissible function exists; the witness
    pair is returned for diagnostics.
    """
    bnodes = grid.boundary_nodes
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    sampled = bnodes.size > max_sources
    if sampled:
        sel = np.unique(np.linspace(0, bnodes.size - 1, max_sources).astype(int))
    else:
        sel = np.arange(bnodes.size)
    sources = bnodes[sel]

    W = build_lattice_graph(metric, grid, offsets) if graph is None else graph
    D = _csgraph_dijkstra(W, directed=True, indices=sources)  # D[i, :] = d(y_i, .)
    Dbb = D[:, bnodes]  # d(y_i, x_j)
    margin_mat = Dbb + psi[sel][:, None] - phi[None, :]
    i, j = np.unravel_index(np.argmin(margin_mat), margin_mat.shape)
    m = float(margin_mat[i, j])

    tol = compatibility_tolerance(metric, grid, offsets)
    if m > tol:
        status = Compatibility.STRICT
    elif m < -tol:
        status = Compatibility.VIOLATED
    else:
        status = Compatibility.NONSTRICT
    return CompatibilityResult(status, m, (int(sources[i]), int(bnodes[j])), tol, sampled)


def maximal_subsolution(
    metric: FinslerMetric,
    grid: Grid,
    phi: np.ndarray,
    psi: np.ndarray,
    offsets=STENCIL_16,
    graph: csr_matrix | None = None,
) -> ScalarField:
    """Upper envelope v(x) = min over boundary y of psi(y) + d_H(y, x).

    This is the maximal function that is 1-Lipschitz for d_H and sits below
    psi on the boundary; under compatibility it also dominates phi there,
    which is asserted within the stencil tolerance.
    """
    bnodes = grid.boundary_nodes
    dist = finsler_dijkstra(
        metric, grid, bnodes, Direction.FROM_SOURCE, offsets,
        source_offsets=np.asarray(psi, dtype=float), graph=graph,
    )
    v = dist.values
    tol = compatibility_tolerance(metric, grid, offsets)
    vb = v[bnodes]
    if np.any(vb < np.asarray(phi) - tol) or np.any(vb > np.asarray(psi) + 1e-12):
        raise IncompatibleData(
            "envelope leaves the obstacle band on the boundary; data are incompatible"
        )
    return ScalarField(grid, v.reshape(grid.shape), units="length")


def lower_envelope(
    metric: FinslerMetric,
    grid: Grid,
    phi: np.ndarray,
    offsets=STENCIL_16,
    graph: csr_matrix | None = None,
) -> ScalarField:
    """Lower envelope w(x) = max over boundary y of phi(y) - d_H(y, x)."""
    bnodes = grid.boundary_nodes
    dist = finsler_dijkstra(
        metric, grid, bnodes, Direction.FROM_SOURCE, offsets,
        source_offsets=-np.asarray(phi, dtype=float), graph=graph,
    )
    return ScalarField(grid, -dist.values.reshape(grid.shape), units="length")
