"""Kantorovich-Rubinstein and Beckmann objectives plus optimality-system checks.

The solver's limit bundle (u, Theta, theta) should tie together three convex
problems that share one optimal value: the potential maximization of
integral u rho over dual-feasible obstacle-respecting potentials, the
minimal-flow problem with boundary import/export costs, and the relaxed
plan problem, which is verified here by value only.  This module evaluates
both accessible objectives, measures the duality gap, checks the pointwise
Monge-Kantorovich optimality system through flux-weighted residuals, and
certifies the potential property via the boundary-augmented integral
identity.  Everything operates on immutable fields and is safe to run over
many rungs concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .distance import Direction, build_lattice_graph, finsler_dijkstra, stencil_relative_error
from .geometry import (
    BoundaryMeasure,
    ScalarField,
    VectorField,
    cell_gradient,
)
from .metric import FinslerMetric, WeightedEuclidean
from .solver import LadderResult, ProblemSpec, PSolution, contact_delta

_MASS_FLOOR = 1e-6  # part fraction below which a complementarity leak is vacuous


class NonpositiveWeight(ValueError):
    """The weighted-Euclidean special case needs a strictly positive weight."""


def kr_objective(u: ScalarField, rho: ScalarField) -> float:
    """Potential objective: nodal quadrature of u rho."""
    return float(np.sum(u.values * rho.values * u.grid.node_mass))


def kr_feasibility(u: ScalarField, metric: FinslerMetric) -> float:
    """Max over cells of H*(x, grad u); at most one for dual-feasible u."""
    g = cell_gradient(u)
    return float(np.max(metric.dual(u.grid.cell_centers, g.values)))


def beckmann_objective(
    theta: VectorField,
    boundary: BoundaryMeasure,
    phi: np.ndarray,
    psi: np.ndarray,
    metric: FinslerMetric,
) -> float:
    """Minimal-flow objective with boundary import/export costs.

    By 1-homogeneity the flow cost is the cell sum of H(x, Theta) h^2; cells
    with vanishing flux contribute nothing.  The boundary terms price the
    negative part of the measure at psi and credit the positive part at phi.
    """
    grid = theta.grid
    cost = float(np.sum(metric.primal(grid.cell_centers, theta.values)) * grid.h ** 2)
    bterm = float(np.sum(psi * boundary.negative_part()) - np.sum(phi * boundary.positive_part()))
    return cost + bterm


def mk_residuals(
    u: ScalarField, theta: VectorField, metric: FinslerMetric, delta: float | None = None
) -> tuple[float, float]:
    """Flux-weighted residuals of the Monge-Kantorovich optimality system.

    With transport density w = H(x, Theta) per cell, returns the w-weighted
    means of |Theta - w dH*(x, grad u)| / (w + delta)  and  |H*(x, grad u) - 1|.
    The weighting realizes that the pointwise identities only hold where the
    flux lives; empty-flux bundles report (0, 0).
    """
    grid = u.grid
    centers = grid.cell_centers
    w = metric.primal(centers, theta.values)
    total = float(w.sum())
    if total <= 0.0:
        return 0.0, 0.0
    if delta is None:
        delta = 1e-12 * float(w.max())
    g = cell_gradient(u)
    hs, dh = metric.dual_and_grad(centers, g.values)
    mismatch = np.linalg.norm(theta.values - w[..., None] * dh, axis=-1)
    r1 = float(np.sum(w * mismatch / (w + delta)) / total)
    r2 = float(np.sum(w * np.abs(hs - 1.0)) / total)
    return r1, r2


def potential_identity(
    u: ScalarField,
    rho: ScalarField,
    theta: VectorField,
    boundary: BoundaryMeasure,
    metric: FinslerMetric,
) -> tuple[float, float, float]:
    """Both sides of the Kantorovich-potential identity and their gap.

    The left side pairs the potential with the full source rho + theta, the
    right side is the flow cost; a small gap certifies u as a potential for
    transport between rho^+ + theta^+ and rho^- + theta^-.
    """
    grid = u.grid
    lhs = kr_objective(u, rho) + float(np.sum(u.boundary_values() * boundary.weights))
    rhs = float(np.sum(metric.primal(grid.cell_centers, theta.values)) * grid.h ** 2)
    gap = abs(lhs - rhs) / (1.0 + abs(rhs))
    return lhs, rhs, gap


def complementarity_leak(
    sol: PSolution, spec: ProblemSpec
) -> tuple[float, float]:
    """Fractions of theta^+ mass off the lower contact set and theta^- off the upper.

    The contact sets are thickened by the solver's shared delta.  A part
    whose total mass is negligible against the measure's full mass reports
    zero leak, so problems whose limit has a one-sided measure stay well
    defined.
    """
    delta = contact_delta(sol, spec)
    ub = sol.u.boundary_values()
    wp = sol.theta_boundary.positive_part()
    wm = sol.theta_boundary.negative_part()
    total = float(np.abs(sol.theta_boundary.weights).sum())

    def leak(weights, contact):
        part = float(weights.sum())
        if part <= _MASS_FLOOR * max(total, 1e-300):
            return 0.0
        return float(weights[~contact].sum() / part)

    # Contact with the lower obstacle counts at the stated phi or at the
    # offset lower bound actually enforced in the nonstrict case.
    on_phi = (np.abs(ub - spec.phi) <= delta) | (np.abs(ub - spec.effective_phi()) <= delta)
    on_psi = np.abs(ub - spec.psi) <= delta
    return leak(wp, on_phi), leak(wm, on_psi)


def lipschitz_violation(
    u: ScalarField,
    metric: FinslerMetric,
    n_sources: int = 64,
    rng: np.random.Generator | None = None,
) -> float:
    """Max over sampled pairs of u(x) - u(y) - d_H(y, x).

    Sources are sampled nodes; each contributes a full single-source
    distance field, so the maximum ranges over n_sources times n_nodes
    pairs.  Nonpositive values mean u is 1-Lipschitz for the intrinsic
    distance on the sampled pairs.
    """
    rng = rng or np.random.default_rng(0)
    grid = u.grid
    sources = rng.choice(grid.n_nodes, size=min(n_sources, grid.n_nodes), replace=False)
    graph = build_lattice_graph(metric, grid)
    worst = -np.inf
    uf = u.flat
    for y in sources:
        d = finsler_dijkstra(metric, grid, int(y), Direction.FROM_SOURCE, graph=graph)
        worst = max(worst, float(np.max(uf - uf[y] - d.values)))
    return worst


@dataclass
class DualityReport:
    """Scalar certificate bundle for one limit rung."""

    kr_value: float
    beckmann_value: float
    gap_abs: float
    gap_rel: float
    kr_feasibility: float
    complementarity_leak: tuple[float, float]
    lipschitz_violation: float
    mk_residuals: tuple[float, float]
    potential_identity_gap: float
    mass_balance_gap: float
    oracle_sup_gap: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def weak_duality_ok(self) -> bool:
        return self.kr_value <= self.beckmann_value + 1e-6 * (1.0 + abs(self.beckmann_value))


def duality_report(
    spec: ProblemSpec,
    sol: PSolution,
    oracle: ScalarField | None = None,
    rng: np.random.Generator | None = None,
    n_lipschitz_sources: int = 64,
) -> DualityReport:
    """Assemble the full duality and optimality-system report for one rung."""
    kr = kr_objective(sol.u, spec.rho)
    bk = beckmann_objective(sol.theta, sol.theta_boundary, spec.phi, spec.psi, spec.metric)
    gap_abs = bk - kr
    gap_rel = abs(gap_abs) / (1.0 + abs(kr))
    r1, r2 = mk_residuals(sol.u, sol.theta, spec.metric)
    _, _, pid_gap = potential_identity(
        sol.u, spec.rho, sol.theta, sol.theta_boundary, spec.metric
    )
    from .solver import mass_balance_gap  # local import to avoid cycle at load

    return DualityReport(
        kr_value=kr,
        beckmann_value=bk,
        gap_abs=float(gap_abs),
        gap_rel=float(gap_rel),
        kr_feasibility=kr_feasibility(sol.u, spec.metric),
        complementarity_leak=complementarity_leak(sol, spec),
        lipschitz_violation=lipschitz_violation(
            sol.u, spec.metric, n_sources=n_lipschitz_sources, rng=rng
        ),
        mk_residuals=(r1, r2),
        potential_identity_gap=float(pid_gap),
        mass_balance_gap=mass_balance_gap(sol, spec),
        oracle_sup_gap=(
            None if oracle is None else float(np.max(np.abs(sol.u.values - oracle.values)))
        ),
    )


def run_weighted_euclidean(spec: ProblemSpec, rng=None) -> tuple[LadderResult, DualityReport]:
    """Full pipeline for the weighted-Euclidean special case H = k(x)|p|.

    Cross-checks the ladder limit against the weighted shortest-path
    envelope, the independent oracle for this family.
    """
    from .distance import maximal_subsolution
    from .solver import solve_ladder

    if not isinstance(spec.metric, WeightedEuclidean):
        raise ValueError("spec must use a WeightedEuclidean metric")
    k = spec.metric.k
    kmin = float(np.min(k.values)) if hasattr(k, "values") else float(k)
    if kmin <= 0:
        raise NonpositiveWeight("weight k must be strictly positive")

    spec.validate()
    ladder = solve_ladder(spec)
    oracle = maximal_subsolution(spec.metric, spec.grid, spec.phi, spec.psi)
    report = duality_report(spec, ladder.final, oracle=oracle, rng=rng)
    return ladder, report


def stencil_tolerance_for(u: ScalarField, metric: FinslerMetric) -> float:
    """Lipschitz-check slack: metrication error times the diameter scale."""
    _, b = metric.bounds(u.grid)
    return stencil_relative_error() * u.grid.diameter * b
