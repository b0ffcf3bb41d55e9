"""Shared fixtures: the expensive ladder solves run once per session."""

import numpy as np
import pytest

import finsler_hj as fh
from finsler_hj.metric import GridField


def unit_square_spec(n, metric=None, rho=1.0, phi=0.0, psi=0.0, p_ladder=None, **kw):
    grid = fh.Grid(n, n, 1.0 / (n - 1))
    nb = len(grid.boundary_nodes)
    return fh.ProblemSpec(
        grid=grid,
        metric=metric or fh.WeightedEuclidean(1.0),
        rho=fh.ScalarField.constant(grid, rho),
        phi=np.full(nb, float(phi)),
        psi=np.full(nb, float(psi)),
        p_ladder=p_ladder or (2, 4, 8, 16, 32, 64),
        **kw,
    )


@pytest.fixture(scope="session")
def eikonal_case():
    """65x65 unit-square eikonal ladder with its shortest-path oracle."""
    spec = unit_square_spec(65)
    spec.validate()
    ladder = fh.solve_ladder(spec)
    oracle = fh.maximal_subsolution(spec.metric, spec.grid, spec.phi, spec.psi)
    report = fh.duality_report(spec, ladder.final, oracle=oracle, rng=np.random.default_rng(0))
    return spec, ladder, oracle, report


@pytest.fixture(scope="session")
def weighted_case():
    """65x65 ladder with weight k = 1 + x, checked against the weighted oracle."""
    grid = fh.Grid(65, 65, 1.0 / 64)
    nb = len(grid.boundary_nodes)
    kf = GridField(grid, 1.0 + grid.node_points[..., 0])
    spec = fh.ProblemSpec(
        grid=grid,
        metric=fh.WeightedEuclidean(kf),
        rho=fh.ScalarField.constant(grid, 1.0),
        phi=np.zeros(nb),
        psi=np.zeros(nb),
    )
    ladder, report = fh.run_weighted_euclidean(spec, rng=np.random.default_rng(1))
    return spec, ladder, report


@pytest.fixture(scope="session")
def obstacle_case():
    """65x65 ladder with phi = 0, psi = 0.3, rho = 1."""
    spec = unit_square_spec(65, psi=0.3)
    spec.validate()
    ladder = fh.solve_ladder(spec)
    oracle = fh.maximal_subsolution(spec.metric, spec.grid, spec.phi, spec.psi)
    return spec, ladder, oracle


@pytest.fixture(scope="session")
def shifted_case():
    """33x33 ladder under the asymmetric drift gauge |p| + (0.5, 0).p."""
    spec = unit_square_spec(33, metric=fh.Shifted(np.array([0.5, 0.0])))
    spec.validate()
    ladder = fh.solve_ladder(spec)
    report = fh.duality_report(
        spec, ladder.final, rng=np.random.default_rng(2), n_lipschitz_sources=16
    )
    return spec, ladder, report
