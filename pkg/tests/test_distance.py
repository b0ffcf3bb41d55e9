"""Lattice shortest-path distances, compatibility gate, and envelope oracles."""

import numpy as np
import pytest

import finsler_hj as fh
from finsler_hj.distance import (
    Compatibility,
    Direction,
    EmptySource,
    IncompatibleData,
    build_lattice_graph,
    stencil_relative_error,
)

UNIT = fh.Grid(65, 65, 1 / 64)
NB = len(UNIT.boundary_nodes)


def node_at(grid, ix, iy):
    return iy * grid.nx + ix


class TestFinslerDijkstra:
    def test_axis_geodesic_exact(self):
        d = fh.finsler_dijkstra(fh.WeightedEuclidean(1.0), UNIT, 0)
        assert d.values[node_at(UNIT, 64, 0)] == pytest.approx(1.0, abs=1e-12)

    def test_riemannian_straight_geodesic(self):
        m = fh.Riemannian(1.0, 0.0, 4.0)
        d = fh.finsler_dijkstra(m, UNIT, 0)
        assert d.values[node_at(UNIT, 0, 64)] == pytest.approx(2.0, rel=0.005)

    def test_shifted_asymmetric_distances(self):
        m = fh.Shifted(np.array([0.5, 0.0]))
        src = node_at(UNIT, 0, 0)
        tgt = node_at(UNIT, 64, 0)
        d_fwd = fh.finsler_dijkstra(m, UNIT, src, Direction.FROM_SOURCE)
        d_bwd = fh.finsler_dijkstra(m, UNIT, src, Direction.TO_SOURCE)
        assert d_fwd.values[tgt] == pytest.approx(1.5, rel=0.01)
        assert d_bwd.values[tgt] == pytest.approx(0.5, rel=0.01)

    def test_stencil_consistency_bound(self):
        d = fh.finsler_dijkstra(fh.WeightedEuclidean(1.0), UNIT, 0)
        exact = np.linalg.norm(UNIT.node_points.reshape(-1, 2), axis=1)
        exact[0] = 1.0
        rel = (d.values - exact) / exact
        rel[0] = 0.0
        assert rel.max() <= stencil_relative_error() * (1 + 1e-9)
        assert rel.min() >= -1e-12  # graph distances never undershoot

    def test_nondegeneracy_sandwich(self):
        m = fh.Shifted(np.array([0.3, 0.2]))
        a, b = m.bounds()
        d = fh.finsler_dijkstra(m, UNIT, 0)
        eucl = np.linalg.norm(UNIT.node_points.reshape(-1, 2), axis=1)
        assert np.all(d.values >= a * eucl - 1e-10)
        assert np.all(d.values <= b * eucl * (1 + stencil_relative_error()) + 1e-10)

    def test_scaling_covariance_exact(self):
        d1 = fh.finsler_dijkstra(fh.WeightedEuclidean(1.0), UNIT, 0)
        d3 = fh.finsler_dijkstra(fh.WeightedEuclidean(3.0), UNIT, 0)
        assert np.allclose(d3.values, 3.0 * d1.values, rtol=0, atol=1e-12)

    def test_triangle_inequality_on_graph(self):
        g = fh.Grid(17, 17, 1 / 16)
        m = fh.Riemannian(1.0, 0.5, 3.0)
        graph = build_lattice_graph(m, g)
        rng = np.random.default_rng(0)
        nodes = rng.choice(g.n_nodes, size=6, replace=False)
        dists = {int(y): fh.finsler_dijkstra(m, g, int(y), graph=graph).values for y in nodes}
        for x in nodes:
            for y in nodes:
                for z in nodes:
                    lhs = dists[int(x)][z]
                    rhs = dists[int(x)][y] + dists[int(y)][z]
                    assert lhs <= rhs + 1e-10

    def test_zero_at_source_and_empty_source(self):
        d = fh.finsler_dijkstra(fh.WeightedEuclidean(1.0), UNIT, 7)
        assert d.values[7] == 0.0
        with pytest.raises(EmptySource):
            fh.finsler_dijkstra(fh.WeightedEuclidean(1.0), UNIT, np.array([], dtype=int))

    def test_eight_neighbor_stencil_option(self):
        d = fh.finsler_dijkstra(fh.WeightedEuclidean(1.0), UNIT, 0, offsets=fh.STENCIL_8)
        assert d.values[node_at(UNIT, 64, 0)] == pytest.approx(1.0, abs=1e-12)
        assert stencil_relative_error(fh.STENCIL_8) > stencil_relative_error(fh.STENCIL_16)


class TestCheckCompatibility:
    def test_strict(self):
        r = fh.check_compatibility(fh.WeightedEuclidean(1.0), UNIT, np.full(NB, -1.0), np.zeros(NB))
        assert r.status is Compatibility.STRICT
        assert r.margin >= 1.0 - 1e-12

    def test_nonstrict_equal_data(self):
        r = fh.check_compatibility(fh.WeightedEuclidean(1.0), UNIT, np.zeros(NB), np.zeros(NB))
        assert r.status is Compatibility.NONSTRICT
        assert abs(r.margin) <= 1e-12

    def test_violated_with_witness_at_spike(self):
        phi = np.zeros(NB)
        phi[0] = 2.0  # corner node 0 in boundary order
        r = fh.check_compatibility(fh.WeightedEuclidean(1.0), UNIT, phi, np.zeros(NB))
        assert r.status is Compatibility.VIOLATED
        assert r.margin == pytest.approx(-2.0)
        assert r.witness == (0, 0)  # both ends at the spiked corner

    def test_sampled_flag_off_for_small_boundaries(self):
        r = fh.check_compatibility(fh.WeightedEuclidean(1.0), UNIT, np.zeros(NB), np.zeros(NB))
        assert not r.sampled


class TestMaximalSubsolution:
    def test_distance_pyramid(self):
        v = fh.maximal_subsolution(fh.WeightedEuclidean(1.0), UNIT, np.zeros(NB), np.zeros(NB))
        assert v.values[32, 32] == pytest.approx(0.5, abs=1e-12)
        assert np.all(v.values >= -1e-12)
        assert np.allclose(v.values.reshape(-1)[UNIT.boundary_nodes], 0.0, atol=1e-12)

    def test_linear_boundary_data(self):
        gb = UNIT.boundary_points()[:, 0]
        v = fh.maximal_subsolution(fh.WeightedEuclidean(1.0), UNIT, gb, gb)
        # By-hand minimization of g(y) + d(y, x) at the center: the left-edge
        # path 0 + 0.5 beats the bottom path 0.5 + 0.5.
        assert v.values[32, 32] == pytest.approx(0.5, abs=1e-9)

    def test_constant_shift(self):
        v0 = fh.maximal_subsolution(fh.WeightedEuclidean(1.0), UNIT, np.zeros(NB), np.zeros(NB))
        v10 = fh.maximal_subsolution(
            fh.WeightedEuclidean(1.0), UNIT, np.zeros(NB), np.full(NB, 10.0)
        )
        assert v10.values[32, 32] == pytest.approx(10.5, abs=1e-12)
        assert np.allclose(v10.values, v0.values + 10.0, atol=1e-12)

    def test_one_lipschitz_for_intrinsic_distance(self):
        m = fh.Riemannian(1.0, 0.0, 4.0)
        v = fh.maximal_subsolution(m, UNIT, np.zeros(NB), np.zeros(NB))
        graph = build_lattice_graph(m, UNIT)
        rng = np.random.default_rng(1)
        vf = v.values.reshape(-1)
        for y in rng.choice(UNIT.n_nodes, size=5, replace=False):
            d = fh.finsler_dijkstra(m, UNIT, int(y), graph=graph)
            assert np.max(vf - vf[y] - d.values) <= 1e-10

    def test_incompatible_data_raises(self):
        phi = np.zeros(NB)
        phi[0] = 2.0
        with pytest.raises(IncompatibleData):
            fh.maximal_subsolution(fh.WeightedEuclidean(1.0), UNIT, phi, np.zeros(NB))


class TestLowerEnvelope:
    def test_negative_pyramid(self):
        w = fh.lower_envelope(fh.WeightedEuclidean(1.0), UNIT, np.zeros(NB))
        assert w.values[32, 32] == pytest.approx(-0.5, abs=1e-12)

    def test_constant_data(self):
        w = fh.lower_envelope(fh.WeightedEuclidean(1.0), UNIT, np.full(NB, 2.0))
        v = fh.maximal_subsolution(fh.WeightedEuclidean(1.0), UNIT, np.zeros(NB), np.zeros(NB))
        assert np.allclose(w.values, 2.0 - v.values, atol=1e-12)

    def test_below_upper_envelope(self):
        w = fh.lower_envelope(fh.WeightedEuclidean(1.0), UNIT, np.zeros(NB))
        v = fh.maximal_subsolution(fh.WeightedEuclidean(1.0), UNIT, np.zeros(NB), np.zeros(NB))
        assert np.all(w.values <= v.values + 1e-12)


class TestDistanceFieldSerialization:
    def test_roundtrip_with_sidecar(self, tmp_path):
        m = fh.Shifted(np.array([0.3, 0.0]))
        g = fh.Grid(9, 9, 1 / 8)
        d = fh.finsler_dijkstra(m, g, [0, 4], Direction.TO_SOURCE)
        path = tmp_path / "dist.csv"
        fh.write_distance_field(path, d)
        assert (tmp_path / "dist.json").exists()
        back = fh.read_distance_field(path)
        assert np.allclose(back.values, d.values)
        assert back.direction is Direction.TO_SOURCE
        assert list(back.source) == [0, 4]
        assert back.offsets == tuple(fh.STENCIL_16)


class TestDistanceFieldScaling:
    def test_envelope_shift_covariance(self):
        rng = np.random.default_rng(2)
        psi = rng.uniform(0, 0.2, NB)
        v = fh.maximal_subsolution(fh.WeightedEuclidean(1.0), UNIT, psi - 1.0, psi)
        vc = fh.maximal_subsolution(fh.WeightedEuclidean(1.0), UNIT, psi - 1.0 + 3.0, psi + 3.0)
        assert np.allclose(vc.values, v.values + 3.0, atol=1e-12)
