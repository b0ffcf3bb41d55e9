"""Grid, field, and gradient/divergence pairing tests."""

import numpy as np
import pytest

import finsler_hj as fh
from finsler_hj.geometry import (
    GridMismatch,
    boundary_part,
    gradient_transpose,
    read_boundary_csv,
    read_scalar_csv,
    read_vector_csv,
    write_boundary_csv,
    write_scalar_csv,
    write_vector_csv,
)


class TestGrid:
    def test_boundary_interior_partition(self):
        g = fh.Grid(5, 7, 0.5)
        all_nodes = np.sort(np.concatenate([g.boundary_nodes, g.interior_nodes]))
        assert np.array_equal(all_nodes, np.arange(g.n_nodes))
        assert len(g.boundary_nodes) == 2 * (5 + 7) - 4

    def test_boundary_order_is_counterclockwise(self):
        g = fh.Grid(3, 3, 1.0)
        pts = g.boundary_points()
        # Shoelace area of the traversal must be positive for ccw.
        x, y = pts[:, 0], pts[:, 1]
        area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert area > 0
        assert np.allclose(pts[0], (0.0, 0.0))

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            fh.Grid(2, 5, 0.1)
        with pytest.raises(ValueError):
            fh.Grid(5, 5, 0.0)

    def test_node_mass_pattern(self):
        g = fh.Grid(4, 4, 0.5)
        m = g.node_mass
        assert m[0, 0] == pytest.approx(0.25 * 0.25)
        assert m[0, 1] == pytest.approx(0.25 * 0.5)
        assert m[1, 1] == pytest.approx(0.25)


class TestCellGradient:
    def test_exact_on_affine(self):
        g = fh.Grid(5, 5, 0.25)
        u = fh.ScalarField.from_function(g, lambda x, y: x)
        gv = fh.cell_gradient(u).values
        assert np.allclose(gv[..., 0], 1.0) and np.allclose(gv[..., 1], 0.0)
        u2 = fh.ScalarField.from_function(g, lambda x, y: 2 * x - 3 * y + 1)
        gv2 = fh.cell_gradient(u2).values
        assert np.allclose(gv2[..., 0], 2.0) and np.allclose(gv2[..., 1], -3.0)

    def test_annihilates_constants(self):
        g = fh.Grid(6, 4, 0.1)
        u = fh.ScalarField.constant(g, 3.7)
        assert np.all(fh.cell_gradient(u).values == 0.0)

    def test_quadratic_midpoint_rule(self):
        # d/dx of x^2 sampled at the cell center is exact for this stencil.
        g = fh.Grid(5, 5, 0.25)
        u = fh.ScalarField.from_function(g, lambda x, y: x * x)
        gv = fh.cell_gradient(u).values
        xc = g.cell_centers[..., 0]
        assert np.allclose(gv[..., 0], 2 * xc)
        assert np.allclose(gv[..., 1], 0.0)


class TestDivergenceResidual:
    def test_zero_on_zero_data(self):
        g = fh.Grid(5, 5, 0.25)
        r = fh.divergence_residual(fh.VectorField.zeros(g), fh.ScalarField.constant(g, 0.0))
        assert np.all(r.values == 0.0)

    def test_uniform_flux_on_3x3(self):
        # Hand-evaluated transpose stencil for Theta = (1, 0) on the unit square:
        # interior zero, normal-trace weights -h at the left mid-edge node,
        # +h at the right one, -h/2 / +h/2 at the respective corners, and
        # zero on the flux-parallel top and bottom edges.
        g = fh.Grid(3, 3, 0.5)
        theta = fh.VectorField(g, np.broadcast_to([1.0, 0.0], (2, 2, 2)).copy())
        r = fh.divergence_residual(theta, fh.ScalarField.constant(g, 0.0))
        v = r.values
        assert v[1, 1] == pytest.approx(0.0, abs=1e-15)
        assert v[1, 0] == pytest.approx(-0.5)
        assert v[1, 2] == pytest.approx(+0.5)
        assert v[0, 0] == pytest.approx(-0.25)
        assert v[2, 2] == pytest.approx(+0.25)
        assert v[0, 1] == pytest.approx(0.0, abs=1e-15)
        assert v[2, 1] == pytest.approx(0.0, abs=1e-15)
        assert r.values.sum() == pytest.approx(0.0, abs=1e-15)

    def test_total_equals_minus_source_mass(self):
        rng = np.random.default_rng(5)
        g = fh.Grid(7, 6, 0.3)
        theta = fh.VectorField(g, rng.standard_normal((g.ny - 1, g.nx - 1, 2)))
        rho = fh.ScalarField(g, rng.standard_normal(g.shape))
        r = fh.divergence_residual(theta, rho)
        assert r.values.sum() == pytest.approx(-fh.integrate(rho), abs=1e-12)

    def test_summation_by_parts_identity(self):
        rng = np.random.default_rng(6)
        g = fh.Grid(8, 5, 0.2)
        theta = rng.standard_normal((g.ny - 1, g.nx - 1, 2))
        rho = fh.ScalarField(g, rng.standard_normal(g.shape))
        eta = fh.ScalarField(g, rng.standard_normal(g.shape))
        r = fh.divergence_residual(fh.VectorField(g, theta), rho)
        lhs = float(np.sum(eta.values * r.values))
        ge = fh.cell_gradient(eta).values
        rhs = float(np.sum(theta * ge) * g.h ** 2 - np.sum(eta.values * rho.values * g.node_mass))
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_grid_mismatch(self):
        theta = fh.VectorField.zeros(fh.Grid(4, 4, 0.25))
        rho = fh.ScalarField.constant(fh.Grid(5, 5, 0.25), 0.0)
        with pytest.raises(GridMismatch):
            fh.divergence_residual(theta, rho)


class TestIntegrate:
    def test_constant(self):
        g = fh.Grid(9, 9, 1 / 8)
        assert fh.integrate(fh.ScalarField.constant(g, 1.0)) == pytest.approx(1.0)

    def test_linear(self):
        g = fh.Grid(9, 9, 1 / 8)
        f = fh.ScalarField.from_function(g, lambda x, y: x)
        assert fh.integrate(f) == pytest.approx(0.5)

    def test_distance_pyramid(self):
        # Exact integral of dist(., boundary) over the unit square is 1/6.
        g = fh.Grid(129, 129, 1 / 128)
        f = fh.ScalarField.from_function(
            g, lambda x, y: np.minimum(np.minimum(x, 1 - x), np.minimum(y, 1 - y))
        )
        assert abs(fh.integrate(f) - 1 / 6) <= 2e-3


class TestSerialization:
    def test_scalar_roundtrip_and_determinism(self, tmp_path):
        rng = np.random.default_rng(1)
        g = fh.Grid(6, 5, 0.125, (0.5, -1.0))
        f = fh.ScalarField(g, rng.standard_normal(g.shape))
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_scalar_csv(p1, f)
        write_scalar_csv(p2, f)
        assert p1.read_bytes() == p2.read_bytes()
        back = read_scalar_csv(p1)
        assert back.grid.same_as(g)
        assert np.array_equal(back.values, f.values)

    def test_vector_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        g = fh.Grid(5, 7, 0.25)
        f = fh.VectorField(g, rng.standard_normal((g.ny - 1, g.nx - 1, 2)))
        path = tmp_path / "v.csv"
        write_vector_csv(path, f)
        assert np.array_equal(read_vector_csv(path).values, f.values)

    def test_boundary_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        g = fh.Grid(5, 5, 0.25)
        m = fh.BoundaryMeasure(g, rng.standard_normal(len(g.boundary_nodes)))
        path = tmp_path / "bm.csv"
        write_boundary_csv(path, m)
        assert np.array_equal(read_boundary_csv(path).weights, m.weights)


class TestBoundaryMeasure:
    def test_parts_recover_signed_weights(self):
        g = fh.Grid(3, 3, 1.0)
        w = np.linspace(-1, 1, len(g.boundary_nodes))
        m = fh.BoundaryMeasure(g, w)
        assert np.allclose(m.positive_part() - m.negative_part(), w)
        assert np.all(m.positive_part() >= 0) and np.all(m.negative_part() >= 0)

    def test_boundary_part_of_residual(self):
        rng = np.random.default_rng(4)
        g = fh.Grid(5, 4, 0.5)
        theta = fh.VectorField(g, rng.standard_normal((g.ny - 1, g.nx - 1, 2)))
        r = fh.divergence_residual(theta, fh.ScalarField.constant(g, 0.0))
        bm = boundary_part(r)
        assert np.array_equal(bm.weights, r.flat[g.boundary_nodes])
