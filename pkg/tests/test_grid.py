import numpy as np
import pytest

from gpobstacle.errors import BadGeometry
from gpobstacle.grid import (ComplexField, ScalarField, boundary_trace,
                             build_exterior_grid, disk, divergence, ellipse,
                             gradient, gradient_cartesian, laplacian)


def interior_mask(g):
    m = np.zeros((g.n_radial, g.n_angular), dtype=bool)
    m[1:-1, :] = True
    return m.ravel()


class TestConstruction:
    def test_disk_counts_and_inner_ring(self):
        g = build_exterior_grid(disk(1.0), 8, 8, 10.0, 1.0)
        assert g.n_nodes == 64
        r = np.hypot(*g.node_coords[g.boundary_ring(0)].T)
        assert np.allclose(r, 1.0, atol=1e-14)

    def test_ellipse_boundary_on_curve(self):
        g = build_exterior_grid(ellipse(2.0, 1.0), 24, 48, 20.0)
        bc = g.node_coords[g.boundary_ring(0)]
        lhs = (bc[:, 0] / 2.0) ** 2 + bc[:, 1] ** 2
        assert np.max(np.abs(lhs - 1.0)) < 1e-12

    def test_geometric_stretch_ratio(self):
        g = build_exterior_grid(disk(1.0), 64, 16, 30.0, 1.1)
        dr = np.diff(g.q1)
        ratios = dr[1:] / dr[:-1]
        assert np.max(np.abs(ratios - 1.1)) < 1e-12

    def test_bad_geometry(self):
        with pytest.raises(BadGeometry):
            build_exterior_grid(disk(1.0), 16, 16, 0.5)
        with pytest.raises(BadGeometry):
            ellipse(1.0, 2.0)

    def test_cart_to_coords_roundtrip(self):
        for g in (build_exterior_grid(disk(1.0), 12, 20, 8.0),
                  build_exterior_grid(ellipse(2.0, 1.0), 12, 20, 8.0)):
            q, t = g.cart_to_coords(g.node_coords)
            Q, T = np.meshgrid(g.q1, g.thetas, indexing="ij")
            assert np.allclose(q, Q.ravel(), atol=1e-9)
            # wrap-safe angular comparison
            dt = np.angle(np.exp(1j * (t - T.ravel())))
            assert np.max(np.abs(dt)) < 1e-9


class TestOperators:
    def test_gradient_exact_on_coordinate_linear_functions(self):
        # the 3-point stencils are exact on functions linear in (q1, theta)
        g = build_exterior_grid(disk(1.0), 32, 64, 10.0, 1.03)
        Q, T = np.meshgrid(g.q1, g.thetas, indexing="ij")
        f = ScalarField(g, (2.0 * Q + 0.5 * np.unwrap(T, axis=1)).ravel())
        assert np.max(np.abs(g.Dq1 @ f.values - 2.0)) < 1e-10

    def test_gradient_of_x2_converges_to_e2(self):
        # x2 = r sin(theta) is not polynomial in theta, so the error is the
        # second-order angular truncation; it must shrink at order 2
        errs = []
        for n in (32, 64):
            g = build_exterior_grid(disk(1.0), n, 2 * n, 10.0, 1.0)
            f = ScalarField(g, g.node_coords[:, 1])
            vec = gradient_cartesian(f)
            ii = interior_mask(g)
            err = np.hypot(vec[ii, 0], vec[ii, 1] - 1.0)
            errs.append(np.max(err))
        assert errs[1] < errs[0] / 3.5
        assert errs[1] < 5e-4

    def test_gradient_constant_exact_zero(self):
        g = build_exterior_grid(ellipse(2.0, 1.0), 20, 40, 12.0)
        f = ScalarField(g, np.full(g.n_nodes, 3.7))
        f1, f2 = gradient(f)
        assert np.max(np.abs(f1.values)) < 1e-13
        assert np.max(np.abs(f2.values)) < 1e-13

    def test_laplacian_r2_is_4_second_order(self):
        # on a stretched grid the flux-form error on r^2 is O(h^2); on a
        # uniform grid it vanishes
        errs = []
        total = 1.04 ** 23
        for n in (24, 48):
            stretch = total ** (1.0 / (n - 1))
            g = build_exterior_grid(disk(1.0), n, 2 * n, 5.0, stretch)
            r2 = np.sum(g.node_coords**2, axis=1)
            lap = laplacian(ScalarField(g, r2)).values
            ii = interior_mask(g)
            errs.append(np.max(np.abs(lap[ii] - 4.0)))
        assert np.log2(errs[0] / errs[1]) > 1.9
        g = build_exterior_grid(disk(1.0), 24, 48, 5.0, 1.0)
        r2 = np.sum(g.node_coords**2, axis=1)
        lap = laplacian(ScalarField(g, r2)).values
        assert np.max(np.abs(lap[interior_mask(g)] - 4.0)) < 1e-9

    def test_refinement_convergence_smooth_field(self):
        # fixed smooth radial map: keep the total stretch, refine the count
        errs = []
        total = 1.05 ** 31
        for n in (64, 128):
            stretch = total ** (1.0 / (n - 1))
            g = build_exterior_grid(disk(1.0), n, 4 * n, 6.0, stretch)
            x, y = g.node_coords.T
            f = ScalarField(g, np.sin(x) * np.cos(y))
            lap = laplacian(f).values
            exact = -2.0 * np.sin(x) * np.cos(y)
            ii = interior_mask(g)
            errs.append(np.max(np.abs(lap[ii] - exact[ii])))
        order = np.log2(errs[0] / errs[1])
        assert order >= 1.9

    def test_neumann_operator_compatibility(self):
        # the flux-form div(kappa grad .) with zero-flux walls annihilates
        # constants exactly: row sums vanish and the constant is a nullvector
        g = build_exterior_grid(ellipse(2.0, 1.0), 20, 40, 15.0, 1.05)
        th = np.arctan2(g.node_coords[:, 1], g.node_coords[:, 0])
        kappa = 1.0 + 0.3 * np.cos(th)
        L = g.flux_div_kappa(kappa)
        ones = np.ones(g.n_nodes)
        assert np.max(np.abs(L @ ones)) < 1e-12
        rowsums = np.asarray(L.sum(axis=1)).ravel()
        assert np.max(np.abs(rowsums)) < 1e-12

    def test_flux_divergence_is_negative_adjoint_of_edge_gradient(self):
        # summation by parts is exact for the edge discretization (uniform
        # theta grid, so node- and edge-centered dtheta coincide)
        rng = np.random.default_rng(5)
        g = build_exterior_grid(disk(1.0), 14, 22, 7.0, 1.06)
        nr, nt = g.n_radial, g.n_angular
        f = rng.standard_normal(g.n_nodes)
        phi = rng.standard_normal(g.n_nodes)
        D1, _, h1e1, h2e1 = g.edges1
        D2, _, h1e2, h2e2 = g.edges2
        Dv1, Dv2 = g.flux_div_parts
        F1 = (D1 @ f) / h1e1
        F2 = (D2 @ f) / h2e2
        div = Dv1 @ F1 + Dv2 @ F2
        dth = 2 * np.pi / nt
        we1 = h1e1 * h2e1 * np.repeat(np.diff(g.q1), nt) * dth
        dq_node = np.empty(nr)
        dq_node[1:-1] = 0.5 * (g.q1[2:] - g.q1[:-2])
        dq_node[0] = 0.5 * (g.q1[1] - g.q1[0])
        dq_node[-1] = 0.5 * (g.q1[-1] - g.q1[-2])
        we2 = h1e2 * h2e2 * dth * np.repeat(dq_node, nt)
        lhs = np.sum(g.cell_weights.ravel() * phi * div)
        rhs = -(np.sum(we1 * F1 * (D1 @ phi) / h1e1)
                + np.sum(we2 * F2 * (D2 @ phi) / h2e2))
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    def test_periodic_wrap(self):
        g = build_exterior_grid(disk(1.0), 16, 32, 8.0)
        th = np.arctan2(g.node_coords[:, 1], g.node_coords[:, 0])
        f = ScalarField(g, np.sin(3 * th))
        v1 = gradient(f)[1].values
        # shifting the angular index by a full period is the identity
        f2 = ScalarField(g, np.roll(g.as2d(f.values), 32, axis=1).ravel())
        v2 = gradient(f2)[1].values
        assert np.array_equal(v1, v2)

    def test_divergence_of_gradient_matches_laplacian(self):
        # node-based div(grad .) and the flux Laplacian are both exact on
        # r^2 over a uniform radial grid, hence agree there to roundoff
        g = build_exterior_grid(disk(1.0), 20, 40, 9.0, 1.0)
        f = ScalarField(g, np.sum(g.node_coords**2, axis=1))
        f1, f2 = gradient(f)
        d = divergence(f1, f2).values
        lap = laplacian(f).values
        ii = interior_mask(g)
        assert np.allclose(d[ii], 4.0, atol=1e-10)
        assert np.allclose(lap[ii], 4.0, atol=1e-10)


class TestBoundaryTrace:
    def test_cos2_extrema(self):
        th = np.arange(360) * 2 * np.pi / 360
        tr = boundary_trace(th, np.cos(th) ** 2)
        maxima = sorted(t for t, _, _ in tr.maxima())
        minima = sorted(t for t, _, _ in tr.minima())
        assert np.allclose(maxima, [0.0, np.pi], atol=2 * np.pi / 360 + 1e-12)
        assert np.allclose(minima, [np.pi / 2, 3 * np.pi / 2],
                           atol=2 * np.pi / 360 + 1e-12)

    def test_constant_trace(self):
        th = np.arange(16) * 2 * np.pi / 16
        tr = boundary_trace(th, np.full(16, 2.5))
        assert tr.is_constant and tr.extrema == []

    def test_plateau_tie_breaks_to_smallest_theta(self):
        th = np.arange(8) * 2 * np.pi / 8
        v = np.array([0.0, 1.0, 1.0, 0.0, -1.0, -1.0, 0.0, 0.0])
        tr = boundary_trace(th, v)
        assert [t for t, _, k in tr.extrema if k == "max"] == [th[1]]
        assert [t for t, _, k in tr.extrema if k == "min"] == [th[4]]


class TestFields:
    def test_field_validation(self):
        g = build_exterior_grid(disk(1.0), 8, 8, 5.0)
        with pytest.raises(ValueError):
            ScalarField(g, np.ones(10))
        bad = np.ones(g.n_nodes)
        bad[3] = np.nan
        with pytest.raises(ValueError):
            ComplexField(g, bad)
