import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpobstacle.errors import DomainError, UnderResolved
from gpobstacle.flow import FlowParams, solve_potential_flow
from gpobstacle.grid import ScalarField, build_exterior_grid, disk
from gpobstacle.layers import (assemble_vortex_free, density_amplitude,
                               dirichlet_layer, madelung_residual, solve_rho1)


@pytest.fixture(scope="module")
def layer_grid():
    # first radial spacing ~ 2.7e-3 resolves eps = 0.05 with > 8 cells
    return build_exterior_grid(disk(1.0), 144, 192, 40.0, 1.05)


@pytest.fixture(scope="module")
def flow_02(layer_grid):
    return solve_potential_flow(layer_grid, FlowParams(0.2))


class TestRho1:
    def test_zero_delta_gives_zero_layer(self):
        g = build_exterior_grid(disk(1.0), 96, 64, 20.0, 1.06)
        sol = solve_potential_flow(g, FlowParams(0.0))
        layer = solve_rho1(sol, 0.1)
        assert np.max(np.abs(layer.rho1.values)) < 1e-10

    def test_decay_rate_tracks_amplitude(self, flow_02):
        eps = 0.05
        layer = solve_rho1(flow_02, eps)
        wall = flow_02.grid.boundary_ring(0)
        j = int(np.argmax(flow_02.speed2.values[wall]))
        a0 = density_amplitude(flow_02)[wall][j]
        target = np.sqrt(2.0) * a0 / eps
        assert abs(layer.decay_rate - target) <= 0.15 * target

    def test_amplitude_matches_half_line_oracle(self, flow_02):
        # the half-line problem eps^2 rho'' = 2 a^2 rho with flux datum
        # rho'(0) = -(da/dt)(0) has rho(0) = eps (da/dt)(0) / (sqrt(2) a0)
        eps = 0.05
        g = flow_02.grid
        layer = solve_rho1(flow_02, eps)
        wall = g.boundary_ring(0)
        j = int(np.argmax(flow_02.speed2.values[wall]))
        a = density_amplitude(flow_02)
        a0 = a[wall][j]
        da_dn = (g.Dq1 @ a)[wall][j] / g.h1.reshape(g.n_radial, -1)[0, j]
        predicted = eps * da_dn / (np.sqrt(2.0) * a0)
        measured = layer.rho1.values[wall][j]
        assert abs(measured - predicted) <= 0.20 * abs(predicted)

    def test_layer_locality(self, flow_02):
        # the exponential layer dies within ~10 eps of the wall; beyond it
        # only the algebraic response eps^2 Lap a / (2 a^2) survives
        eps = 0.05
        g = flow_02.grid
        layer = solve_rho1(flow_02, eps)
        vals = np.abs(layer.rho1.values)
        far = g.wall_distance.ravel() > 10 * eps
        a = density_amplitude(flow_02)
        algebraic = np.abs(eps**2 * (g.lap_mat @ a) / (2 * a * a))
        floor = 3.0 * np.max(algebraic[far])
        assert np.max(vals[far]) <= max(1e-3 * np.max(vals), floor)
        # and the non-algebraic remainder is exponentially negligible there
        rem = np.abs(layer.rho1.values - eps**2 * (g.lap_mat @ a) / (2 * a * a))
        inner_far = far & (g.wall_distance.ravel() < 0.5 * (g.R_far - 1.0))
        assert np.max(rem[inner_far]) <= 1.2e-3 * np.max(vals)

    def test_sup_scales_linearly_in_eps(self, flow_02):
        sups = []
        eps_list = (0.2, 0.1, 0.05)
        for eps in eps_list:
            layer = solve_rho1(flow_02, eps)
            sups.append(np.max(np.abs(layer.rho1.values)))
        slope = np.polyfit(np.log(eps_list), np.log(sups), 1)[0]
        assert abs(slope - 1.0) <= 0.2

    def test_underresolved(self, flow_02):
        with pytest.raises(UnderResolved):
            solve_rho1(flow_02, 1e-4)


class TestMadelungResidual:
    def test_ground_state_zero(self, layer_grid):
        g = layer_grid
        rep = madelung_residual(ScalarField(g, np.ones(g.n_nodes)),
                                ScalarField(g, np.zeros(g.n_nodes)), 0.1)
        # assembled-operator roundoff on constants is ~ eps_mach / h^2
        assert np.max(np.abs(rep.S1.values)) < 1e-11
        assert np.max(np.abs(rep.S2.values)) < 1e-11

    def test_flow_state_identities(self, flow_02):
        # at (a, Phi): S2 is the flow residual (zero to solver tolerance in
        # the cell-measure norm) and S1 reduces to eps^2 Lap a exactly
        g = flow_02.grid
        eps = 0.1
        a = density_amplitude(flow_02)
        rep = madelung_residual(ScalarField(g, a), flow_02.phi, eps)
        assert rep.weighted_norms["S2_fv_scaled_l2"] <= 1e-8
        lap_a = g.lap_mat @ a
        interior = np.ones(g.n_nodes, dtype=bool)
        interior[g.boundary_ring(0)] = False
        interior[g.boundary_ring(g.n_radial - 1)] = False
        diff = rep.S1.values - eps**2 * lap_a
        assert np.max(np.abs(diff[interior])) < 1e-10

    def test_layer_residual_shrinks_with_eps(self, flow_02):
        # after the layer correction the density residual scales ~ eps^2
        norms = []
        eps_list = (0.2, 0.1, 0.05)
        a = density_amplitude(flow_02)
        g = flow_02.grid
        for eps in eps_list:
            layer = solve_rho1(flow_02, eps)
            rep = madelung_residual(ScalarField(g, a + layer.rho1.values),
                                    flow_02.phi, eps)
            norms.append(rep.weighted_norms["S1_L2_rescaled"])
        slope = np.polyfit(np.log(eps_list), np.log(norms), 1)[0]
        assert slope >= 1.8

    def test_gauge_invariance_of_residuals(self, flow_02):
        # a constant phase shift of u is a constant shift of Phi; the
        # residual fields agree to rounding
        g = flow_02.grid
        eps = 0.1
        a = density_amplitude(flow_02)
        rep0 = madelung_residual(ScalarField(g, a), flow_02.phi, eps)
        shifted = ScalarField(g, flow_02.phi.values + 0.5 * eps)
        rep1 = madelung_residual(ScalarField(g, a), shifted, eps)
        assert np.max(np.abs(rep0.S1.values - rep1.S1.values)) < 1e-11
        assert np.max(np.abs(rep0.S2.values - rep1.S2.values)) < 1e-11


class TestVortexFree:
    def test_zero_delta_is_unity(self):
        g = build_exterior_grid(disk(1.0), 96, 64, 20.0, 1.06)
        sol = solve_potential_flow(g, FlowParams(0.0))
        layer = solve_rho1(sol, 0.1)
        vf = assemble_vortex_free(sol, layer, 0.1)
        assert np.max(np.abs(vf.u.values - 1.0)) < 1e-9

    def test_modulus_identity_and_floor(self, flow_02):
        eps = 0.1
        layer = solve_rho1(flow_02, eps)
        vf = assemble_vortex_free(flow_02, layer, eps)
        assert np.allclose(np.abs(vf.u.values), vf.rho_eps.values,
                           rtol=1e-13, atol=1e-13)
        assert vf.min_modulus > 0.8
        assert vf.residual_norm <= 1e-9

    def test_polish_correction_shrinks_with_eps(self, flow_02):
        sups = []
        eps_list = (0.2, 0.1, 0.05)
        for eps in eps_list:
            layer = solve_rho1(flow_02, eps)
            vf = assemble_vortex_free(flow_02, layer, eps)
            sups.append(vf.correction_norms[0])
        slope = np.polyfit(np.log(eps_list), np.log(sups), 1)[0]
        assert slope >= 1.5

    def test_mass_flux_identity(self, flow_02):
        eps = 0.1
        layer = solve_rho1(flow_02, eps)
        vf = assemble_vortex_free(flow_02, layer, eps)
        rep = madelung_residual(vf.rho_eps, vf.phi_eps, eps)
        assert rep.weighted_norms["S2_fv_scaled_l2"] <= 1e-9


class TestDirichletLayer:
    def test_b_zero_closed_form(self):
        lay = dirichlet_layer(0.0)
        assert np.allclose(lay.profile, np.tanh(lay.y / np.sqrt(2.0)),
                           atol=1e-14)
        assert lay.closed_form_error < 1e-12

    def test_plateau_value(self):
        lay = dirichlet_layer(0.5)
        assert abs(lay.profile[-1] - np.sqrt(0.75)) < 1e-8
        assert abs(np.sqrt(0.75) - 0.8660254) < 1e-7

    @settings(max_examples=25, deadline=None)
    @given(st.floats(min_value=0.0, max_value=0.95))
    def test_boundary_data_and_monotone(self, b):
        lay = dirichlet_layer(b)
        assert lay.profile[0] == 0.0
        assert np.all(np.diff(lay.profile) >= 0)
        assert abs(lay.profile[-1] - np.sqrt(1 - b * b)) < 1e-8

    def test_domain_error(self):
        with pytest.raises(DomainError):
            dirichlet_layer(1.0)
