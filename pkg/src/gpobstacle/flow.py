"""Subsonic irrotational flow past the obstacle.

Solves div((1 - |grad Phi|^2) grad Phi) = 0 outside the obstacle with a
no-penetration wall and far-field datum grad Phi -> delta e2, tracks the
largest admissible far-field speed (the sonic limit) by continuation, and
exposes the boundary speed trace plus the local traveling-wave speed map

    c(b2) = 2 sqrt(b2) / sqrt(1 - b2),   b2 = |grad Phi|^2 at a wall point,

which sends the ellipticity bound b2 = 1/3 to the sound speed sqrt(2).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import grid as gridmod
from .errors import (EllipticityLoss, InsufficientRange, LineSearchStall,
                     LinearSolveFailure, DomainError, NewtonFailure,
                     NonConvergence, SeedFailure)
from .grid import BoundaryTrace, Grid2D, ScalarField, boundary_trace
from .numerics import NewtonConfig, newton_solve

SONIC_BOUND = 1.0 / 3.0   # flux Jacobian positivity: |grad Phi|^2 < 1/3


@dataclass(frozen=True)
class FlowParams:
    delta: float            # far-field speed along e2
    epsilon: float = 0.1    # semiclassical parameter, used downstream

    def __post_init__(self):
        if abs(self.delta) >= 1.0:
            raise DomainError("need |delta| < 1")
        if not 0.0 < self.epsilon < 1.0:
            raise DomainError("need epsilon in (0, 1)")


@dataclass
class FlowSolution:
    grid: Grid2D
    phi: ScalarField
    speed2: ScalarField          # |grad Phi|^2
    rho: ScalarField             # 1 - |grad Phi|^2
    delta: float
    residual_norm: float
    max_boundary_speed2: float
    sonic_margin: float          # 1/3 - max over all nodes of |grad Phi|^2
    newton_iters: int = 0

    @property
    def amplitude(self):
        """Madelung amplitude sqrt(1 - |grad Phi|^2) (the GP modulus limit)."""
        return np.sqrt(self.rho.values)

    def boundary_speed2(self):
        """|grad Phi|^2 on the wall ring."""
        return self.speed2.values[self.grid.boundary_ring(0)]


@dataclass
class SonicReport:
    delta_samples: list          # (delta, max_boundary_speed2, converged)
    delta_star_bracket: tuple    # (delta_lo, delta_hi)


def incompressible_disk_potential(grid, delta):
    """delta (r + a^2/r) sin(theta): exact zero-Mach flow past the disk."""
    a = grid.shape.semi_axis_a
    x, y = grid.node_coords.T
    r2 = x * x + y * y
    return delta * y * (1.0 + a * a / r2)


def default_seed(grid, delta):
    if grid.shape.kind == "disk":
        return incompressible_disk_potential(grid, delta)
    return delta * grid.node_coords[:, 1]


class _FlowOperator:
    """Residual/Jacobian of the discrete flow system on a fixed grid.

    Rows: wall ring = no-penetration (dPhi/dq1 = 0); outer ring = 1/|x| decay
    of Phi - delta x2 along each ray; interior = flux divergence with edge
    midpoint fluxes and kappa = 1 - |grad Phi|^2 averaged to edges.
    """

    def __init__(self, grid, delta, check_ellipticity=True):
        self.grid = grid
        self.delta = delta
        self.check_ellipticity = check_ellipticity
        g = grid
        self.D1e, self.A1e, h1e1, h2e1 = g.edges1
        self.D2e, self.A2e, h1e2, h2e2 = g.edges2
        self.Dv1, self.Dv2 = g.flux_div_parts
        # interior rows carry the cell measure (finite-volume form): flux
        # imbalances cancel to machine zero, so the residual floor stays far
        # below abs_tol on strongly stretched grids
        Wc = sp.diags(g.cell_weights.ravel())
        self.M1 = Wc @ self.Dv1 @ sp.diags(1.0 / h1e1)
        self.M2 = Wc @ self.Dv2 @ sp.diags(1.0 / h2e2)

        nt = g.n_angular
        n = g.n_nodes
        self.wall = g.boundary_ring(0)
        self.outer = g.boundary_ring(g.n_radial - 1)
        self.inner2 = self.outer - nt
        coords = g.node_coords
        self.ray_ratio = (np.hypot(*coords[self.inner2].T)
                          / np.hypot(*coords[self.outer].T))
        self.bc_rhs = delta * (coords[self.outer, 1]
                               - self.ray_ratio * coords[self.inner2, 1])

        rows = np.concatenate([self.wall, self.outer])
        keep = np.ones(n, dtype=bool)
        keep[rows] = False
        self.keep = keep
        # selection matrices to overwrite BC rows in sparse assembly
        self.P_int = sp.diags(keep.astype(float)).tocsr()
        wall_rows = sp.csr_matrix(
            (np.ones(nt), (self.wall, self.wall)), shape=(n, n))
        self.R_wall = wall_rows @ g.Dq1
        out_vals = np.concatenate([np.ones(nt), -self.ray_ratio])
        out_r = np.concatenate([self.outer, self.outer])
        out_c = np.concatenate([self.outer, self.inner2])
        self.R_outer = sp.csr_matrix((out_vals, (out_r, out_c)), shape=(n, n))

    def speed2(self, phi):
        g1 = self.grid.G1 @ phi
        g2 = self.grid.G2 @ phi
        return g1 * g1 + g2 * g2, g1, g2

    def subsonic(self, phi):
        s2, _, _ = self.speed2(phi)
        return bool(np.max(s2) < SONIC_BOUND)

    def residual(self, phi):
        s2, _, _ = self.speed2(phi)
        kappa = 1.0 - s2
        f1 = (self.A1e @ kappa) * (self.D1e @ phi)
        f2 = (self.A2e @ kappa) * (self.D2e @ phi)
        r = self.M1 @ f1 + self.M2 @ f2
        r[self.wall] = self.grid.Dq1[self.wall] @ phi
        r[self.outer] = (phi[self.outer] - self.ray_ratio * phi[self.inner2]
                         - self.bc_rhs)
        return r

    def jacobian(self, phi):
        s2, g1, g2 = self.speed2(phi)
        kappa = 1.0 - s2
        dkappa = -2.0 * (sp.diags(g1) @ self.grid.G1
                         + sp.diags(g2) @ self.grid.G2)
        J = (self.M1 @ (sp.diags(self.A1e @ kappa) @ self.D1e
                        + sp.diags(self.D1e @ phi) @ self.A1e @ dkappa)
             + self.M2 @ (sp.diags(self.A2e @ kappa) @ self.D2e
                          + sp.diags(self.D2e @ phi) @ self.A2e @ dkappa))
        return (self.P_int @ J + self.R_wall + self.R_outer).tocsr()


def solve_potential_flow(grid, params, seed=None, cfg=None):
    """Newton solve of the subsonic flow equation.

    Accepted Newton iterates are kept inside the ellipticity region
    max |grad Phi|^2 < 1/3 (the flux Jacobian loses positivity beyond it):
    trial steps that leave it are backtracked, a sonic seed raises
    EllipticityLoss outright, and Newton failures near the sonic limit
    surface as NewtonFailure.
    """
    cfg = cfg or NewtonConfig()
    op = _FlowOperator(grid, params.delta)
    phi0 = seed.values if isinstance(seed, ScalarField) else seed
    if phi0 is None:
        phi0 = default_seed(grid, params.delta)
    if not op.subsonic(phi0):
        s2_seed, _, _ = op.speed2(phi0)
        raise EllipticityLoss(float(np.max(s2_seed)))
    try:
        phi, hist = newton_solve(op.residual, op.jacobian, phi0, cfg,
                                 accept=op.subsonic)
    except (NonConvergence, LineSearchStall, LinearSolveFailure) as exc:
        raise NewtonFailure(getattr(exc, "iterations", -1),
                            getattr(exc, "final_residual", np.nan),
                            f"flow solve failed at delta={params.delta}: {exc}"
                            ) from exc
    s2, _, _ = op.speed2(phi)
    phi_f = ScalarField(grid, phi)
    s2_f = ScalarField(grid, s2)
    wall_s2 = s2[grid.boundary_ring(0)]
    return FlowSolution(
        grid=grid, phi=phi_f, speed2=s2_f,
        rho=ScalarField(grid, 1.0 - s2),
        delta=params.delta,
        residual_norm=float(hist[-1]["residual"]),
        max_boundary_speed2=float(np.max(wall_s2)),
        sonic_margin=float(SONIC_BOUND - np.max(s2)),
        newton_iters=len(hist) - 1)


def sonic_continuation(grid, delta_max=0.6, cfg=None, newton_cfg=None):
    """Bracket the sonic limit by sweeping delta upward with bisection.

    Marches delta from 0 in steps of cfg.initial_step; each converged
    solution (rescaled) seeds the next.  On the first failure the step
    bisects between the last good and first bad delta until the bracket is
    narrower than cfg.min_step.  Boundary speeds grow monotonically along
    the converged samples.
    """
    if delta_max >= 1.0:
        raise DomainError("delta_max must be < 1")
    from .numerics import ContinuationConfig
    cfg = cfg or ContinuationConfig(0.0, delta_max, 0.02, 0.005, 0.05)
    step, min_step = cfg.initial_step, cfg.min_step
    cfg_n = newton_cfg or NewtonConfig(max_iters=40)
    samples = []
    delta_lo, delta_hi = 0.0, None
    phi_prev = None
    delta_prev = None

    def attempt(delta):
        nonlocal phi_prev, delta_prev
        seed = None
        if phi_prev is not None and delta_prev:
            seed = phi_prev * (delta / delta_prev)
        try:
            sol = solve_potential_flow(grid, FlowParams(delta), seed, cfg_n)
        except (NewtonFailure, EllipticityLoss):
            samples.append((delta, np.nan, False))
            return False
        samples.append((delta, sol.max_boundary_speed2, True))
        phi_prev = sol.phi.values.copy()
        delta_prev = delta
        return True

    delta = step
    if not attempt(delta):
        raise SeedFailure(f"first flow solve at delta={delta} failed")
    delta_lo = delta
    while delta_hi is None:
        delta = delta_lo + step
        if delta > delta_max:
            return SonicReport(samples, (delta_lo, delta_max))
        if attempt(delta):
            delta_lo = delta
        else:
            delta_hi = delta
    while delta_hi - delta_lo > min_step:
        mid = 0.5 * (delta_lo + delta_hi)
        if attempt(mid):
            delta_lo = mid
        else:
            delta_hi = mid
    return SonicReport(samples, (delta_lo, delta_hi))


def local_mach_speed(b2):
    """Local traveling-wave speed 2 sqrt(b2)/sqrt(1-b2) at wall speed^2 b2."""
    if b2 < 0.0 or b2 >= 1.0:
        raise DomainError(f"b2 = {b2} outside [0, 1)")
    return 2.0 * np.sqrt(b2) / np.sqrt(1.0 - b2)


@dataclass
class DecayFit:
    exponent_phi: float
    exponent_rho: float
    skipped: bool = False


def farfield_decay_check(sol):
    """Fitted decay exponents of grad Phi - delta e2 and rho - (1-delta^2).

    Ring-RMS deviations are fitted against log r over the outer half of the
    grid.  For delta = 0 both deviations sit at machine zero and the fit is
    skipped.
    """
    g = sol.grid
    a = g.shape.max_semi_axis
    if sol.grid.R_far < 10 * a:
        raise InsufficientRange("need R_far >= 10 * semi-axis for decay fit")
    vec = gridmod.gradient_cartesian(sol.phi)
    dev_phi = np.hypot(vec[:, 0], vec[:, 1] - sol.delta)
    dev_rho = np.abs(sol.rho.values - (1.0 - sol.delta**2))
    if np.max(dev_phi) < 1e-13 and np.max(dev_rho) < 1e-13:
        return DecayFit(0.0, 0.0, skipped=True)

    nr, nt = g.n_radial, g.n_angular
    r_ring = np.hypot(*g.node_coords.T).reshape(nr, nt).mean(axis=1)
    rows = slice(nr // 2, nr - 1)     # outer half, excluding the BC ring
    rms_phi = np.sqrt((dev_phi.reshape(nr, nt) ** 2).mean(axis=1))[rows]
    rms_rho = np.sqrt((dev_rho.reshape(nr, nt) ** 2).mean(axis=1))[rows]
    logr = np.log(r_ring[rows])
    exp_phi = np.polyfit(logr, np.log(np.maximum(rms_phi, 1e-300)), 1)[0]
    exp_rho = np.polyfit(logr, np.log(np.maximum(rms_rho, 1e-300)), 1)[0]
    return DecayFit(float(exp_phi), float(exp_rho))


def boundary_extrema(sol):
    """Trace of |grad Phi|^2 on the wall with extrema and arc derivative.

    Returns (trace, d_tau) where d_tau is the tangential (arc-length)
    derivative of the trace, centered in theta, one value per wall node.
    """
    g = sol.grid
    wall = g.boundary_ring(0)
    b2 = sol.speed2.values[wall]
    tr = boundary_trace(g.thetas, b2)
    d_dtheta = _periodic_dtheta(g.thetas, b2)
    h2_wall = g.h2.reshape(g.n_radial, g.n_angular)[0]
    return tr, d_dtheta / h2_wall


def _periodic_dtheta(thetas, values):
    n = len(thetas)
    out = np.empty(n)
    for j in range(n):
        jm, jp = (j - 1) % n, (j + 1) % n
        hm = thetas[j] - thetas[jm] if j > 0 else thetas[0] - (thetas[-1] - 2 * np.pi)
        hp = thetas[jp] - thetas[j] if j < n - 1 else (thetas[0] + 2 * np.pi) - thetas[-1]
        out[j] = (-hp / (hm * (hm + hp)) * values[jm]
                  + (hp - hm) / (hm * hp) * values[j]
                  + hm / (hp * (hm + hp)) * values[jp])
    return out


def contour_fluxes(sol):
    """Mass flux through each radial ring contour (discrete divergence check).

    The integral of (1-|grad Phi|^2) dPhi/dn over a closed contour around
    the obstacle is contour independent (and zero) for the converged flow.
    Fluxes are evaluated through the radial cell edges of each ring gap.
    """
    g = sol.grid
    D1e, A1e, h1e1, h2e1 = g.edges1
    kappa = 1.0 - sol.speed2.values
    f1 = (A1e @ kappa) * (D1e @ sol.phi.values) / h1e1
    th = g.thetas
    dth = np.roll(th, -1) - th
    dth[-1] += 2 * np.pi
    # node-centered angular widths for the edge quadrature
    ext = np.concatenate([[th[-1] - 2 * np.pi], th, [th[0] + 2 * np.pi]])
    dth_node = 0.5 * (ext[2:] - ext[:-2])
    per_gap = (f1 * h2e1).reshape(g.n_radial - 1, g.n_angular)
    return per_gap @ dth_node
