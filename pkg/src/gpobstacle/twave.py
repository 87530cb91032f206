"""Planar traveling waves of the Gross-Pitaevskii equation on a half-plane.

Solves  Delta U + i c dU/dy2 + U (1 - |U|^2) = 0  on {y1 >= 0} with the
evenness (no-flux) condition dU/dy1 = 0 at y1 = 0 and U -> 1 on the outer
box sides.  The subsonic branch 0 < c < sqrt(2) carries a vortex pair
(one +1 core in the half-plane at (d_c, 0), the mirror image implied), is
continued in c, and its linearization is certified nondegenerate modulo the
gauge and translation kernels i U and dU/dy2.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (EigenIterationFailure, InsufficientRange,
                     LinearSolveFailure, LineSearchStall, NewtonFailure,
                     NonConvergence, SeedFailure, VortexEscape)
from .glvortex import HalfPlaneGrid, detect_vortices, pair_ansatz
from .numerics import (NewtonConfig, deinterleave, interleave, newton_solve,
                       realify)

SQRT2 = np.sqrt(2.0)


class _HalfPlaneOps:
    """Cached sparse operators on a HalfPlaneGrid.

    The wall row of the Laplacian uses the even reflection (ghost value
    U(-h, y2) = U(h, y2)); outer box rows are flagged Dirichlet and replaced
    in the solvers.
    """

    _cache = {}

    def __new__(cls, grid):
        key = (grid.L1, grid.L2, grid.h)
        if key not in cls._cache:
            cls._cache[key] = super().__new__(cls)
            cls._cache[key]._build(grid)
        return cls._cache[key]

    def _build(self, grid):
        self.grid = grid
        n1, n2, h = grid.n1, grid.n2, grid.h
        n = n1 * n2
        e1 = np.ones(n1)
        lap1 = sp.diags([e1[:-1], -2 * e1, e1[:-1]], [-1, 0, 1],
                        shape=(n1, n1), format="lil")
        lap1[0, 1] = 2.0          # even reflection at the wall
        lap1 = lap1.tocsr() / h**2
        e2 = np.ones(n2)
        lap2 = sp.diags([e2[:-1], -2 * e2, e2[:-1]], [-1, 0, 1],
                        shape=(n2, n2), format="csr") / h**2
        d2 = sp.diags([-e2[:-1], e2[:-1]], [-1, 1],
                      shape=(n2, n2), format="lil") / (2 * h)
        d2[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
        d2[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
        I1 = sp.identity(n1, format="csr")
        I2 = sp.identity(n2, format="csr")
        self.lap = (sp.kron(lap1, I2) + sp.kron(I1, lap2)).tocsr()
        self.d2 = sp.kron(I1, d2.tocsr()).tocsr()
        # y1 derivative: zero at the wall (fields are even extensions),
        # one-sided at the outer edge
        d1 = sp.diags([-e1[:-1], e1[:-1]], [-1, 1],
                      shape=(n1, n1), format="lil") / (2 * h)
        d1[0, :] = 0.0
        d1[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
        self.d1 = sp.kron(d1.tocsr(), I2).tocsr()

        mask = np.zeros((n1, n2), dtype=bool)
        mask[-1, :] = True
        mask[:, 0] = True
        mask[:, -1] = True
        self.dirichlet = mask.ravel()
        self.interior = ~self.dirichlet
        keep = sp.diags((~self.dirichlet).astype(float))
        bc = sp.diags(self.dirichlet.astype(float))
        self.P_int = keep.tocsr()
        self.P_bc = bc.tocsr()
        w = np.full((n1, n2), h * h)
        w[0, :] *= 0.5            # wall cells are half cells
        self.quad_w = w.ravel()


def _residual_complex(ops, c, U, bc_value=1.0):
    F = ops.lap @ U + 1j * c * (ops.d2 @ U) + U * (1.0 - np.abs(U) ** 2)
    F[ops.dirichlet] = U[ops.dirichlet] - bc_value
    return F


def _jacobian_parts(ops, c, U):
    M = (ops.lap + 1j * c * ops.d2
         + sp.diags(1.0 - 2.0 * np.abs(U) ** 2))
    B = sp.diags(-U * U)
    M = (ops.P_int @ M + ops.P_bc).tocsr()
    B = (ops.P_int @ B).tocsr()
    return M, B


@dataclass
class TravelingWave:
    c: float
    grid: HalfPlaneGrid
    field: np.ndarray            # complex, flattened
    d_c: float
    residual_norm: float
    winding: int
    momentum: float
    newton_iters: int = 0

    def amplitude_phase(self):
        """S and the phase gradient fields (phase itself is multivalued)."""
        S = np.abs(self.field)
        return S, np.angle(self.field)


def _wave_from_state(ops, c, U, rnorm, iters):
    g = ops.grid
    u2 = g.as2d(U)
    vs = detect_vortices(u2, g.y1, g.y2)
    if len(vs) == 0:
        d_c, winding = np.nan, 0
    else:
        # the physical core: the one nearest the y2 = 0 axis
        pos, winding, _ = min(vs.vortices, key=lambda v: abs(v[0][1]))
        d_c = pos[0]
    mom = float(np.sum(ops.quad_w
                       * np.imag(np.conj(U - 1.0) * (ops.d2 @ U))))
    return TravelingWave(c, g, U, float(d_c), rnorm, int(winding), mom, iters)


def solve_traveling_wave(c, seed, grid, cfg=None, expect_vortex=True):
    """Newton solve of the traveling-wave system at speed c.

    seed may be a complex field on `grid`, a PairAnsatz, or None (pair
    ansatz at separation 1/(2c)).  When expect_vortex is set, convergence to
    the constant state raises VortexEscape.
    """
    if not 0.0 <= c < SQRT2:
        raise ValueError("speed must lie in [0, sqrt(2))")
    cfg = cfg or NewtonConfig(max_iters=40)
    ops = _HalfPlaneOps(grid)
    if seed is None:
        from .glvortex import solve_gl_profile
        seed = pair_ansatz(solve_gl_profile(), 1.0 / max(c, 1e-6), grid)
    U0 = seed.field if hasattr(seed, "field") else np.asarray(seed, dtype=complex)

    def residual(x):
        return interleave(_residual_complex(ops, c, deinterleave(x)))

    def jacobian(x):
        return realify(*_jacobian_parts(ops, c, deinterleave(x)))

    try:
        x, hist = newton_solve(residual, jacobian, interleave(U0), cfg,
                               linear_method="direct")
    except (NonConvergence, LineSearchStall, LinearSolveFailure) as exc:
        raise NewtonFailure(getattr(exc, "iterations", -1),
                            getattr(exc, "final_residual", np.nan),
                            f"traveling wave solve failed at c={c}: {exc}"
                            ) from exc
    U = deinterleave(x)
    wave = _wave_from_state(ops, c, U, hist[-1]["residual"], len(hist) - 1)
    if expect_vortex and wave.winding == 0:
        raise VortexEscape(f"no vortex in the converged field at c={c}")
    return wave


def wave_residual_norm(wave):
    """2-norm of the PDE residual of a stored wave (interior rows)."""
    ops = _HalfPlaneOps(wave.grid)
    F = _residual_complex(ops, wave.c, wave.field)
    return float(np.linalg.norm(interleave(F)))


@dataclass
class BranchRecord:
    samples: list                # TravelingWave per accepted c
    c_end: float
    reason: str


def continuation_in_c(c_start, c_end, grid, profile, cfg=None,
                      newton_cfg=None, d_stop_cells=2.0):
    """March the vortex branch upward in c, reusing solutions as seeds.

    Terminates when the core approaches the wall within d_stop_cells grid
    cells (the discrete winding detector becomes unreliable there), when the
    vortex disappears, or when Newton fails at the smallest step.  The
    branch must end strictly below sqrt(2).
    """
    if not 0.0 < c_start < c_end <= SQRT2:
        raise ValueError("need 0 < c_start < c_end <= sqrt(2)")
    newton_cfg = newton_cfg or NewtonConfig(max_iters=40)
    step0 = cfg.initial_step if cfg else 0.05
    min_step = cfg.min_step if cfg else 1e-3

    # the equilibrium separation sits near 1/c (measured; the classical
    # half-separation of a counter-translating pair with circulation 4 pi),
    # so that seed leads; 1/(2c) covers tighter pairs
    seeds = [1.0 / c_start, 0.75 / c_start, 0.5 / c_start, 1.5 / c_start]
    wave = None
    for d0 in seeds:
        if 4 * d0 > max(grid.L1, grid.L2):
            continue
        try:
            wave = solve_traveling_wave(c_start, pair_ansatz(profile, d0, grid),
                                        grid, newton_cfg)
            break
        except (NewtonFailure, VortexEscape):
            continue
    if wave is None:
        raise SeedFailure(f"no converged wave at c_start={c_start}")

    samples = [wave]
    c, step = c_start, step0
    while c < c_end - 1e-12:
        c_try = min(c + step, c_end)
        try:
            w = solve_traveling_wave(c_try, samples[-1].field, grid, newton_cfg)
        except (NewtonFailure, VortexEscape) as exc:
            step *= 0.5
            if step < min_step:
                return BranchRecord(samples, c, f"newton/{type(exc).__name__}")
            continue
        if w.d_c < d_stop_cells * grid.h:
            return BranchRecord(samples, c_try, "cores merged")
        samples.append(w)
        c = c_try
        step = min(step * 1.3, step0)
    return BranchRecord(samples, c, "reached c_end")


# ---------------------------------------------------------------------------
# nondegeneracy certificate


@dataclass
class SpectralReport:
    c: float
    kernel_overlaps: tuple       # (|L0 z0| / |z0|, |L0 z1| / |z1|), PDE rows
    smallest_sv_constrained: float
    iterations: int


def nondegeneracy_spectrum(wave, max_iters=300, rtol=1e-8):
    """Certify that nothing besides the gauge/translation kernels is null.

    Builds the real-linear discretized operator (Neumann wall, outer
    Dirichlet), measures how well the discrete gauge mode i U and
    translation mode dU/dy2 annihilate its PDE rows, and computes the
    smallest singular value restricted to their orthogonal complement by
    inverse iteration on the deflated normal equations.
    """
    ops = _HalfPlaneOps(wave.grid)
    U = wave.field
    A = realify(*_jacobian_parts(ops, wave.c, U)).tocsr()

    int_mask = np.repeat(ops.interior, 2)
    z0 = interleave(1j * U)
    z1 = interleave(ops.d2 @ U)
    overlaps = []
    for z in (z0, z1):
        overlaps.append(float(np.linalg.norm((A @ z)[int_mask])
                              / np.linalg.norm(z)))

    Z = np.stack([z0 / np.linalg.norm(z0), z1 / np.linalg.norm(z1)], axis=1)
    # re-orthonormalize (z0, z1 are nearly but not exactly orthogonal)
    Q, _ = np.linalg.qr(Z)
    AtA = (A.T @ A).tocsc()
    n = AtA.shape[0]
    Zs = sp.csc_matrix(Q)
    aug = sp.bmat([[AtA, Zs], [Zs.T, None]], format="csc")
    try:
        lu = spla.splu(aug)
    except RuntimeError as exc:
        raise EigenIterationFailure(f"deflated factorization failed: {exc}")

    rng = np.random.default_rng(1234)
    v = rng.standard_normal(n)
    v -= Q @ (Q.T @ v)
    v /= np.linalg.norm(v)
    sigma_prev = np.inf
    for it in range(1, max_iters + 1):
        rhs = np.concatenate([v, np.zeros(2)])
        y = lu.solve(rhs)[:n]
        y -= Q @ (Q.T @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            raise EigenIterationFailure("inverse iteration collapsed")
        v = y / ny
        sigma = float(np.linalg.norm(A @ v))
        if abs(sigma - sigma_prev) <= rtol * sigma:
            return SpectralReport(wave.c, tuple(overlaps), sigma, it)
        sigma_prev = sigma
    raise EigenIterationFailure(
        f"no settle after {max_iters} iterations (sigma ~ {sigma_prev:.3e})")


# ---------------------------------------------------------------------------
# far-field decay fits


@dataclass
class DecayExponents:
    exp_gradS: float
    exp_gradPhi: float
    exp_Uminus1: float


def decay_fit(wave):
    """Radial log-log slopes of |grad S|, |grad phi|, |U - 1|.

    Ring-RMS values over the annulus [2 d_c, 0.8 L] around the origin; the
    grid half-widths must reach 8 d_c for a meaningful window.
    """
    g = wave.grid
    L = min(g.L1, g.L2)
    if L < 8 * wave.d_c:
        raise InsufficientRange("grid half-widths must be >= 8 d_c")
    ops = _HalfPlaneOps(g)
    U = wave.field
    S = np.abs(U)
    dS = np.hypot(np.abs(ops.d1 @ S), np.abs(ops.d2 @ S))
    jU1 = np.imag(np.conj(U) * (ops.d1 @ U)) / S**2
    jU2 = np.imag(np.conj(U) * (ops.d2 @ U)) / S**2
    dphi = np.hypot(jU1, jU2)
    dev = np.abs(U - 1.0)

    Y1, Y2 = g.mesh()
    r = np.hypot(Y1, Y2).ravel()
    lo, hi = 2 * wave.d_c, 0.8 * L
    nbin = 14
    edges = np.geomspace(lo, hi, nbin + 1)
    slopes = []
    for q in (dS, dphi, dev):
        xs, ys = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            m = (r >= a) & (r < b)
            if m.sum() < 8:
                continue
            xs.append(np.log(np.sqrt(a * b)))
            ys.append(np.log(np.sqrt(np.mean(q[m] ** 2)) + 1e-300))
        slopes.append(float(np.polyfit(xs, ys, 1)[0]))
    return DecayExponents(*slopes)


# ---------------------------------------------------------------------------
# reduced speed curve of the pair ansatz


@dataclass
class ReducedCurve:
    epsilon: float
    samples: list                # (d, c_proj)
    force_parts: list            # (d, <GL residual, dV/dd> / |dV/dd|^2)
    eps_parts: list              # (d, <i dV/dy2, dV/dd> / |dV/dd|^2)
    c1: float
    c2: float
    root: float                  # d* = c2 / (c1 epsilon)
    fit_residual_rel: float


def reduced_speed_curve(epsilon, d_samples, grid, profile):
    """Project the bare pair-ansatz residual on the separation mode.

    For each separation d the projection coefficient

        c_proj(d) = <S0_op[V_d], dV_d/dd> / ||dV_d/dd||^2,

    with the real pairing Re int f conj(g), splits into a part proportional
    to epsilon (from i eps dV/dy2) and an attraction part ~ -c2/d (from the
    pair's interaction energy gradient); the fitted law c1 eps - c2/d has
    its root at the equilibrium separation of the traveling pair.
    """
    if epsilon > 0.15:
        raise ValueError("epsilon must be <= 0.15 for the asymptotic fit")
    ops = _HalfPlaneOps(grid)
    Y1, Y2 = grid.mesh()
    w = ops.quad_w * ops.interior     # drop the outer Dirichlet frame

    from .glvortex import pair_ansatz_values

    samples, force_parts, eps_parts = [], [], []
    for d in d_samples:
        V = pair_ansatz_values(profile, d, Y1, Y2).ravel()
        gl = ops.lap @ V + V * (1.0 - np.abs(V) ** 2)
        trans = 1j * (ops.d2 @ V)
        dd = 1e-4 * d
        Vp = pair_ansatz_values(profile, d + dd, Y1, Y2).ravel()
        Vm = pair_ansatz_values(profile, d - dd, Y1, Y2).ravel()
        dVdd = (Vp - Vm) / (2 * dd)
        denom = float(np.sum(w * np.abs(dVdd) ** 2))
        fpart = float(np.sum(w * np.real(gl * np.conj(dVdd)))) / denom
        epart = float(np.sum(w * np.real(trans * np.conj(dVdd)))) / denom
        samples.append((float(d), epsilon * epart + fpart))
        force_parts.append((float(d), fpart))
        eps_parts.append((float(d), epart))

    ds = np.array([d for d, _ in samples])
    cs = np.array([cp for _, cp in samples])
    A = np.stack([np.full_like(ds, epsilon), -1.0 / ds], axis=1)
    scale = np.max(np.abs(cs))
    wts = 1.0 / (np.abs(cs) + 0.1 * scale)
    coef, *_ = np.linalg.lstsq(A * wts[:, None], cs * wts, rcond=None)
    c1, c2 = float(coef[0]), float(coef[1])
    resid = A @ coef - cs
    fit_rel = float(np.sqrt(np.mean((resid / scale) ** 2)))
    root = c2 / (c1 * epsilon) if c1 > 0 else np.nan
    return ReducedCurve(epsilon, samples, force_parts, eps_parts,
                        c1, c2, float(root), fit_rel)
