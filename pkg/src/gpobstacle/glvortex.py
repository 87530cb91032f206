"""Degree-one vortex building blocks.

The radial core profile S0 solves

    S0'' + S0'/r - S0/r^2 + S0 (1 - S0^2) = 0,  S0(0) = 0,  S0(inf) = 1,

with S0 ~ 0.583 r near the origin and 1 - S0 ~ 1/(2 r^2) far out.  The
two-vortex ansatz places opposite unit vortices at (+-d, 0):

    V_d(y) = S0(|y - d e1|) S0(|y + d e1|) exp(i theta_+ - i theta_-),

even in y1 by construction, and winding detection integrates wrapped phase
differences around grid plaquettes.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import AmbiguousCore, NewtonFailure, NonConvergence
from .numerics import NewtonConfig, newton_solve


@dataclass
class VortexProfile:
    r_nodes: np.ndarray
    S0: np.ndarray
    slope_at_0: float
    far_coefficient: float    # beta in 1 - S0 ~ beta / r^2
    residual_sup: float

    def __call__(self, r):
        """Evaluate S0 at arbitrary radii, using the 1/(2 r^2) tail beyond
        the collocation window."""
        r = np.asarray(r, dtype=float)
        out = np.interp(r, self.r_nodes, self.S0)
        far = r > self.r_nodes[-1]
        if np.any(far):
            out = np.where(far, 1.0 - self.far_coefficient / (r * r + 1e-300),
                           out)
        return out


def solve_gl_profile(R_prof=40.0, n=800, cfg=None):
    """Collocation + Newton for the degree-one core profile.

    Inner condition S0(0) = 0; outer condition matches the algebraic tail,
    S0'(R) = 2 (1 - S0(R)) / R.  Nodes are uniform; n >= 400 resolves the
    core comfortably.
    """
    if R_prof < 40.0 or n < 400:
        raise ValueError("need R_prof >= 40 and n >= 400")
    cfg = cfg or NewtonConfig(abs_tol=1e-12)
    r = np.linspace(0.0, R_prof, n)
    h = r[1] - r[0]
    ri = r[1:-1]

    def residual(S):
        res = np.empty_like(S)
        res[0] = S[0]
        Spp = (S[2:] - 2 * S[1:-1] + S[:-2]) / h**2
        Sp = (S[2:] - S[:-2]) / (2 * h)
        res[1:-1] = Spp + Sp / ri - S[1:-1] / ri**2 + S[1:-1] * (1 - S[1:-1]**2)
        Sp_end = (3 * S[-1] - 4 * S[-2] + S[-3]) / (2 * h)
        res[-1] = Sp_end - 2.0 * (1.0 - S[-1]) / R_prof
        return res

    def jacobian(S):
        rows, cols, vals = [], [], []
        rows.append(0); cols.append(0); vals.append(1.0)
        for k in range(1, n - 1):
            rk = r[k]
            rows += [k, k, k]
            cols += [k - 1, k, k + 1]
            vals += [1 / h**2 - 1 / (2 * h * rk),
                     -2 / h**2 - 1 / rk**2 + 1 - 3 * S[k]**2,
                     1 / h**2 + 1 / (2 * h * rk)]
        rows += [n - 1] * 3
        cols += [n - 1, n - 2, n - 3]
        vals += [3 / (2 * h) + 2.0 / R_prof, -4 / (2 * h), 1 / (2 * h)]
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    seed = r / np.sqrt(2.0 + r * r)
    try:
        S, hist = newton_solve(residual, jacobian, seed, cfg)
    except NonConvergence as exc:
        raise NewtonFailure(exc.iterations, exc.final_residual) from exc

    # slope at the origin from an odd-series fit on the small-r window
    win = r <= 1.0
    rw, Sw = r[win][1:], S[win][1:]
    A = np.stack([rw, rw**3, rw**5, rw**7], axis=1)
    coef, *_ = np.linalg.lstsq(A, Sw, rcond=None)
    slope = float(coef[0])

    tail = r >= 0.6 * R_prof
    beta = float(np.mean((1.0 - S[tail]) * r[tail] ** 2))
    return VortexProfile(r, S, slope, beta,
                         float(np.max(np.abs(residual(S)))))


def shooting_slope_oracle(R=15.0, tol=1e-10):
    """Independent shooting determination of S0'(0).

    Integrates the core equation from r ~ 0 with S = s r and bisects on s:
    too-large slopes overshoot S > 1, too-small ones turn back down.
    """
    from scipy.integrate import solve_ivp

    def rhs(r, y):
        S, Sp = y
        return [Sp, -Sp / r + S / r**2 - S * (1 - S * S)]

    def classify(s):
        r0 = 1e-6
        sol = solve_ivp(rhs, (r0, R), [s * r0, s], rtol=1e-11, atol=1e-13,
                        dense_output=False, max_step=0.1)
        S = sol.y[0]
        if np.any(S > 1.0):
            return 1      # overshoot
        if np.any(np.diff(S) < 0) or S[-1] < 0.9:
            return -1     # fell back
        return 1 if S[-1] > 1.0 else -1

    lo, hi = 0.4, 0.8
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if classify(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# half-plane pair ansatz


@dataclass
class HalfPlaneGrid:
    """Uniform Cartesian grid on {0 <= y1 <= L1, |y2| <= L2}."""
    L1: float
    L2: float
    h: float

    def __post_init__(self):
        if self.h > 0.25:
            raise ValueError("h must be <= 0.25 to resolve the core scale")
        self.n1 = int(round(self.L1 / self.h)) + 1
        self.n2 = 2 * int(round(self.L2 / self.h)) + 1
        self.y1 = self.h * np.arange(self.n1)
        self.y2 = -self.h * (self.n2 // 2) + self.h * np.arange(self.n2)

    @property
    def n_nodes(self):
        return self.n1 * self.n2

    def mesh(self):
        return np.meshgrid(self.y1, self.y2, indexing="ij")

    def as2d(self, v):
        return np.asarray(v).reshape(self.n1, self.n2)


@dataclass
class PairAnsatz:
    d: float
    grid: HalfPlaneGrid
    field: np.ndarray         # complex, flattened (n1*n2,)
    cutoff_radius: float = 1.0


def quintic_window(s, lo=1.0, hi=2.0):
    """1 on s <= lo, 0 on s >= hi, quintic (C^2) blend between."""
    t = np.clip((np.asarray(s, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    return 1.0 - t**3 * (t * (t * 6 - 15) + 10)


def pair_ansatz_values(profile, d, Y1, Y2):
    """V_d on arbitrary points: counter-winding cores at (+-d, 0)."""
    rp = np.hypot(Y1 - d, Y2)
    rm = np.hypot(Y1 + d, Y2)
    phase = np.arctan2(Y2, Y1 - d) - np.arctan2(Y2, Y1 + d)
    return profile(rp) * profile(rm) * np.exp(1j * phase)


def pair_ansatz(profile, d, grid):
    """Evaluate the two-vortex ansatz on a half-plane grid."""
    if d <= 0:
        raise ValueError("d must be positive")
    Y1, Y2 = grid.mesh()
    V = pair_ansatz_values(profile, d, Y1, Y2)
    return PairAnsatz(d, grid, V.ravel())


# ---------------------------------------------------------------------------
# winding detection


@dataclass
class VortexSet:
    vortices: list            # (position (y1, y2), winding, core_min)

    def __len__(self):
        return len(self.vortices)

    def windings(self):
        return [w for _, w, _ in self.vortices]

    def positions(self):
        return [p for p, _, _ in self.vortices]


def plaquette_windings(field2d):
    """Winding number per grid plaquette from wrapped phase circulation."""
    u = field2d
    if np.min(np.abs(u)) < 1e-6:
        raise AmbiguousCore("|field| < 1e-6 on a plaquette corner")

    def dphase(a, b):
        return np.angle(b * np.conj(a))

    s = (dphase(u[:-1, :-1], u[1:, :-1]) + dphase(u[1:, :-1], u[1:, 1:])
         + dphase(u[1:, 1:], u[:-1, 1:]) + dphase(u[:-1, 1:], u[:-1, :-1]))
    return np.rint(s / (2 * np.pi)).astype(int)


def detect_vortices(field2d, x1=None, x2=None, threshold=0.5):
    """Locate quantized phase singularities on a logically Cartesian grid.

    field2d : complex array (n1, n2)
    x1, x2  : coordinate axes (defaults to index space)
    Adjacent nonzero plaquettes of equal sign cluster into one vortex whose
    position refines the minimum of |field| over the cluster neighborhood by
    a parabolic fit, and whose core_min is that minimum modulus.
    """
    u = np.asarray(field2d)
    n1, n2 = u.shape
    if x1 is None:
        x1 = np.arange(n1, dtype=float)
    if x2 is None:
        x2 = np.arange(n2, dtype=float)
    w = plaquette_windings(u)
    marked = np.argwhere(w != 0)
    seen = np.zeros_like(w, dtype=bool)
    vortices = []
    for i0, j0 in marked:
        if seen[i0, j0]:
            continue
        stack = [(i0, j0)]
        cluster = []
        sign = w[i0, j0]
        while stack:
            i, j = stack.pop()
            if not (0 <= i < w.shape[0] and 0 <= j < w.shape[1]):
                continue
            if seen[i, j] or w[i, j] == 0 or np.sign(w[i, j]) != np.sign(sign):
                continue
            seen[i, j] = True
            cluster.append((i, j))
            stack.extend([(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)])
        total = int(sum(w[i, j] for i, j in cluster))
        if total == 0:
            continue
        # modulus minimum over the cluster's corner nodes and neighbors
        cand = set()
        for i, j in cluster:
            for di in (0, 1):
                for dj in (0, 1):
                    cand.add((i + di, j + dj))
        ci, cj = min(cand, key=lambda ij: abs(u[ij[0], ij[1]]))
        core_min = float(abs(u[ci, cj]))
        if core_min > threshold:
            continue
        pos = [x1[ci], x2[cj]]
        mod2 = np.abs(u) ** 2
        for axis, (c, xs) in enumerate([(ci, x1), (cj, x2)]):
            if 0 < c < (n1 - 1 if axis == 0 else n2 - 1):
                if axis == 0:
                    f = mod2[c - 1:c + 2, cj]
                else:
                    f = mod2[ci, c - 1:c + 2]
                denom = f[0] - 2 * f[1] + f[2]
                if denom > 0:
                    off = 0.5 * (f[0] - f[2]) / denom
                    pos[axis] = xs[c] + np.clip(off, -0.5, 0.5) * (xs[1] - xs[0])
        vortices.append(((float(pos[0]), float(pos[1])), total, core_min))
    vortices.sort(key=lambda v: (v[0][0], v[0][1]))
    return VortexSet(vortices)


def contour_winding(field2d, i_lo, i_hi, j_lo, j_hi):
    """Total winding along the rectangle boundary [i_lo, i_hi] x [j_lo, j_hi].

    Counterclockwise in (axis0, axis1) orientation, matching the plaquette
    convention: +axis0, +axis1, -axis0, -axis1.
    """
    u = field2d

    def seg(vals):
        return np.sum(np.angle(vals[1:] * np.conj(vals[:-1])))

    total = (seg(u[i_lo:i_hi + 1, j_lo]) + seg(u[i_hi, j_lo:j_hi + 1])
             + seg(u[i_lo:i_hi + 1, j_hi][::-1])
             + seg(u[i_lo, j_lo:j_hi + 1][::-1]))
    return int(np.rint(total / (2 * np.pi)))
