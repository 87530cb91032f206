"""Sparse linear algebra, damped Newton, and parameter continuation.

All nonlinear solvers in this package funnel through `newton_solve`, and all
linear systems through `solve_sparse_linear` (restarted GMRES with an
incomplete-LU preconditioner).  Complex unknowns are handled as 2N real
systems with interleaved (re, im) ordering, because several linearized
operators couple a field to its conjugate and are therefore only real-linear.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (LinearSolveFailure, LineSearchStall, NonConvergence,
                     SeedFailure, SingularPreconditioner)


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-10          # on the residual 2-norm
    rel_tol: float = 0.0            # relative to the initial residual
    max_iters: int = 30
    damping_min: float = 1.0 / 64.0
    linear_tol: float = 1e-8
    linear_max_iters: int = 3000

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol < 0:
            raise ValueError("abs_tol must be > 0 and rel_tol >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0.0 < self.damping_min <= 1.0:
            raise ValueError("damping_min must lie in (0, 1]")


@dataclass(frozen=True)
class ContinuationConfig:
    param_start: float
    param_end: float
    initial_step: float
    min_step: float
    max_step: float
    step_shrink: float = 0.5
    step_grow: float = 1.3

    def __post_init__(self):
        if not (self.min_step <= self.initial_step <= self.max_step):
            raise ValueError("need min_step <= initial_step <= max_step")
        if not 0.0 < self.step_shrink < 1.0:
            raise ValueError("step_shrink must lie in (0, 1)")
        if self.step_grow <= 1.0:
            raise ValueError("step_grow must exceed 1")


@dataclass
class BranchSample:
    param: float
    solution: np.ndarray
    residual_norm: float
    diagnostics: dict = field(default_factory=dict)


@dataclass
class BranchEnd:
    param_last: float
    reason: str


def solve_sparse_linear(A, b, tol=1e-8, max_iters=3000, restart=60,
                        method="gmres_ilu"):
    """Solve A x = b; GMRES(restart) with an ILU preconditioner by default.

    method="direct" switches to a sparse LU factorization, which the
    real-linear Gross-Pitaevskii Jacobians need: their gauge/translation
    near-kernels stall ILU-preconditioned Krylov loops.  Deterministic for
    fixed inputs.  Raises NonConvergence with the iteration count and final
    residual if the Krylov loop runs out, and SingularPreconditioner if a
    factorization breaks down.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError("A must be square and compatible with b")
    if tol <= 0:
        raise ValueError("tol must be positive")

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)

    if method == "direct":
        try:
            x = spla.splu(A.tocsc()).solve(b)
        except RuntimeError as exc:
            raise SingularPreconditioner(str(exc)) from exc
        res = np.linalg.norm(A @ x - b)
        if res > tol * bnorm:
            raise NonConvergence(1, res)
        return x

    # row equilibration: metric factors spread row magnitudes over several
    # decades on stretched exterior grids, which defeats threshold ILU
    rowmax = np.asarray(abs(A).max(axis=1).todense()).ravel()
    if np.any(rowmax == 0.0):
        raise SingularPreconditioner("matrix has an identically zero row")
    S = sp.diags(1.0 / rowmax)
    As = (S @ A).tocsc()
    bs = S @ b

    try:
        ilu = spla.spilu(As, drop_tol=1e-5, fill_factor=15)
    except RuntimeError as exc:
        raise SingularPreconditioner(str(exc)) from exc
    M = spla.LinearOperator(A.shape, ilu.solve, dtype=As.dtype)

    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    # the Krylov loop controls the equilibrated residual, the contract is on
    # the plain one; tighten and continue from the current iterate if needed
    x = None
    rtol = tol
    for _ in range(4):
        x, _info = spla.gmres(As, bs, x0=x, rtol=rtol, atol=0.0,
                              restart=restart,
                              maxiter=max(1, max_iters // restart + 1), M=M,
                              callback=count, callback_type="pr_norm")
        res = np.linalg.norm(A @ x - b)
        if res <= tol * bnorm:
            return x
        if iters >= max_iters:
            break
        rtol *= 1e-2
    raise NonConvergence(iters, res)


def newton_solve(residual, jacobian, x0, cfg=NewtonConfig(), accept=None,
                 linear_method="gmres_ilu"):
    """Damped Newton iteration with backtracking line search.

    residual : callable state -> residual vector
    jacobian : callable state -> sparse matrix
    x0       : initial state (1-d array)
    accept   : optional callable state -> bool; trial steps for which it
               returns False are treated like non-decreasing steps and
               backtracked (used e.g. to keep flow iterates subsonic)
    linear_method : passed to solve_sparse_linear

    Returns (x, history) where history is a list of per-iteration dicts with
    the residual norm and accepted damping factor.  The first entry records
    the seed residual; an exact seed returns immediately with zero steps.
    Damping halves the step while the residual norm fails to decrease
    strictly, down to cfg.damping_min (first decrease wins, for determinism).
    """
    x = np.array(x0, dtype=float, copy=True)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state contains non-finite entries")
    r = residual(x)
    rnorm = np.linalg.norm(r)
    r0norm = rnorm
    history = [{"iter": 0, "residual": rnorm, "damping": 1.0}]

    def converged(rn):
        return rn <= cfg.abs_tol or (cfg.rel_tol > 0 and rn <= cfg.rel_tol * r0norm)

    for k in range(1, cfg.max_iters + 1):
        if converged(rnorm):
            return x, history
        J = jacobian(x)
        try:
            dx = solve_sparse_linear(J, -r, tol=cfg.linear_tol,
                                     max_iters=cfg.linear_max_iters,
                                     method=linear_method)
        except (NonConvergence, SingularPreconditioner) as exc:
            raise LinearSolveFailure(f"linear solve failed at Newton "
                                     f"iteration {k}: {exc}") from exc
        alpha = 1.0
        while True:
            x_try = x + alpha * dx
            ok = accept is None or accept(x_try)
            if ok:
                r_try = residual(x_try)
                rnorm_try = np.linalg.norm(r_try)
                if np.isfinite(rnorm_try) and rnorm_try < rnorm:
                    break
            if alpha <= cfg.damping_min:
                raise LineSearchStall(k, rnorm)
            alpha = max(alpha * 0.5, cfg.damping_min)
        x, r, rnorm = x_try, r_try, rnorm_try
        history.append({"iter": k, "residual": rnorm, "damping": alpha})

    if converged(rnorm):
        return x, history
    raise NonConvergence(cfg.max_iters, rnorm)


def continuation_sweep(make_problem, seed, cfg, newton_cfg=NewtonConfig()):
    """Natural-parameter continuation with step halving on failure.

    make_problem(param) must return (residual, jacobian) callables.  Each
    accepted sample seeds the next.  Returns (samples, BranchEnd); the branch
    ends either at param_end or where the step control collapses below
    cfg.min_step (a fold or loss of existence).
    """
    direction = 1.0 if cfg.param_end >= cfg.param_start else -1.0
    param = cfg.param_start
    step = cfg.initial_step * direction

    res, jac = make_problem(param)
    try:
        x, hist = newton_solve(res, jac, seed, newton_cfg)
    except (NonConvergence, LineSearchStall, LinearSolveFailure) as exc:
        raise SeedFailure(f"first solve at param={param} failed: {exc}") from exc
    samples = [BranchSample(param, x, hist[-1]["residual"])]

    while (cfg.param_end - param) * direction > 1e-14:
        trial = param + step
        if (trial - cfg.param_end) * direction > 0:
            trial = cfg.param_end
        res, jac = make_problem(trial)
        try:
            x_new, hist = newton_solve(res, jac, samples[-1].solution, newton_cfg)
        except (NonConvergence, LineSearchStall, LinearSolveFailure):
            step *= cfg.step_shrink
            if abs(step) < cfg.min_step:
                return samples, BranchEnd(param, "step below min_step")
            continue
        param = trial
        samples.append(BranchSample(param, x_new, hist[-1]["residual"]))
        step = direction * min(abs(step) * cfg.step_grow, cfg.max_step)
    return samples, BranchEnd(param, "reached param_end")


# ---------------------------------------------------------------------------
# complex <-> 2N real (interleaved) packing


def interleave(z):
    """Complex vector -> real vector [re0, im0, re1, im1, ...]."""
    out = np.empty(2 * z.shape[0])
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def deinterleave(v):
    """Inverse of `interleave`."""
    return v[0::2] + 1j * v[1::2]


def realify(M, B=None):
    """Real 2N x 2N matrix of the real-linear map z -> M z + B conj(z).

    M is the complex-linear part, B the anti-linear part (both sparse, may be
    None).  Ordering of the real unknowns is interleaved (re, im) per node.
    """
    n = M.shape[0]
    M = sp.csr_matrix(M)
    Mr, Mi = M.real, M.imag
    blocks = [[Mr, -Mi], [Mi, Mr]]
    if B is not None:
        B = sp.csr_matrix(B)
        Br, Bi = B.real, B.imag
        blocks = [[Mr + Br, -Mi + Bi], [Mi + Bi, Mr - Br]]
    Jb = sp.bmat(blocks, format="csr")
    perm = np.empty(2 * n, dtype=np.int64)
    perm[0::2] = np.arange(n)
    perm[1::2] = np.arange(n) + n
    return Jb[perm][:, perm].tocsr()


def check_jacobian(residual, jacobian, x, n_dirs=10, seed=0, rel_tol=1e-5,
                   h=1e-6):
    """Central finite-difference check of jacobian(x) against residual.

    Returns the worst relative error over n_dirs random directions; raises
    AssertionError when it exceeds rel_tol.  Used by the test-suite to keep
    every hand-assembled Jacobian honest.
    """
    rng = np.random.default_rng(seed)
    J = jacobian(x)
    scale = max(1.0, np.linalg.norm(x) / np.sqrt(x.size))
    worst = 0.0
    for _ in range(n_dirs):
        d = rng.standard_normal(x.shape)
        d /= np.linalg.norm(d)
        fd = (residual(x + h * scale * d) - residual(x - h * scale * d)) / (2 * h * scale)
        jd = J @ d
        err = np.linalg.norm(fd - jd) / max(np.linalg.norm(jd), 1e-12)
        worst = max(worst, err)
    if worst > rel_tol:
        raise AssertionError(f"jacobian inconsistent: rel error {worst:.2e}")
    return worst
