import numpy as np
import pytest
import scipy.sparse as sp

from gpobstacle.errors import LineSearchStall, NonConvergence, SeedFailure
from gpobstacle.numerics import (BranchEnd, ContinuationConfig, NewtonConfig,
                                 check_jacobian, continuation_sweep,
                                 deinterleave, interleave, newton_solve,
                                 realify, solve_sparse_linear)


def lap1d(n, h):
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


class TestSolveSparseLinear:
    def test_identity(self):
        A = sp.identity(5, format="csr")
        b = np.ones(5)
        x = solve_sparse_linear(A, b, tol=1e-12, max_iters=100)
        assert np.allclose(x, 1.0, atol=1e-12)

    def test_dirichlet_laplacian_matches_analytic(self):
        # -u'' = 1 on (0,1), u(0)=u(1)=0 has u(s) = s(1-s)/2; the centered
        # second difference is exact on quadratics, so the discrete solution
        # equals the analytic one at the nodes.
        n, h = 50, 1.0 / 51
        A = -lap1d(n, h)
        b = np.ones(n)
        s = h * np.arange(1, n + 1)
        x = solve_sparse_linear(A, b, tol=1e-12, max_iters=2000)
        x_dense = np.linalg.solve(A.toarray(), b)  # dense oracle
        assert np.allclose(x, x_dense, atol=1e-10)
        assert np.max(np.abs(x - s * (1 - s) / 2)) < 1e-8

    def test_2x2_hand_solve(self):
        A = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
        x = solve_sparse_linear(A, np.array([3.0, 3.0]), tol=1e-12, max_iters=50)
        assert np.allclose(x, [1.0, 1.0], atol=1e-12)

    def test_nonconvergence_reports_iterations(self):
        A = -lap1d(400, 1.0 / 401)
        b = np.ones(400)
        with pytest.raises(NonConvergence) as ei:
            solve_sparse_linear(A, b, tol=1e-14, max_iters=1)
        assert ei.value.iterations >= 1
        assert ei.value.final_residual > 0

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        A = sp.random(60, 60, density=0.2, random_state=rng, format="csr")
        A = A + 10 * sp.identity(60)
        b = rng.standard_normal(60)
        x1 = solve_sparse_linear(A, b, tol=1e-10, max_iters=500)
        x2 = solve_sparse_linear(A, b, tol=1e-10, max_iters=500)
        assert np.array_equal(x1, x2)


class TestNewton:
    def test_scalar_quadratic(self):
        res = lambda x: np.array([x[0] ** 2 - 4.0])
        jac = lambda x: sp.csr_matrix(np.array([[2.0 * x[0]]]))
        x, hist = newton_solve(res, jac, np.array([3.0]),
                               NewtonConfig(abs_tol=1e-13))
        assert abs(x[0] - 2.0) < 1e-12

    def test_quadratic_tail(self):
        # once |r| < 0.1 the iteration is in its quadratic regime
        res = lambda x: np.array([x[0] ** 2 - 4.0])
        jac = lambda x: sp.csr_matrix(np.array([[2.0 * x[0]]]))
        _, hist = newton_solve(res, jac, np.array([3.0]),
                               NewtonConfig(abs_tol=1e-14))
        rs = [h["residual"] for h in hist]
        for a, b in zip(rs, rs[1:]):
            if a < 0.1 and a > 0:
                assert b <= a * a

    def test_dottie_number_against_bisection(self):
        f = lambda t: t - np.cos(t)
        res = lambda x: np.array([f(x[0])])
        jac = lambda x: sp.csr_matrix(np.array([[1.0 + np.sin(x[0])]]))
        x, _ = newton_solve(res, jac, np.array([1.0]), NewtonConfig(abs_tol=1e-14))
        lo, hi = 0.0, 1.0
        for _ in range(60):  # bisection oracle
            mid = 0.5 * (lo + hi)
            if f(lo) * f(mid) <= 0:
                hi = mid
            else:
                lo = mid
        assert abs(x[0] - 0.5 * (lo + hi)) < 1e-10
        assert abs(x[0] - 0.7390851332) < 1e-9

    def test_exact_root_returns_input_with_zero_iterations(self):
        res = lambda x: x * 0.0
        jac = lambda x: sp.identity(4, format="csr")
        x0 = np.array([1.0, 2.0, 3.0, 4.0])
        x, hist = newton_solve(res, jac, x0)
        assert np.array_equal(x, x0)
        assert len(hist) == 1

    def test_line_search_stall(self):
        # residual cannot decrease: |x| + 1 has no root and flat-ish norm
        res = lambda x: np.array([np.abs(x[0]) + 1.0])
        jac = lambda x: sp.csr_matrix(np.array([[np.sign(x[0]) or 1.0]]))
        with pytest.raises(LineSearchStall):
            newton_solve(res, jac, np.array([1.0]))

    def test_jacobian_consistency_random_system(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((6, 6))

        def res(x):
            return A @ x + np.sin(x)

        def jac(x):
            return sp.csr_matrix(A + np.diag(np.cos(x)))

        worst = check_jacobian(res, jac, rng.standard_normal(6), n_dirs=10,
                               seed=1)
        assert worst <= 1e-5


class TestContinuation:
    def test_linear_family(self):
        def make(t):
            res = lambda x: x - t
            jac = lambda x: sp.identity(1, format="csr")
            return res, jac

        cfg = ContinuationConfig(0.0, 1.0, 0.25, 1e-3, 0.25)
        samples, end = continuation_sweep(make, np.zeros(1), cfg)
        assert end.reason == "reached param_end"
        for s in samples:
            assert np.allclose(s.solution, s.param, atol=1e-12)

    def test_fold_reports_branch_end_near_one(self):
        def make(t):
            res = lambda x: np.array([x[0] ** 2 - (1.0 - t)])
            jac = lambda x: sp.csr_matrix(np.array([[2.0 * x[0]]]))
            return res, jac

        cfg = ContinuationConfig(0.0, 1.2, 0.1, 1e-3, 0.1)
        samples, end = continuation_sweep(make, np.array([1.0]), cfg)
        assert end.reason == "step below min_step"
        assert end.param_last < 1.0
        assert 1.0 - end.param_last <= 0.05

    def test_seed_failure(self):
        def make(t):
            res = lambda x: np.array([x[0] ** 2 + 1.0])  # no real root
            jac = lambda x: sp.csr_matrix(np.array([[2.0 * x[0]]]))
            return res, jac

        cfg = ContinuationConfig(0.0, 1.0, 0.1, 1e-3, 0.1)
        with pytest.raises(SeedFailure):
            continuation_sweep(make, np.array([1.0]), cfg)


class TestRealify:
    def test_pack_roundtrip(self):
        z = np.array([1 + 2j, -3 + 0.5j, 0.25j])
        assert np.array_equal(deinterleave(interleave(z)), z)

    def test_matches_complex_action(self):
        rng = np.random.default_rng(11)
        n = 12
        M = sp.csr_matrix(rng.standard_normal((n, n))
                          + 1j * rng.standard_normal((n, n)))
        B = sp.csr_matrix(rng.standard_normal((n, n))
                          + 1j * rng.standard_normal((n, n)))
        z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        J = realify(M, B)
        out = deinterleave(J @ interleave(z))
        assert np.allclose(out, M @ z + B @ np.conj(z), atol=1e-12)
