from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog, minimize

from otmkit.errors import DimensionMismatch, InputError, MarginalNotNormalized, NonFiniteCost, SupportViolation
from otmkit.instances import make_rng
from otmkit.ot import exact_ot, sinkhorn, sinkhorn_batch, solve_restricted
from otmkit.ot.types import entropic_objective


def lp_value(a, b, C):
    """Independent oracle: HiGHS on the transport LP."""
    n, m = C.shape
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        A[n + j, j::m] = 1
    res = linprog(C.ravel(), A_eq=A, b_eq=np.r_[a, b], bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def two_by_two_vertices(a, b, C):
    """Enumerate both extreme points of a 2x2 transport polytope."""
    lo, hi = max(0.0, a[0] + b[0] - 1.0), min(a[0], b[0])
    vals = []
    for t in (lo, hi):
        P = np.array([[t, a[0] - t], [b[0] - t, 1 - a[0] - b[0] + t]])
        vals.append(float(np.sum(P * C)))
    return min(vals)


def entropic_dual_oracle(a, b, C, eps):
    """Maximize the smooth dual with L-BFGS; independent of the Sinkhorn code."""
    n, m = C.shape

    def neg(z):
        f, g = z[:n], z[n:]
        E = np.exp((f[:, None] + g[None, :] - C) / eps)
        val = f @ a + g @ b - eps * E.sum() + eps
        grad = np.r_[a - E.sum(1), b - E.sum(0)]
        return -val, -grad

    res = minimize(neg, np.zeros(n + m), jac=True, method="L-BFGS-B", options={"gtol": 1e-13, "ftol": 1e-15,
                                                                             "maxiter": 10_000})
    return -res.fun


def random_problem(rng, n, m, zero_rows=0):
    a = rng.random(n)
    a[:zero_rows] = 0.0
    a /= a.sum()
    b = rng.random(m)
    b /= b.sum()
    return a, b, rng.random((n, m))


def problems():
    return st.tuples(st.integers(0, 100_000), st.integers(1, 7), st.integers(1, 7))


class TestExact:
    def test_single_cell(self):
        s = exact_ot([1.0], [1.0], [[0.7]])
        assert s.value == 0.7 and np.array_equal(s.plan.mass, [[1.0]])
        assert s.duals is None and s.epsilon == 0.0

    def test_identity_matching(self):
        s = exact_ot([0.5, 0.5], [0.5, 0.5], [[0, 1], [1, 0]])
        assert s.value == 0.0
        assert np.array_equal(s.plan.mass, np.diag([0.5, 0.5]))

    def test_two_by_two_enumeration(self):
        a, b, C = [0.3, 0.7], [0.6, 0.4], np.array([[0.0, 1.0], [1.0, 0.0]])
        assert two_by_two_vertices(a, b, C) == pytest.approx(0.3, abs=1e-15)
        assert exact_ot(a, b, C).value == pytest.approx(0.3, abs=1e-15)

    def test_errors(self):
        with pytest.raises(DimensionMismatch):
            exact_ot([1.0], [0.5, 0.5], [[1.0]])
        with pytest.raises(MarginalNotNormalized):
            exact_ot([0.5], [1.0], [[1.0]])
        with pytest.raises(NonFiniteCost):
            exact_ot([1.0], [1.0], [[np.inf]])

    @given(problems())
    def test_matches_lp_oracle(self, p):
        seed, n, m = p
        rng = make_rng(seed)
        a, b, C = random_problem(rng, n, m, zero_rows=int(rng.integers(0, n)))
        s = exact_ot(a, b, C)
        assert s.converged
        assert abs(s.value - lp_value(a, b, C)) <= 1e-12 * max(1.0, C.max()) * n * m
        assert s.plan.marginal_error(a, b) <= 1e-12
        assert np.all(s.plan.mass >= 0)

    @given(problems())
    def test_degenerate_costs(self, p):
        # integer costs and rational marginals produce many ties and degenerate pivots
        seed, n, m = p
        rng = make_rng(seed)
        a = rng.integers(0, 3, n).astype(float) + (np.arange(n) == 0)
        b = rng.integers(0, 3, m).astype(float) + (np.arange(m) == 0)
        a, b = a / a.sum(), b / b.sum()
        C = rng.integers(0, 2, (n, m)).astype(float)
        s = exact_ot(a, b, C)
        assert abs(s.value - lp_value(a, b, C)) <= 1e-12 * n * m
        assert s.plan.marginal_error(a, b) <= 1e-12

    @given(problems())
    def test_bounds(self, p):
        seed, n, m = p
        a, b, C = random_problem(make_rng(seed), n, m)
        v = exact_ot(a, b, C).value
        assert C.min() - 1e-12 <= v <= C.max() + 1e-12
        assert v <= a @ C @ b + 1e-12

    @given(problems())
    def test_deterministic(self, p):
        seed, n, m = p
        a, b, C = random_problem(make_rng(seed), n, m)
        C = np.round(C * 3) / 3  # ties
        assert np.array_equal(exact_ot(a, b, C).plan.mass, exact_ot(a, b, C).plan.mass)


class TestSinkhorn:
    def test_single_cell(self):
        s = sinkhorn([1.0], [1.0], [[0.4]], 0.1)
        assert s.value == pytest.approx(0.4, abs=1e-15)
        assert np.array_equal(s.plan.mass, [[1.0]])

    def test_large_epsilon_product(self):
        s = sinkhorn([0.5, 0.5], [0.5, 0.5], [[0, 1], [1, 0]], 1e4)
        assert np.allclose(s.plan.mass, 0.25, atol=1e-4)

    def test_small_epsilon_near_exact(self):
        s = sinkhorn([0.5, 0.5], [0.5, 0.5], [[0, 1], [1, 0]], 1e-3)
        assert abs(s.value - 0.0) <= 1e-2

    def test_errors(self):
        with pytest.raises(InputError):
            sinkhorn([1.0], [1.0], [[1.0]], 0.0)
        with pytest.raises(NonFiniteCost):
            sinkhorn([1.0], [1.0], [[np.nan]], 0.1)

    def test_iteration_cap_is_not_an_error(self, rng):
        a, b, C = random_problem(rng, 5, 5)
        s = sinkhorn(a, b, C, 0.01, tol=1e-14, max_iter=2)
        assert not s.converged and s.iterations == 2

    @given(problems(), st.sampled_from([0.02, 0.1, 0.5]))
    def test_matches_dual_oracle(self, p, eps):
        seed, n, m = p
        a, b, C = random_problem(make_rng(seed), n, m)
        s = sinkhorn(a, b, C, eps, tol=1e-12)
        assert s.converged
        assert abs(s.value - entropic_dual_oracle(a, b, C, eps)) <= 1e-8

    @given(problems(), st.sampled_from([0.01, 0.1]))
    def test_solution_invariants(self, p, eps):
        seed, n, m = p
        rng = make_rng(seed)
        a, b, C = random_problem(rng, n, m, zero_rows=int(rng.integers(0, n)))
        s = sinkhorn(a, b, C, eps)
        P = s.plan.mass
        assert s.plan.marginal_error(a, b) <= 1e-7
        assert abs(s.value - entropic_objective(P, C, eps)) <= 1e-9 * max(1.0, abs(s.value))
        assert abs(s.duals.f.mean()) <= 1e-12
        assert np.all(s.duals.f[a == 0] == 0)
        act = np.outer(a > 0, b > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            rhs = C + eps * np.log(P / np.outer(a, b))
        lhs = s.duals.f[:, None] + s.duals.g[None, :]
        assert np.all(lhs[act] <= rhs[act] + 1e-9)

    def test_zero_mass_rows_excluded(self):
        s = sinkhorn([0.0, 1.0], [0.5, 0.5], [[5.0, 5.0], [0.0, 1.0]], 0.1)
        assert np.all(s.plan.mass[0] == 0)
        assert s.duals.f[0] == 0 and not s.duals.f_mask[0]


class TestBatch:
    @pytest.mark.parametrize("method", ["kernel", "log"])
    def test_matches_single(self, rng, method):
        L, n, m = 12, 5, 4
        A = rng.dirichlet(np.ones(n), L)
        B = rng.dirichlet(np.ones(m), L)
        A[0, :2] = 0
        A[0] /= A[0].sum()
        M = rng.random((n, m))
        res = sinkhorn_batch(A, B, M, 0.05, tol=1e-11, method=method)
        assert res.converged.all()
        for c in range(L):
            ref = sinkhorn(A[c], B[c], M, 0.05, tol=1e-12).value
            assert abs(res.values[c] - ref) <= 1e-9

    def test_per_cell_costs(self, rng):
        L, n, m = 6, 3, 3
        A = rng.dirichlet(np.ones(n), L)
        B = rng.dirichlet(np.ones(m), L)
        M = rng.random((L, n, m))
        res = sinkhorn_batch(A, B, M, 0.1, tol=1e-11)
        for c in range(L):
            assert abs(res.values[c] - sinkhorn(A[c], B[c], M[c], 0.1, tol=1e-12).value) <= 1e-9

    def test_tiny_epsilon_switches_to_log_domain(self, rng):
        A = rng.dirichlet(np.ones(4), 3)
        B = rng.dirichlet(np.ones(4), 3)
        M = rng.random((4, 4))
        res = sinkhorn_batch(A, B, M, 1e-4, tol=1e-9, max_iter=100_000)
        assert np.all(np.isfinite(res.values))
        for c in range(3):
            assert abs(res.values[c] - exact_ot(A[c], B[c], M).value) <= 1e-2


class TestRestricted:
    def test_example(self):
        a, b, C = [0.5, 0.5, 0.0], [0.0, 1.0], np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        s = solve_restricted(a, b, C, [0, 1], [1])
        assert s.value == exact_ot(a, b, C).value
        assert np.array_equal(s.row_index, [0, 1]) and np.array_equal(s.col_index, [1])

    def test_full_restriction_identical(self, rng):
        a, b, C = random_problem(rng, 4, 5)
        s = solve_restricted(a, b, C, range(4), range(5))
        d = exact_ot(a, b, C)
        assert np.array_equal(s.plan.mass, d.plan.mass) and s.value == d.value

    @given(st.integers(0, 100_000))
    def test_zero_rows(self, seed):
        rng = make_rng(seed)
        a, b, C = random_problem(rng, 6, 6, zero_rows=2)
        s = solve_restricted(a, b, C, np.flatnonzero(a > 0), np.arange(6))
        assert abs(s.value - exact_ot(a, b, C).value) <= 1e-9

    def test_entropic(self, rng):
        a, b, C = random_problem(rng, 6, 5, zero_rows=2)
        s = solve_restricted(a, b, C, np.flatnonzero(a > 0), np.arange(5), epsilon=0.05, tol=1e-12)
        assert abs(s.value - sinkhorn(a, b, C, 0.05, tol=1e-12).value) <= 1e-9

    def test_support_violation(self):
        with pytest.raises(SupportViolation):
            solve_restricted([0.5, 0.5], [1.0], [[1.0], [2.0]], [0], [0])


@given(problems(), st.sampled_from([0.0, 0.05, 0.5]))
def test_one_lipschitz_in_cost(p, eps):
    seed, n, m = p
    rng = make_rng(seed)
    a, b, C1 = random_problem(rng, n, m)
    C2 = C1 + 0.3 * rng.standard_normal((n, m))
    if eps == 0:
        C2 = np.abs(C2)
        d1, d2 = exact_ot(a, b, C1).value, exact_ot(a, b, C2).value
    else:
        d1 = sinkhorn(a, b, C1, eps, tol=1e-12).value
        d2 = sinkhorn(a, b, C2, eps, tol=1e-12).value
    assert abs(d1 - d2) <= np.abs(C1 - C2).max() + 1e-9


def test_entropic_limit_on_random_instances():
    for seed in range(10):
        a, b, C = random_problem(make_rng(seed), 4, 4)
        exact = exact_ot(a, b, C).value
        gaps = [abs(sinkhorn(a, b, C, s * C.mean(), tol=1e-11, max_iter=200_000).value - exact)
                for s in (1e-1, 1e-2, 1e-3)]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] <= 5e-2 * C.max()


def test_lp_oracle_self_check():
    # the enumeration and the LP agree on a 2x2 instance
    a, b, C = [0.2, 0.8], [0.5, 0.5], np.array([[0.0, 2.0], [1.0, 0.5]])
    assert abs(two_by_two_vertices(a, b, C) - lp_value(np.array(a), np.array(b), C)) <= 1e-12
