import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from ensobs.transport import (
    ConvergenceWarning,
    EmptySourceError,
    TransportPlan,
    conditional_destination,
    ot_1d_exact,
    plan_cost,
    sinkhorn,
    solve,
    wasserstein1_binned,
)


def lp_oracle(p, q):
    """Brute-force LP: minimise sum |i-j| T_ij subject to the marginals."""
    ell = p.size
    cost = np.abs(np.subtract.outer(np.arange(ell), np.arange(ell))).ravel().astype(float)
    A_eq, b_eq = [], []
    for i in range(ell):  # rows -> target
        row = np.zeros((ell, ell))
        row[i, :] = 1
        A_eq.append(row.ravel())
        b_eq.append(q[i])
    for j in range(ell):  # columns -> source
        col = np.zeros((ell, ell))
        col[:, j] = 1
        A_eq.append(col.ravel())
        b_eq.append(p[j])
    res = linprog(cost, A_eq=np.array(A_eq), b_eq=b_eq, bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def random_prob(rng, ell, zeros=True):
    v = rng.random(ell)
    if zeros:
        v[rng.random(ell) < 0.3] = 0.0
        if v.sum() == 0:
            v[0] = 1.0
    return v / v.sum()


prob_vectors = st.integers(1, 12).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0, 1), min_size=n, max_size=n),
        st.lists(st.floats(0, 1), min_size=n, max_size=n),
    )
).filter(lambda ab: sum(ab[0]) > 1e-3 and sum(ab[1]) > 1e-3).map(
    lambda ab: (np.array(ab[0]) / sum(ab[0]), np.array(ab[1]) / sum(ab[1]))
)


class TestExact:
    def test_single_shift(self):
        plan = ot_1d_exact([1.0, 0.0], [0.0, 1.0])
        np.testing.assert_array_equal(plan.T, [[0, 0], [1, 0]])
        assert plan_cost(plan) == 1.0

    def test_identity(self, rng):
        q = random_prob(rng, 6)
        plan = ot_1d_exact(q, q)
        np.testing.assert_allclose(plan.T, np.diag(q), atol=1e-15)
        assert plan_cost(plan) == pytest.approx(0.0, abs=1e-15)

    def test_three_bins(self):
        plan = ot_1d_exact([0.5, 0.5, 0.0], [0.0, 0.5, 0.5])
        expected = np.zeros((3, 3))
        expected[1, 0] = expected[2, 1] = 0.5
        np.testing.assert_array_equal(plan.T, expected)
        assert plan_cost(plan) == 1.0
        assert lp_oracle(np.array([0.5, 0.5, 0]), np.array([0, 0.5, 0.5])) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("ell", [1, 2, 3, 4, 5])
    def test_matches_lp_oracle(self, rng, ell):
        for _ in range(20):
            p, q = random_prob(rng, ell), random_prob(rng, ell)
            plan = ot_1d_exact(p, q)
            assert abs(plan_cost(plan) - lp_oracle(p, q)) <= 1e-9
            assert max(plan.marginal_errors()) <= 1e-12

    @given(prob_vectors)
    def test_feasible_and_monotone(self, pq):
        p, q = pq
        plan = ot_1d_exact(p, q)
        assert np.all(plan.T >= 0)
        assert max(plan.marginal_errors()) <= 1e-12
        i, j = np.nonzero(plan.T > 0)
        # support is a monotone staircase: sorted by i, j is non-decreasing
        order = np.lexsort((j, i))
        assert np.all(np.diff(j[order]) >= 0)

    def test_validation(self):
        with pytest.raises(ValueError):
            ot_1d_exact([1.0], [0.5, 0.5])
        with pytest.raises(ValueError):
            ot_1d_exact([0.5, 0.4], [0.5, 0.5])
        with pytest.raises(ValueError):
            ot_1d_exact([1.5, -0.5], [0.5, 0.5])


class TestPlanCost:
    def test_matches_double_sum(self, rng):
        p, q = random_prob(rng, 5), random_prob(rng, 5)
        T = ot_1d_exact(p, q).T
        brute = sum(abs(i - j) * T[i, j] for i in range(5) for j in range(5))
        assert plan_cost(TransportPlan(T, p, q)) == pytest.approx(brute, abs=1e-15)


class TestSinkhorn:
    def test_uniform_symmetric(self):
        q = np.full(6, 1 / 6)
        plan = sinkhorn(q, q, epsilon=0.5)
        np.testing.assert_allclose(plan.T, plan.T.T, atol=1e-12)
        assert plan.marginal_error < 1e-9

    def test_forced_shift(self):
        plan = sinkhorn([1.0, 0.0], [0.0, 1.0], epsilon=0.05, tol=1e-9)
        assert plan.T[1, 0] >= 0.999
        assert abs(plan_cost(plan) - 1.0) <= 0.01

    def test_entropic_limit(self):
        p, q = np.array([0.3, 0.7]), np.array([0.6, 0.4])
        plan = sinkhorn(p, q, epsilon=1e3)
        np.testing.assert_allclose(plan.T, np.outer(q, p), atol=1e-3)

    def test_cost_approaches_exact(self, rng):
        for _ in range(5):
            p, q = random_prob(rng, 20, zeros=False), random_prob(rng, 20, zeros=False)
            exact = plan_cost(ot_1d_exact(p, q))
            gaps = []
            for eps in (1.0, 0.1, 0.01):
                plan = sinkhorn(p, q, epsilon=eps, max_iters=100_000, tol=1e-11)
                assert plan.marginal_error <= 1e-6
                gaps.append(plan_cost(plan) - exact)
            assert gaps[0] > gaps[1] >= gaps[2] - 1e-8
            assert gaps[2] <= 0.05

    def test_warns_on_nonconvergence(self):
        p = np.array([0.9, 0.1, 0.0, 0.0])
        q = np.array([0.0, 0.0, 0.1, 0.9])
        with pytest.warns(ConvergenceWarning):
            plan = sinkhorn(p, q, epsilon=0.01, max_iters=3, tol=1e-14)
        assert plan.iterations == 3
        assert plan.marginal_error > 0

    def test_zero_masses_smoothed(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            plan = sinkhorn([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], epsilon=0.1)
        assert np.all(np.isfinite(plan.T))

    def test_solve_dispatch(self):
        assert isinstance(solve([1.0], [1.0], "sinkhorn"), TransportPlan)
        with pytest.raises(ValueError):
            solve([1.0], [1.0], "simplex")
        with pytest.raises(ValueError):
            sinkhorn([1.0], [1.0], epsilon=0.0)


class TestConditional:
    def test_diagonal(self, rng):
        q = random_prob(rng, 5, zeros=False)
        for m in range(5):
            np.testing.assert_allclose(conditional_destination(ot_1d_exact(q, q), m), np.eye(5)[m])

    def test_forced(self):
        np.testing.assert_array_equal(conditional_destination(ot_1d_exact([1.0, 0.0], [0.0, 1.0]), 0), [0, 1])

    def test_three_bin_plan(self):
        plan = ot_1d_exact([0.5, 0.5, 0.0], [0.0, 0.5, 0.5])
        np.testing.assert_array_equal(conditional_destination(plan, 0), [0, 1, 0])

    def test_empty_source(self):
        with pytest.raises(EmptySourceError):
            conditional_destination(ot_1d_exact([1.0, 0.0], [0.0, 1.0]), 1)

    @given(prob_vectors)
    def test_is_prob_vector(self, pq):
        p, q = pq
        plan = ot_1d_exact(p, q)
        for m in np.flatnonzero(p > 1e-9):
            c = conditional_destination(plan, m)
            assert c.min() >= 0 and abs(c.sum() - 1) <= 1e-12


class TestBinnedW1:
    def test_trivial(self):
        assert wasserstein1_binned([0.2, 0.8], [0.2, 0.8]) == 0.0
        assert wasserstein1_binned([1.0, 0.0], [0.0, 1.0]) == 1.0

    def test_matches_exact_cost(self, rng):
        for _ in range(20):
            a, b = random_prob(rng, 10), random_prob(rng, 10)
            assert wasserstein1_binned(a, b) == pytest.approx(plan_cost(ot_1d_exact(a, b)), abs=1e-10)

    @given(prob_vectors)
    def test_symmetric_nonnegative(self, pq):
        a, b = pq
        assert wasserstein1_binned(a, b) == pytest.approx(wasserstein1_binned(b, a), abs=1e-12)
        assert wasserstein1_binned(a, b) >= 0
