import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from clpbounds.exceptions import RankDeficient, TooLargeForEnumeration, ValidationError
from clpbounds.lp import (
    Feasibility,
    Sense,
    StandardFormLP,
    Status,
    basis_apply,
    check_feasibility,
    check_feasibility_batch,
    max_l1_norm,
    probe_suboptimality,
    solve_simplex,
    solve_simplex_batch,
)
from clpbounds.problems import build_iv, build_joint_po

from conftest import brute_force_bounds, joint_po_matrix, random_bounded_lp


def test_simplex_row_picks_smallest_coefficient():
    lp = StandardFormLP(np.ones((1, 3)), [1.0], [0.3, 0.1, 0.5])
    sol = solve_simplex(lp)
    assert sol.status is Status.OPTIMAL
    assert sol.value == pytest.approx(0.1, abs=1e-12)
    assert list(sol.basis) == [1]
    np.testing.assert_allclose(sol.primal, [0, 1, 0], atol=1e-12)


@pytest.mark.parametrize("sense, expected", [(Sense.MAXIMIZE, 0.6), (Sense.MINIMIZE, 0.3)])
def test_binary_cell_bounds_match_enumeration(sense, expected):
    A, cells = joint_po_matrix(2, 2)
    b = np.array([0.4, 0.7, 1.0])
    c = np.array([1.0 if cell == (0, 1) else 0.0 for cell in cells])
    sol = solve_simplex(StandardFormLP(A, b, c, sense))
    lo, hi = brute_force_bounds(A, b, c)
    assert sol.value == pytest.approx(expected, abs=1e-12)
    assert sol.value == pytest.approx(hi if sense is Sense.MAXIMIZE else lo, abs=1e-12)


def test_solution_invariants(rng):
    for _ in range(50):
        J, K = rng.integers(2, 6), rng.integers(6, 12)
        A, b, c = random_bounded_lp(rng, J, K, degenerate=rng.random() < 0.5)
        sol = solve_simplex(StandardFormLP(A, b, c))
        assert sol.status is Status.OPTIMAL
        assert np.all(sol.primal >= -1e-12)
        assert np.max(np.abs(A @ sol.primal - b)) <= 1e-9 * (1 + np.abs(b).max())
        off = np.setdiff1d(np.arange(K), sol.basis)
        np.testing.assert_allclose(sol.primal[off], 0.0, atol=1e-12)
        assert sol.value == pytest.approx(c @ sol.primal, abs=1e-12)
        assert abs(np.linalg.det(A[:, sol.basis])) > 1e-10
        assert list(sol.basis) == sorted(sol.basis)


def test_complementary_slackness(rng):
    for sense in (Sense.MINIMIZE, Sense.MAXIMIZE):
        for _ in range(50):
            A, b, c = random_bounded_lp(rng, 4, 10, degenerate=True)
            sol = solve_simplex(StandardFormLP(A, b, c, sense))
            d = c - A.T @ np.linalg.solve(A[:, sol.basis].T, c[sol.basis])
            tol = 1e-9 * (1 + np.abs(c).max())
            np.testing.assert_allclose(d[sol.basis], 0.0, atol=tol)
            if sense is Sense.MINIMIZE:
                assert np.all(d >= -tol)
            else:
                assert np.all(d <= tol)


def test_value_matches_highs_dual(rng):
    # Weak/strong duality against an independent solver on the dual LP.
    for _ in range(100):
        J, K = rng.integers(2, 7), rng.integers(7, 13)
        A, b, c = random_bounded_lp(rng, J, K)
        sol = solve_simplex(StandardFormLP(A, b, c))
        # dual of min c'p s.t. Ap=b, p>=0 is max b'y s.t. A'y <= c
        dual = linprog(-b, A_ub=A.T, b_ub=c, bounds=[(None, None)] * J, method="highs")
        assert dual.status == 0
        assert sol.value == pytest.approx(-dual.fun, abs=1e-9)


def test_infeasible_and_unbounded_status():
    A = np.ones((1, 3))
    sol = solve_simplex(StandardFormLP(A, [-1.0], [1.0, 2.0, 3.0]))
    assert sol.status is Status.INFEASIBLE
    assert sol.primal.size == 0
    A = np.array([[1.0, -1.0, 0.0]])
    sol = solve_simplex(StandardFormLP(A, [0.0], [-1.0, 0.0, 0.0]))
    assert sol.status is Status.UNBOUNDED


def test_rank_deficient_rejected():
    A = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]])
    with pytest.raises(RankDeficient):
        StandardFormLP(A, [1.0, 2.0], [0.0, 0.0, 0.0])


def test_nonfinite_rejected():
    with pytest.raises(ValidationError):
        StandardFormLP(np.ones((1, 2)), [np.nan], [0.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
def test_scale_equivariance(seed, scale):
    rng = np.random.default_rng(seed)
    A, b, c = random_bounded_lp(rng, 4, 9)
    sol = solve_simplex(StandardFormLP(A, b, c))
    scaled = solve_simplex(StandardFormLP(A, b, scale * c))
    assert scaled.value == pytest.approx(scale * sol.value, rel=1e-9, abs=1e-12)
    # the original basis stays optimal: its reduced costs for s*c are >= 0
    y = np.linalg.solve(A[:, sol.basis].T, scale * c[sol.basis])
    d = scale * c - A.T @ y
    assert np.all(d >= -1e-9 * (1 + scale * np.abs(c).max()))


def test_basis_apply_identity_and_zero():
    A = np.eye(3)
    v = np.array([0.2, -1.0, 3.0])
    np.testing.assert_array_equal(basis_apply([0, 1, 2], A, v), v)
    Aj, _ = build_joint_po(2, 2)
    np.testing.assert_array_equal(basis_apply([0, 1, 3], Aj, np.zeros(3)), np.zeros(4))


def test_basis_apply_recovers_optimal_primal(rng):
    A, _ = build_joint_po(2, 2)
    for _ in range(20):
        p, q = rng.uniform(0.05, 0.95, size=2)
        b = np.array([p, q, 1.0])
        c = rng.normal(size=4)
        sol = solve_simplex(StandardFormLP(A, b, c))
        out = basis_apply(sol.basis, A, b)
        np.testing.assert_allclose(out, sol.primal, atol=1e-12)
        np.testing.assert_allclose(A @ out, b, atol=1e-12)


def test_probe_simplex_gap():
    lp = StandardFormLP(np.ones((1, 3)), [1.0], [0.3, 0.1, 0.5])
    sol = solve_simplex(lp)
    probe = probe_suboptimality(lp, sol, "vertex_enumeration")
    assert probe.second_best_value == pytest.approx(0.3)
    assert probe.gap_lower_bound == pytest.approx(0.2)
    rc = probe_suboptimality(lp, sol, "reduced_cost_bound")
    assert rc.gap_lower_bound == pytest.approx(0.2)


def test_probe_zero_objective_has_zero_gap(rng):
    A, b, _ = random_bounded_lp(rng, 3, 7)
    lp = StandardFormLP(A, b, np.zeros(7))
    sol = solve_simplex(lp)
    for method in ("vertex_enumeration", "reduced_cost_bound"):
        assert probe_suboptimality(lp, sol, method).gap_lower_bound == 0.0


def test_probe_binary_cell_against_enumeration():
    A, cells = joint_po_matrix(2, 2)
    b = np.array([0.4, 0.7, 1.0])
    c = np.array([1.0 if cell == (0, 1) else 0.0 for cell in cells])
    lp = StandardFormLP(A, b, c, Sense.MAXIMIZE)
    sol = solve_simplex(lp)
    # independent oracle: distinct feasible basic values
    import itertools
    vals = set()
    for cols in itertools.combinations(range(4), 3):
        AB = A[:, cols]
        if abs(np.linalg.det(AB)) < 1e-10:
            continue
        pB = np.linalg.solve(AB, b)
        if np.all(pB >= -1e-12):
            vals.add(round(float(c[list(cols)] @ pB), 12))
    second = max(v for v in vals if v < sol.value - 1e-9)
    probe = probe_suboptimality(lp, sol, "vertex_enumeration")
    assert probe.second_best_value == pytest.approx(second, abs=1e-12)
    assert probe.gap_lower_bound == pytest.approx(sol.value - second, abs=1e-12)


def test_reduced_cost_probe_is_a_lower_bound(rng):
    for _ in range(100):
        A, b, c = random_bounded_lp(rng, 3, 8, degenerate=rng.random() < 0.3)
        lp = StandardFormLP(A, b, c)
        sol = solve_simplex(lp)
        exact = probe_suboptimality(lp, sol, "vertex_enumeration").gap_lower_bound
        bound = probe_suboptimality(lp, sol, "reduced_cost_bound").gap_lower_bound
        assert 0.0 <= bound <= exact + 1e-9


def test_probe_too_large():
    A, _ = build_joint_po(2, 5)  # K = 25
    b = A @ np.full(25, 1 / 25)
    lp = StandardFormLP(A, b, np.arange(25.0))
    sol = solve_simplex(lp)
    with pytest.raises(TooLargeForEnumeration):
        probe_suboptimality(lp, sol, "vertex_enumeration")


def test_feasibility_trivial_cases():
    A, cells = joint_po_matrix(3, 3)
    joint = np.random.default_rng(0).dirichlet(np.ones(9))
    assert check_feasibility(A, A @ joint) is Feasibility.FEASIBLE
    b = A @ joint
    b[0] = -0.1
    assert check_feasibility(A, b) is Feasibility.INFEASIBLE


def test_iv_feasibility_matches_independent_phase_one(rng):
    A, _ = build_iv(2)
    J, K = A.shape
    B = []
    for _ in range(200):
        b = A @ rng.dirichlet(np.ones(K))
        b[:-1] += rng.normal(scale=0.15, size=J - 1)
        B.append(b)
    B = np.array(B)
    ours = check_feasibility_batch(A, B)
    ref = np.array([linprog(np.zeros(K), A_eq=A, b_eq=b, bounds=(0, None),
                            method="highs").status == 0 for b in B])
    assert ours.any() and (~ours).any()
    np.testing.assert_array_equal(ours, ref)


def test_batch_matches_single(rng):
    B, C = [], []
    A0, _, _ = random_bounded_lp(rng, 4, 10)
    for _ in range(30):
        p = rng.dirichlet(np.ones(10))
        B.append(A0 @ p)
        C.append(rng.normal(size=10))
    B, C = np.array(B), np.array(C)
    batch = solve_simplex_batch(A0, B, C, Sense.MAXIMIZE)
    for i in range(30):
        sol = solve_simplex(StandardFormLP(A0, B[i], C[i], Sense.MAXIMIZE))
        assert batch.value[i] == pytest.approx(sol.value, abs=1e-12)


def test_max_l1_norm_of_probability_system():
    A, _ = build_joint_po(2, 3)
    b = A @ np.full(9, 1 / 9)
    assert max_l1_norm(A, b) == pytest.approx(1.0)
