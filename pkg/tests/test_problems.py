import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clpbounds.exceptions import InvalidLambdaUtility, PropensityUnderflow, SizeCap, ValidationError
from clpbounds.lp import Sense, solve_simplex_batch
from clpbounds.problems import (
    ATE,
    CellProbability,
    Compliers,
    NotOptimallyTreated,
    NotOptimalUnderZ,
    NuisanceModel,
    ObservedData,
    ProblemSpec,
    UtilitySpec,
    build_iv,
    build_joint_po,
    clip_probabilities,
    iv_b_and_phi,
    iv_c_and_phi,
    joint_po_b_and_phi,
    joint_po_c_and_phi,
    power_law_cells,
    utility_preset,
)
from clpbounds.simulation import LatentNormalDGP

from conftest import iv_population, joint_po_matrix


@pytest.mark.parametrize("M, L, J, K", [(2, 3, 5, 9), (2, 2, 3, 4), (3, 2, 4, 8)])
def test_joint_po_shapes(M, L, J, K):
    A, cells = build_joint_po(M, L)
    assert A.shape == (J, K)
    assert cells.shape == (K, M)
    assert set(np.unique(A)) <= {0.0, 1.0}
    assert np.linalg.matrix_rank(A) == J
    assert np.sum(np.all(A == 1, axis=1)) == 1


def test_joint_po_smallest_case_by_hand():
    A, _ = build_joint_po(2, 2)
    ref, _ = joint_po_matrix(2, 2)
    np.testing.assert_array_equal(A, ref)


def test_size_cap():
    with pytest.raises(SizeCap):
        build_joint_po(21, 2)


@pytest.mark.parametrize("L, J, K", [(2, 5, 16), (3, 9, 36)])
def test_iv_shapes(L, J, K):
    A, cells = build_iv(L)
    assert A.shape == (J, K)
    assert np.linalg.matrix_rank(A) == J
    A_full, _ = build_iv(L, full_margins=True)
    assert A_full.shape == (J + 2, K)
    assert np.linalg.matrix_rank(A_full) == J + 2


def test_iv_cell_membership():
    A, cells = build_iv(2)
    k = int(np.flatnonzero(np.all(cells == [1, 1, 1, 1], axis=1))[0])
    # rows ordered by d, then z, then level: (1,1,0) is row 2, (1,1,1) row 3
    assert list(np.flatnonzero(A[:, k])) == [2, 3, 4]


@pytest.mark.parametrize("M, L", [(2, 2), (2, 3), (3, 2), (3, 3)])
def test_margin_consistency(M, L, rng):
    A, cells = build_joint_po(M, L)
    p = rng.dirichlet(np.ones(L**M))
    b = A @ p
    for d in range(M):
        for level in range(1, L):
            assert b[d * (L - 1) + level - 1] == pytest.approx(p[cells[:, d] == level].sum())
    assert b[-1] == pytest.approx(1.0)


def test_phi_b_arithmetic():
    # e(d_j, x) = 0.5, d = d_j, y = y_j, b_j = 0.3 -> phi = 2 * 0.7
    m = np.array([[[0.5, 0.3, 0.2], [0.4, 0.3, 0.3]]])
    nm = NuisanceModel(np.array([[0.5, 0.5]]), outcome_probs=m)
    data = ObservedData(np.zeros(1), [0], [1])
    B, phi = joint_po_b_and_phi(nm, data)
    assert B[0, 0] == pytest.approx(0.3)
    assert phi[0, 0] == pytest.approx(1.4)
    # other arm's rows and the sum row carry no residual
    np.testing.assert_array_equal(phi[0, 2:], 0.0)


def test_propensity_underflow_without_clipping():
    m = np.full((1, 2, 2), 0.5)
    nm = NuisanceModel(np.array([[1e-9, 1 - 1e-9]]), outcome_probs=m, clip=False)
    with pytest.raises(PropensityUnderflow):
        joint_po_b_and_phi(nm, ObservedData(np.zeros(1), [1], [0]))


def test_clipping_keeps_simplex():
    p = np.array([[0.0, 0.3, 0.7], [0.2, 0.3, 0.5]])
    q = clip_probabilities(p, 1e-6)
    np.testing.assert_allclose(q.sum(axis=1), 1.0)
    assert q.min() >= 1e-6
    np.testing.assert_array_equal(q[1], p[1])


def test_ate_objective_cells():
    A, cells = build_joint_po(2, 2)
    nm = NuisanceModel(np.full((1, 2), 0.5), outcome_probs=np.full((1, 2, 2), 0.5))
    C, phi = joint_po_c_and_phi(ATE(1, 0), nm, ObservedData(np.zeros(1), [0], [0]), cells)
    np.testing.assert_array_equal(C[0], [0, 1, -1, 0])
    np.testing.assert_array_equal(phi, 0.0)


def test_power_law_agreeing_policy_has_zero_regret():
    assert power_law_cells(2.0, 5.0, 1.0, 1.0) == pytest.approx(0.0)


def test_not_optimally_treated_against_cellwise_script():
    _, cells = build_joint_po(2, 2)
    e = np.array([[0.5, 0.5]])
    nm = NuisanceModel(e, outcome_probs=np.full((1, 2, 2), 0.5))
    C, _ = joint_po_c_and_phi(NotOptimallyTreated(), nm,
                              ObservedData(np.zeros(1), [0], [0]), cells)
    expected = []
    for y0, y1 in itertools.product(range(2), range(2)):
        best = max(y0, y1)
        expected.append(e[0, 0] * (y0 != best) + e[0, 1] * (y1 != best))
    np.testing.assert_allclose(C[0], expected)
    k = int(np.flatnonzero((cells == [0, 1]).all(axis=1))[0])
    assert C[0, k] == pytest.approx(0.5)


def test_invalid_lambda_utility():
    with pytest.raises(InvalidLambdaUtility):
        UtilitySpec((0.0, 1.0, 2.0), 0.0)
    with pytest.raises(InvalidLambdaUtility):
        utility_preset("reverse", 3, -1.0)
    utility_preset("reverse_shifted", 3, -1.0)


def test_power_law_continuity_at_zero():
    u0 = np.array([1.0, 2.0, 3.0, 1.5])
    u1 = np.array([3.0, 1.0, 2.5, 4.0])
    pi = np.array([0.1, 0.5, 0.9, 0.3])
    base = power_law_cells(u0, u1, pi, 0.0)
    expected = np.log(np.maximum(u0, u1)) - np.log(u0 + pi * (u1 - u0))
    np.testing.assert_allclose(base, expected)
    for lam in (1e-6, -1e-6):
        assert np.abs(power_law_cells(u0, u1, pi, lam) - base).max() <= 1e-4


def test_compliers_count():
    _, cells = build_iv(2)
    nm = NuisanceModel(np.full((1, 2), 0.5),
                       joint_given_instrument=np.full((1, 2, 2, 2), 0.25))
    data = ObservedData(np.zeros(1), [0], [0], [0])
    C, phi = iv_c_and_phi(Compliers(), nm, data, cells)
    assert C.sum() == 4
    np.testing.assert_array_equal(phi, 0.0)
    C, _ = iv_c_and_phi(ATE(1, 0), nm, data, cells)
    np.testing.assert_array_equal(C[0], cells[:, 1] - cells[:, 0])


def test_not_optimal_under_z_against_cellwise_script():
    _, cells = build_iv(2)
    jz = np.zeros((1, 2, 2, 2))
    jz[0, 0] = [[0.3, 0.2], [0.25, 0.25]]
    jz[0, 1] = [[0.1, 0.1], [0.4, 0.4]]  # P(D=1 | Z=1) = 0.8
    nm = NuisanceModel(np.full((1, 2), 0.5), joint_given_instrument=jz)
    data = ObservedData(np.zeros(1), [1], [0], [1])
    C, phi = iv_c_and_phi(NotOptimalUnderZ(1), nm, data, cells)
    for k, (y0, y1, _, _) in enumerate(cells):
        best = max(y0, y1)
        want = 0.2 * (y0 != best) + 0.8 * (y1 != best)
        assert C[0, k] == pytest.approx(want)
        # observed d = 1 under z = 1 with weight 1/0.5
        want_phi = 2.0 * ((0 - 0.2) * (y0 != best) + (1 - 0.8) * (y1 != best))
        assert phi[0, k] == pytest.approx(want_phi)


def test_iv_phi_weights_and_indicator():
    L = 2
    jz = np.full((2, 2, 2, L), 0.25)
    nm = NuisanceModel(np.tile([0.52, 0.48], (2, 1)), joint_given_instrument=jz)
    data = ObservedData(np.zeros(2), [1, 0], [1, 1], [1, 0])
    B, phi = iv_b_and_phi(nm, data)
    # row labels (level, d, z): (1,0,0), (1,0,1), (1,1,0), (1,1,1)
    assert phi[0, 3] == pytest.approx((1 - 0.25) / 0.48)
    assert phi[0, 0] == 0.0 and phi[0, 2] == 0.0  # z != z_j
    assert phi[1, 0] == pytest.approx((1 - 0.25) / 0.52)


def test_joint_phi_mean_zero_under_true_nuisances():
    dgp = LatentNormalDGP(L=3, rho=0.9)
    data, _, _ = dgp.sample(100_000, np.random.default_rng(3))
    nm = dgp.true_nuisance(data.x[:, 0])
    _, phi_b = joint_po_b_and_phi(nm, data)
    _, cells = build_joint_po(2, 3)
    _, phi_c = joint_po_c_and_phi(NotOptimallyTreated(), nm, data, cells)
    for phi in (phi_b[:, :-1], phi_c):
        se = phi.std(axis=0) / np.sqrt(len(data))
        mean = phi.mean(axis=0)
        live = se > 0
        assert np.all(np.abs(mean[live]) <= 4 * se[live])


def test_iv_phi_mean_zero_under_true_nuisances():
    data, nm = iv_population(100_000, 2, np.random.default_rng(5))
    _, phi = iv_b_and_phi(nm, data, full_margins=True)
    _, cells = build_iv(2)
    _, phi_c = iv_c_and_phi(NotOptimalUnderZ(1), nm, data, cells)
    for ph in (phi[:, :-1], phi_c):
        se = ph.std(axis=0) / np.sqrt(len(data))
        live = se > 0
        assert np.all(np.abs(ph.mean(axis=0)[live]) <= 4 * se[live])


def test_ate_collapses_bounds(rng):
    spec = ProblemSpec.joint_po(2, 3, ATE(1, 0))
    n = 200
    m = rng.dirichlet(np.ones(3), size=(n, 2))
    nm = NuisanceModel(rng.dirichlet(np.ones(2), size=n), outcome_probs=m)
    data = ObservedData(rng.normal(size=n), rng.integers(0, 2, n), rng.integers(0, 3, n))
    batch = spec.evaluate(data, nm)
    lo = solve_simplex_batch(spec.A, batch.B, batch.C, Sense.MINIMIZE)
    hi = solve_simplex_batch(spec.A, batch.B, batch.C, Sense.MAXIMIZE)
    assert np.abs(hi.value - lo.value).max() <= 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), M=st.integers(2, 3), L=st.integers(2, 3))
def test_b_rows_sum_to_one(seed, M, L):
    rng = np.random.default_rng(seed)
    n = 20
    m = rng.dirichlet(np.ones(L), size=(n, M))
    nm = NuisanceModel(rng.dirichlet(np.ones(M), size=n), outcome_probs=m)
    data = ObservedData(rng.normal(size=n), rng.integers(0, M, n), rng.integers(0, L, n))
    B, phi = joint_po_b_and_phi(nm, data)
    np.testing.assert_array_equal(B[:, -1], 1.0)
    np.testing.assert_array_equal(phi[:, -1], 0.0)
    # phi vanishes on rows of arms other than the observed one
    for i in range(n):
        for d in range(M):
            if d != data.d[i]:
                block = phi[i, d * (L - 1):(d + 1) * (L - 1)]
                np.testing.assert_array_equal(block, 0.0)


def test_spec_per_observation_accessors(rng):
    spec = ProblemSpec.joint_po(2, 3, CellProbability(4))
    n = 5
    nm = NuisanceModel(rng.dirichlet(np.ones(2), size=n),
                       outcome_probs=rng.dirichlet(np.ones(3), size=(n, 2)))
    data = ObservedData(rng.normal(size=n), rng.integers(0, 2, n), rng.integers(0, 3, n))
    batch = spec.evaluate(data, nm)
    np.testing.assert_array_equal(spec.b_of(data, nm, 2), batch.B[2])
    np.testing.assert_array_equal(spec.c_of(data, nm, 2), batch.C[2])
    assert spec.J == 5 and spec.K == 9


def test_data_validation():
    with pytest.raises(ValidationError):
        ObservedData(np.zeros(3), [0, 1], [0, 1, 1])
    with pytest.raises(ValidationError):
        ObservedData(np.zeros(2), [0, 1], [0, 1], [0, 2])
    with pytest.raises(ValidationError):
        NuisanceModel(np.array([[0.5, 0.6]]))
