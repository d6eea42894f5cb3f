import numpy as np
import pytest
from sklearn.base import clone

from clpbounds.exceptions import ValidationError
from clpbounds.nuisance import FoldPlan, MultinomialLogitNuisance, crossfit_nuisance
from clpbounds.problems import ObservedData
from clpbounds.simulation import LatentNormalDGP


def test_fold_plan_partitions():
    plan = FoldPlan.make(101, 3, seed=4)
    seen = np.concatenate([test for _, test in plan.folds()])
    assert sorted(seen) == list(range(101))
    for train, test in plan.folds():
        assert np.intersect1d(train, test).size == 0
    assert np.array_equal(plan.assignment, FoldPlan.make(101, 3, seed=4).assignment)


def test_fold_plan_validation():
    with pytest.raises(ValidationError):
        FoldPlan.make(10, 1)
    with pytest.raises(ValidationError):
        FoldPlan.make(2, 3)


def test_logit_recovers_truth_at_large_n():
    dgp = LatentNormalDGP(L=3, rho=0.9)
    data, _, _ = dgp.sample(20_000, np.random.default_rng(0))
    nm = MultinomialLogitNuisance("joint-po", 3).fit(data).predict(data)
    truth = dgp.true_nuisance(data.x[:, 0])
    assert np.abs(nm.propensity - truth.propensity).mean() < 0.02
    # the outcome model of arm 0 is constant in x
    assert np.abs(nm.outcome_probs[:, 0] - truth.outcome_probs[:, 0]).mean() < 0.02
    np.testing.assert_allclose(nm.outcome_probs.sum(axis=2), 1.0)


def test_iv_learner_shapes(rng):
    n = 400
    data = ObservedData(rng.normal(size=n), rng.integers(0, 2, n),
                        rng.integers(0, 3, n), rng.integers(0, 2, n))
    nm = MultinomialLogitNuisance("iv", 3).fit(data).predict(data)
    assert nm.joint_given_instrument.shape == (n, 2, 2, 3)
    np.testing.assert_allclose(nm.joint_given_instrument.sum(axis=(2, 3)), 1.0)


def test_learner_is_clonable():
    est = MultinomialLogitNuisance("iv", n_levels=4, C=0.5)
    params = clone(est).get_params()
    assert params["n_levels"] == 4 and params["C"] == 0.5


def test_crossfit_hygiene(rng):
    # Predictions for fold f never depend on fold f's own rows.
    dgp = LatentNormalDGP(L=3)
    data, _, _ = dgp.sample(600, rng)
    plan = FoldPlan.make(600, 3, seed=1)
    learner = MultinomialLogitNuisance("joint-po", 3)
    base = crossfit_nuisance(learner, data, plan)
    f = 1
    poisoned_y = data.y.copy()
    in_f = plan.assignment == f
    poisoned_y[in_f] = (poisoned_y[in_f] + 1) % 3
    poisoned = ObservedData(data.x, data.d, poisoned_y)
    out = crossfit_nuisance(learner, poisoned, plan)
    np.testing.assert_array_equal(out.outcome_probs[in_f], base.outcome_probs[in_f])
    assert not np.allclose(out.outcome_probs[~in_f], base.outcome_probs[~in_f])
