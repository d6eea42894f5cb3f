"""Nuisance estimation: a multinomial-logit baseline and cross-fitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.linear_model import LogisticRegression

from .exceptions import ValidationError
from .problems import NuisanceModel, ObservedData

__all__ = ["FoldPlan", "MultinomialLogitNuisance", "crossfit_nuisance"]


@dataclass
class FoldPlan:
    """Deterministic assignment of observations to cross-fitting folds.

    Parameters
    ----------
    n_folds : int
        Number of folds (at least 2).
    seed : int
        Seed of the permutation that assigns folds.
    assignment : (n,) int array
        Fold id of each observation; filled by :meth:`make`.
    """

    n_folds: int = 3
    seed: int = 0
    assignment: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def make(cls, n, n_folds=3, seed=0):
        if n_folds < 2:
            raise ValidationError("need at least two folds")
        if n < n_folds:
            raise ValidationError("fewer observations than folds")
        perm = np.random.default_rng(seed).permutation(n)
        assignment = np.empty(n, dtype=np.int64)
        assignment[perm] = np.arange(n) % n_folds
        return cls(n_folds, seed, assignment)

    def folds(self):
        """Yield ``(train_idx, test_idx)`` pairs."""
        for f in range(self.n_folds):
            test = np.flatnonzero(self.assignment == f)
            train = np.flatnonzero(self.assignment != f)
            yield train, test


def _proba_full(model, X, n_classes):
    """Class probabilities padded to ``n_classes`` columns."""
    out = np.zeros((X.shape[0], n_classes))
    out[:, model.classes_] = model.predict_proba(X)
    return out


class _Constant:
    """Stand-in classifier when only one class is present in training."""

    def __init__(self, label):
        self.classes_ = np.array([label])

    def predict_proba(self, X):
        return np.ones((X.shape[0], 1))


class MultinomialLogitNuisance(BaseEstimator):
    """Multinomial-logistic outcome, propensity and instrument models.

    Parameters
    ----------
    setting : {"joint-po", "iv"}
    n_levels : int
        Number of outcome levels ``L``.
    n_arms : int
        Number of treatment arms ``M`` (joint setting).
    C : float
        Inverse L2 penalty passed to :class:`~sklearn.linear_model.LogisticRegression`.
    clip_floor : float
    """

    def __init__(self, setting="joint-po", n_levels=3, n_arms=2, C=1.0,
                 clip_floor=1e-6):
        self.setting = setting
        self.n_levels = n_levels
        self.n_arms = n_arms
        self.C = C
        self.clip_floor = clip_floor

    def _logit(self, X, y):
        labels = np.unique(y)
        if labels.size == 1:
            return _Constant(int(labels[0]))
        return LogisticRegression(C=self.C, max_iter=1000).fit(X, y)

    def fit(self, data: ObservedData):
        X = data.x
        L = self.n_levels
        if self.setting == "joint-po":
            self.propensity_ = self._logit(X, data.d)
            self.outcome_ = []
            for d in range(self.n_arms):
                mask = data.d == d
                if not np.any(mask):
                    raise ValidationError(f"no training observations with d={d}")
                self.outcome_.append(self._logit(X[mask], data.y[mask]))
        elif self.setting == "iv":
            if data.z is None:
                raise ValidationError("IV setting requires z")
            self.propensity_ = self._logit(X, data.z)
            self.outcome_ = []
            for z in (0, 1):
                mask = data.z == z
                if not np.any(mask):
                    raise ValidationError(f"no training observations with z={z}")
                self.outcome_.append(self._logit(X[mask], data.d[mask] * L + data.y[mask]))
        else:
            raise ValidationError(f"unknown setting {self.setting!r}")
        return self

    def predict(self, data: ObservedData) -> NuisanceModel:
        X = data.x
        L = self.n_levels
        if self.setting == "joint-po":
            e = _proba_full(self.propensity_, X, self.n_arms)
            m = np.stack([_proba_full(mod, X, L) for mod in self.outcome_], axis=1)
            return NuisanceModel(e, outcome_probs=m, clip_floor=self.clip_floor)
        e = _proba_full(self.propensity_, X, 2)
        jz = np.stack([_proba_full(mod, X, 2 * L).reshape(-1, 2, L)
                       for mod in self.outcome_], axis=1)
        return NuisanceModel(e, joint_given_instrument=jz, clip_floor=self.clip_floor)


def crossfit_nuisance(learner, data: ObservedData, folds: FoldPlan) -> NuisanceModel:
    """Out-of-fold nuisance predictions.

    Each fold is predicted by a clone of ``learner`` fitted on the other
    folds, so no observation's nuisances depend on its own fold.
    """
    if folds.assignment.shape != (len(data),):
        raise ValidationError("fold plan does not match the sample size")
    parts, order = [], []
    for train, test in folds.folds():
        model = clone(learner).fit(data.subset(train))
        parts.append(model.predict(data.subset(test)))
        order.append(test)
    return NuisanceModel.concatenate(parts, np.concatenate(order))
