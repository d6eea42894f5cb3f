"""Policy learning against estimated bounds on regret or value.

A logistic policy ``pi(x) = sigmoid(<w, phi(x)>)`` is scored by the de-biased
bound of a power-law objective whose cell values depend on ``pi(x)``.  The
entropic engine gives a smooth objective with an analytic gradient; the BFS
engine is searched with Nelder-Mead.

Canonical direction: ``criterion="regret"`` minimises the upper bound on
regret; ``criterion="value"`` maximises the lower bound on the power-law
value (implemented as minimising its negative).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from sklearn.base import BaseEstimator

from .entropic import Direction, jacobian_products, solve_entropic_batch
from .estimators import (
    BoundsReport,
    bfs_contributions,
    estimate_bounds_bfs,
    estimate_bounds_entropic,
)
from .exceptions import GradientCheckFailed, NonFiniteObjective, ValidationError
from .problems import (
    LPBatch,
    NuisanceModel,
    ObservedData,
    PowerLawRegret,
    ProblemSpec,
    UtilitySpec,
    _power,
    power_law_cells,
    power_law_cells_dpi,
)

__all__ = [
    "LogisticPolicy",
    "PolicyObjective",
    "OptimizerConfig",
    "PolicyFitReport",
    "fit_policy_entropic",
    "fit_policy_bfs",
    "evaluate_policy",
    "PolicyLearner",
    "PI_CLIP",
]

PI_CLIP = 1e-6


@dataclass
class LogisticPolicy:
    """Logistic decision rule on a polynomial feature map.

    Features are ``(1, x, x**2, ..., x**degree)`` for every covariate column.
    """

    weights: Optional[np.ndarray] = None
    degree: int = 1

    def features(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        cols = [np.ones(x.shape[0])]
        for k in range(1, self.degree + 1):
            cols.extend(x.T**k)
        return np.column_stack(cols)

    def n_features(self, x):
        x = np.asarray(x)
        p = 1 if x.ndim == 1 else x.shape[1]
        return 1 + self.degree * p

    def init_weights(self, x):
        if self.weights is None:
            return np.zeros(self.n_features(x))
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.n_features(x),):
            raise ValidationError(f"weights must have length {self.n_features(x)}")
        return w

    def predict_proba(self, x, weights=None):
        w = self.weights if weights is None else weights
        if w is None:
            raise ValidationError("policy has no weights")
        return expit(self.features(x) @ np.asarray(w, dtype=float))


@dataclass(frozen=True)
class PolicyObjective:
    """Power-law regret or value as a function of the treatment probability.

    Parameters
    ----------
    utility : UtilitySpec
    criterion : {"regret", "value"}
    """

    utility: UtilitySpec
    criterion: str = "regret"

    def __post_init__(self):
        if self.criterion not in ("regret", "value"):
            raise ValidationError("criterion must be 'regret' or 'value'")

    @property
    def direction(self):
        return Direction.UPPER if self.criterion == "regret" else Direction.LOWER

    @property
    def sign(self):
        """Multiplier turning the bound into a quantity to minimise."""
        return 1.0 if self.criterion == "regret" else -1.0

    def _u(self, cells):
        u = self.utility.values
        return u[cells[:, 0]][None, :], u[cells[:, 1]][None, :]

    def cells(self, label_map, pi):
        u0, u1 = self._u(label_map)
        pi = pi[:, None]
        lam = self.utility.lam
        if self.criterion == "regret":
            return power_law_cells(u0, u1, pi, lam)
        return np.broadcast_to(_power(u0 + pi * (u1 - u0), lam),
                               (pi.shape[0], u0.shape[1])).copy()

    def dcells(self, label_map, pi):
        u0, u1 = self._u(label_map)
        d = power_law_cells_dpi(u0, u1, pi[:, None], self.utility.lam)
        return d if self.criterion == "regret" else -d


@dataclass
class OptimizerConfig:
    """Gradient-descent and restart settings."""

    n_restarts: int = 10
    max_iter: int = 200
    tol: float = 1e-9
    init_step: float = 1.0
    seed: int = 0
    audit_points: int = 20
    audit_step: float = 1e-5
    audit_rtol: float = 1e-4


@dataclass
class PolicyFitReport:
    weights: np.ndarray
    objective_path: np.ndarray
    n_restarts: int
    best_restart: int
    final_objective: float
    restart_objectives: np.ndarray = field(default_factory=lambda: np.zeros(0))
    engine: str = "entropic"
    eta: Optional[float] = None
    criterion: str = "regret"

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "objective_path": self.objective_path.tolist(),
            "n_restarts": self.n_restarts,
            "best_restart": self.best_restart,
            "final_objective": self.final_objective,
            "restart_objectives": self.restart_objectives.tolist(),
            "engine": self.engine,
            "eta": self.eta,
            "criterion": self.criterion,
        }


# ---------------------------------------------------------------------------
# objective evaluation


class _Problem:
    """Everything fixed during a policy fit."""

    def __init__(self, data, nuisance, objective, L):
        if not isinstance(nuisance, NuisanceModel):
            raise ValidationError("policy fitting needs fitted nuisances")
        self.spec = ProblemSpec.joint_po(2, L, PowerLawRegret(objective.utility))
        self.objective = objective
        self.data = data
        B, phiB = self.spec.constraints(data, nuisance)
        self.B, self.phiB = B, phiB
        self.x = data.x
        self.warm = None  # duals of the last solve, reused as a warm start

    def pi(self, policy, w):
        raw = policy.predict_proba(self.x, w)
        clipped = np.clip(raw, PI_CLIP, 1.0 - PI_CLIP)
        return clipped, raw

    def batch(self, pi):
        C = self.objective.cells(self.spec.label_map, pi)
        return LPBatch(self.B, self.phiB, C, np.zeros_like(C))


def _entropic_terms(A, batch, eta, direction, want_grad, lam0=None):
    """Per-observation de-biased entropic values, ``dF/dc`` and duals."""
    sol = solve_entropic_batch(A, batch.B, batch.C, eta, direction, lam0=lam0)
    C, P = batch.C, sol.primal
    ob, _ = jacobian_products(A, sol, C, batch.phi_B)
    F = np.einsum("nk,nk->n", C, P) + ob
    if not want_grad:
        return F, None, sol.dual
    Q = sol.Q

    def aqa(v):
        """Row-wise ``A' Q A v``."""
        return (Q @ (v @ A.T)[:, :, None])[:, :, 0] @ A

    g = (Q @ batch.phi_B[:, :, None])[:, :, 0] @ A  # A' Q phi_b
    h = aqa(C * P)

    def jc(v):
        pv = P * v
        return direction.sign * eta * (pv - P * aqa(pv))

    dFdc = P + P * g + jc(C + (C - h) * g)
    return F, dFdc, sol.dual


def _objective_and_grad(problem, policy, w, eta, want_grad=True):
    obj = problem.objective
    pi, raw = problem.pi(policy, w)
    batch = problem.batch(pi)
    F, dFdc, dual = _entropic_terms(problem.spec.A, batch, eta, obj.direction,
                                    want_grad, problem.warm)
    problem.warm = dual
    val = obj.sign * float(np.mean(F))
    if not np.isfinite(val):
        raise NonFiniteObjective("policy objective is not finite")
    if not want_grad:
        return val, None
    dc = obj.dcells(problem.spec.label_map, pi)
    dF_dpi = np.einsum("nk,nk->n", dFdc, dc)
    inside = (raw > PI_CLIP) & (raw < 1.0 - PI_CLIP)
    dpi_dz = np.where(inside, raw * (1.0 - raw), 0.0)
    X = policy.features(problem.x)
    grad = obj.sign * (X.T @ (dF_dpi * dpi_dz)) / X.shape[0]
    return val, grad


def _audit_gradient(problem, policy, eta, cfg, rng, w0):
    p = w0.size
    for k in range(cfg.audit_points):
        w = w0 if k == 0 else rng.standard_normal(p)
        _, g = _objective_and_grad(problem, policy, w, eta)
        fd = np.empty(p)
        for j in range(p):
            e = np.zeros(p)
            e[j] = cfg.audit_step
            fp, _ = _objective_and_grad(problem, policy, w + e, eta, False)
            fm, _ = _objective_and_grad(problem, policy, w - e, eta, False)
            fd[j] = (fp - fm) / (2 * cfg.audit_step)
        scale = max(np.abs(g).max(), np.abs(fd).max(), 1e-6)
        err = np.abs(g - fd).max() / scale
        if err > cfg.audit_rtol:
            raise GradientCheckFailed(
                f"analytic gradient differs from finite differences by {err:.2e} "
                f"(relative) at weights {w}")


def _descend(f, w, cfg):
    """Gradient descent with Armijo backtracking and step growth."""
    val, g = f(w, True)
    path = [val]
    step = cfg.init_step
    for _ in range(cfg.max_iter):
        gg = float(g @ g)
        if gg <= cfg.tol**2:
            break
        accepted = False
        for _h in range(50):
            w_new = w - step * g
            v_new, _ = f(w_new, False)
            if v_new <= val - 1e-4 * step * gg:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = val - v_new
        w = w_new
        val, g = f(w, True)
        path.append(val)
        step *= 2.0
        if improvement <= cfg.tol * (1.0 + abs(val)):
            break
    return w, val, np.array(path)


def fit_policy_entropic(data: ObservedData, nuisance: NuisanceModel,
                        objective: PolicyObjective, eta, L,
                        policy: Optional[LogisticPolicy] = None,
                        config: Optional[OptimizerConfig] = None) -> PolicyFitReport:
    """Fit a logistic policy on the de-biased entropic bound.

    Parameters
    ----------
    data : ObservedData
    nuisance : NuisanceModel
    objective : PolicyObjective
    eta : float
        Entropic strength (fixed across the fit).
    L : int
        Number of outcome levels.
    policy : LogisticPolicy, optional
        Feature map and initial weights (zeros by default).
    config : OptimizerConfig, optional

    Returns
    -------
    PolicyFitReport
        The best of ``config.n_restarts`` restarts.

    Raises
    ------
    GradientCheckFailed
        If the analytic gradient fails the finite-difference audit.
    """
    policy = policy or LogisticPolicy()
    cfg = config or OptimizerConfig()
    problem = _Problem(data, nuisance, objective, L)
    rng = np.random.default_rng(cfg.seed)
    w0 = policy.init_weights(data.x)
    if cfg.audit_points > 0:
        _audit_gradient(problem, policy, eta, cfg, np.random.default_rng(cfg.seed + 1), w0)

    def f(w, grad):
        return _objective_and_grad(problem, policy, w, eta, grad)

    best = None
    finals = []
    for k in range(max(cfg.n_restarts, 1)):
        start = w0 if k == 0 else rng.standard_normal(w0.size)
        w, val, path = _descend(f, start, cfg)
        finals.append(val)
        if best is None or val < best[1]:
            best = (w, val, path, k)
    w, val, path, k = best
    return PolicyFitReport(w, path, len(finals), k, float(val), np.array(finals),
                           "entropic", float(eta), objective.criterion)


def _bfs_objective(problem, policy, w):
    obj = problem.objective
    pi, _ = problem.pi(policy, w)
    batch = problem.batch(pi)
    contrib, ok, _ = bfs_contributions(problem.spec.A, batch, obj.direction)
    if not np.all(ok):
        contrib = contrib[ok]
    val = obj.sign * float(np.mean(contrib))
    if not np.isfinite(val):
        raise NonFiniteObjective("policy objective is not finite")
    return val


def fit_policy_bfs(data, nuisance, objective: PolicyObjective, L, policy=None,
                   config: Optional[OptimizerConfig] = None) -> PolicyFitReport:
    """Fit a logistic policy on the de-biased BFS bound by Nelder-Mead."""
    policy = policy or LogisticPolicy()
    cfg = config or OptimizerConfig()
    problem = _Problem(data, nuisance, objective, L)
    rng = np.random.default_rng(cfg.seed)
    w0 = policy.init_weights(data.x)
    best = None
    finals = []
    for k in range(max(cfg.n_restarts, 1)):
        start = w0 if k == 0 else rng.standard_normal(w0.size)
        path = []

        def f(w):
            v = _bfs_objective(problem, policy, w)
            path.append(v)
            return v

        v0 = f(start)
        res = minimize(f, start, method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": 1e-10,
                                "maxiter": 400 * max(w0.size, 1)})
        # Nelder-Mead never returns a point worse than its best vertex, but
        # keep the start when the landscape is flat.
        w, val = (res.x, float(res.fun)) if res.fun <= v0 else (start, v0)
        finals.append(val)
        if best is None or val < best[1]:
            best = (np.asarray(w), val, np.minimum.accumulate(path), k)
    w, val, path, k = best
    return PolicyFitReport(w, path, len(finals), k, float(val), np.array(finals),
                           "bfs", None, objective.criterion)


def evaluate_policy(data, nuisance, objective: PolicyObjective, L, policy,
                    engine="entropic", eta=None, alpha=0.05) -> BoundsReport:
    """Bound report for a frozen policy.

    The entropic engine uses the raw (unnormalised) objective, matching the
    fitting code, so a fitted report's ``final_objective`` equals
    ``sign * theta`` of the matching side.
    """
    problem = _Problem(data, nuisance, objective, L)
    pi, _ = problem.pi(policy, policy.weights)
    spec = problem.spec
    if engine == "entropic":
        if eta is None:
            raise ValidationError("entropic evaluation needs eta")
        return estimate_bounds_entropic(spec, data, nuisance, eta=eta, pi=pi,
                                        alpha=alpha, normalize=False,
                                        batch=problem.batch(pi))
    if engine == "bfs":
        return estimate_bounds_bfs(spec, data, nuisance, pi=pi, alpha=alpha,
                                   batch=problem.batch(pi))
    raise ValidationError(f"unknown engine {engine!r}")


class PolicyLearner(BaseEstimator):
    """Estimator wrapper for policy fitting.

    Parameters
    ----------
    n_levels : int
    utility : UtilitySpec
    criterion : {"regret", "value"}
    engine : {"entropic", "bfs"}
    eta : float
    degree : int
        Polynomial degree of the feature map.
    n_restarts, max_iter, seed, audit_points : optimizer settings
    """

    def __init__(self, n_levels=3, utility=None, criterion="regret", engine="entropic",
                 eta=100.0, degree=1, n_restarts=10, max_iter=200, seed=0,
                 audit_points=20):
        self.n_levels = n_levels
        self.utility = utility
        self.criterion = criterion
        self.engine = engine
        self.eta = eta
        self.degree = degree
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.seed = seed
        self.audit_points = audit_points

    def fit(self, data: ObservedData, nuisance: NuisanceModel):
        if self.utility is None:
            raise ValidationError("utility is required")
        obj = PolicyObjective(self.utility, self.criterion)
        cfg = OptimizerConfig(n_restarts=self.n_restarts, max_iter=self.max_iter,
                              seed=self.seed, audit_points=self.audit_points)
        pol = LogisticPolicy(degree=self.degree)
        if self.engine == "entropic":
            rep = fit_policy_entropic(data, nuisance, obj, self.eta, self.n_levels,
                                      pol, cfg)
        elif self.engine == "bfs":
            rep = fit_policy_bfs(data, nuisance, obj, self.n_levels, pol, cfg)
        else:
            raise ValidationError(f"unknown engine {self.engine!r}")
        self.report_ = rep
        self.policy_ = LogisticPolicy(rep.weights, self.degree)
        self.coef_ = rep.weights
        return self

    def predict_proba(self, x):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "policy_")
        return self.policy_.predict_proba(x)

    def predict(self, x):
        return (self.predict_proba(x) >= 0.5).astype(int)
