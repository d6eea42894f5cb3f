"""De-biased estimators of the lower and upper bounds.

Each engine turns a sample into per-observation contributions (influence
values) for the lower and upper bound; their means are the estimates, their
variances the plug-in variances, and a one-sided Wald interval per side gives
the confidence interval for the partially identified parameter.

Engines
-------
``bfs``
    Exact simplex on the plug-in ``(b, c)``; the contribution is
    ``<c + phi_c, p> + <c, A_B^{-1} phi_b>`` with ``B`` the plug-in basis.
``entropic``
    Entropy-regularised solution ``p`` with the first-order correction
    ``<c, (dp/db) phi_b + (dp/dc) phi_c>``.
``lse``
    Log-sum-exp over all feasible bases, corrected by its gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .entropic import (
    Direction,
    eta_schedule,
    jacobian_products,
    logsumexp_batch,
    solve_entropic_batch,
)
from .exceptions import (
    AllInfeasible,
    DegenerateDesign,
    MaxPivotsExceeded,
    SolverFailure,
    UnboundedProblem,
    ValidationError,
)
from .lp import (
    Status,
    check_feasibility_batch,
    solve_simplex_batch,
    suboptimality_lower_bound_batch,
)
from .nuisance import FoldPlan, crossfit_nuisance
from .problems import LPBatch, NuisanceModel, ObservedData, ProblemSpec, Setting

__all__ = [
    "BoundsReport",
    "ConditionalBoundsReport",
    "PolynomialLS",
    "Binned",
    "combine_wald_interval",
    "prepare_batch",
    "estimate_bounds_bfs",
    "estimate_bounds_entropic",
    "estimate_bounds_lse",
    "estimate_bounds",
    "bfs_contributions",
    "entropic_contributions",
    "lse_contributions",
    "conditional_bounds",
    "PartialIdentificationBounds",
]


@dataclass
class BoundsReport:
    """Bound estimates, variances, interval and per-observation contributions.

    ``per_obs_L`` and ``per_obs_U`` hold one value per used observation;
    ``used`` marks which of the ``n`` input rows they belong to.
    """

    engine: str
    hyper: Optional[float]
    theta_L: float
    theta_U: float
    V_L: float
    V_U: float
    n_used: int
    n_excluded_infeasible: int
    ci: tuple
    alpha: float
    per_obs_L: np.ndarray
    per_obs_U: np.ndarray
    used: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.n_used + self.n_excluded_infeasible

    def to_dict(self, include_per_obs=True):
        out = {
            "engine": self.engine,
            "hyper": self.hyper,
            "theta_L": self.theta_L,
            "theta_U": self.theta_U,
            "V_L": self.V_L,
            "V_U": self.V_U,
            "n_used": self.n_used,
            "n_excluded_infeasible": self.n_excluded_infeasible,
            "ci": list(self.ci),
            "alpha": self.alpha,
            "diagnostics": self.diagnostics,
        }
        if include_per_obs:
            out["per_obs_L"] = self.per_obs_L.tolist()
            out["per_obs_U"] = self.per_obs_U.tolist()
            out["used"] = self.used.astype(int).tolist()
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(**kw), indent=2)

    @classmethod
    def from_dict(cls, d):
        return cls(
            engine=d["engine"], hyper=d["hyper"], theta_L=d["theta_L"],
            theta_U=d["theta_U"], V_L=d["V_L"], V_U=d["V_U"],
            n_used=d["n_used"], n_excluded_infeasible=d["n_excluded_infeasible"],
            ci=tuple(d["ci"]), alpha=d["alpha"],
            per_obs_L=np.asarray(d.get("per_obs_L", []), dtype=float),
            per_obs_U=np.asarray(d.get("per_obs_U", []), dtype=float),
            used=np.asarray(d.get("used", []), dtype=bool),
            diagnostics=d.get("diagnostics", {}),
        )


def combine_wald_interval(theta_L, V_L, theta_U, V_U, n, alpha=0.05):
    """One-sided Wald bounds combined into an interval.

    Returns ``(theta_L - z sqrt(V_L / n), theta_U + z sqrt(V_U / n))`` with
    ``z`` the ``1 - alpha`` standard normal quantile.
    """
    if V_L < 0 or V_U < 0:
        raise ValidationError("variances must be nonnegative")
    if n < 2:
        raise ValidationError("need n >= 2")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    z = float(norm.ppf(1.0 - alpha))
    return (theta_L - z * math.sqrt(V_L / n), theta_U + z * math.sqrt(V_U / n))


# ---------------------------------------------------------------------------
# shared plumbing


def _resolve_nuisance(nuisance, data, folds):
    if isinstance(nuisance, NuisanceModel):
        return nuisance
    if hasattr(nuisance, "fit") and hasattr(nuisance, "predict"):
        if folds is None:
            folds = FoldPlan.make(len(data))
        return crossfit_nuisance(nuisance, data, folds)
    raise ValidationError("nuisance must be a NuisanceModel or a fit/predict learner")


def prepare_batch(spec: ProblemSpec, data: ObservedData, nuisance, folds=None,
                  pi=None) -> LPBatch:
    """Evaluate ``b``, ``c`` and de-biasing terms, cross-fitting if needed."""
    nm = _resolve_nuisance(nuisance, data, folds)
    return spec.evaluate(data, nm, pi)


def _feasible_mask(spec: ProblemSpec, B):
    """Feasibility of each constraint vector.

    Margin systems are feasible exactly when every arm's margin is a
    sub-probability vector (the product coupling is then a witness), so no LP
    is needed; other settings use phase one.
    """
    tol = 1e-9
    if spec.setting in (Setting.JOINT_PO, Setting.POLICY_REGRET):
        n = B.shape[0]
        m = B[:, :-1].reshape(n, spec.M, spec.L - 1)
        ok = np.all(m >= -tol, axis=(1, 2)) & np.all(m.sum(axis=2) <= B[:, -1:] + tol, axis=1)
        return ok & (np.abs(B[:, -1] - 1.0) <= tol)
    return check_feasibility_batch(spec.A, B)


def _normalizers(C, normalize):
    if not normalize:
        return np.ones(C.shape[0])
    s = np.abs(C).max(axis=1)
    return np.where(s > 0, s, 1.0)


def _finish(engine, hyper, contrib_L, contrib_U, used, alpha, diagnostics,
            strict_order=False):
    n_used = int(used.sum())
    if n_used == 0:
        raise AllInfeasible("no observation produced a feasible conditional LP")
    if n_used < 2:
        raise ValidationError("need at least two usable observations")
    theta_L, theta_U = float(np.mean(contrib_L)), float(np.mean(contrib_U))
    V_L, V_U = float(np.var(contrib_L)), float(np.var(contrib_U))
    ci = combine_wald_interval(theta_L, V_L, theta_U, V_U, n_used, alpha)
    diagnostics = dict(diagnostics)
    diagnostics["bounds_cross"] = bool(theta_L > theta_U + 1e-8)
    return BoundsReport(engine, hyper, theta_L, theta_U, V_L, V_U, n_used,
                        int(used.size - n_used), ci, alpha, np.asarray(contrib_L),
                        np.asarray(contrib_U), used, diagnostics)


def _check_exclusions(used, strict):
    if not np.any(used):
        raise AllInfeasible("no observation produced a feasible conditional LP")
    if strict and not np.all(used):
        i = int(np.flatnonzero(~used)[0])
        raise SolverFailure(f"observation {i} has an infeasible conditional LP "
                            "(strict mode)", index=i)


# ---------------------------------------------------------------------------
# BFS engine


def bfs_contributions(A, batch: LPBatch, direction, probe_gaps=False):
    """Per-observation de-biased BFS contributions for one direction.

    Returns ``(contrib, feasible, info)``; ``contrib`` is NaN where the LP is
    infeasible.
    """
    direction = Direction(direction)
    sol = solve_simplex_batch(A, batch.B, batch.C, direction.sense, check_rank=False)
    status = sol.status
    for bad, exc in ((Status.UNBOUNDED, UnboundedProblem),
                     (Status.MAX_PIVOTS, MaxPivotsExceeded)):
        hit = np.array([s is bad for s in status])
        if np.any(hit):
            i = int(np.flatnonzero(hit)[0])
            raise exc(f"conditional LP at observation {i} is {bad.value}", index=i)
    ok = sol.optimal
    contrib = np.full(len(batch), np.nan)
    info = {"pivots_mean": float(np.mean(sol.pivots)) if len(sol.pivots) else 0.0,
            "pivots_max": int(np.max(sol.pivots)) if len(sol.pivots) else 0}
    if np.any(ok):
        idx = np.flatnonzero(ok)
        basis = sol.basis[idx]
        AB = np.transpose(A[:, basis], (1, 0, 2))
        w = np.linalg.solve(AB, batch.phi_B[idx][:, :, None])[:, :, 0]
        cB = np.take_along_axis(batch.C[idx], basis, axis=1)
        P = sol.primal[idx]
        contrib[idx] = (np.einsum("nk,nk->n", batch.C[idx] + batch.phi_C[idx], P)
                        + np.einsum("nj,nj->n", cB, w))
        if probe_gaps:
            sense = direction.sense
            gaps = suboptimality_lower_bound_batch(A, batch.B[idx], batch.C[idx],
                                                   basis, sense)
            info["gap_lower_bound_mean"] = float(np.mean(gaps))
            info["gaps"] = gaps
    info["plugin_value"] = sol.value
    return contrib, ok, info


def estimate_bounds_bfs(spec: ProblemSpec, data: ObservedData, nuisance,
                        folds: Optional[FoldPlan] = None, alpha=0.05, pi=None,
                        strict=False, batch: Optional[LPBatch] = None):
    """De-biased BFS estimator of ``(theta_L, theta_U)``.

    Parameters
    ----------
    spec : ProblemSpec
    data : ObservedData
    nuisance : NuisanceModel or learner
        A fitted :class:`NuisanceModel` is used as is; a learner with
        ``fit``/``predict`` is cross-fitted with ``folds``.
    folds : FoldPlan, optional
        Defaults to three seeded folds.
    alpha : float
        One-sided level of each side of the interval.
    pi : array, optional
        Policy values for power-law regret objectives.
    strict : bool
        Raise instead of excluding observations with infeasible LPs.

    Returns
    -------
    BoundsReport
    """
    if batch is None:
        batch = prepare_batch(spec, data, nuisance, folds, pi)
    feasible = _feasible_mask(spec, batch.B)
    _check_exclusions(feasible, strict)
    sub = batch.subset(feasible)
    cL, okL, infoL = bfs_contributions(spec.A, sub, Direction.LOWER, probe_gaps=True)
    cU, okU, infoU = bfs_contributions(spec.A, sub, Direction.UPPER, probe_gaps=True)
    used = feasible.copy()
    used[feasible] = okL & okU
    _check_exclusions(used, strict)
    keep = (okL & okU)
    diag = {
        "gap_lower_bound_mean_L": infoL.get("gap_lower_bound_mean", 0.0),
        "gap_lower_bound_mean_U": infoU.get("gap_lower_bound_mean", 0.0),
        "pivots_max": max(infoL["pivots_max"], infoU["pivots_max"]),
    }
    return _finish("bfs", None, cL[keep], cU[keep], used, alpha, diag)


# ---------------------------------------------------------------------------
# entropic engine


def entropic_contributions(A, batch: LPBatch, eta, direction, normalize=True):
    """Per-observation entropic contributions for one direction.

    With ``normalize`` each observation's objective is scaled to unit sup
    norm before regularising and the contribution is scaled back, so ``eta``
    has the same meaning across observations.
    """
    direction = Direction(direction)
    s = _normalizers(batch.C, normalize)
    Cn = batch.C / s[:, None]
    phiCn = batch.phi_C / s[:, None]
    sol = solve_entropic_batch(A, batch.B, Cn, eta, direction)
    ob, oc = jacobian_products(A, sol, Cn, batch.phi_B, phiCn)
    contrib = s * (np.einsum("nk,nk->n", Cn + phiCn, sol.primal) + ob + oc)
    info = {
        "newton_iter_mean": float(np.mean(sol.iterations)),
        "newton_iter_max": int(np.max(sol.iterations)),
        "cond_max": float(np.max(sol.cond)),
        "plugin_value": s * sol.value,
    }
    return contrib, info


def _resolve_eta(eta, n, eta_mode, kappa):
    if eta is not None:
        return float(eta)
    return eta_schedule(n, eta_mode, kappa)


def estimate_bounds_entropic(spec: ProblemSpec, data: ObservedData, nuisance,
                             eta=None, folds=None, alpha=0.05, pi=None,
                             eta_mode="log", kappa=2.0, normalize=True,
                             strict=False, batch=None):
    """De-biased entropic estimator of ``(theta_L, theta_U)``.

    ``eta`` defaults to ``eta_schedule(n, eta_mode, kappa)``.  Other
    parameters are as in :func:`estimate_bounds_bfs`.

    Raises
    ------
    NotStrictlyFeasible
        If a feasible constraint vector lies on the boundary of the cone.
    """
    if batch is None:
        batch = prepare_batch(spec, data, nuisance, folds, pi)
    eta = _resolve_eta(eta, len(batch), eta_mode, kappa)
    feasible = _feasible_mask(spec, batch.B)
    _check_exclusions(feasible, strict)
    sub = batch.subset(feasible)
    idx = np.flatnonzero(feasible)
    try:
        cL, infoL = entropic_contributions(spec.A, sub, eta, Direction.LOWER, normalize)
        cU, infoU = entropic_contributions(spec.A, sub, eta, Direction.UPPER, normalize)
    except SolverFailure as exc:
        if exc.index is not None:
            exc.index = int(idx[exc.index])
            exc.args = (f"{exc.args[0]} (observation {exc.index})",)
        raise
    diag = {
        "eta": eta,
        "newton_iter_max": max(infoL["newton_iter_max"], infoU["newton_iter_max"]),
        "cond_max": max(infoL["cond_max"], infoU["cond_max"]),
        "normalized": bool(normalize),
    }
    return _finish("entropic", eta, cL, cU, feasible, alpha, diag)


# ---------------------------------------------------------------------------
# log-sum-exp engine


def lse_contributions(A, batch: LPBatch, xi, direction, normalize=True):
    """Per-observation log-sum-exp contributions for one direction."""
    s = _normalizers(batch.C, normalize)
    Cn = batch.C / s[:, None]
    phiCn = batch.phi_C / s[:, None]
    value, gb, gc, nb = logsumexp_batch(A, batch.B, Cn, xi, direction)
    contrib = s * (value + np.einsum("nj,nj->n", gb, batch.phi_B)
                   + np.einsum("nk,nk->n", gc, phiCn))
    return contrib, {"feasible_bases_mean": float(np.mean(nb))}


def estimate_bounds_lse(spec: ProblemSpec, data: ObservedData, nuisance, xi,
                        folds=None, alpha=0.05, pi=None, normalize=True,
                        strict=False, batch=None):
    """De-biased log-sum-exp estimator (small problems only).

    Raises
    ------
    TooLargeForEnumeration
        If the constraint system exceeds the basis-enumeration cap.
    """
    if batch is None:
        batch = prepare_batch(spec, data, nuisance, folds, pi)
    feasible = _feasible_mask(spec, batch.B)
    _check_exclusions(feasible, strict)
    sub = batch.subset(feasible)
    cL, info = lse_contributions(spec.A, sub, xi, Direction.LOWER, normalize)
    cU, _ = lse_contributions(spec.A, sub, xi, Direction.UPPER, normalize)
    return _finish("lse", float(xi), cL, cU, feasible, alpha, info)


def estimate_bounds(engine, spec, data, nuisance, hyper=None, **kw):
    """Dispatch on ``engine`` in ``{"bfs", "entropic", "lse"}``."""
    if engine == "bfs":
        return estimate_bounds_bfs(spec, data, nuisance, **kw)
    if engine == "entropic":
        return estimate_bounds_entropic(spec, data, nuisance, eta=hyper, **kw)
    if engine == "lse":
        if hyper is None:
            raise ValidationError("lse engine needs xi")
        return estimate_bounds_lse(spec, data, nuisance, hyper, **kw)
    raise ValidationError(f"unknown engine {engine!r}")


# ---------------------------------------------------------------------------
# conditional bounds


@dataclass(frozen=True)
class PolynomialLS:
    """Least-squares polynomial in a standardised scalar covariate."""

    degree: int = 3

    def fit_predict(self, v, y, grid):
        if self.degree < 0:
            raise ValidationError("degree must be nonnegative")
        mu, sd = float(np.mean(v)), float(np.std(v))
        if sd == 0 and self.degree > 0:
            raise DegenerateDesign("conditioning variable is constant")
        sd = sd or 1.0
        X = np.vander((v - mu) / sd, self.degree + 1, increasing=True)
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise DegenerateDesign("polynomial design is rank deficient")
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        G = np.vander((grid - mu) / sd, self.degree + 1, increasing=True)
        return G @ coef


@dataclass(frozen=True)
class Binned:
    """Equal-count bins; the fit is the bin mean."""

    n_bins: int = 10

    def fit_predict(self, v, y, grid):
        if self.n_bins < 1:
            raise ValidationError("need at least one bin")
        edges = np.quantile(v, np.linspace(0, 1, self.n_bins + 1))
        edges = np.unique(edges)
        if edges.size < 2:
            if self.n_bins > 1:
                raise DegenerateDesign("conditioning variable is constant")
            return np.full(grid.shape, np.mean(y))
        inner = edges[1:-1]
        bv = np.searchsorted(inner, v, side="right")
        means = np.array([y[bv == b].mean() if np.any(bv == b) else np.nan
                          for b in range(inner.size + 1)])
        if np.any(np.isnan(means)):
            raise DegenerateDesign("empty bin")
        return means[np.searchsorted(inner, grid, side="right")]


@dataclass
class ConditionalBoundsReport:
    v_grid: np.ndarray
    theta_L_of_v: np.ndarray
    theta_U_of_v: np.ndarray
    regression: object
    crossings: int
    report: BoundsReport

    def to_dict(self):
        return {
            "v_grid": self.v_grid.tolist(),
            "theta_L_of_v": self.theta_L_of_v.tolist(),
            "theta_U_of_v": self.theta_U_of_v.tolist(),
            "regression": {"kind": type(self.regression).__name__,
                           **asdict(self.regression)},
            "crossings": self.crossings,
        }


def conditional_bounds(spec, data, nuisance, v, engine="bfs", hyper=None,
                       regression=None, v_grid=None, folds=None, **kw):
    """Bounds conditional on a scalar covariate by pseudo-outcome regression.

    Parameters
    ----------
    v : array or callable
        Conditioning values, or a function mapping ``data`` to them.
    regression : PolynomialLS or Binned
        Defaults to a cubic polynomial.
    v_grid : array, optional
        Evaluation points (default: 50 points between the 2.5% and 97.5%
        quantiles).

    Returns
    -------
    ConditionalBoundsReport
        Raw fitted curves; crossings are counted, not repaired.
    """
    regression = regression or PolynomialLS(3)
    v = np.asarray(v(data) if callable(v) else v, dtype=float)
    if v.ndim != 1 or v.shape[0] != len(data):
        raise ValidationError("v must be a scalar per observation")
    rep = estimate_bounds(engine, spec, data, nuisance, hyper, folds=folds, **kw)
    vu = v[rep.used]
    if v_grid is None:
        lo, hi = np.quantile(vu, [0.025, 0.975])
        v_grid = np.linspace(lo, hi, 50)
    v_grid = np.asarray(v_grid, dtype=float)
    fl = regression.fit_predict(vu, rep.per_obs_L, v_grid)
    fu = regression.fit_predict(vu, rep.per_obs_U, v_grid)
    return ConditionalBoundsReport(v_grid, fl, fu, regression,
                                   int(np.sum(fl > fu + 1e-12)), rep)


# ---------------------------------------------------------------------------
# estimator API


class PartialIdentificationBounds(BaseEstimator):
    """Estimator wrapper around the bound engines.

    Parameters
    ----------
    spec : ProblemSpec
    engine : {"bfs", "entropic", "lse"}
    eta : float, optional
        Entropic strength; ``None`` uses ``eta_mode`` and ``kappa``.
    eta_mode : {"log", "sqrt"}
    kappa : float
    xi : float
        Log-sum-exp strength.
    alpha : float
    n_folds : int
    seed : int
    strict : bool
    normalize : bool

    Attributes
    ----------
    report_ : BoundsReport
    theta_L_, theta_U_ : float
    ci_ : tuple
    """

    def __init__(self, spec=None, engine="bfs", eta=None, eta_mode="log", kappa=2.0,
                 xi=50.0, alpha=0.05, n_folds=3, seed=0, strict=False,
                 normalize=True):
        self.spec = spec
        self.engine = engine
        self.eta = eta
        self.eta_mode = eta_mode
        self.kappa = kappa
        self.xi = xi
        self.alpha = alpha
        self.n_folds = n_folds
        self.seed = seed
        self.strict = strict
        self.normalize = normalize

    def fit(self, data: ObservedData, nuisance, pi=None):
        """Estimate the bounds on ``data`` with ``nuisance`` (model or learner)."""
        if self.spec is None:
            raise ValidationError("spec is required")
        folds = FoldPlan.make(len(data), self.n_folds, self.seed)
        common = dict(folds=folds, alpha=self.alpha, pi=pi, strict=self.strict)
        if self.engine == "bfs":
            rep = estimate_bounds_bfs(self.spec, data, nuisance, **common)
        elif self.engine == "entropic":
            rep = estimate_bounds_entropic(self.spec, data, nuisance, eta=self.eta,
                                           eta_mode=self.eta_mode, kappa=self.kappa,
                                           normalize=self.normalize, **common)
        elif self.engine == "lse":
            rep = estimate_bounds_lse(self.spec, data, nuisance, self.xi,
                                      normalize=self.normalize, **common)
        else:
            raise ValidationError(f"unknown engine {self.engine!r}")
        self.report_ = rep
        self.theta_L_, self.theta_U_, self.ci_ = rep.theta_L, rep.theta_U, rep.ci
        return self

    def transform(self, data=None):
        """Per-observation contributions ``(n_used, 2)`` of the fitted sample."""
        check_is_fitted(self, "report_")
        return np.column_stack([self.report_.per_obs_L, self.report_.per_obs_U])
