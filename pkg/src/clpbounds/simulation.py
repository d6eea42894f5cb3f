"""Simulation harness for the latent-normal ordinal-outcome design.

Data generating process (binary treatment, ``L`` ordinal levels):

* ``X ~ N(0, 1)``;
* ``Y(0)* = eps_0`` and ``Y(1)* = X**2 / 2.4 + 1.2 X + eps_1`` with
  ``(eps_0, eps_1)`` standard bivariate normal with correlation ``rho``;
* each latent is cut at the standard-normal quantiles ``Phi^{-1}(l / L)``
  (optionally after standardising ``Y(1)*`` to unit variance);
* ``D ~ Bernoulli(e(X))`` with ``e(x) = 1 / (1 + exp(x))`` and ``Y = Y(D)``.

The estimand is the share of units whose realised outcome is below the best
potential outcome.  Nuisances are the exact conditional margins and
propensity, optionally perturbed with Gaussian noise of scale
``2.25 n^{-r}``.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logit, softmax
from scipy.stats import norm

from .entropic import Direction, eta_schedule
from .estimators import (
    bfs_contributions,
    entropic_contributions,
    lse_contributions,
    combine_wald_interval,
)
from .exceptions import BoundsError, ValidationError
from .lp import solve_simplex_batch
from .problems import (
    NotOptimallyTreated,
    NuisanceModel,
    ObservedData,
    ProblemSpec,
)

__all__ = [
    "LatentNormalDGP",
    "EngineCell",
    "SimConfig",
    "SimResult",
    "OracleResult",
    "generate_dataset",
    "perturb_nuisances",
    "true_bound_oracle",
    "run_sweep",
    "harmful_effect_dgp",
    "monotone_benefit_dgp",
    "noise_scale",
]

_Y1_MEAN = 1.0 / 2.4
_Y1_SD = math.sqrt(2.0 / 5.76 + 1.44 + 1.0)


def _default_mu1(x):
    return x**2 / 2.4 + 1.2 * x


def _zero(x):
    return np.zeros_like(x)


def _default_propensity(x):
    return expit(-x)


@dataclass(frozen=True)
class LatentNormalDGP:
    """Latent bivariate-normal potential outcomes cut into ``L`` levels.

    Parameters
    ----------
    L : int
    rho : float
        Correlation of the latent errors.
    standardize_y1 : bool
        Standardise ``Y(1)*`` by its marginal mean and sd before cutting.
    mu0, mu1 : callable
        Conditional means of the latents.
    propensity : callable
        ``P(D = 1 | x)``.
    sd0, sd1 : float
        Error standard deviations.
    """

    L: int = 3
    rho: float = 0.9
    standardize_y1: bool = False
    mu0: Callable = _zero
    mu1: Callable = _default_mu1
    propensity: Callable = _default_propensity
    sd0: float = 1.0
    sd1: float = 1.0

    def _y1_affine(self):
        if self.standardize_y1:
            return _Y1_MEAN, _Y1_SD
        return 0.0, 1.0

    def breaks(self):
        return norm.ppf(np.arange(1, self.L) / self.L)

    def outcome_probs(self, x):
        """Exact ``P(Y(d) = l | x)``, shape ``(n, 2, L)``."""
        x = np.asarray(x, dtype=float)
        t = np.concatenate([[-np.inf], self.breaks(), [np.inf]])
        a, s = self._y1_affine()
        out = np.empty((x.size, 2, self.L))
        cdf0 = norm.cdf((t[None, :] - self.mu0(x)[:, None]) / self.sd0)
        cdf1 = norm.cdf((t[None, :] * s + a - self.mu1(x)[:, None]) / self.sd1)
        out[:, 0] = np.diff(cdf0, axis=1)
        out[:, 1] = np.diff(cdf1, axis=1)
        return out

    def true_nuisance(self, x):
        e1 = self.propensity(np.asarray(x, dtype=float))
        return NuisanceModel(np.column_stack([1.0 - e1, e1]),
                             outcome_probs=self.outcome_probs(x))

    def sample(self, n, rng):
        """Draw a sample; returns ``(data, y0, y1)``."""
        x = rng.standard_normal(n)
        z0 = rng.standard_normal(n)
        z1 = rng.standard_normal(n)
        eps0 = z0
        eps1 = self.rho * z0 + math.sqrt(1.0 - self.rho**2) * z1
        lat0 = self.mu0(x) + self.sd0 * eps0
        lat1 = self.mu1(x) + self.sd1 * eps1
        a, s = self._y1_affine()
        b = self.breaks()
        y0 = np.searchsorted(b, lat0, side="right")
        y1 = np.searchsorted(b, (lat1 - a) / s, side="right")
        d = (rng.random(n) < self.propensity(x)).astype(np.int64)
        y = np.where(d == 1, y1, y0)
        return ObservedData(x[:, None], d, y), y0, y1


def harmful_effect_dgp(L=4, effect=0.8):
    """Treatment raises an adverse-event count at every covariate value."""
    return LatentNormalDGP(L=L, rho=0.5, mu0=lambda x: 0.3 * x,
                           mu1=lambda x: 0.3 * x + effect,
                           propensity=lambda x: np.full_like(x, 0.48))


def monotone_benefit_dgp(L=3, slope=1.0):
    """Treatment effect on the outcome level increases with the covariate."""
    return LatentNormalDGP(L=L, rho=0.5, mu0=_zero, mu1=lambda x: slope * x,
                           propensity=lambda x: np.full_like(x, 0.5))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class EngineCell:
    """An engine with a hyperparameter rule.

    ``schedule`` is ``"fixed"`` (``value`` is the hyperparameter) or
    ``"log"``/``"sqrt"`` (``value`` is the multiplier ``kappa``).
    """

    engine: str
    schedule: str = "fixed"
    value: Optional[float] = None

    def __post_init__(self):
        if self.engine not in ("bfs", "entropic", "lse"):
            raise ValidationError(f"unknown engine {self.engine!r}")
        if self.engine != "bfs":
            if self.schedule not in ("fixed", "log", "sqrt"):
                raise ValidationError(f"unknown schedule {self.schedule!r}")
            if self.value is None or self.value <= 0:
                raise ValidationError(f"{self.engine} needs a positive value")

    def resolve(self, n):
        if self.engine == "bfs":
            return None
        if self.schedule == "fixed":
            return float(self.value)
        return eta_schedule(n, self.schedule, self.value)

    @property
    def label(self):
        if self.engine == "bfs":
            return "bfs"
        return f"{self.engine}:{self.schedule}:{self.value:g}"


DEFAULT_ENGINES = (
    EngineCell("bfs"),
    EngineCell("entropic", "log", 2.0),
)


@dataclass(frozen=True)
class SimConfig:
    """Simulation cell.

    ``r = inf`` uses the exact nuisances.
    """

    n: int = 1000
    L: int = 3
    r: float = 0.3
    rho: float = 0.9
    n_reps: int = 100
    seed: int = 0
    engines: tuple = DEFAULT_ENGINES
    standardize_y1: bool = False
    alpha: float = 0.05

    def __post_init__(self):
        if self.n < 50:
            raise ValidationError("n must be at least 50")
        if not 2 <= self.L <= 10:
            raise ValidationError("L must be in 2..10")
        if not (0 <= self.r <= 1 or self.r == math.inf):
            raise ValidationError("r must be in [0, 1] (or inf for exact nuisances)")
        if not -1 < self.rho < 1:
            raise ValidationError("rho must be in (-1, 1)")
        if self.n_reps < 1:
            raise ValidationError("n_reps must be at least 1")
        object.__setattr__(self, "engines", tuple(self.engines))

    @property
    def dgp(self):
        return LatentNormalDGP(L=self.L, rho=self.rho,
                               standardize_y1=self.standardize_y1)


def generate_dataset(config: SimConfig, rep_seed):
    """Draw one sample; returns ``(data, y0, y1, truth)``."""
    rng = np.random.default_rng(rep_seed)
    dgp = config.dgp
    data, y0, y1 = dgp.sample(config.n, rng)
    return data, y0, y1, dgp.true_nuisance(data.x[:, 0])


def noise_scale(n, r):
    return 0.0 if r == math.inf else 2.25 * n ** (-r)


def perturb_nuisances(truth: NuisanceModel, n, r, rep_seed) -> NuisanceModel:
    """Log-scale Gaussian perturbation of margins and propensity.

    Noise is ``N(s, s**2)`` with ``s = 2.25 n^{-r}``, independent across
    observations, levels and arms; ``r = inf`` returns ``truth`` unchanged.
    """
    s = noise_scale(n, r)
    if s == 0.0:
        return truth
    rng = np.random.default_rng(rep_seed)
    m = truth.outcome_probs
    eps = rng.normal(s, s, size=m.shape)
    m_hat = softmax(np.log(m) + eps, axis=2)
    e1 = truth.propensity[:, 1]
    eps_e = rng.normal(s, s, size=e1.shape)
    e1_hat = expit(logit(e1) - eps_e)
    return NuisanceModel(np.column_stack([1.0 - e1_hat, e1_hat]),
                         outcome_probs=m_hat, clip_floor=truth.clip_floor)


# ---------------------------------------------------------------------------
# oracle


@dataclass(frozen=True)
class OracleResult:
    theta_L: float
    theta_U: float
    se_L: float
    se_U: float
    n_draws: int


def _oracle_values(dgp, x):
    spec = ProblemSpec.joint_po(2, dgp.L, NotOptimallyTreated())
    nm = dgp.true_nuisance(x)
    data = ObservedData(x[:, None], np.zeros(x.size), np.zeros(x.size))
    batch = spec.evaluate(data, nm)
    lo = solve_simplex_batch(spec.A, batch.B, batch.C, Direction.LOWER.sense,
                             check_rank=False)
    hi = solve_simplex_batch(spec.A, batch.B, batch.C, Direction.UPPER.sense,
                             check_rank=False)
    return lo.value, hi.value


@functools.lru_cache(maxsize=64)
def _oracle_cached(dgp, n_draws, seed, chunk):
    rng = np.random.default_rng(seed)
    sL = sU = sL2 = sU2 = 0.0
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        vL, vU = _oracle_values(dgp, rng.standard_normal(m))
        sL += vL.sum()
        sU += vU.sum()
        sL2 += (vL**2).sum()
        sU2 += (vU**2).sum()
        done += m
    mL, mU = sL / n_draws, sU / n_draws
    se_L = math.sqrt(max(sL2 / n_draws - mL**2, 0.0) / n_draws)
    se_U = math.sqrt(max(sU2 / n_draws - mU**2, 0.0) / n_draws)
    return OracleResult(mL, mU, se_L, se_U, n_draws)


def true_bound_oracle(config_or_dgp, n_draws=10**6, seed=20240101, chunk=50_000):
    """Population bounds by Monte Carlo over ``X`` with exact conditional LPs.

    The conditional bounds depend on the covariate only through the exact
    margins and propensity, so the correlation ``rho`` does not enter.
    Results are cached per design.
    """
    dgp = config_or_dgp.dgp if isinstance(config_or_dgp, SimConfig) else config_or_dgp
    # rho does not affect the bounds; normalise it out of the cache key
    key = LatentNormalDGP(dgp.L, 0.0, dgp.standardize_y1, dgp.mu0, dgp.mu1,
                          dgp.propensity, dgp.sd0, dgp.sd1)
    return _oracle_cached(key, int(n_draws), int(seed), int(chunk))


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SimResult:
    """Aggregated metrics per engine cell plus raw per-replication estimates.

    Metrics without suffix refer to the lower bound; ``_U`` to the upper.
    ``rmse**2 == bias**2 + sd**2`` holds by construction (``sd`` uses the
    population normalisation).
    """

    config: SimConfig
    oracle: OracleResult
    cells: list
    estimates: dict
    timings: dict = field(default_factory=dict)

    def to_rows(self):
        return [dict(c) for c in self.cells]

    def to_csv(self, include_timing=False):
        rows = self.to_rows()
        fields = list(rows[0].keys())
        if include_timing:
            fields.append("wall_time")
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            if include_timing:
                r["wall_time"] = self.timings.get(r["engine_label"], 0.0)
            w.writerow({k: _fmt(r[k]) for k in fields})
        return buf.getvalue()

    def to_dict(self, include_timing=False):
        cfg = asdict(self.config)
        cfg["engines"] = [asdict(e) for e in self.config.engines]
        cfg["r"] = _jsonable(cfg["r"])
        out = {"config": cfg, "oracle": asdict(self.oracle), "cells": self.to_rows(),
               "estimates": self.estimates}
        if include_timing:
            out["timings"] = self.timings
        return out

    def to_json(self, include_timing=False):
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _run_rep(config: SimConfig, spec: ProblemSpec, seed_seq):
    data_seed, noise_seed = seed_seq.spawn(2)
    data, _, _, truth = generate_dataset(config, data_seed)
    nm = perturb_nuisances(truth, config.n, config.r, noise_seed)
    batch = spec.evaluate(data, nm)
    out = {}
    times = {}
    for cell in config.engines:
        t0 = time.perf_counter()
        hyper = cell.resolve(config.n)
        try:
            if cell.engine == "bfs":
                cL, okL, _ = bfs_contributions(spec.A, batch, Direction.LOWER)
                cU, okU, _ = bfs_contributions(spec.A, batch, Direction.UPPER)
                keep = okL & okU
                cL, cU = cL[keep], cU[keep]
            elif cell.engine == "entropic":
                cL, _ = entropic_contributions(spec.A, batch, hyper, Direction.LOWER)
                cU, _ = entropic_contributions(spec.A, batch, hyper, Direction.UPPER)
            else:
                cL, _ = lse_contributions(spec.A, batch, hyper, Direction.LOWER)
                cU, _ = lse_contributions(spec.A, batch, hyper, Direction.UPPER)
            tL, tU = float(np.mean(cL)), float(np.mean(cU))
            lo, hi = combine_wald_interval(tL, float(np.var(cL)), tU,
                                           float(np.var(cU)), cL.size, config.alpha)
            out[cell.label] = (tL, tU, lo, hi, None)
        except BoundsError as exc:
            out[cell.label] = (math.nan, math.nan, math.nan, math.nan,
                               type(exc).__name__)
        times[cell.label] = time.perf_counter() - t0
    return out, times


def run_sweep(config: SimConfig, oracle: Optional[OracleResult] = None, n_jobs=1,
              oracle_draws=10**6):
    """Run every replication and engine cell and aggregate metrics.

    Replication ``k`` uses the ``k``-th child of ``SeedSequence(seed)``, so
    results do not depend on ``n_jobs``.
    """
    if oracle is None:
        oracle = true_bound_oracle(config, n_draws=oracle_draws)
    spec = ProblemSpec.joint_po(2, config.L, NotOptimallyTreated())
    children = np.random.SeedSequence(config.seed).spawn(config.n_reps)
    if n_jobs == 1:
        results = [_run_rep(config, spec, ch) for ch in children]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(
            delayed(_run_rep)(config, spec, ch) for ch in children)
    cells, estimates, timings = [], {}, {}
    for cell in config.engines:
        lab = cell.label
        rows = np.array([r[0][lab][:4] for r in results], dtype=float)
        errors = [r[0][lab][4] for r in results if r[0][lab][4] is not None]
        timings[lab] = float(sum(r[1][lab] for r in results))
        ok = ~np.isnan(rows).any(axis=1)
        good = rows[ok]
        estimates[lab] = {"theta_L": rows[:, 0].tolist(), "theta_U": rows[:, 1].tolist(),
                          "ci_lo": rows[:, 2].tolist(), "ci_hi": rows[:, 3].tolist()}
        cells.append(_aggregate(config, cell, good, oracle, len(errors)))
    return SimResult(config, oracle, cells, estimates, timings)


def _aggregate(config, cell, good, oracle, n_failed):
    rec = {"engine_label": cell.label, "engine": cell.engine,
           "hyper": cell.resolve(config.n) if cell.engine != "bfs" else 0.0,
           "n": config.n, "L": config.L, "r": _jsonable(config.r),
           "n_ok": int(good.shape[0]), "n_failed": int(n_failed)}
    if good.shape[0] == 0:
        for k in ("bias", "sd", "rmse", "bias_U", "sd_U", "rmse_U", "coverage_L",
                  "coverage_U", "mean_ci_width"):
            rec[k] = math.nan
        return rec
    for suffix, col, truth in (("", 0, oracle.theta_L), ("_U", 1, oracle.theta_U)):
        est = good[:, col]
        bias = float(np.mean(est) - truth)
        sd = float(np.std(est))
        rec["bias" + suffix] = bias
        rec["sd" + suffix] = sd
        rec["rmse" + suffix] = math.sqrt(bias**2 + sd**2)
    rec["coverage_L"] = float(np.mean(good[:, 2] <= oracle.theta_L))
    rec["coverage_U"] = float(np.mean(good[:, 3] >= oracle.theta_U))
    rec["mean_ci_width"] = float(np.mean(good[:, 3] - good[:, 2]))
    return rec
