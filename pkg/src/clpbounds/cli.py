"""Command-line interface: ``clp-bounds {estimate,policy,simulate,diagnose}``.

Every command writes a full JSON report and a flat CSV next to it.  Exit
codes: 0 success, 2 validation error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .dataio import bundled_path, read_table
from .entropic import Direction, eta_schedule, solve_entropic_batch
from .estimators import estimate_bounds
from .exceptions import (
    BoundsError,
    DegenerateDesign,
    SolverFailure,
    ValidationError,
)
from .lp import Status, max_l1_norm, solve_simplex_batch, suboptimality_lower_bound_batch
from .nuisance import FoldPlan, MultinomialLogitNuisance, crossfit_nuisance
from .policy import (
    LogisticPolicy,
    OptimizerConfig,
    PolicyObjective,
    evaluate_policy,
    fit_policy_bfs,
    fit_policy_entropic,
)
from .problems import (
    ATE,
    CellProbability,
    Compliers,
    NotOptimallyTreated,
    NotOptimalUnderZ,
    OracleBest,
    PowerLawRegret,
    ProblemSpec,
    utility_preset,
)
from .simulation import (
    EngineCell,
    LatentNormalDGP,
    SimConfig,
    harmful_effect_dgp,
    monotone_benefit_dgp,
    run_sweep,
)

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

OBJECTIVES = ("not-optimally-treated", "oracle-best", "ate", "cell",
              "power-law-regret", "compliers", "not-optimal-under-z")
NUISANCE_SOURCES = ("plugin-csv", "multinomial-logit", "simulated-truth")
DGPS = {
    "latent-normal": lambda L, rho: LatentNormalDGP(L=L, rho=rho),
    "harmful-effect": lambda L, rho: harmful_effect_dgp(L=L),
    "monotone-benefit": lambda L, rho: monotone_benefit_dgp(L=L),
}
_SUBSTREAMS = ("dataset", "folds", "restarts")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Validated settings of one CLI invocation."""

    command: str
    input_path: Optional[str] = None
    output_path: str = "clp_bounds_out"
    setting: str = "joint-po"
    n_levels: int = 3
    n_arms: int = 2
    objective: str = "not-optimally-treated"
    target_arm: int = 1
    reference_arm: int = 0
    cell: int = 0
    z: int = 1
    lambdas: list = field(default_factory=lambda: [1.0])
    utility: Optional[str] = None
    treat_prob: Optional[float] = None
    engine: str = "bfs"
    eta: Optional[float] = None
    eta_schedule: str = "log"
    kappa: float = 2.0
    xi: Optional[float] = None
    folds: int = 3
    alpha: float = 0.05
    seed: int = 0
    nuisance: str = "plugin-csv"
    dgp: str = "latent-normal"
    rho: float = 0.9
    full_margins: bool = False
    threads: int = 1
    # policy
    degree: int = 1
    restarts: int = 10
    max_iter: int = 200
    audit_points: int = 20
    grid_points: int = 101
    criterion: str = "regret"
    # simulate
    n: int = 1000
    r: float = 0.3
    reps: int = 100
    engines: list = field(default_factory=lambda: ["bfs", "entropic:log:2"])
    oracle_draws: int = 10**6
    standardize_y1: bool = False

    def validate(self):
        """Check mutual consistency before any computation."""
        if self.setting not in ("joint-po", "iv"):
            raise ValidationError(f"unknown setting {self.setting!r}")
        if self.command in ("estimate", "policy", "diagnose") and not self.input_path:
            raise ValidationError(f"{self.command} needs --input")
        if self.nuisance not in NUISANCE_SOURCES:
            raise ValidationError(f"unknown nuisance source {self.nuisance!r}")
        if self.nuisance == "simulated-truth" and self.setting == "iv":
            raise ValidationError("simulated-truth nuisances exist only for joint-po")
        if self.dgp not in DGPS:
            raise ValidationError(f"unknown dgp {self.dgp!r}")
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"unknown objective {self.objective!r}")
        iv_only = ("compliers", "not-optimal-under-z")
        if self.setting == "iv" and self.objective not in iv_only + ("cell", "ate"):
            raise ValidationError(f"objective {self.objective} is not available for iv")
        if self.setting == "joint-po" and self.objective in iv_only:
            raise ValidationError(f"objective {self.objective} needs the iv setting")
        if self.engine not in ("bfs", "entropic", "lse"):
            raise ValidationError(f"unknown engine {self.engine!r}")
        if self.engine == "lse" and self.xi is None and self.command == "estimate":
            raise ValidationError("--engine lse needs --xi")
        if self.eta_schedule not in ("log", "sqrt", "fixed"):
            raise ValidationError(f"unknown eta schedule {self.eta_schedule!r}")
        if self.eta_schedule == "fixed" and self.eta is None and self.engine == "entropic":
            raise ValidationError("--eta-schedule fixed needs --eta")
        if not 0 < self.alpha < 0.5:
            raise ValidationError("alpha must be in (0, 0.5)")
        if self.folds < 2:
            raise ValidationError("--folds must be at least 2")
        if self.threads < 1:
            raise ValidationError("--threads must be positive")
        if self.command == "policy":
            if self.setting != "joint-po" or self.n_arms != 2:
                raise ValidationError("policy learning needs the binary joint-po setting")
            if self.utility is None:
                raise ValidationError("policy needs --utility")
            if self.engine == "lse":
                raise ValidationError("policy supports the bfs and entropic engines")
            for lam in self.lambdas:
                utility_preset(self.utility, self.n_levels, lam)
        if self.objective == "power-law-regret" and self.command != "policy":
            if self.utility is None or self.treat_prob is None:
                raise ValidationError("power-law-regret needs --utility and --treat-prob")
            if not 0 <= self.treat_prob <= 1:
                raise ValidationError("--treat-prob must be in [0, 1]")
            utility_preset(self.utility, self.n_levels, self.lambdas[0])
        if self.command == "simulate":
            SimConfig(n=self.n, L=self.n_levels, r=self.r, rho=self.rho,
                      n_reps=self.reps, seed=self.seed,
                      engines=tuple(parse_engine(e) for e in self.engines))
        return self

    def seed_for(self, name):
        """Integer seed of a named substream of ``--seed``."""
        children = np.random.SeedSequence(self.seed).spawn(len(_SUBSTREAMS))
        return int(children[_SUBSTREAMS.index(name)].generate_state(1)[0])


def parse_engine(text):
    """``bfs``, ``entropic:log:2``, ``entropic:fixed:50`` or ``lse:fixed:20``."""
    parts = text.split(":")
    if parts[0] == "bfs" and len(parts) == 1:
        return EngineCell("bfs")
    if len(parts) != 3:
        raise ValidationError(f"cannot parse engine {text!r}")
    try:
        value = float(parts[2])
    except ValueError:
        raise ValidationError(f"cannot parse engine value in {text!r}") from None
    return EngineCell(parts[0], parts[1], value)


# ---------------------------------------------------------------------------
# shared steps


def _input_path(text):
    if text.startswith("@"):
        return str(bundled_path(text[1:]))
    return text


def _objective(cfg: RunConfig, lam=None):
    k = cfg.objective
    if k == "not-optimally-treated":
        return NotOptimallyTreated()
    if k == "oracle-best":
        return OracleBest()
    if k == "ate":
        return ATE(cfg.target_arm, cfg.reference_arm)
    if k == "cell":
        return CellProbability(cfg.cell)
    if k == "power-law-regret":
        lam = cfg.lambdas[0] if lam is None else lam
        return PowerLawRegret(utility_preset(cfg.utility, cfg.n_levels, lam))
    if k == "compliers":
        return Compliers()
    return NotOptimalUnderZ(cfg.z)


def _spec(cfg: RunConfig, objective):
    if cfg.setting == "iv":
        return ProblemSpec.iv(cfg.n_levels, objective, cfg.full_margins)
    return ProblemSpec.joint_po(cfg.n_arms, cfg.n_levels, objective)


def _load(cfg: RunConfig):
    data, plugin, _ = read_table(_input_path(cfg.input_path), cfg.setting,
                                 cfg.n_levels, cfg.n_arms)
    if cfg.nuisance == "plugin-csv":
        if plugin is None:
            raise ValidationError("input has no plug-in nuisance columns; "
                                  "use --nuisance multinomial-logit")
        return data, plugin
    if cfg.nuisance == "simulated-truth":
        if data.x.shape[1] != 1:
            raise ValidationError("simulated-truth nuisances need one covariate")
        dgp = DGPS[cfg.dgp](cfg.n_levels, cfg.rho)
        return data, dgp.true_nuisance(data.x[:, 0])
    learner = MultinomialLogitNuisance(cfg.setting, cfg.n_levels, cfg.n_arms)
    folds = FoldPlan.make(len(data), cfg.folds, cfg.seed_for("folds"))
    return data, crossfit_nuisance(learner, data, folds)


def _hyper(cfg: RunConfig, n):
    if cfg.engine == "entropic":
        if cfg.eta is not None:
            return float(cfg.eta)
        return eta_schedule(n, cfg.eta_schedule, cfg.kappa)
    if cfg.engine == "lse":
        return cfg.xi
    return None


def _paths(prefix, tag=""):
    base = Path(prefix + tag)
    if base.parent and not base.parent.exists():
        base.parent.mkdir(parents=True, exist_ok=True)
    return base.with_name(base.name + ".json"), base.with_name(base.name + ".csv")


def _write_csv(path, rows, fields=None):
    fields = fields or list(rows[0])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                    for k, v in r.items()})
    Path(path).write_text(buf.getvalue())


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def _config_dict(cfg: RunConfig):
    d = asdict(cfg)
    d["r"] = "inf" if math.isinf(cfg.r) else cfg.r
    return d


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(cfg: RunConfig):
    """Bound estimates, variances and interval for one objective."""
    data, nm = _load(cfg)
    spec = _spec(cfg, _objective(cfg))
    pi = None
    if cfg.objective == "power-law-regret":
        pi = np.full(len(data), cfg.treat_prob)
    hyper = _hyper(cfg, len(data))
    report = estimate_bounds(cfg.engine, spec, data, nm, hyper=hyper,
                             alpha=cfg.alpha, pi=pi)
    jpath, cpath = _paths(cfg.output_path)
    _write_json(jpath, {"config": _config_dict(cfg), "report": report.to_dict()})
    row = {k: v for k, v in report.to_dict(include_per_obs=False).items()
           if k not in ("ci", "diagnostics")}
    row["ci_lo"], row["ci_hi"] = report.ci
    _write_csv(cpath, [row])
    print(f"{report.engine}: theta_L={report.theta_L:.6g} theta_U={report.theta_U:.6g} "
          f"ci=[{report.ci[0]:.6g}, {report.ci[1]:.6g}] n_used={report.n_used}")
    return EXIT_OK


def _lambda_tag(lam):
    return f"_lam{lam:g}"


def cmd_policy(cfg: RunConfig):
    """Fit a logistic policy for each lambda and evaluate it."""
    data, nm = _load(cfg)
    grid = np.linspace(data.x[:, 0].min(), data.x[:, 0].max(), cfg.grid_points)
    eta = cfg.eta if cfg.eta is not None else 100.0
    for lam in cfg.lambdas:
        objective = PolicyObjective(utility_preset(cfg.utility, cfg.n_levels, lam),
                                    cfg.criterion)
        opt = OptimizerConfig(n_restarts=cfg.restarts, max_iter=cfg.max_iter,
                              seed=cfg.seed_for("restarts"),
                              audit_points=cfg.audit_points)
        policy = LogisticPolicy(degree=cfg.degree)
        if cfg.engine == "entropic":
            fit = fit_policy_entropic(data, nm, objective, eta, cfg.n_levels, policy, opt)
        else:
            fit = fit_policy_bfs(data, nm, objective, cfg.n_levels, policy, opt)
        policy.weights = fit.weights
        evaluation = evaluate_policy(data, nm, objective, cfg.n_levels, policy,
                                     cfg.engine, eta if cfg.engine == "entropic" else None,
                                     cfg.alpha)
        pi_data = policy.predict_proba(data.x)
        pi_grid = policy.predict_proba(grid[:, None])
        jpath, cpath = _paths(cfg.output_path, _lambda_tag(lam))
        _write_json(jpath, {
            "config": _config_dict(cfg), "lambda": lam, "fit": fit.to_dict(),
            "evaluation": evaluation.to_dict(include_per_obs=False),
            "pi_max": float(pi_data.max()), "pi_mean": float(pi_data.mean()),
        })
        _write_csv(cpath, [{"x": float(g), "pi": float(p)} for g, p in zip(grid, pi_grid)])
        print(f"lambda={lam:g}: objective={fit.final_objective:.6g} "
              f"weights={np.array2string(fit.weights, precision=4)} "
              f"max pi={pi_data.max():.3g}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig):
    """Monte Carlo sweep of the latent-normal design."""
    sim = SimConfig(n=cfg.n, L=cfg.n_levels, r=cfg.r, rho=cfg.rho, n_reps=cfg.reps,
                    seed=cfg.seed, engines=tuple(parse_engine(e) for e in cfg.engines),
                    standardize_y1=cfg.standardize_y1, alpha=cfg.alpha)
    result = run_sweep(sim, n_jobs=cfg.threads, oracle_draws=cfg.oracle_draws)
    jpath, cpath = _paths(cfg.output_path)
    Path(jpath).write_text(result.to_json())
    Path(cpath).write_text(result.to_csv())
    for c in result.cells:
        print(f"{c['engine_label']}: bias={c['bias']:.4g} sd={c['sd']:.4g} "
              f"rmse={c['rmse']:.4g} cov_L={c['coverage_L']:.3f} "
              f"cov_U={c['coverage_U']:.3f} ok={c['n_ok']}/{sim.n_reps}")
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig):
    """Per-observation feasibility, gap probes, conditioning and R1."""
    data, nm = _load(cfg)
    objective = _objective(cfg)
    spec = _spec(cfg, objective)
    pi = None
    if cfg.objective == "power-law-regret":
        pi = np.full(len(data), cfg.treat_prob)
    batch = spec.evaluate(data, nm, pi)
    A, B, C = spec.A, batch.B, batch.C
    n = len(batch)
    lo = solve_simplex_batch(A, B, C, Direction.LOWER.sense, check_rank=False)
    hi = solve_simplex_batch(A, B, C, Direction.UPPER.sense, check_rank=False)
    feasible = np.array([s is not Status.INFEASIBLE for s in lo.status])
    ok = lo.optimal & hi.optimal
    gap_L = np.full(n, np.nan)
    gap_U = np.full(n, np.nan)
    r1 = np.full(n, np.nan)
    cond_L = np.full(n, np.nan)
    cond_U = np.full(n, np.nan)
    idx = np.flatnonzero(ok)
    eta = cfg.eta if cfg.eta is not None else eta_schedule(n, cfg.eta_schedule, cfg.kappa)
    if idx.size:
        gap_L[idx] = suboptimality_lower_bound_batch(A, B[idx], C[idx], lo.basis[idx],
                                                     Direction.LOWER.sense)
        gap_U[idx] = suboptimality_lower_bound_batch(A, B[idx], C[idx], hi.basis[idx],
                                                     Direction.UPPER.sense)
        r1[idx] = max_l1_norm(A, B[idx])
        for direction, out in ((Direction.LOWER, cond_L), (Direction.UPPER, cond_U)):
            ent = solve_entropic_batch(A, B[idx], C[idx], eta, direction,
                                       raise_on_failure=False, cond_cap=math.inf)
            out[idx] = ent.cond
    width = hi.value - lo.value
    point = ok & (np.abs(width) <= 1e-9)
    rows = [{"i": i, "feasible": int(feasible[i]), "theta_L": float(lo.value[i]),
             "theta_U": float(hi.value[i]), "gap_L": float(gap_L[i]),
             "gap_U": float(gap_U[i]), "cond_L": float(cond_L[i]),
             "cond_U": float(cond_U[i]), "R1": float(r1[i]),
             "point_identified": int(point[i])} for i in range(n)]
    summary = {"n": n, "n_infeasible": int((~feasible).sum()),
               "fraction_infeasible": float((~feasible).mean()),
               "n_point_identified": int(point.sum()), "eta": float(eta),
               "gap_L_zero_fraction": float(np.mean(gap_L[idx] == 0)) if idx.size else math.nan,
               "gap_U_zero_fraction": float(np.mean(gap_U[idx] == 0)) if idx.size else math.nan}
    jpath, cpath = _paths(cfg.output_path)
    _write_json(jpath, {"config": _config_dict(cfg), "summary": summary,
                        "observations": rows})
    _write_csv(cpath, rows)
    print(f"infeasible: {summary['n_infeasible']}/{n} "
          f"({100 * summary['fraction_infeasible']:.1f}%), "
          f"point-identified: {summary['n_point_identified']}")
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "policy": cmd_policy,
            "simulate": cmd_simulate, "diagnose": cmd_diagnose}


# ---------------------------------------------------------------------------
# argument parsing


def _default_threads():
    env = os.environ.get("CLP_BOUNDS_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"CLP_BOUNDS_THREADS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def _float_or_inf(text):
    return math.inf if text.lower() in ("inf", "infinity") else float(text)


def build_parser():
    p = argparse.ArgumentParser(prog="clp-bounds", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--output", dest="output_path", default="clp_bounds_out",
                        help="output prefix; writes PREFIX.json and PREFIX.csv")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--levels", dest="n_levels", type=int, default=3)
        sp.add_argument("--threads", type=int, default=None,
                        help="worker/BLAS threads (default: $CLP_BOUNDS_THREADS or all cores)")
        sp.add_argument("--eta", type=float, default=None)
        sp.add_argument("--eta-schedule", default="log", choices=["log", "sqrt", "fixed"])
        sp.add_argument("--kappa", type=float, default=2.0)

    def data_args(sp):
        sp.add_argument("--input", dest="input_path", required=True,
                        help="CSV path, or @joint_po_200 / @harmful_effect for bundled data")
        sp.add_argument("--setting", default="joint-po", choices=["joint-po", "iv"])
        sp.add_argument("--arms", dest="n_arms", type=int, default=2)
        sp.add_argument("--nuisance", default="plugin-csv", choices=NUISANCE_SOURCES)
        sp.add_argument("--dgp", default="latent-normal", choices=sorted(DGPS))
        sp.add_argument("--rho", type=float, default=0.9)
        sp.add_argument("--folds", type=int, default=3)
        sp.add_argument("--full-margins", action="store_true")

    def objective_args(sp):
        sp.add_argument("--objective", default="not-optimally-treated", choices=OBJECTIVES)
        sp.add_argument("--target-arm", type=int, default=1)
        sp.add_argument("--reference-arm", type=int, default=0)
        sp.add_argument("--cell", type=int, default=0)
        sp.add_argument("--z", type=int, default=1)
        sp.add_argument("--utility", default=None)
        sp.add_argument("--lambda", dest="lambdas", type=float, nargs="+", default=[1.0])
        sp.add_argument("--treat-prob", type=float, default=None)

    sp = sub.add_parser("estimate", help="estimate bounds from a CSV")
    common(sp)
    data_args(sp)
    objective_args(sp)
    sp.add_argument("--engine", default="bfs", choices=["bfs", "entropic", "lse"])
    sp.add_argument("--xi", type=float, default=None)

    sp = sub.add_parser("diagnose", help="per-observation feasibility and gap report")
    common(sp)
    data_args(sp)
    objective_args(sp)

    sp = sub.add_parser("policy", help="fit power-law regret policies")
    common(sp)
    data_args(sp)
    sp.add_argument("--utility", required=True)
    sp.add_argument("--lambda", dest="lambdas", type=float, nargs="+", default=[1.0])
    sp.add_argument("--criterion", default="regret", choices=["regret", "value"])
    sp.add_argument("--engine", default="entropic", choices=["bfs", "entropic"])
    sp.add_argument("--degree", type=int, default=1)
    sp.add_argument("--restarts", type=int, default=10)
    sp.add_argument("--max-iter", type=int, default=200)
    sp.add_argument("--audit-points", type=int, default=20)
    sp.add_argument("--grid-points", type=int, default=101)

    sp = sub.add_parser("simulate", help="Monte Carlo sweep")
    common(sp)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--r", type=_float_or_inf, default=0.3)
    sp.add_argument("--rho", type=float, default=0.9)
    sp.add_argument("--reps", type=int, default=100)
    sp.add_argument("--engine", dest="engines", action="append", default=None,
                    help="bfs | entropic:log:2 | entropic:fixed:50 | lse:fixed:20 (repeatable)")
    sp.add_argument("--oracle-draws", type=int, default=10**6)
    sp.add_argument("--standardize-y1", action="store_true")
    return p


def config_from_args(ns) -> RunConfig:
    kw = {k: v for k, v in vars(ns).items() if v is not None}
    if kw.get("engines") is None and ns.command == "simulate":
        kw.pop("engines", None)
    if ns.command == "policy":
        kw["objective"] = "power-law-regret"
    kw["threads"] = ns.threads if ns.threads is not None else _default_threads()
    if ns.command == "simulate":
        kw.setdefault("engine", "bfs")
    return RunConfig(**kw)


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns).validate()
        with threadpool_limits(cfg.threads):
            return COMMANDS[cfg.command](cfg)
    except (ValidationError, DegenerateDesign) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverFailure, BoundsError) as exc:
        print(f"solver failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
