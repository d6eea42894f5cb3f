"""Standard-form linear programs solved by a batched two-phase simplex.

All conditional LPs in this package share one constraint matrix ``A`` and
differ only in the right-hand side ``b(x)`` and objective ``c(x)``.  The
workhorse :func:`solve_simplex_batch` therefore runs the simplex method on a
stack of tableaux at once, one per observation, with per-problem pivot
choices.  :func:`solve_simplex` is the single-problem convenience wrapper.

Pivoting uses Dantzig's rule (most negative reduced cost, lowest index on
ties) and switches to Bland's rule for a problem once it has made ``3 * K``
degenerate pivots.
"""

from __future__ import annotations

import enum
import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import (
    MaxPivotsExceeded,
    RankDeficient,
    SingularBasis,
    TooLargeForEnumeration,
    ValidationError,
)

__all__ = [
    "Sense",
    "Status",
    "Feasibility",
    "StandardFormLP",
    "BasisSolution",
    "BatchSolution",
    "SubOptimalityProbe",
    "solve_simplex",
    "solve_simplex_batch",
    "basis_apply",
    "probe_suboptimality",
    "suboptimality_lower_bound_batch",
    "check_feasibility",
    "check_feasibility_batch",
    "enumerate_bases",
    "basis_values",
    "check_full_row_rank",
    "max_l1_norm",
    "ENUMERATION_MAX_K",
    "ENUMERATION_MAX_J",
]

ENUMERATION_MAX_K = 16
ENUMERATION_MAX_J = 8

DEGENERACY_TOL = 1e-10
_PIVOT_TOL = 1e-11
_RANK_RTOL = 1e-10


class Sense(str, enum.Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_PIVOTS = "max_pivots"


class Feasibility(str, enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"


def _tol_feas(b):
    return 1e-9 * (1.0 + np.max(np.abs(b), axis=-1))


def _tol_opt(c):
    return 1e-9 * (1.0 + np.max(np.abs(c), axis=-1))


@functools.lru_cache(maxsize=64)
def _rank_cached(key, shape):
    A = np.frombuffer(key, dtype=np.float64).reshape(shape)
    # QR with column pivoting on A' exposes the row rank of A.
    _, R, _ = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return 0
    return int(np.sum(diag > _RANK_RTOL * diag[0]))


def check_full_row_rank(A):
    """Raise :class:`RankDeficient` unless ``A`` has full row rank."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValidationError("constraint matrix must be two-dimensional")
    rank = _rank_cached(A.tobytes(), A.shape)
    if rank < A.shape[0]:
        raise RankDeficient(
            f"constraint matrix has rank {rank} < {A.shape[0]} rows; "
            "remove redundant constraints"
        )
    return A


@dataclass(frozen=True)
class StandardFormLP:
    """``min/max <c, p>`` subject to ``A p = b``, ``p >= 0``.

    Arrays are copied and made read-only at construction so an instance can
    be shared freely between threads.
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    sense: Sense = Sense.MINIMIZE

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64).ravel()
        c = np.array(self.c, dtype=np.float64).ravel()
        if A.ndim != 2:
            raise ValidationError("A must be a matrix")
        J, K = A.shape
        if J > K:
            raise ValidationError(f"need J <= K, got J={J}, K={K}")
        if b.shape != (J,) or c.shape != (K,):
            raise ValidationError(
                f"shape mismatch: A is {A.shape}, b is {b.shape}, c is {c.shape}"
            )
        for name, arr in (("A", A), ("b", b), ("c", c)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains NaN or Inf")
        check_full_row_rank(A)
        for arr in (A, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "sense", Sense(self.sense))

    @property
    def shape(self):
        return self.A.shape


@dataclass
class BasisSolution:
    """Result of :func:`solve_simplex`.

    ``duals`` and ``reduced_costs`` refer to the problem in its stated sense:
    for a maximisation the reduced costs of nonbasic columns are <= 0 at the
    optimum.
    """

    status: Status
    value: float = math.nan
    primal: np.ndarray = field(default_factory=lambda: np.zeros(0))
    basis: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    is_degenerate: bool = False
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pivots: int = 0


@dataclass
class BatchSolution:
    """Stacked simplex results for ``n`` problems sharing one ``A``.

    Rows whose ``status`` is not OPTIMAL hold NaN values and a basis of -1.
    """

    status: np.ndarray  # (n,) object array of Status
    value: np.ndarray  # (n,)
    primal: np.ndarray  # (n, K)
    basis: np.ndarray  # (n, J), sorted
    pivots: np.ndarray  # (n,)

    @property
    def optimal(self):
        return np.array([s is Status.OPTIMAL for s in self.status], dtype=bool)

    def __len__(self):
        return len(self.status)


@dataclass
class SubOptimalityProbe:
    gap_lower_bound: float
    second_best_value: float | None = None
    method: str = "reduced_cost_bound"


def _pivot(T, basis, idx, rows, cols):
    piv = T[idx, rows, cols]
    prow = T[idx, rows, :] / piv[:, None]
    pcol = T[idx, :, cols]
    block = T[idx] - pcol[:, :, None] * prow[:, None, :]
    block[np.arange(len(idx)), rows, :] = prow
    T[idx] = block
    basis[idx, rows] = cols


def _run_simplex(T, basis, allowed, tol_opt, status, pivots, degen, max_pivots,
                 bland_after, n_rows):
    """Iterate the simplex method on every RUNNING problem in the stack.

    ``T`` has shape (n, J+1, W+1); its last row holds reduced costs and
    ``-objective`` and its last column the right-hand side.
    """
    J = n_rows
    W = T.shape[2] - 1
    while True:
        idx = np.flatnonzero(status == 0)
        if idx.size == 0:
            return
        d = T[idx, J, :W]
        d = np.where(allowed[None, :], d, np.inf)
        neg = d < -tol_opt[idx, None]
        has = neg.any(axis=1)
        status[idx[~has]] = 1  # optimal
        idx, d, neg = idx[has], d[has], neg[has]
        if idx.size == 0:
            return
        over = pivots[idx] >= max_pivots
        status[idx[over]] = 4
        idx, d, neg = idx[~over], d[~over], neg[~over]
        if idx.size == 0:
            return
        dantzig = np.argmin(d, axis=1)
        bland = np.argmax(neg, axis=1)
        q = np.where(degen[idx] >= bland_after, bland, dantzig)
        col = T[idx[:, None], np.arange(J)[None, :], q[:, None]]
        rhs = np.maximum(T[idx, :J, W], 0.0)
        eligible = col > _PIVOT_TOL
        unbounded = ~eligible.any(axis=1)
        status[idx[unbounded]] = 3
        keep = ~unbounded
        idx, q, col, rhs, eligible = idx[keep], q[keep], col[keep], rhs[keep], eligible[keep]
        if idx.size == 0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(eligible, rhs / np.where(eligible, col, 1.0), np.inf)
        rmin = ratio.min(axis=1)
        ties = eligible & (ratio <= rmin[:, None] + 1e-12 * (1.0 + rmin[:, None]))
        key = np.where(ties, basis[idx], W + 1)
        r = np.argmin(key, axis=1)
        degen[idx] += rmin <= DEGENERACY_TOL
        _pivot(T, basis, idx, r, q)
        pivots[idx] += 1


def solve_simplex_batch(A, B, C, sense=Sense.MINIMIZE, max_pivots=None,
                        check_rank=True):
    """Solve ``n`` standard-form LPs sharing the constraint matrix ``A``.

    Parameters
    ----------
    A : array, shape (J, K)
        Shared constraint matrix with full row rank.
    B : array, shape (n, J)
        Right-hand sides, one per problem.
    C : array, shape (n, K)
        Objective vectors, one per problem.
    sense : Sense
        Optimisation direction applied to every problem.
    max_pivots : int, optional
        Per-problem pivot limit across both phases; defaults to
        ``50 * (J + K)``.

    Returns
    -------
    BatchSolution
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    if check_rank:
        check_full_row_rank(A)
    J, K = A.shape
    n = B.shape[0]
    if B.shape != (n, J) or C.shape != (n, K):
        raise ValidationError(
            f"expected B of shape (n, {J}) and C of shape (n, {K}); "
            f"got {B.shape} and {C.shape}"
        )
    sense = Sense(sense)
    Cmin = C if sense is Sense.MINIMIZE else -C
    if max_pivots is None:
        max_pivots = 50 * (J + K)
    bland_after = 3 * K

    W = K + J
    T = np.zeros((n, J + 1, W + 1))
    sign = np.where(B < 0, -1.0, 1.0)
    T[:, :J, :K] = sign[:, :, None] * A[None, :, :]
    T[:, :J, K:W] = np.eye(J)[None, :, :]
    T[:, :J, W] = np.abs(B)
    T[:, J, :K] = -T[:, :J, :K].sum(axis=1)
    T[:, J, W] = -np.abs(B).sum(axis=1)
    basis = np.tile(np.arange(K, W), (n, 1))

    status = np.zeros(n, dtype=np.int8)
    pivots = np.zeros(n, dtype=np.int64)
    degen = np.zeros(n, dtype=np.int64)
    allowed1 = np.ones(W, dtype=bool)
    _run_simplex(T, basis, allowed1, np.full(n, 1e-11), status, pivots, degen,
                 max_pivots, bland_after, J)

    infeasible = (status == 1) & (-T[:, J, W] > _tol_feas(B))
    status[infeasible] = 2
    status[status == 1] = 0

    # Drive artificial variables out of the basis with degenerate pivots.
    for r in range(J):
        need = np.flatnonzero((status == 0) & (basis[:, r] >= K))
        if need.size == 0:
            continue
        row = np.abs(T[need, r, :K])
        ok = row > 1e-9 * (1.0 + row.max(axis=1, keepdims=True))
        found = ok.any(axis=1)
        if not np.all(found):
            raise RankDeficient("redundant constraint row detected during phase one")
        q = np.argmax(ok, axis=1)
        _pivot(T, basis, need, np.full(need.size, r), q)

    sub = np.flatnonzero(status == 0)
    if sub.size:
        Ts, bs = T[sub], basis[sub]
        c_ext = np.zeros((sub.size, W))
        c_ext[:, :K] = Cmin[sub]
        cB = np.take_along_axis(c_ext, bs, axis=1)
        Ts[:, J, :W] = c_ext
        Ts[:, J, W] = 0.0
        Ts[:, J, :] -= np.einsum("nj,njw->nw", cB, Ts[:, :J, :])
        allowed2 = np.zeros(W, dtype=bool)
        allowed2[:K] = True
        st = np.zeros(sub.size, dtype=np.int8)
        pv, dg = pivots[sub].copy(), degen[sub].copy()
        _run_simplex(Ts, bs, allowed2, _tol_opt(Cmin[sub]), st, pv, dg,
                     max_pivots, bland_after, J)
        basis[sub], pivots[sub] = bs, pv
        status[sub] = st

    codes = {1: Status.OPTIMAL, 2: Status.INFEASIBLE, 3: Status.UNBOUNDED,
             4: Status.MAX_PIVOTS}
    out_status = np.array([codes.get(int(s), Status.MAX_PIVOTS) for s in status],
                          dtype=object)
    value = np.full(n, np.nan)
    primal = np.full((n, K), np.nan)
    out_basis = np.full((n, J), -1, dtype=np.int64)
    opt = np.flatnonzero(status == 1)
    if opt.size:
        bas = np.sort(basis[opt], axis=1)
        AB = np.transpose(A[:, bas], (1, 0, 2))
        pB = np.linalg.solve(AB, B[opt][:, :, None])[:, :, 0]
        pB = np.where(np.abs(pB) <= DEGENERACY_TOL * (1.0 + np.abs(B[opt]).max(axis=1,
                      keepdims=True)), 0.0, pB)
        P = np.zeros((opt.size, K))
        np.put_along_axis(P, bas, pB, axis=1)
        primal[opt] = P
        out_basis[opt] = bas
        value[opt] = np.einsum("nk,nk->n", C[opt], P)
    return BatchSolution(out_status, value, primal, out_basis, pivots)


def _duals_and_reduced_costs(A, basis, c):
    AB = A[:, basis]
    y = np.linalg.solve(AB.T, c[basis])
    return y, c - A.T @ y


def solve_simplex(lp: StandardFormLP) -> BasisSolution:
    """Solve one :class:`StandardFormLP` and report its optimal basis.

    Raises
    ------
    MaxPivotsExceeded
        If the cycling safeguard trips.
    """
    batch = solve_simplex_batch(lp.A, lp.b[None, :], lp.c[None, :], lp.sense,
                                check_rank=False)
    status = batch.status[0]
    if status is Status.MAX_PIVOTS:
        raise MaxPivotsExceeded("simplex pivot limit reached", index=0)
    if status is not Status.OPTIMAL:
        return BasisSolution(status=status, pivots=int(batch.pivots[0]))
    basis = batch.basis[0]
    primal = batch.primal[0]
    y, d = _duals_and_reduced_costs(lp.A, basis, lp.c)
    tol = DEGENERACY_TOL * (1.0 + np.max(np.abs(lp.b)))
    return BasisSolution(
        status=status,
        value=float(batch.value[0]),
        primal=primal,
        basis=basis,
        is_degenerate=bool(np.any(primal[basis] <= tol)),
        duals=y,
        reduced_costs=d,
        pivots=int(batch.pivots[0]),
    )


def basis_apply(basis, A, v):
    """Return ``A_B^{-1} v`` scattered into a length-K vector (zero off-basis)."""
    A = np.asarray(A, dtype=np.float64)
    basis = np.asarray(basis, dtype=np.int64)
    v = np.asarray(v, dtype=np.float64)
    AB = A[:, basis]
    if AB.shape[0] != AB.shape[1]:
        raise SingularBasis(f"basis has {len(basis)} columns for {A.shape[0]} rows")
    s = np.linalg.svd(AB, compute_uv=False)
    if s[-1] <= 1e-12 * max(s[0], 1.0):
        raise SingularBasis("basis submatrix is singular")
    out = np.zeros(A.shape[1])
    out[basis] = np.linalg.solve(AB, v)
    return out


def _check_enumeration_size(J, K):
    if K > ENUMERATION_MAX_K or J > ENUMERATION_MAX_J:
        raise TooLargeForEnumeration(
            f"basis enumeration limited to K <= {ENUMERATION_MAX_K}, "
            f"J <= {ENUMERATION_MAX_J}; got K={K}, J={J}"
        )


@functools.lru_cache(maxsize=32)
def _enumerate_cached(key, shape):
    A = np.frombuffer(key, dtype=np.float64).reshape(shape)
    J, K = shape
    combos = np.array(list(itertools.combinations(range(K), J)), dtype=np.int64)
    mats = np.transpose(A[:, combos], (1, 0, 2))
    s = np.linalg.svd(mats, compute_uv=False)
    ok = s[:, -1] > 1e-10 * np.maximum(s[:, 0], 1.0)
    bases = combos[ok]
    inverses = np.linalg.inv(mats[ok])
    bases.setflags(write=False)
    inverses.setflags(write=False)
    return bases, inverses


def enumerate_bases(A):
    """All bases (column index sets with invertible ``A_B``) and their inverses.

    Only permitted for ``K <= 16`` and ``J <= 8``; results are cached per
    matrix.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    J, K = A.shape
    _check_enumeration_size(J, K)
    return _enumerate_cached(A.tobytes(), A.shape)


def basis_values(A, B, C):
    """Basic solutions of every basis for every problem.

    Returns
    -------
    bases : (nb, J) int array
    pB : (n, nb, J) basic variable values
    values : (n, nb) objective values ``<c, A_B^{-1} b>``
    feasible : (n, nb) bool, ``pB >= -tol``
    """
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    bases, inverses = enumerate_bases(A)
    pB = np.einsum("bij,nj->nbi", inverses, B)
    cB = C[:, bases]  # (n, nb, J)
    values = np.einsum("nbi,nbi->nb", cB, pB)
    feasible = np.all(pB >= -_tol_feas(B)[:, None, None], axis=2)
    return bases, pB, values, feasible


def probe_suboptimality(lp: StandardFormLP, sol: BasisSolution,
                        method="auto") -> SubOptimalityProbe:
    """Lower-bound the sub-optimality gap of an optimal LP solution.

    ``method="vertex_enumeration"`` returns the exact gap to the best
    non-optimal basis (small problems only).  ``"reduced_cost_bound"`` uses
    the final basis: when the optimum is a nondegenerate vertex with strictly
    positive reduced costs, the second-best vertex is one of its edge
    neighbours and the gap is exact; otherwise 0 is returned as a safe bound.
    ``"auto"`` enumerates when the size permits.
    """
    if sol.status is not Status.OPTIMAL:
        raise ValidationError("probe_suboptimality needs an optimal solution")
    J, K = lp.shape
    if method == "auto":
        method = ("vertex_enumeration"
                  if K <= ENUMERATION_MAX_K and J <= ENUMERATION_MAX_J
                  else "reduced_cost_bound")
    if method == "vertex_enumeration":
        _check_enumeration_size(J, K)
        _, _, values, feasible = basis_values(lp.A, lp.b, lp.c)
        vals = values[0][feasible[0]]
        opt = sol.value
        tol = 1e-9 * (1.0 + abs(opt)) + _tol_opt(lp.c) * (1.0 + np.max(np.abs(lp.b)))
        if lp.sense is Sense.MINIMIZE:
            rest = vals[vals > opt + tol]
            second = float(rest.min()) if rest.size else None
            gap = 0.0 if second is None else second - opt
        else:
            rest = vals[vals < opt - tol]
            second = float(rest.max()) if rest.size else None
            gap = 0.0 if second is None else opt - second
        return SubOptimalityProbe(max(gap, 0.0), second, "vertex_enumeration")
    if method != "reduced_cost_bound":
        raise ValidationError(f"unknown probe method {method!r}")
    gap = suboptimality_lower_bound_batch(
        lp.A, lp.b[None, :], lp.c[None, :], sol.basis[None, :], lp.sense)[0]
    return SubOptimalityProbe(float(gap), None, "reduced_cost_bound")


def suboptimality_lower_bound_batch(A, B, C, bases, sense=Sense.MINIMIZE):
    """Reduced-cost gap bound for a stack of optimal bases.

    Exact (the best adjacent vertex) when the optimal vertex is nondegenerate
    and every nonbasic reduced cost is strictly positive; 0 otherwise.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.atleast_2d(B)
    C = np.atleast_2d(C)
    bases = np.atleast_2d(bases)
    n = B.shape[0]
    Cmin = C if Sense(sense) is Sense.MINIMIZE else -C
    AB = np.transpose(A[:, bases], (1, 0, 2))
    Binv = np.linalg.inv(AB)
    pB = np.einsum("nij,nj->ni", Binv, B)
    y = np.einsum("nji,nj->ni", Binv, np.take_along_axis(Cmin, bases, axis=1))
    d = Cmin - y @ A
    np.put_along_axis(d, bases, np.inf, axis=1)
    Wm = np.einsum("nij,jk->nik", Binv, A)  # (n, J, K) simplex directions
    tol_b = DEGENERACY_TOL * (1.0 + np.abs(B).max(axis=1))
    nondegen = np.all(pB > tol_b[:, None], axis=1)
    tol_c = _tol_opt(Cmin)
    strict = np.all(d > tol_c[:, None], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(Wm > _PIVOT_TOL, pB[:, :, None] / Wm, np.inf).min(axis=1)
        moves = np.where(np.isfinite(d), d * step, np.inf)
    moves = np.where(np.isnan(moves), np.inf, moves)
    gap = np.min(moves, axis=1)
    gap = np.where(nondegen & strict & np.isfinite(gap), gap, 0.0)
    return np.maximum(gap, 0.0) if n else gap


def check_feasibility_batch(A, B):
    """Phase-one verdicts for a stack of right-hand sides (True = feasible)."""
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    K = np.asarray(A).shape[1]
    sol = solve_simplex_batch(A, B, np.zeros((B.shape[0], K)))
    return np.array([s is Status.OPTIMAL for s in sol.status])


def check_feasibility(A, b) -> Feasibility:
    """Phase-one verdict: is ``{p >= 0 : A p = b}`` non-empty?"""
    ok = check_feasibility_batch(A, np.asarray(b, dtype=np.float64)[None, :])[0]
    return Feasibility.FEASIBLE if ok else Feasibility.INFEASIBLE


def max_l1_norm(A, b):
    """``max ||p||_1`` over the feasible set (the R1 diagnostic)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.atleast_2d(b)
    sol = solve_simplex_batch(A, B, np.ones((B.shape[0], A.shape[1])), Sense.MAXIMIZE)
    return sol.value if np.ndim(b) > 1 else float(sol.value[0])
