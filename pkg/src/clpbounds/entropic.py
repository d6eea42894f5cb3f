"""Entropy-regularised conditional LPs.

For the upper problem ``max <c, p> - (1/eta) sum p (log p - 1)`` subject to
``A p = b`` the solution is ``p = exp(A' lam + eta c)`` where ``lam``
minimises the smooth convex dual

    f(lam) = sum_k exp(<A_k, lam> + eta c_k) - <lam, b>.

The lower problem is the upper problem with ``c`` negated, so its solution is
``p = exp(-A' lam - eta c)`` (with ``lam`` sign-flipped).  Duals are solved by
damped Newton with Armijo backtracking, batched over observations that share
``A``.

Sensitivities (implicit function theorem on ``A p(lam) = b``), with
``D = diag(p)`` and ``Q = (A D A')^{-1}``::

    d p / d b = D A' Q
    d p / d c = +/- eta (D - D A' Q A D)      (+ upper, - lower)

The second form is symmetric and satisfies ``A (d p / d c) = 0``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import (
    IllConditioned,
    MarginMismatch,
    NewtonStalled,
    NotStrictlyFeasible,
    ValidationError,
)
from .lp import (
    Sense,
    Status,
    basis_values,
    check_full_row_rank,
    enumerate_bases,
    solve_simplex_batch,
)

__all__ = [
    "Direction",
    "EntropicSolution",
    "EntropicBatch",
    "solve_entropic_dual",
    "solve_entropic_batch",
    "solve_sinkhorn",
    "jacobians",
    "jacobian_products",
    "eta_schedule",
    "logsumexp_bound",
    "logsumexp_batch",
    "is_strictly_feasible",
    "COND_CAP",
]

COND_CAP = 1e14
MAX_NEWTON_ITER = 200
_ARMIJO = 1e-4
_MAX_HALVINGS = 60
_CONT_START = 20.0
_NEAR_TOL = 1e-6


class Direction(str, enum.Enum):
    LOWER = "lower"
    UPPER = "upper"

    @property
    def sign(self):
        return 1.0 if self is Direction.UPPER else -1.0

    @property
    def sense(self):
        return Sense.MAXIMIZE if self is Direction.UPPER else Sense.MINIMIZE


@dataclass
class EntropicSolution:
    eta: float
    direction: Direction
    dual: np.ndarray
    primal: np.ndarray
    value: float
    jac_b: np.ndarray | None
    jac_c: np.ndarray | None
    iterations: int
    grad_norm: float


@dataclass
class EntropicBatch:
    """Stacked dual solutions.

    ``dual`` is expressed in the upper-problem parametrisation applied to the
    signed objective ``sign * c``; use :func:`jacobian_products` rather than
    touching it directly.
    """

    eta: np.ndarray  # (n,)
    direction: Direction
    dual: np.ndarray  # (n, J)
    primal: np.ndarray  # (n, K)
    value: np.ndarray  # (n,)
    Q: np.ndarray  # (n, J, J) inverse dual Hessian
    iterations: np.ndarray
    grad_norm: np.ndarray
    cond: np.ndarray
    converged: np.ndarray


def _hessian(A, P):
    """Stacked ``A diag(p) A'`` for each row of ``P``."""
    return (P[:, None, :] * A) @ A.T


def _quad(U, Q, V):
    """Row-wise ``u' Q v``."""
    return (U[:, None, :] @ Q @ V[:, :, None])[:, 0, 0]


def _sum_row(A):
    rows = np.flatnonzero(np.all(A == 1.0, axis=1))
    return int(rows[0]) if rows.size else None


def _newton_step(H, g):
    """Batched ``-H^{-1} g``, ridging rows whose Hessian is numerically singular."""
    try:
        return -np.linalg.solve(H, g[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        pass
    J = H.shape[-1]
    scale = np.maximum(np.trace(H, axis1=1, axis2=2) / J, 1e-300)
    ridge = H + (1e-12 * scale)[:, None, None] * np.eye(J)
    try:
        return -np.linalg.solve(ridge, g[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        return -np.stack([np.linalg.lstsq(h, v, rcond=None)[0] for h, v in zip(H, g)])


def _newton(A, B, S, tol, max_iter=MAX_NEWTON_ITER, lam0=None):
    """Minimise ``sum exp(A' lam + S) - <lam, b>`` for each row of (B, S).

    Returns lam, p, iterations, grad_norm, converged and a stalled flag.
    """
    n, J = B.shape
    if lam0 is None:
        lam = np.zeros((n, J))
        r = _sum_row(A)
        if r is not None:
            # Fold the log-partition into the sum-to-one multiplier.
            smax = S.max(axis=1, keepdims=True)
            logz = smax[:, 0] + np.log(np.exp(S - smax).sum(axis=1))
            total = np.maximum(B[:, r], 1e-300)
            lam[:, r] = np.log(total) - logz
    else:
        lam = np.array(lam0, dtype=np.float64, copy=True)

    def evaluate(L, Sx, Bx):
        with np.errstate(over="ignore", invalid="ignore"):
            s = L @ A + Sx
            p = np.exp(s)
            f = p.sum(axis=1) - np.einsum("nj,nj->n", L, Bx)
        return p, f

    p, f = evaluate(lam, S, B)
    iters = np.zeros(n, dtype=np.int64)
    stalled = np.zeros(n, dtype=bool)
    polished = np.zeros(n, dtype=bool)
    for _ in range(max_iter + 1):
        g = p @ A.T - B
        gnorm = np.abs(g).max(axis=1)
        done = gnorm <= tol
        # One extra Newton step after convergence sharpens the Jacobians.
        active = ~stalled & (~done | ~polished)
        polished |= done
        idx = np.flatnonzero(active & (iters < max_iter))
        if idx.size == 0:
            break
        pi = p[idx]
        H = _hessian(A, pi)
        step = _newton_step(H, g[idx])
        slope = np.einsum("nj,nj->n", g[idx], step)
        t = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        new_lam = lam[idx].copy()
        new_p = pi.copy()
        new_f = f[idx].copy()
        pending = np.arange(idx.size)
        near = gnorm[idx] <= _NEAR_TOL
        for _h in range(_MAX_HALVINGS):
            cand = lam[idx[pending]] + t[pending, None] * step[pending]
            cp, cf = evaluate(cand, S[idx[pending]], B[idx[pending]])
            fo = f[idx[pending]]
            ok = cf <= fo + _ARMIJO * t[pending] * slope[pending] + 1e-13 * np.abs(fo)
            # Close to the optimum objective differences drown in rounding
            # error; fall back to requiring a smaller gradient.
            with np.errstate(over="ignore", invalid="ignore"):
                gn_new = np.abs(cp @ A.T - B[idx[pending]]).max(axis=1)
            ok |= near[pending] & (gn_new <= (1.0 - 0.5 * t[pending]) * gnorm[idx[pending]])
            ok &= np.isfinite(cf)
            good = pending[ok]
            new_lam[good], new_p[good], new_f[good] = cand[ok], cp[ok], cf[ok]
            accepted[good] = True
            pending = pending[~ok]
            if pending.size == 0:
                break
            t[pending] *= 0.5
        lam[idx[accepted]] = new_lam[accepted]
        p[idx[accepted]] = new_p[accepted]
        f[idx[accepted]] = new_f[accepted]
        stalled[idx[~accepted]] = True
        iters[idx] += 1
    g = p @ A.T - B
    gnorm = np.abs(g).max(axis=1)
    converged = gnorm <= tol
    return lam, p, iters, gnorm, converged, stalled


def _continuation(A, B, C, eta, tol, start=_CONT_START):
    """Newton with eta-continuation for rows where ``eta * range(c)`` is large.

    Such rows start at a moderate eta and double it until the target, scaling
    the warm-start dual by the eta ratio (the optimal dual grows linearly in
    eta once the solution concentrates on a vertex).
    """
    n, J = B.shape
    spread = np.ptp(C, axis=1)
    with np.errstate(divide="ignore"):
        eta0 = np.where(spread > 0, start / spread, np.inf)
    cur = np.minimum(eta, eta0)
    lam = None
    total = np.zeros(n, dtype=np.int64)
    todo = np.arange(n)
    out_lam = np.zeros((n, J))
    out_p = np.zeros_like(C)
    out_g = np.zeros(n)
    out_c = np.zeros(n, dtype=bool)
    out_s = np.zeros(n, dtype=bool)
    while todo.size:
        lam, p, it, gn, conv, st = _newton(
            A, B[todo], cur[todo, None] * C[todo], tol[todo], lam0=lam)
        total[todo] += it
        finished = ~conv | (cur[todo] >= eta[todo])
        rows = todo[finished]
        out_lam[rows], out_p[rows] = lam[finished], p[finished]
        out_g[rows], out_c[rows], out_s[rows] = gn[finished], conv[finished], st[finished]
        keep = ~finished
        todo = todo[keep]
        new = np.minimum(eta[todo], 2.0 * cur[todo])
        lam = lam[keep] * (new / cur[todo])[:, None]
        cur[todo] = new
    return out_lam, out_p, total, out_g, out_c, out_s


def _classify_failure(p, stalled, index):
    if np.min(p) < 1e-13:
        return NotStrictlyFeasible(
            "dual diverges: constraint vector is on the boundary of the "
            "feasible cone", index=index)
    if stalled:
        return NewtonStalled("Newton line search failed repeatedly", index=index)
    return NewtonStalled("Newton iteration limit reached", index=index)


def solve_entropic_batch(A, B, C, eta, direction, raise_on_failure=True,
                         cond_cap=COND_CAP, lam0=None):
    """Solve the entropic dual for a stack of (b, c) pairs.

    Parameters
    ----------
    A : (J, K) array
    B : (n, J) array
    C : (n, K) array
    eta : float or (n,) array
        Regularisation strength(s); larger means closer to the LP.
    direction : Direction
    raise_on_failure : bool
        If False, non-converged rows are flagged in ``converged`` instead of
        raising.
    lam0 : (n, J) array, optional
        Warm-start duals (``EntropicBatch.dual`` of a nearby problem).  Rows
        that fail from the warm start are re-solved from scratch.

    Returns
    -------
    EntropicBatch
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    direction = Direction(direction)
    n = B.shape[0]
    eta = np.broadcast_to(np.asarray(eta, dtype=np.float64), (n,)).copy()
    if np.any(eta <= 0):
        raise ValidationError("eta must be positive")
    tol = 1e-10 * (1.0 + np.abs(B).max(axis=1))
    SC = direction.sign * C
    if lam0 is None:
        lam, p, iters, gnorm, converged, stalled = _continuation(A, B, SC, eta, tol)
    else:
        lam, p, iters, gnorm, converged, stalled = _newton(
            A, B, eta[:, None] * SC, tol, lam0=lam0)
        redo = np.flatnonzero(~converged)
        if redo.size:
            out = _continuation(A, B[redo], SC[redo], eta[redo], tol[redo])
            for arr, new in zip((lam, p, iters, gnorm, converged, stalled), out):
                arr[redo] = new
    if raise_on_failure and not np.all(converged):
        i = int(np.flatnonzero(~converged)[0])
        raise _classify_failure(p[i], stalled[i], i)
    H = _hessian(A, p)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(H)
    bad = ~np.isfinite(cond) | (cond > cond_cap)
    if raise_on_failure and np.any(bad & converged):
        i = int(np.flatnonzero(bad & converged)[0])
        raise IllConditioned(f"dual Hessian condition number {cond[i]:.3g} exceeds cap",
                             index=i)
    Q = np.full_like(H, np.nan)
    okq = ~bad
    if np.any(okq):
        Q[okq] = np.linalg.inv(H[okq])
    value = np.einsum("nk,nk->n", C, p)
    return EntropicBatch(eta, direction, lam, p, value, Q, iters, gnorm, cond,
                         converged & okq)


def jacobian_products(A, batch: EntropicBatch, C, Vb=None, Vc=None, rows=None):
    """Directional sensitivities without forming full Jacobians.

    Returns ``<c, (dp/db) vb>`` and ``<c, (dp/dc) vc>`` per row.
    """
    P, Q = batch.primal, batch.Q
    if rows is not None:
        P, Q = P[rows], Q[rows]
    sign = batch.direction.sign
    eta = batch.eta if rows is None else batch.eta[rows]
    cp = C * P
    Acp = cp @ A.T  # (n, J)
    out_b = out_c = None
    if Vb is not None:
        out_b = _quad(Acp, Q, Vb)
    if Vc is not None:
        Apv = (P * Vc) @ A.T
        out_c = sign * eta * (np.einsum("nk,nk->n", cp, Vc)
                              - _quad(Acp, Q, Apv))
    return out_b, out_c


def jacobians(A, primal, eta, direction=Direction.UPPER):
    """Full Jacobians ``(dp/db, dp/dc)`` at an entropic primal solution.

    Returns arrays of shape (K, J) and (K, K).
    """
    A = np.asarray(A, dtype=np.float64)
    p = np.asarray(primal, dtype=np.float64)
    if np.any(p < 0):
        raise ValidationError("primal must be nonnegative")
    H = (A * p) @ A.T
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > COND_CAP:
        raise IllConditioned(f"dual Hessian condition number {cond:.3g} exceeds cap")
    Q = np.linalg.inv(H)
    DAt = p[:, None] * A.T
    jac_b = DAt @ Q
    proj = _weighted_null_projector(A, p)
    if proj is None:
        proj = np.diag(p) - DAt @ Q @ DAt.T
    jac_c = Direction(direction).sign * eta * proj
    return jac_b, jac_c


@functools.lru_cache(maxsize=64)
def _null_space_cached(key, shape):
    return scipy.linalg.null_space(np.frombuffer(key, dtype=np.float64).reshape(shape))


def _weighted_null_projector(A, p):
    """``D - D A'(A D A')^{-1} A D`` as ``Z (Z' D^{-1} Z)^{-1} Z'``.

    The two forms are equal for positive ``D = diag(p)``; the null-space form
    avoids the cancellation that limits the first to an absolute accuracy of
    about ``eps * max(p)``, which matters near a vertex where the true entries
    are far smaller.  Returns None when ``p`` has zeros.
    """
    if np.any(p <= 0):
        return None
    A = np.ascontiguousarray(A)
    Z = _null_space_cached(A.tobytes(), A.shape)
    if Z.shape[1] == 0:
        return np.zeros((p.size, p.size))
    w = 1.0 / np.sqrt(p)
    if not np.all(np.isfinite(w)):
        return None
    # rows sorted by weight keep Householder QR accurate on graded matrices
    order = np.argsort(-w)
    R = np.linalg.qr((w[:, None] * Z)[order], mode="r")
    Y = scipy.linalg.solve_triangular(R, Z.T, trans="T").T
    return Y @ Y.T


def is_strictly_feasible(A, b, margin=1e-12):
    """True if some ``p > 0`` satisfies ``A p = b``.

    Solves ``max t`` subject to ``A q + t A 1 = b``, ``q, t >= 0`` (with
    ``p = q + t 1``) and checks ``t* > margin``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    J, K = A.shape
    # An extra row t + s = tmax keeps the LP bounded.
    A_aug = np.hstack([A, A.sum(axis=1, keepdims=True)])
    bound_row = np.zeros((1, K + 2))
    bound_row[0, K] = 1.0
    bound_row[0, K + 1] = 1.0
    A_full = np.vstack([np.hstack([A_aug, np.zeros((J, 1))]), bound_row])
    tmax = 1.0 + np.abs(b).max()
    b_full = np.append(b, tmax)
    c = np.zeros(K + 2)
    c[K] = 1.0
    try:
        check_full_row_rank(A_full)
    except ValidationError:
        return False
    sol = solve_simplex_batch(A_full, b_full[None, :], c[None, :], Sense.MAXIMIZE)
    if sol.status[0] is not Status.OPTIMAL:
        return False
    return bool(sol.value[0] > margin * (1.0 + np.abs(b).max()))


def solve_entropic_dual(A, b, c, eta, direction, check_interior=True):
    """Solve one entropic conditional LP and return solution plus Jacobians.

    Raises
    ------
    NotStrictlyFeasible
        If ``b`` lies on the boundary of the feasible cone.
    NewtonStalled, IllConditioned
    """
    A = check_full_row_rank(A)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    direction = Direction(direction)
    if eta <= 0:
        raise ValidationError("eta must be positive")
    if check_interior and not is_strictly_feasible(A, b):
        raise NotStrictlyFeasible("constraint vector is not strictly feasible")
    batch = solve_entropic_batch(A, b[None, :], c[None, :], eta, direction)
    p = batch.primal[0]
    jac_b, jac_c = jacobians(A, p, eta, direction)
    return EntropicSolution(
        eta=float(eta),
        direction=direction,
        dual=direction.sign * batch.dual[0],
        primal=p,
        value=float(batch.value[0]),
        jac_b=jac_b,
        jac_c=jac_c,
        iterations=int(batch.iterations[0]),
        grad_norm=float(batch.grad_norm[0]),
    )


def _two_margin_matrix(L0, L1):
    """Standard-form system for a joint over (y0, y1) with y0 slowest."""
    K = L0 * L1
    rows = []
    y0 = np.repeat(np.arange(L0), L1)
    y1 = np.tile(np.arange(L1), L0)
    for level in range(1, L0):
        rows.append((y0 == level).astype(float))
    for level in range(1, L1):
        rows.append((y1 == level).astype(float))
    rows.append(np.ones(K))
    return np.array(rows)


def solve_sinkhorn(margins_row, margins_col, cost, eta, direction,
                   tol=1e-12, max_iter=10_000):
    """Entropic coupling of two margins by log-domain Sinkhorn scaling.

    The coupling ``P[y0, y1]`` is returned flattened with ``y0`` slowest,
    matching :func:`clpbounds.problems.build_joint_po` with ``M = 2``.  When
    every margin entry is positive a final Newton step on the equivalent
    standard-form dual polishes the solution and supplies the Jacobians;
    otherwise the Jacobians are ``None``.

    Raises
    ------
    MarginMismatch
        If margins are negative or their totals differ.
    """
    r = np.asarray(margins_row, dtype=np.float64)
    s = np.asarray(margins_col, dtype=np.float64)
    Cm = np.asarray(cost, dtype=np.float64)
    direction = Direction(direction)
    if Cm.shape != (r.size, s.size):
        raise ValidationError(f"cost must have shape {(r.size, s.size)}")
    if np.any(r < 0) or np.any(s < 0):
        raise MarginMismatch("margins must be nonnegative")
    if abs(r.sum() - s.sum()) > 1e-9 * max(1.0, r.sum()):
        raise MarginMismatch(f"margin totals differ: {r.sum()} vs {s.sum()}")
    if eta <= 0:
        raise ValidationError("eta must be positive")

    rows_on, cols_on = r > 0, s > 0
    rr, ss = r[rows_on], s[cols_on]
    logK = direction.sign * eta * Cm[np.ix_(rows_on, cols_on)]
    log_r, log_s = np.log(rr), np.log(ss)
    f = np.zeros(rr.size)
    g = np.zeros(ss.size)

    def lse(M, axis):
        m = M.max(axis=axis, keepdims=True)
        return (m + np.log(np.exp(M - m).sum(axis=axis, keepdims=True))).squeeze(axis)

    iterations = 0
    for iterations in range(1, max_iter + 1):
        f = log_r - lse(logK + g[None, :], axis=1)
        g = log_s - lse(logK + f[:, None], axis=0)
        logP = logK + f[:, None] + g[None, :]
        viol = np.abs(np.exp(logP).sum(axis=1) - rr).max()
        if viol <= tol:
            break
    P = np.zeros_like(Cm)
    P[np.ix_(rows_on, cols_on)] = np.exp(logK + f[:, None] + g[None, :])
    L0, L1 = Cm.shape
    A = _two_margin_matrix(L0, L1)
    b = _two_margin_b(r, s)
    if np.all(rows_on) and np.all(cols_on):
        # Map the scalings onto the standard-form dual and polish by Newton.
        lam = np.concatenate([f[1:] - f[0], g[1:] - g[0], [f[0] + g[0]]])
        S = direction.sign * eta * Cm.ravel()
        tol_n = 1e-10 * (1.0 + np.abs(b).max())
        lam_b, p_b, it, gn, conv, _ = _newton(
            A, _two_margin_b(r, s)[None, :], S[None, :], tol_n,
            lam0=lam[None, :])
        p = p_b[0]
        jac_b, jac_c = jacobians(A, p, eta, direction)
        return EntropicSolution(
            eta=float(eta), direction=direction, dual=direction.sign * lam_b[0],
            primal=p, value=float(Cm.ravel() @ p), jac_b=jac_b, jac_c=jac_c,
            iterations=iterations + int(it[0]), grad_norm=float(gn[0]))
    p = P.ravel()
    return EntropicSolution(
        eta=float(eta), direction=direction, dual=np.full(A.shape[0], np.nan),
        primal=p, value=float(Cm.ravel() @ p), jac_b=None, jac_c=None,
        iterations=iterations, grad_norm=float(np.abs(A @ p - b).max()))


def _two_margin_b(r, s):
    """Constraint vector of the two-margin system for margins ``r`` and ``s``."""
    return np.concatenate([r[1:], s[1:], [r.sum()]])


def eta_schedule(n, mode="log", kappa=2.0, value=None):
    """Regularisation strength as a function of sample size.

    ``mode`` is ``"log"`` (kappa log n), ``"sqrt"`` (kappa sqrt n) or
    ``"fixed"`` (``value``).
    """
    if n < 2:
        raise ValidationError("sample size must be at least 2")
    if mode == "log":
        return kappa * math.log(n)
    if mode == "sqrt":
        return kappa * math.sqrt(n)
    if mode == "fixed":
        if value is None or value <= 0:
            raise ValidationError("fixed schedule needs a positive value")
        return float(value)
    raise ValidationError(f"unknown eta schedule {mode!r}")


def logsumexp_batch(A, B, C, xi, direction):
    """Soft max/min over feasible bases, with gradients in ``b`` and ``c``.

    Returns ``(value, grad_b, grad_c, n_bases)`` where the value is
    ``(1/xi) log sum_B exp(xi <c, A_B^{-1} b>)`` for the upper direction
    (``-(1/xi) log sum exp(-xi ...)`` for the lower) over feasible bases.
    """
    direction = Direction(direction)
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    n = B.shape[0]
    xi = np.broadcast_to(np.asarray(xi, dtype=np.float64), (n,))
    bases, pB, values, feasible = basis_values(A, B, C)
    sgn = direction.sign
    z = np.where(feasible, sgn * xi[:, None] * values, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    if np.any(~np.isfinite(zmax)):
        raise ValidationError("no feasible basis for some observation")
    w = np.exp(z - zmax)
    tot = w.sum(axis=1, keepdims=True)
    value = sgn * (zmax[:, 0] + np.log(tot[:, 0])) / xi
    w = w / tot
    # d value / d c: softmax-weighted basic solutions scattered to length K.
    K = C.shape[1]
    grad_c = np.zeros((n, K))
    for col in range(bases.shape[1]):
        np.add.at(grad_c.T, bases[:, col], (w * pB[:, :, col]).T)
    # d value / d b: softmax-weighted rows c_B' A_B^{-1}.
    _, inverses = enumerate_bases(A)
    cB = C[:, bases]
    yB = np.einsum("nbi,bij->nbj", cB, inverses)
    grad_b = np.einsum("nb,nbj->nj", w, yB)
    return value, grad_b, grad_c, feasible.sum(axis=1)


def logsumexp_bound(A, b, c, xi, direction):
    """Log-sum-exp smoothing of the LP optimum over all feasible bases."""
    value, _, _, _ = logsumexp_batch(A, np.asarray(b)[None, :],
                                     np.asarray(c)[None, :], xi, direction)
    return float(value[0])
