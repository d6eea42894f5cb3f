"""Constraint systems, objectives and de-biasing functions.

Two settings are supported:

* joint potential outcomes: cells are ``(y_0, ..., y_{M-1})`` in mixed-radix
  order with ``y_0`` slowest; rows are the margins of each arm (levels
  ``1..L-1``, grouped by arm) followed by a sum-to-one row.
* binary instrument and binary treatment: cells are ``(y_0, y_1, d_0, d_1)``
  in the same order; rows are ``P(Y=y, D=d | Z=z)`` for ``y = 1..L-1`` over
  ``(d, z)`` followed by the sum-to-one row.

All per-observation quantities are computed for a whole sample at once and
returned as ``(n, J)`` / ``(n, K)`` arrays.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import (
    InvalidLambdaUtility,
    PropensityUnderflow,
    SizeCap,
    ValidationError,
)
from .lp import check_full_row_rank

__all__ = [
    "Setting",
    "ObservedData",
    "NuisanceModel",
    "UtilitySpec",
    "utility_preset",
    "LPBatch",
    "ProblemSpec",
    "NotOptimallyTreated",
    "OracleBest",
    "ATE",
    "CellProbability",
    "PowerLawRegret",
    "Compliers",
    "NotOptimalUnderZ",
    "build_joint_po",
    "build_iv",
    "joint_po_b_and_phi",
    "joint_po_c_and_phi",
    "iv_b_and_phi",
    "iv_c_and_phi",
    "power_law_cells",
    "power_law_cells_dpi",
    "clip_probabilities",
    "CLIP_FLOOR",
    "MAX_CELLS",
]

CLIP_FLOOR = 1e-6
MAX_CELLS = 2**20


class Setting(str, enum.Enum):
    JOINT_PO = "joint-po"
    IV = "iv"
    POLICY_REGRET = "policy-regret"


# ---------------------------------------------------------------------------
# data containers


@dataclass
class ObservedData:
    """Observed sample.

    Parameters
    ----------
    x : (n, p) array
        Covariates.
    d : (n,) int array
        Treatment arm in ``0..M-1``.
    y : (n,) int array
        Outcome level in ``0..L-1``.
    z : (n,) int array, optional
        Binary instrument (instrumental-variable setting only).
    """

    x: np.ndarray
    d: np.ndarray
    y: np.ndarray
    z: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.d = np.asarray(self.d).astype(np.int64)
        self.y = np.asarray(self.y).astype(np.int64)
        n = self.x.shape[0]
        if self.d.shape != (n,) or self.y.shape != (n,):
            raise ValidationError("x, d and y must have the same length")
        if self.z is not None:
            self.z = np.asarray(self.z).astype(np.int64)
            if self.z.shape != (n,):
                raise ValidationError("z must have the same length as x")
            if np.any((self.z != 0) & (self.z != 1)):
                raise ValidationError("z must be binary")
        if not np.all(np.isfinite(self.x)):
            raise ValidationError("covariates contain NaN or infinity")

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx):
        return ObservedData(self.x[idx], self.d[idx], self.y[idx],
                            None if self.z is None else self.z[idx])


def clip_probabilities(p, floor=CLIP_FLOOR, axis=-1):
    """Floor probability vectors at ``floor`` and renormalise.

    Rows already above the floor are returned unchanged; other rows become
    ``(1 - m floor) p + floor`` (``m`` the vector length), which keeps the sum
    at one and every entry at or above the floor.
    """
    p = np.asarray(p, dtype=np.float64)
    p = np.moveaxis(p, axis, -1)
    m = p.shape[-1]
    if floor * m >= 1:
        raise ValidationError("clip floor too large for vector length")
    low = p.min(axis=-1, keepdims=True) < floor
    q = p / p.sum(axis=-1, keepdims=True)
    q = np.where(low, (1.0 - m * floor) * q + floor, p)
    return np.moveaxis(q, -1, axis)


def _check_simplex(p, name, axis=-1):
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValidationError(f"{name} contains NaN or infinity")
    if np.any(p < 0):
        raise ValidationError(f"{name} has negative entries")
    s = p.sum(axis=axis)
    bad = np.abs(s - 1.0) > 1e-8
    if np.any(bad):
        i = int(np.flatnonzero(bad.reshape(bad.shape[0], -1).any(axis=1))[0])
        raise ValidationError(f"{name} does not sum to one at row {i}")
    return p


@dataclass
class NuisanceModel:
    """Per-observation nuisance estimates.

    Parameters
    ----------
    outcome_probs : (n, M, L) array, optional
        ``m_l(d, x_i) = P(Y = l | D = d, X = x_i)``.
    propensity : (n, A) array
        Treatment propensity ``e(d, x_i)`` (joint potential outcomes) or
        instrument propensity ``P(Z = z | x_i)`` (instrumental variables).
    joint_given_instrument : (n, 2, 2, L) array, optional
        ``P(Y = y, D = d | Z = z, x_i)`` indexed ``[i, z, d, y]``.
    clip_floor : float
        Probabilities are floored at this value when ``clip`` is True.
    clip : bool
        If False, vectors are validated but not floored; builders then raise
        :class:`PropensityUnderflow` on propensities below ``clip_floor``.
    """

    propensity: np.ndarray
    outcome_probs: Optional[np.ndarray] = None
    joint_given_instrument: Optional[np.ndarray] = None
    clip_floor: float = CLIP_FLOOR
    clip: bool = True

    def __post_init__(self):
        self.propensity = _check_simplex(self.propensity, "propensity")
        if self.clip:
            self.propensity = clip_probabilities(self.propensity, self.clip_floor)
        if self.outcome_probs is not None:
            m = _check_simplex(self.outcome_probs, "outcome_probs")
            if m.ndim != 3:
                raise ValidationError("outcome_probs must have shape (n, M, L)")
            self.outcome_probs = clip_probabilities(m, self.clip_floor) if self.clip else m
        if self.joint_given_instrument is not None:
            j = np.asarray(self.joint_given_instrument, dtype=np.float64)
            if j.ndim != 4 or j.shape[1:3] != (2, 2):
                raise ValidationError(
                    "joint_given_instrument must have shape (n, 2, 2, L)")
            n, _, _, L = j.shape
            flat = _check_simplex(j.reshape(n, 2, 2 * L), "joint_given_instrument")
            if self.clip:
                flat = clip_probabilities(flat, self.clip_floor)
            self.joint_given_instrument = flat.reshape(n, 2, 2, L)

    @property
    def n(self):
        return self.propensity.shape[0]

    @property
    def treatment_given_instrument(self):
        """``P(D = d | Z = z, x_i)`` indexed ``[i, z, d]``."""
        if self.joint_given_instrument is None:
            return None
        return self.joint_given_instrument.sum(axis=3)

    def subset(self, idx):
        return NuisanceModel(
            propensity=self.propensity[idx],
            outcome_probs=None if self.outcome_probs is None else self.outcome_probs[idx],
            joint_given_instrument=(None if self.joint_given_instrument is None
                                    else self.joint_given_instrument[idx]),
            clip_floor=self.clip_floor,
            clip=False,
        )

    @staticmethod
    def concatenate(parts, order):
        """Stack per-fold nuisances and reorder rows to original positions."""
        inv = np.empty_like(order)
        inv[order] = np.arange(order.size)

        def cat(attr):
            vals = [getattr(p, attr) for p in parts]
            if vals[0] is None:
                return None
            return np.concatenate(vals, axis=0)[inv]

        return NuisanceModel(
            propensity=cat("propensity"),
            outcome_probs=cat("outcome_probs"),
            joint_given_instrument=cat("joint_given_instrument"),
            clip_floor=parts[0].clip_floor,
            clip=False,
        )


# ---------------------------------------------------------------------------
# utilities for the power-law regret


@dataclass(frozen=True)
class UtilitySpec:
    """Utility of each outcome level and the power-law parameter."""

    u: tuple
    lam: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        object.__setattr__(self, "u", tuple(float(v) for v in u))
        if u.ndim != 1 or u.size < 2:
            raise ValidationError("utility needs at least two levels")
        if np.any(u < 0) or not np.all(np.isfinite(u)):
            raise ValidationError("utilities must be finite and nonnegative")
        if self.lam <= 0 and np.any(u <= 0):
            raise InvalidLambdaUtility(
                f"lambda={self.lam} requires strictly positive utilities")

    @property
    def values(self):
        return np.asarray(self.u)


_PRESETS = {
    # u(y) = (L - 1) - y: fewer adverse events is better.
    "reverse": lambda L: (L - 1) - np.arange(L, dtype=float),
    "reverse_shifted": lambda L: L - np.arange(L, dtype=float),
    "identity": lambda L: np.arange(L, dtype=float),
    "identity_shifted": lambda L: np.arange(L, dtype=float) + 1.0,
}


def utility_preset(name, L, lam):
    """Build a :class:`UtilitySpec` from a named preset.

    ``reverse`` and ``identity`` contain a zero utility and are rejected for
    ``lam <= 0``; the ``_shifted`` variants add one to every level.
    """
    if name not in _PRESETS:
        raise ValidationError(f"unknown utility preset {name!r}; "
                              f"choose from {sorted(_PRESETS)}")
    return UtilitySpec(tuple(_PRESETS[name](L)), float(lam))


def _power(a, lam):
    """``(a**lam - 1) / lam`` with the log limit at ``lam = 0``."""
    with np.errstate(divide="ignore"):
        la = np.log(a)
    if lam == 0:
        return la
    return np.expm1(lam * la) / lam


def power_law_cells(u0, u1, pi, lam):
    """Regret contribution of each cell for treatment probability ``pi``."""
    best = np.maximum(u0, u1)
    mix = u0 + pi * (u1 - u0)
    with np.errstate(invalid="ignore"):
        out = _power(best, lam) - _power(mix, lam)
    return np.where(best == mix, 0.0, out)


def power_law_cells_dpi(u0, u1, pi, lam):
    """Derivative of :func:`power_law_cells` with respect to ``pi``."""
    mix = u0 + pi * (u1 - u0)
    diff = u1 - u0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.power(mix, lam - 1.0) * diff
    return np.where(diff == 0, 0.0, out)


# ---------------------------------------------------------------------------
# objectives


@dataclass(frozen=True)
class NotOptimallyTreated:
    """Share of units whose realised arm is not among the best arms."""

    known_c = False


@dataclass(frozen=True)
class OracleBest:
    """Mean outcome under the oracle rule ``max_d y_d``.

    ``values`` maps levels to outcome values (default: the level index).
    """

    values: Optional[tuple] = None
    known_c = True


@dataclass(frozen=True)
class ATE:
    """``E[y_d - y_ref]`` (point identified from the margins)."""

    d: int = 1
    d_ref: int = 0
    values: Optional[tuple] = None
    known_c = True


@dataclass(frozen=True)
class CellProbability:
    """Probability of a single cell of the joint distribution."""

    cell: int = 0
    known_c = True


@dataclass(frozen=True)
class PowerLawRegret:
    """Power-law regret of a binary policy relative to the oracle rule."""

    utility: UtilitySpec
    known_c = True


@dataclass(frozen=True)
class Compliers:
    """Share of compliers ``d_0 < d_1`` (instrumental variables)."""

    known_c = True


@dataclass(frozen=True)
class NotOptimalUnderZ:
    """Share not optimally treated under instrument level ``z``."""

    z: int = 1
    known_c = False


# ---------------------------------------------------------------------------
# builders


def build_joint_po(M, L):
    """Constraint matrix for a joint distribution of ``M`` potential outcomes.

    Returns
    -------
    A : (J, K) array with ``J = (L - 1) M + 1`` and ``K = L**M``
    label_map : (K, M) int array of cell coordinates
    """
    if M < 2 or L < 2:
        raise ValidationError("need M >= 2 and L >= 2")
    if L**M > MAX_CELLS:
        raise SizeCap(f"L**M = {L**M} exceeds {MAX_CELLS}")
    cells = np.array(list(itertools.product(range(L), repeat=M)), dtype=np.int64)
    rows = [(cells[:, d] == level).astype(float)
            for d in range(M) for level in range(1, L)]
    rows.append(np.ones(L**M))
    return np.array(rows), cells


def build_iv(L, full_margins=False):
    """Constraint matrix for binary instrument and binary treatment.

    Cells are ``(y_0, y_1, d_0, d_1)``.  The default system has one row per
    ``(y, d, z)`` with ``y = 1..L-1`` plus the sum-to-one row, so
    ``J = 4(L - 1) + 1``.  That system does not pin down ``P(D = d | Z = z)``;
    ``full_margins=True`` adds the rows ``(y = 0, d = 1, z)`` and gives the
    complete ``4L - 1`` constraints implied by the observed distribution.

    Returns
    -------
    A : (J, 4 L**2) array
    label_map : (K, 4) int array
    """
    if L < 2:
        raise ValidationError("need L >= 2")
    if 4 * L * L > MAX_CELLS:
        raise SizeCap(f"4 L**2 = {4 * L * L} exceeds {MAX_CELLS}")
    cells = np.array(list(itertools.product(range(L), range(L), (0, 1), (0, 1))),
                     dtype=np.int64)
    rows = []
    for (level, d, z) in _iv_row_labels(L, full_margins):
        dz = cells[:, 2 + z]
        yd = cells[:, d]
        rows.append(((dz == d) & (yd == level)).astype(float))
    rows.append(np.ones(cells.shape[0]))
    return np.array(rows), cells


def _iv_row_labels(L, full_margins=False):
    labels = [(level, d, z) for d in (0, 1) for z in (0, 1) for level in range(1, L)]
    if full_margins:
        labels += [(0, 1, z) for z in (0, 1)]
    return labels


# ---------------------------------------------------------------------------
# constraint vectors and de-biasing


def _check_propensity(e, floor, what):
    if np.any(e < floor):
        i = int(np.flatnonzero((e < floor).any(axis=-1) if e.ndim > 1 else e < floor)[0])
        raise PropensityUnderflow(f"{what} below {floor} at row {i}")


def joint_po_b_and_phi(nuisance: NuisanceModel, data: ObservedData, L=None):
    """Margins ``b`` and inverse-propensity-weighted residuals ``phi_b``.

    Returns
    -------
    B, phi_B : (n, (L - 1) M + 1) arrays
    """
    m = nuisance.outcome_probs
    if m is None:
        raise ValidationError("outcome_probs required for the joint setting")
    n, M, Lm = m.shape
    if L is not None and L != Lm:
        raise ValidationError(f"outcome_probs has {Lm} levels, expected {L}")
    e = nuisance.propensity
    if e.shape != (n, M):
        raise ValidationError(f"propensity must have shape {(n, M)}")
    _check_propensity(e, nuisance.clip_floor, "propensity")
    if len(data) != n:
        raise ValidationError("nuisance and data lengths differ")
    if np.any((data.d < 0) | (data.d >= M)) or np.any((data.y < 0) | (data.y >= Lm)):
        raise ValidationError("d or y out of range")
    B = np.ones((n, (Lm - 1) * M + 1))
    B[:, :-1] = m[:, :, 1:].reshape(n, -1)
    rows = np.arange(n)
    weight = 1.0 / e[rows, data.d]  # (n,)
    hit = (data.y[:, None] == np.arange(1, Lm)).astype(float)
    resid = hit - m[rows, data.d, 1:]  # (n, L-1)
    phi = np.zeros_like(B)
    block = np.zeros((n, M, Lm - 1))
    block[rows, data.d] = weight[:, None] * resid
    phi[:, :-1] = block.reshape(n, -1)
    return B, phi


def _levels(values, L):
    if values is None:
        return np.arange(L, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.shape != (L,):
        raise ValidationError(f"values must have length {L}")
    return v


def _not_optimal_indicator(cells, M):
    """``1{y_d < max y}`` for each cell and arm, shape (K, M)."""
    ys = cells[:, :M]
    return (ys < ys.max(axis=1, keepdims=True)).astype(float)


def joint_po_c_and_phi(kind, nuisance: NuisanceModel, data: ObservedData,
                       cells, pi=None):
    """Objective vectors and their de-biasing functions.

    Parameters
    ----------
    kind : objective dataclass
    cells : (K, M) label map from :func:`build_joint_po`
    pi : (n,) array, optional
        Treatment probabilities (power-law regret only).

    Returns
    -------
    C, phi_C : (n, K) arrays
    """
    n = len(data)
    K, M = cells.shape
    L = int(cells.max()) + 1
    if isinstance(kind, NotOptimallyTreated):
        e = nuisance.propensity
        _check_propensity(e, nuisance.clip_floor, "propensity")
        ind = _not_optimal_indicator(cells, M)  # (K, M)
        C = e @ ind.T
        onehot = np.zeros((n, M))
        onehot[np.arange(n), data.d] = 1.0
        return C, (onehot - e) @ ind.T
    if isinstance(kind, OracleBest):
        v = _levels(kind.values, L)
        c = v[cells].max(axis=1)
    elif isinstance(kind, ATE):
        if not (0 <= kind.d < M and 0 <= kind.d_ref < M):
            raise ValidationError("ATE arms out of range")
        v = _levels(kind.values, L)
        c = v[cells[:, kind.d]] - v[cells[:, kind.d_ref]]
    elif isinstance(kind, CellProbability):
        if not 0 <= kind.cell < K:
            raise ValidationError("cell index out of range")
        c = np.zeros(K)
        c[kind.cell] = 1.0
    elif isinstance(kind, PowerLawRegret):
        if M != 2:
            raise ValidationError("power-law regret needs binary treatment")
        u = kind.utility.values
        if u.size != L:
            raise ValidationError(f"utility has {u.size} levels, expected {L}")
        if pi is None:
            raise ValidationError("power-law regret needs policy values pi")
        pi = np.asarray(pi, dtype=float)
        if pi.shape != (n,) or np.any((pi < 0) | (pi > 1)):
            raise ValidationError("pi must be a length-n vector in [0, 1]")
        u0, u1 = u[cells[:, 0]], u[cells[:, 1]]
        C = power_law_cells(u0[None, :], u1[None, :], pi[:, None], kind.utility.lam)
        return C, np.zeros_like(C)
    else:
        raise ValidationError(f"objective {kind!r} not available in the joint setting")
    C = np.broadcast_to(c, (n, K)).copy()
    return C, np.zeros_like(C)


def iv_b_and_phi(nuisance: NuisanceModel, data: ObservedData, full_margins=False):
    """Observed joint probabilities given the instrument and their residuals."""
    jz = nuisance.joint_given_instrument
    if jz is None:
        raise ValidationError("joint_given_instrument required for the IV setting")
    if data.z is None:
        raise ValidationError("IV setting requires an instrument column z")
    n, _, _, L = jz.shape
    e = nuisance.propensity
    if e.shape != (n, 2):
        raise ValidationError("instrument propensity must have shape (n, 2)")
    _check_propensity(e, nuisance.clip_floor, "instrument propensity")
    if np.any((data.d < 0) | (data.d > 1)) or np.any((data.y < 0) | (data.y >= L)):
        raise ValidationError("d or y out of range")
    labels = _iv_row_labels(L, full_margins)
    lv = np.array([lab[0] for lab in labels])
    dv = np.array([lab[1] for lab in labels])
    zv = np.array([lab[2] for lab in labels])
    B = np.ones((n, len(labels) + 1))
    B[:, :-1] = jz[:, zv, dv, lv]
    hit = ((data.y[:, None] == lv) & (data.d[:, None] == dv)).astype(float)
    wz = (data.z[:, None] == zv) / e[:, zv]
    phi = np.zeros_like(B)
    phi[:, :-1] = wz * (hit - B[:, :-1])
    return B, phi


def iv_c_and_phi(kind, nuisance: NuisanceModel, data: ObservedData, cells):
    """Objective vectors for the instrumental-variable setting."""
    n = len(data)
    K = cells.shape[0]
    L = int(cells[:, :2].max()) + 1
    if isinstance(kind, ATE):
        v = _levels(kind.values, L)
        if {kind.d, kind.d_ref} - {0, 1}:
            raise ValidationError("ATE arms must be 0 or 1")
        c = v[cells[:, kind.d]] - v[cells[:, kind.d_ref]]
    elif isinstance(kind, Compliers):
        c = ((cells[:, 2] == 0) & (cells[:, 3] == 1)).astype(float)
    elif isinstance(kind, CellProbability):
        c = np.zeros(K)
        c[kind.cell] = 1.0
    elif isinstance(kind, NotOptimalUnderZ):
        if kind.z not in (0, 1):
            raise ValidationError("z must be 0 or 1")
        e = nuisance.propensity
        _check_propensity(e, nuisance.clip_floor, "instrument propensity")
        pdz = nuisance.treatment_given_instrument[:, kind.z, :]  # (n, 2)
        ind = _not_optimal_indicator(cells, 2)
        C = pdz @ ind.T
        onehot = np.zeros((n, 2))
        onehot[np.arange(n), data.d] = 1.0
        w = (data.z == kind.z) / e[:, kind.z]
        return C, (w[:, None] * (onehot - pdz)) @ ind.T
    else:
        raise ValidationError(f"objective {kind!r} not available in the IV setting")
    C = np.broadcast_to(c, (n, K)).copy()
    return C, np.zeros_like(C)


# ---------------------------------------------------------------------------
# problem specification


@dataclass
class LPBatch:
    """Stacked conditional LP data for a sample."""

    B: np.ndarray
    phi_B: np.ndarray
    C: np.ndarray
    phi_C: np.ndarray

    def __len__(self):
        return self.B.shape[0]

    def subset(self, idx):
        return LPBatch(self.B[idx], self.phi_B[idx], self.C[idx], self.phi_C[idx])


@dataclass
class ProblemSpec:
    """A setting, its constraint matrix and an objective.

    Use :meth:`joint_po` or :meth:`iv` to construct.
    """

    setting: Setting
    A: np.ndarray
    label_map: np.ndarray
    M: int
    L: int
    objective: object
    full_margins: bool = False
    metadata: dict = field(default_factory=dict)

    @classmethod
    def joint_po(cls, M, L, objective):
        A, cells = build_joint_po(M, L)
        setting = (Setting.POLICY_REGRET if isinstance(objective, PowerLawRegret)
                   else Setting.JOINT_PO)
        return cls(setting, check_full_row_rank(A), cells, M, L, objective)

    @classmethod
    def iv(cls, L, objective, full_margins=False):
        A, cells = build_iv(L, full_margins)
        return cls(Setting.IV, check_full_row_rank(A), cells, 2, L, objective,
                   full_margins)

    @property
    def J(self):
        return self.A.shape[0]

    @property
    def K(self):
        return self.A.shape[1]

    def with_objective(self, objective):
        return ProblemSpec(self.setting, self.A, self.label_map, self.M, self.L,
                           objective, self.full_margins, dict(self.metadata))

    def constraints(self, data, nuisance):
        if self.setting is Setting.IV:
            return iv_b_and_phi(nuisance, data, self.full_margins)
        return joint_po_b_and_phi(nuisance, data, self.L)

    def objectives(self, data, nuisance, pi=None):
        if self.setting is Setting.IV:
            return iv_c_and_phi(self.objective, nuisance, data, self.label_map)
        return joint_po_c_and_phi(self.objective, nuisance, data, self.label_map, pi)

    def evaluate(self, data, nuisance, pi=None):
        """Build ``b``, ``phi_b``, ``c`` and ``phi_c`` for every observation."""
        if len(data) != nuisance.n:
            raise ValidationError("nuisance and data lengths differ")
        B, phiB = self.constraints(data, nuisance)
        C, phiC = self.objectives(data, nuisance, pi)
        return LPBatch(B, phiB, C, phiC)

    # single-observation accessors
    def b_of(self, data, nuisance, i):
        return self.evaluate(data.subset([i]), nuisance.subset([i])).B[0]

    def c_of(self, data, nuisance, i, pi=None):
        pi_i = None if pi is None else np.asarray(pi)[[i]]
        return self.evaluate(data.subset([i]), nuisance.subset([i]), pi_i).C[0]

    def phi_b_of(self, data, nuisance, i):
        return self.evaluate(data.subset([i]), nuisance.subset([i])).phi_B[0]

    def phi_c_of(self, data, nuisance, i, pi=None):
        pi_i = None if pi is None else np.asarray(pi)[[i]]
        return self.evaluate(data.subset([i]), nuisance.subset([i]), pi_i).phi_C[0]
