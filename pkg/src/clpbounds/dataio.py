"""CSV ingestion, schema validation and bundled example datasets.

Schemas
-------
joint-po
    ``x_*`` covariate columns, ``d`` (arm in ``0..M-1``), ``y`` (level in
    ``0..L-1``); optional plug-in nuisances ``m_{d}_{level}`` (outcome
    probabilities, one block of ``L`` columns per arm) and ``e_{d}``
    (propensities).
iv
    As above plus a binary ``z``; optional plug-in nuisances ``ez_{z}``
    (instrument propensity) and ``pzd_{z}_{d}_{y}`` (joint probability of
    ``(D, Y)`` given ``Z = z``).

Plug-in columns must be all present or all absent.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from .exceptions import ValidationError
from .problems import NuisanceModel, ObservedData

__all__ = [
    "BUNDLED",
    "TableSchema",
    "bundled_path",
    "nuisance_columns",
    "read_table",
    "validate_schema",
    "write_table",
]

BUNDLED = {
    "joint_po_200": "joint_po_200.csv",
    "harmful_effect": "harmful_effect.csv",
}

_X = re.compile(r"^x_\w+$")


@dataclass
class TableSchema:
    """Column layout resolved from a CSV header."""

    setting: str
    x_columns: list
    n_levels: int
    n_arms: int
    has_plugin: bool


def nuisance_columns(setting, n_levels, n_arms=2):
    """Names of the plug-in nuisance columns for a setting."""
    if setting == "joint-po":
        m = [f"m_{d}_{l}" for d in range(n_arms) for l in range(n_levels)]
        return m + [f"e_{d}" for d in range(n_arms)]
    if setting == "iv":
        p = [f"pzd_{z}_{d}_{y}" for z in (0, 1) for d in (0, 1) for y in range(n_levels)]
        return p + ["ez_0", "ez_1"]
    raise ValidationError(f"unknown setting {setting!r}")


def validate_schema(header, setting, n_levels, n_arms=2) -> TableSchema:
    """Check a CSV header against a setting and return the resolved schema.

    Raises
    ------
    ValidationError
        On missing required columns, a partial set of nuisance columns or
        unrecognised columns.
    """
    header = list(header)
    if len(set(header)) != len(header):
        raise ValidationError("duplicate column names")
    if setting == "iv" and n_arms != 2:
        raise ValidationError("the iv setting has two arms")
    x_cols = [h for h in header if _X.match(h)]
    if not x_cols:
        raise ValidationError("no covariate columns (expected x_*)")
    required = ["d", "y"] + (["z"] if setting == "iv" else [])
    missing = [c for c in required if c not in header]
    if missing:
        raise ValidationError(f"missing required columns for {setting}: {missing}")
    plugin = nuisance_columns(setting, n_levels, n_arms)
    present = [c for c in plugin if c in header]
    if present and len(present) != len(plugin):
        absent = [c for c in plugin if c not in header]
        raise ValidationError(f"incomplete nuisance columns; missing {absent[:5]}")
    known = set(x_cols) | set(required) | set(plugin)
    extra = [h for h in header if h not in known]
    if extra:
        raise ValidationError(f"unrecognised columns for {setting} with "
                              f"L={n_levels}: {extra[:5]}")
    return TableSchema(setting, x_cols, n_levels, n_arms, bool(present))


def _parse(rows, header, path):
    try:
        arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from None
    if arr.size == 0:
        raise ValidationError(f"{path}: no data rows")
    if arr.shape[1] != len(header):
        raise ValidationError(f"{path}: ragged rows")
    return arr


def _integer_column(values, name, upper):
    if np.any(values != np.round(values)):
        i = int(np.flatnonzero(values != np.round(values))[0])
        raise ValidationError(f"column {name} is not integer at row {i}")
    v = values.astype(np.int64)
    bad = (v < 0) | (v >= upper)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"column {name} out of range 0..{upper - 1} at row {i}")
    return v


def read_table(path, setting, n_levels, n_arms=2, clip_floor=1e-6):
    """Read a CSV file into data and (if present) plug-in nuisances.

    Returns
    -------
    data : ObservedData
    nuisance : NuisanceModel or None
    schema : TableSchema

    Raises
    ------
    OSError
        If the file cannot be read.
    ValidationError
        On schema or value errors; messages carry the offending row index.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    schema = validate_schema(header, setting, n_levels, n_arms)
    arr = _parse(rows, header, path)
    col = {h: arr[:, j] for j, h in enumerate(header)}
    x = np.column_stack([col[h] for h in schema.x_columns])
    d = _integer_column(col["d"], "d", n_arms)
    y = _integer_column(col["y"], "y", n_levels)
    z = _integer_column(col["z"], "z", 2) if setting == "iv" else None
    data = ObservedData(x, d, y, z)
    nuisance = None
    if schema.has_plugin:
        nuisance = _plugin_nuisance(col, setting, n_levels, n_arms, clip_floor)
    return data, nuisance, schema


def _plugin_nuisance(col, setting, L, M, clip_floor):
    if setting == "joint-po":
        e = np.column_stack([col[f"e_{d}"] for d in range(M)])
        m = np.stack([np.column_stack([col[f"m_{d}_{l}"] for l in range(L)])
                      for d in range(M)], axis=1)
        return NuisanceModel(e, outcome_probs=m, clip_floor=clip_floor)
    e = np.column_stack([col["ez_0"], col["ez_1"]])
    j = np.stack([
        np.stack([np.column_stack([col[f"pzd_{z}_{d}_{y}"] for y in range(L)])
                  for d in (0, 1)], axis=1)
        for z in (0, 1)], axis=1)
    return NuisanceModel(e, joint_given_instrument=j, clip_floor=clip_floor)


def write_table(path, data: ObservedData, nuisance: Optional[NuisanceModel] = None,
                n_levels=None, n_arms=2, fmt="%.17g"):
    """Write data (and optional plug-in nuisances) in the CSV schema."""
    setting = "iv" if data.z is not None else "joint-po"
    cols = {f"x_{k + 1}": data.x[:, k] for k in range(data.x.shape[1])}
    cols["d"] = data.d
    cols["y"] = data.y
    if data.z is not None:
        cols["z"] = data.z
    if nuisance is not None:
        if setting == "joint-po":
            m = nuisance.outcome_probs
            L = m.shape[2]
            for d in range(m.shape[1]):
                for l in range(L):
                    cols[f"m_{d}_{l}"] = m[:, d, l]
            for d in range(nuisance.propensity.shape[1]):
                cols[f"e_{d}"] = nuisance.propensity[:, d]
        else:
            j = nuisance.joint_given_instrument
            for z in (0, 1):
                for d in (0, 1):
                    for y in range(j.shape[3]):
                        cols[f"pzd_{z}_{d}_{y}"] = j[:, z, d, y]
            cols["ez_0"] = nuisance.propensity[:, 0]
            cols["ez_1"] = nuisance.propensity[:, 1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(cols))
        for i in range(len(data)):
            w.writerow([_cell(cols[k][i], fmt) for k in cols])


def _cell(v, fmt):
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return fmt % float(v)


def bundled_path(name):
    """Filesystem path of a bundled dataset (``joint_po_200`` or ``harmful_effect``)."""
    if name not in BUNDLED:
        raise ValidationError(f"unknown bundled dataset {name!r}; "
                              f"choose from {sorted(BUNDLED)}")
    return resources.files("clpbounds") / "data" / BUNDLED[name]
