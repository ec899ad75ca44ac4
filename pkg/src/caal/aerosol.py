"""Aerosol mixing-state index and black-carbon coating volume ratio."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError, SchemaError

# Species groupings for the chemical and optical indices.
CHEMICAL_SPECIES = ("BC", "SO4", "NO3", "NH4", "OA")
GROUPINGS = {
    "chemical": [["BC"], ["SO4"], ["NO3"], ["NH4"], ["OA"]],
    "optical": [["BC"], ["SO4", "NO3", "NH4", "OA"]],
}


@dataclass
class ChiResult:
    chi: float
    D_alpha: float
    D_gamma: float
    H_alpha: float
    H_gamma: float
    per_particle_H: np.ndarray
    degenerate: bool = False


def _entropy_rows(fractions):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(fractions > 0, fractions * np.log(fractions), 0.0)
    return -terms.sum(axis=-1)


def mixing_state_index(masses) -> ChiResult:
    """Mixing-state index chi = (D_alpha - 1) / (D_gamma - 1).

    ``masses`` is (particles x species). A population whose bulk holds a
    single species has D_gamma = 1; chi is reported as 1 with
    ``degenerate=True``.
    """
    m = np.asarray(masses, dtype=float)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DomainError(f"mass matrix must be 2-D and non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("non-finite particle mass")
    if np.any(m < 0):
        raise DomainError("negative particle mass")
    row_mass = m.sum(axis=1)
    if np.any(row_mass <= 0):
        raise DomainError("every particle needs positive total mass")
    p_ia = m / row_mass[:, None]
    H_i = _entropy_rows(p_ia)
    p_i = row_mass / row_mass.sum()
    H_alpha = float(p_i @ H_i)
    bulk = m.sum(axis=0) / row_mass.sum()
    H_gamma = float(_entropy_rows(bulk))
    D_alpha, D_gamma = float(np.exp(H_alpha)), float(np.exp(H_gamma))
    if H_gamma == 0.0:
        warnings.warn("single-species bulk: mixing-state index set to 1", RuntimeWarning, stacklevel=2)
        return ChiResult(1.0, D_alpha, D_gamma, H_alpha, H_gamma, H_i, degenerate=True)
    chi = float(np.clip((D_alpha - 1.0) / (D_gamma - 1.0), 0.0, 1.0))
    return ChiResult(chi, D_alpha, D_gamma, H_alpha, H_gamma, H_i)


def merge_species(masses, columns, groups) -> np.ndarray:
    """Sum species columns into groups; ``groups`` is a list of lists of column names."""
    m = np.asarray(masses, dtype=float)
    index = {name: i for i, name in enumerate(columns)}
    out = []
    used = set()
    for group in groups:
        cols = []
        for name in group:
            if name not in index:
                raise SchemaError(f"species column {name!r} not found")
            if name in used:
                raise SchemaError(f"species column {name!r} appears in two groups")
            used.add(name)
            cols.append(index[name])
        out.append(m[:, cols].sum(axis=1))
    return np.stack(out, axis=1)


def optical_groups(columns, absorbing: str = "BC") -> list:
    """Absorbing species on its own, every other column merged."""
    if absorbing not in columns:
        raise SchemaError(f"absorbing species column {absorbing!r} not found")
    rest = [c for c in columns if c != absorbing]
    return [[absorbing], rest] if rest else [[absorbing]]


def coating_volume_ratio(Dp, Dc) -> float:
    """Population coating volume ratio sum(Dp^3) / sum(Dc^3) - 1."""
    Dp = np.asarray(Dp, dtype=float).reshape(-1)
    Dc = np.asarray(Dc, dtype=float).reshape(-1)
    if Dp.size != Dc.size:
        raise DomainError("coated and core diameter lists differ in length")
    if Dp.size == 0:
        raise DomainError("need at least one particle")
    if not (np.all(np.isfinite(Dp)) and np.all(np.isfinite(Dc))):
        raise DomainError("non-finite diameter")
    if np.any(Dc <= 0):
        raise DomainError("core diameters must be positive")
    if np.any(Dp < Dc):
        raise DomainError("coated diameter smaller than core diameter")
    return float((Dp**3).sum() / (Dc**3).sum() - 1.0)


def read_table(path):
    """Numeric CSV with a header row. Returns (column names, float matrix)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: unparseable number ({exc})") from exc
        if not all(np.isfinite(vals)):
            raise DataError(f"{path}:{lineno}: non-finite value")
        values.append(vals)
    if not values:
        raise DataError(f"{path}: no data rows")
    return header, np.array(values)
