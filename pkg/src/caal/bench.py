"""Regression metrics, learning curves and labelling-efficiency accounting."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError

CURVE_COLUMNS = ("round", "n_labelled", "r2", "rmse", "mean_epi_selected", "mean_ale_selected")


def _pair(y_true, y_pred):
    t = np.asarray(y_true, dtype=float).reshape(-1)
    p = np.asarray(y_pred, dtype=float).reshape(-1)
    if t.shape != p.shape or t.size < 2:
        raise DataError("need two equal-length arrays with at least 2 entries")
    return t, p


def r_squared(y_true, y_pred) -> float:
    t, p = _pair(y_true, y_pred)
    ss_tot = float(((t - t.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise DataError("R^2 is undefined for a constant target")
    return 1.0 - float(((t - p) ** 2).sum()) / ss_tot


def rmse(y_true, y_pred) -> float:
    t, p = _pair(y_true, y_pred)
    return float(np.sqrt(((t - p) ** 2).mean()))


@dataclass
class RoundRecord:
    round: int
    n_labelled: int
    budget_used: int
    r2: float
    rmse: float
    mean_epi_selected: float = float("nan")
    mean_ale_selected: float = float("nan")


@dataclass
class LearningCurve:
    records: list = field(default_factory=list)
    total: Optional[int] = None  # labelled + pool size at round 0
    r2_full: Optional[float] = None
    rmse_full: Optional[float] = None

    @property
    def budgets(self) -> np.ndarray:
        total = self.total if self.total else max((r.n_labelled for r in self.records), default=1)
        return np.array([r.n_labelled / total for r in self.records])

    @property
    def r2(self) -> np.ndarray:
        return np.array([r.r2 for r in self.records])

    @property
    def rmse(self) -> np.ndarray:
        return np.array([r.rmse for r in self.records])

    def best_r2(self) -> float:
        return float(np.max(self.r2))

    def best_rmse(self) -> float:
        return float(np.min(self.rmse))


@dataclass
class MatchResult:
    fraction: Optional[float]
    labeling_saved: Optional[float]

    @property
    def matched(self) -> bool:
        return self.fraction is not None

    def __str__(self):
        if not self.matched:
            return "N/A"
        return f"{100 * self.fraction:.1f}% (saved {100 * self.labeling_saved:.1f}%)"


def data_to_match(budgets, r2_values, reference_r2: float) -> MatchResult:
    """First budget fraction whose R^2 reaches the full-data reference."""
    b = np.asarray(budgets, dtype=float)
    r = np.asarray(r2_values, dtype=float)
    if b.size == 0 or b.shape != r.shape:
        raise DataError("need matching, non-empty budget and R^2 arrays")
    hits = np.flatnonzero(r >= reference_r2)
    if hits.size == 0:
        return MatchResult(None, None)
    frac = float(b[hits[0]])
    return MatchResult(frac, 1.0 - frac)


def curve_to_match(curve: LearningCurve, reference_r2: Optional[float] = None) -> MatchResult:
    ref = curve.r2_full if reference_r2 is None else reference_r2
    if ref is None:
        raise DataError("no full-data reference R^2 supplied")
    return data_to_match(curve.budgets, curve.r2, ref)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def curve_csv(curve: LearningCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for rec in curve.records:
        w.writerow([_fmt(getattr(rec, c)) for c in CURVE_COLUMNS])
    return buf.getvalue()


def emit_curve(curve: LearningCurve, path) -> None:
    path = Path(path)
    try:
        path.write_text(curve_csv(curve), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def read_curve(path) -> LearningCurve:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    records = [
        RoundRecord(int(r["round"]), int(r["n_labelled"]), 0, float(r["r2"]), float(r["rmse"]),
                    float(r["mean_epi_selected"]), float(r["mean_ale_selected"]))
        for r in rows
    ]
    return LearningCurve(records)
