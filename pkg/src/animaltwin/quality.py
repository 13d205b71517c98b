"""Quality check: outlier flagging, missing-data handling and plot-ready summaries.

Quartiles use linear interpolation between order statistics (numpy's
default, "type 7"); standard deviations use the n-1 denominator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._io import read_json
from ._schema import validate
from ._validation import check_is_fitted, check_matrix
from .errors import AllMissingColumn, InvalidSpec, MissingDataFound, UnknownColumn
from .timeseries import TimeTable

OUTLIER_METHODS = ("zscore", "iqr", "none")
OUTLIER_ACTIONS = ("flag_only", "set_missing")
MISSING_POLICIES = ("drop_row", "linear_interpolate", "forward_fill", "fail")
HISTOGRAM_BINS = 20
QUARTILE_METHOD = "linear interpolation between order statistics (type 7)"


class OutlierDetector(TransformerMixin, BaseEstimator):
    """Column-wise statistical outlier detector.

    Parameters
    ----------
    method : {"iqr", "zscore", "none"}, default="iqr"
        ``zscore`` flags ``|x - mean| > k * std`` (sample std); ``iqr`` flags
        values outside ``[Q1 - factor * IQR, Q3 + factor * IQR]``.
    k : float, default=3.0
    factor : float, default=1.5

    Attributes
    ----------
    lower_, upper_ : ndarray of shape (n_features,)
        Acceptance bounds per column (``-inf``/``inf`` when nothing can be flagged).
    center_, scale_ : ndarray of shape (n_features,)
        Mean and std (zscore) or Q1 and IQR (iqr).

    MISSING (NaN) cells are ignored when fitting and never flagged. A column
    with zero spread flags nothing under ``zscore``.
    """

    def __init__(self, method="iqr", k=3.0, factor=1.5):
        self.method = method
        self.k = k
        self.factor = factor

    def fit(self, X, y=None):
        if self.method not in OUTLIER_METHODS:
            raise InvalidSpec(f"unknown outlier method {self.method!r}")
        if self.k <= 0 or self.factor <= 0:
            raise InvalidSpec("k and factor must be positive")
        X = check_matrix(X, allow_missing=True)
        n_features = X.shape[1]
        self.n_features_in_ = n_features
        self.center_ = np.full(n_features, np.nan)
        self.scale_ = np.full(n_features, np.nan)
        self.lower_ = np.full(n_features, -np.inf)
        self.upper_ = np.full(n_features, np.inf)
        for j in range(n_features):
            col = X[:, j]
            col = col[~np.isnan(col)]
            if self.method == "zscore" and col.size >= 2:
                d = col - col[0]
                mean_d = np.mean(d)
                std = float(np.sqrt(np.sum((d - mean_d) ** 2) / (col.size - 1)))
                self.center_[j] = col[0] + mean_d
                self.scale_[j] = std
                if std > 0:
                    self.lower_[j] = self.center_[j] - self.k * std
                    self.upper_[j] = self.center_[j] + self.k * std
            elif self.method == "iqr" and col.size >= 1:
                q1, q3 = np.percentile(col, [25, 75])
                iqr = q3 - q1
                self.center_[j], self.scale_[j] = q1, iqr
                self.lower_[j] = q1 - self.factor * iqr
                self.upper_[j] = q3 + self.factor * iqr
        return self

    def predict(self, X) -> np.ndarray:
        """Boolean mask, True where a cell is an outlier."""
        check_is_fitted(self, "lower_")
        X = check_matrix(X, allow_missing=True, n_features=self.n_features_in_)
        with np.errstate(invalid="ignore"):
            if self.method == "zscore":
                mask = np.abs(X - self.center_) > self.k * self.scale_
                mask &= self.scale_ > 0
            else:
                mask = (X < self.lower_) | (X > self.upper_)
        return mask & ~np.isnan(X)

    def transform(self, X) -> np.ndarray:
        """Copy of ``X`` with outlier cells set to MISSING."""
        X = check_matrix(X, allow_missing=True, n_features=getattr(self, "n_features_in_", None))
        out = X.copy()
        out[self.predict(X)] = np.nan
        return out


@dataclass(frozen=True)
class OutlierRule:
    method: str = "iqr"
    k: float = 3.0
    factor: float = 1.5

    def __post_init__(self):
        if self.method not in OUTLIER_METHODS:
            raise InvalidSpec(f"unknown outlier method {self.method!r}")
        if self.k <= 0 or self.factor <= 0:
            raise InvalidSpec("outlier k and factor must be positive")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "OutlierRule":
        return cls(method=doc.get("method", "iqr"), k=doc.get("k", 3.0), factor=doc.get("factor", 1.5))

    def to_dict(self) -> dict:
        if self.method == "zscore":
            return {"method": "zscore", "k": self.k}
        if self.method == "iqr":
            return {"method": "iqr", "factor": self.factor}
        return {"method": "none"}

    def detector(self) -> OutlierDetector:
        return OutlierDetector(method=self.method, k=self.k, factor=self.factor)


@dataclass(frozen=True)
class MissingRule:
    policy: str = "linear_interpolate"
    max_gap_cells: int = 3

    def __post_init__(self):
        if self.policy not in MISSING_POLICIES:
            raise InvalidSpec(f"unknown missing-data policy {self.policy!r}")
        if self.max_gap_cells < 1:
            raise InvalidSpec("max_gap_cells must be at least 1")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MissingRule":
        return cls(policy=doc.get("policy", "linear_interpolate"), max_gap_cells=doc.get("max_gap_cells", 3))

    def to_dict(self) -> dict:
        doc = {"policy": self.policy}
        if self.policy in ("linear_interpolate", "forward_fill"):
            doc["max_gap_cells"] = self.max_gap_cells
        return doc


@dataclass(frozen=True)
class ColumnOverride:
    outliers: OutlierRule | None = None
    outlier_action: str | None = None
    missing: MissingRule | None = None


@dataclass(frozen=True)
class QualitySpec:
    outliers: OutlierRule = OutlierRule()
    outlier_action: str = "flag_only"
    missing: MissingRule = MissingRule()
    columns: tuple[str, ...] | None = None
    overrides: Mapping[str, ColumnOverride] = field(default_factory=dict)
    physical_range: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        actions = [self.outlier_action] + [o.outlier_action for o in self.overrides.values() if o.outlier_action]
        bad = [a for a in actions if a not in OUTLIER_ACTIONS]
        if bad:
            raise InvalidSpec(f"unknown outlier action(s) {bad}")
        for col, (lo, hi) in self.physical_range.items():
            if lo > hi:
                raise InvalidSpec(f"physical range for {col!r} has min > max")

    def rules_for(self, column: str) -> tuple[OutlierRule, str, MissingRule]:
        o = self.overrides.get(column, ColumnOverride())
        return (o.outliers or self.outliers, o.outlier_action or self.outlier_action, o.missing or self.missing)

    def target_columns(self, table: TimeTable) -> list[str]:
        referenced = set(self.overrides) | set(self.physical_range) | set(self.columns or ())
        unknown = sorted(c for c in referenced if c not in table)
        if unknown:
            raise UnknownColumn(f"quality spec refers to unknown column(s) {unknown}")
        if self.columns is None:
            return table.column_names
        return [c for c in table.column_names if c in self.columns]

    @classmethod
    def from_dict(cls, doc: Mapping) -> "QualitySpec":
        validate(doc, "quality_spec", "quality spec")
        overrides = {
            col: ColumnOverride(
                outliers=OutlierRule.from_dict(o["outliers"]) if "outliers" in o else None,
                outlier_action=o.get("outlier_action"),
                missing=MissingRule.from_dict(o["missing"]) if "missing" in o else None,
            )
            for col, o in doc.get("overrides", {}).items()
        }
        return cls(
            outliers=OutlierRule.from_dict(doc.get("outliers", {})),
            outlier_action=doc.get("outlier_action", "flag_only"),
            missing=MissingRule.from_dict(doc.get("missing", {})),
            columns=tuple(doc["columns"]) if "columns" in doc else None,
            overrides=overrides,
            physical_range={k: (float(v[0]), float(v[1])) for k, v in doc.get("physical_range", {}).items()},
        )

    @classmethod
    def load(cls, path: str | Path) -> "QualitySpec":
        return cls.from_dict(read_json(path, "quality spec"))

    def to_dict(self) -> dict:
        doc = {
            "outliers": self.outliers.to_dict(),
            "outlier_action": self.outlier_action,
            "missing": self.missing.to_dict(),
        }
        if self.columns is not None:
            doc["columns"] = list(self.columns)
        if self.overrides:
            doc["overrides"] = {
                col: {
                    k: v
                    for k, v in (
                        ("outliers", o.outliers.to_dict() if o.outliers else None),
                        ("outlier_action", o.outlier_action),
                        ("missing", o.missing.to_dict() if o.missing else None),
                    )
                    if v is not None
                }
                for col, o in self.overrides.items()
            }
        if self.physical_range:
            doc["physical_range"] = {k: [lo, hi] for k, (lo, hi) in self.physical_range.items()}
        return doc


def _masks(table: TimeTable, spec: QualitySpec) -> tuple[dict, dict, dict]:
    stat, rng, bounds = {}, {}, {}
    for col in spec.target_columns(table):
        values = table[col]
        rule = spec.rules_for(col)[0]
        det = rule.detector().fit(values.reshape(-1, 1))
        stat[col] = det.predict(values.reshape(-1, 1))[:, 0]
        bounds[col] = (float(det.lower_[0]), float(det.upper_[0]))
        if col in spec.physical_range:
            lo, hi = spec.physical_range[col]
            with np.errstate(invalid="ignore"):
                rng[col] = ((values < lo) | (values > hi)) & ~np.isnan(values)
        else:
            rng[col] = np.zeros(values.size, dtype=bool)
    return stat, rng, bounds


def detect_outliers(table: TimeTable, spec: QualitySpec) -> dict[str, np.ndarray]:
    """Per-column mask of statistical outliers and physical-range violations."""
    stat, rng, _ = _masks(table, spec)
    return {col: stat[col] | rng[col] for col in stat}


def _runs(missing: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive True cells."""
    runs = []
    i, n = 0, missing.size
    while i < n:
        if missing[i]:
            j = i
            while j < n and missing[j]:
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


def _fill_column(times: np.ndarray, values: np.ndarray, rule: MissingRule, column: str):
    """Return (filled values, unfilled gaps) for one column."""
    miss = np.isnan(values)
    if miss.all() and values.size:
        raise AllMissingColumn(f"column {column!r} has no values to fill from")
    out = values.copy()
    unfilled = []
    for a, b in _runs(miss):
        length = b - a
        gap = {"start_ms": int(times[a]), "cells": length}
        if a == 0 or length > rule.max_gap_cells:
            unfilled.append(gap)
            continue
        if rule.policy == "forward_fill":
            out[a:b] = values[a - 1]
            continue
        if b == values.size:
            unfilled.append(gap)
            continue
        v0, v1 = values[a - 1], values[b]
        t0, t1 = times[a - 1], times[b]
        frac = (times[a:b] - t0) / (t1 - t0)
        out[a:b] = np.clip(v0 + (v1 - v0) * frac, min(v0, v1), max(v0, v1))
    return out, unfilled


def _handle_missing(table: TimeTable, spec: QualitySpec, columns: list[str]):
    filled: dict[str, np.ndarray] = dict(table.columns)
    unfilled: dict[str, list] = {}
    drop = np.zeros(table.n_rows, dtype=bool)
    for col in columns:
        rule = spec.rules_for(col)[2]
        values = table[col]
        miss = np.isnan(values)
        if rule.policy == "fail":
            if miss.any():
                i = int(np.argmax(miss))
                raise MissingDataFound(f"column {col!r} is MISSING at timestamp {int(table.times[i])} ms")
        elif rule.policy == "drop_row":
            drop |= miss
        else:
            filled[col], unfilled[col] = _fill_column(table.times, values, rule, col)
    out = table.with_columns(filled)
    if drop.any():
        out = out.take(np.flatnonzero(~drop))
        out = TimeTable(out.times, out.columns, grid=None, units=out.units)
    return out, unfilled, int(drop.sum())


def handle_missing(table: TimeTable, spec: QualitySpec) -> TimeTable:
    """Apply the missing-data policy; the grid is kept unless rows are dropped."""
    return _handle_missing(table, spec, spec.target_columns(table))[0]


def _num(x) -> float | None:
    x = float(x)
    return x if np.isfinite(x) else None


def summarize(times: np.ndarray, values: np.ndarray) -> dict:
    """Plot-ready statistics for one column (MISSING cells excluded)."""
    ok = ~np.isnan(values)
    v, t = values[ok], times[ok]
    if v.size == 0:
        return {"n": 0}
    d = v - v[0]
    mean = float(v[0] + np.mean(d))
    std = float(np.sqrt(np.sum((d - np.mean(d)) ** 2) / (v.size - 1))) if v.size > 1 else None
    q1, med, q3 = (float(q) for q in np.percentile(v, [25, 50, 75]))
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    try:
        counts, edges = np.histogram(v, bins=HISTOGRAM_BINS)
    except ValueError:
        # Range too narrow for distinct edges (subnormal spread); widen like a constant column.
        lo, hi = float(v.min()), float(v.max())
        counts, edges = np.histogram(v, bins=HISTOGRAM_BINS, range=(lo - 0.5, hi + 0.5))
    i_min, i_max = int(np.argmin(v)), int(np.argmax(v))
    return {
        "n": int(v.size),
        "min": float(v.min()),
        "max": float(v.max()),
        "mean": mean,
        "std": std,
        "q1": q1,
        "median": med,
        "q3": q3,
        "boxplot": {
            "whisker_low": float(inside.min()),
            "q1": q1,
            "median": med,
            "q3": q3,
            "whisker_high": float(inside.max()),
            "fliers": int(v.size - inside.size),
        },
        "histogram": {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]},
        "extrema": {
            "min": {"timestamp_ms": int(t[i_min]), "value": float(v[i_min])},
            "max": {"timestamp_ms": int(t[i_max]), "value": float(v[i_max])},
        },
    }


@dataclass
class QualityReport:
    header: dict
    columns: dict

    def to_dict(self) -> dict:
        return {"header": self.header, "columns": self.columns}

    def total(self, key: str) -> int:
        return sum(c[key] for c in self.columns.values())


def quality_check(table: TimeTable, spec: QualitySpec) -> tuple[TimeTable, QualityReport]:
    """Detect outliers, apply the outlier action, handle missing data, summarise."""
    columns = spec.target_columns(table)
    stat, rng, bounds = _masks(table, spec)
    cleaned = dict(table.columns)
    set_missing = {}
    for col in columns:
        action = spec.rules_for(col)[1]
        flagged = stat[col] | rng[col]
        if action == "set_missing" and flagged.any():
            v = table[col].copy()
            v[flagged] = np.nan
            cleaned[col] = v
        set_missing[col] = int(flagged.sum()) if action == "set_missing" else 0
    staged = table.with_columns(cleaned)
    out, unfilled, dropped = _handle_missing(staged, spec, columns)

    kept = np.isin(table.times, out.times)
    per_column = {}
    for col in columns:
        rule, action, missing_rule = spec.rules_for(col)
        flagged = stat[col] | rng[col]
        before = np.isnan(table[col])
        after = np.isnan(out[col])
        lo, hi = bounds[col]
        per_column[col] = {
            "count": table.n_rows,
            "missing_before": int(before.sum()),
            "outliers_flagged": int(flagged.sum()),
            "statistical_outliers": int(stat[col].sum()),
            "out_of_range": int(rng[col].sum()),
            "set_to_missing": set_missing[col],
            "missing_after": int(after.sum()),
            "filled": int((np.isnan(staged[col])[kept] & ~after).sum()),
            "missing_timestamps_ms": [int(t) for t in table.times[before]],
            "flagged_timestamps_ms": [int(t) for t in table.times[flagged]],
            "unfilled_gaps": unfilled.get(col, []),
            "outlier_rule": rule.to_dict(),
            "outlier_action": action,
            "missing_rule": missing_rule.to_dict(),
            "bounds": {"lower": _num(lo), "upper": _num(hi)},
            "physical_range": list(spec.physical_range[col]) if col in spec.physical_range else None,
            "summary": summarize(out.times, out[col]),
        }
    header = {
        "rows_in": table.n_rows,
        "rows_out": out.n_rows,
        "rows_dropped": dropped,
        "regular_grid": out.regular,
        "quartile_method": QUARTILE_METHOD,
        "std_denominator": "n-1",
        "histogram_bins": HISTOGRAM_BINS,
        "spec": spec.to_dict(),
    }
    return out, QualityReport(header, per_column)
