"""Prediction series and their CSV form (timestamp_ms, actual, predicted, usable)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .._io import write_text
from ..errors import EmptyFile, FileNotFound, InvalidTable, MissingColumn
from ..ingest import format_value

PREDICTION_COLUMNS = ("timestamp_ms", "actual", "predicted", "usable")


@dataclass(frozen=True, eq=False)
class Predictions:
    times: np.ndarray
    actual: np.ndarray
    predicted: np.ndarray
    usable: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.actual) == len(self.predicted) == len(self.usable) == n):
            raise InvalidTable("prediction columns differ in length")

    def __len__(self) -> int:
        return len(self.times)

    def to_csv(self) -> str:
        lines = [",".join(PREDICTION_COLUMNS)]
        for t, a, p, u in zip(self.times, self.actual, self.predicted, self.usable):
            lines.append(f"{int(t)},{format_value(a)},{format_value(p)},{'true' if u else 'false'}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        write_text(path, self.to_csv())

    @classmethod
    def read(cls, path: str | Path) -> "Predictions":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise FileNotFound(f"predictions not found: {path}") from exc
        rows = list(csv.reader(io.StringIO(text, newline="")))
        if not rows:
            raise EmptyFile(f"{path} is empty")
        if tuple(rows[0]) != PREDICTION_COLUMNS:
            raise MissingColumn(f"{path}: header must be {','.join(PREDICTION_COLUMNS)}")
        body = [r for r in rows[1:] if r]

        def num(s: str) -> float:
            return float(s) if s != "" else np.nan

        try:
            times = np.array([int(r[0]) for r in body], dtype=np.int64)
            actual = np.array([num(r[1]) for r in body], dtype=np.float64)
            predicted = np.array([num(r[2]) for r in body], dtype=np.float64)
            usable = np.array([{"true": True, "false": False}[r[3]] for r in body], dtype=bool)
        except (ValueError, KeyError, IndexError) as exc:
            raise InvalidTable(f"{path}: malformed prediction row ({exc})") from exc
        return cls(times, actual, predicted, usable)

    def comparable(self) -> tuple[np.ndarray, np.ndarray]:
        """(predicted, actual) restricted to usable rows."""
        return self.predicted[self.usable], self.actual[self.usable]
