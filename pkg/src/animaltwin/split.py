"""Train/test partitioning of a quality-checked table."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping

import numpy as np

from . import _prng
from ._io import read_json
from ._schema import validate
from .errors import InvalidSpec, MissingTargetColumn, TooFewRows
from .timeseries import TimeTable

SPLIT_MODES = ("chronological", "random")
CUT_RULE = "n_train = ceil(n * train_fraction), capped at n - 1"


def parse_fraction(value) -> Fraction:
    """Exact train fraction; floats snap to the nearest simple ratio (5/6, not 0.83333...)."""
    if isinstance(value, Fraction):
        f = value
    elif isinstance(value, str):
        try:
            f = Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidSpec(f"invalid train fraction {value!r}") from exc
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        f = Fraction(value).limit_denominator(1_000_000)
    else:
        raise InvalidSpec(f"invalid train fraction {value!r}")
    if not 0 < f < 1:
        raise InvalidSpec(f"train fraction must lie strictly between 0 and 1, got {value!r}")
    return f


@dataclass(frozen=True)
class SplitSpec:
    target_column: str
    train_fraction: Fraction = Fraction(5, 6)
    mode: str = "chronological"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise InvalidSpec(f"unknown split mode {self.mode!r}")
        object.__setattr__(self, "train_fraction", parse_fraction(self.train_fraction))
        if not 0 <= self.seed < 2**64:
            raise InvalidSpec("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SplitSpec":
        validate(doc, "split_spec", "split spec")
        return cls(
            target_column=doc["target_column"],
            train_fraction=doc["train_fraction"],
            mode=doc.get("mode", "chronological"),
            seed=doc.get("seed", 0),
        )

    @classmethod
    def load(cls, path: str | Path) -> "SplitSpec":
        return cls.from_dict(read_json(path, "split spec"))

    def to_dict(self) -> dict:
        return {
            "target_column": self.target_column,
            "train_fraction": str(self.train_fraction),
            "mode": self.mode,
            "seed": self.seed,
        }


def train_size(n: int, fraction: Fraction) -> int:
    return min(math.ceil(n * fraction), n - 1)


def split(table: TimeTable, spec: SplitSpec) -> tuple[TimeTable, TimeTable]:
    """Partition rows into (train, test); both keep the original row order.

    ``chronological`` puts the first rows in train. ``random`` first permutes
    the row indices with a SplitMix64-driven Fisher-Yates shuffle seeded by
    ``spec.seed``, then applies the same cut.
    """
    if spec.target_column not in table:
        raise MissingTargetColumn(f"target column {spec.target_column!r} not in table")
    usable = int(np.count_nonzero(~np.isnan(table[spec.target_column])))
    if usable < 2:
        raise TooFewRows(f"need at least 2 rows with a target value, found {usable}")
    n = table.n_rows
    n_train = train_size(n, spec.train_fraction)
    if spec.mode == "chronological":
        train_rows = np.arange(n_train)
    else:
        order = _prng.SplitMix64(spec.seed).shuffle(list(range(n)))
        train_rows = np.sort(np.array(order[:n_train], dtype=np.int64))
    mask = np.zeros(n, dtype=bool)
    mask[train_rows] = True
    return table.take(np.flatnonzero(mask)), table.take(np.flatnonzero(~mask))


def split_metadata(table: TimeTable, train: TimeTable, test: TimeTable, spec: SplitSpec) -> dict:
    return {
        "spec": spec.to_dict(),
        "cut_rule": CUT_RULE,
        "prng": _prng.describe() if spec.mode == "random" else None,
        "rows": table.n_rows,
        "train_rows": train.n_rows,
        "test_rows": test.n_rows,
        "train_time_range_ms": [int(train.times[0]), int(train.times[-1])] if train.n_rows else None,
        "test_time_range_ms": [int(test.times[0]), int(test.times[-1])] if test.n_rows else None,
    }
