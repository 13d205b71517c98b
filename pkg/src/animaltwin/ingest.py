"""Sensor CSV parsing, merged-table I/O and the merge-sources component.

CSV dialect, read and written: comma separator, ``.`` decimal point, a
header row, UTF-8, ``\\n`` line endings. MISSING is an empty field. Merged
tables always start with a ``timestamp_ms`` column.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import sensors
from ._io import read_json, write_text
from ._schema import validate
from .errors import (
    DuplicateChannelName,
    EmptyFile,
    FileNotFound,
    InvalidSpec,
    InvalidTable,
    MissingColumn,
)
from .timeseries import (
    FeatureSpec,
    GridStrategy,
    RawChannel,
    ResamplePolicy,
    TimeGrid,
    TimeTable,
    format_rate,
    infer_grid,
    parse_rate,
    resample,
    resample_direction,
    window_aggregate,
)

TIMESTAMP_COLUMN = "timestamp_ms"
TIMESTAMP_FORMATS = ("epoch_ms", "epoch_s", "elapsed_s", "iso8601")
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_FORBIDDEN_NAME_CHARS = set(',"\r\n')


# -- value formatting ------------------------------------------------------


def format_value(value: float) -> str:
    """Shortest round-trip text for a float; MISSING becomes an empty field."""
    value = float(value)
    if value != value:
        return ""
    return repr(value)


def _check_name(name: str) -> None:
    if not name or _FORBIDDEN_NAME_CHARS & set(name):
        raise InvalidSpec(f"column name {name!r} is empty or contains a comma, quote or newline")


# -- descriptors -----------------------------------------------------------


@dataclass(frozen=True)
class SourceDescriptor:
    path: Path
    channel_name: str
    timestamp_column: str
    value_columns: tuple[str, ...]
    timestamp_format: str = "epoch_ms"
    nominal_rate_hz: Fraction = Fraction(1)
    unit: str = ""
    units: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.value_columns:
            raise InvalidSpec(f"source {self.channel_name!r} has no value columns")
        if self.timestamp_format not in TIMESTAMP_FORMATS:
            raise InvalidSpec(f"unknown timestamp format {self.timestamp_format!r}")
        object.__setattr__(self, "path", Path(self.path))
        object.__setattr__(self, "value_columns", tuple(self.value_columns))
        object.__setattr__(self, "nominal_rate_hz", parse_rate(self.nominal_rate_hz))
        for name in self.channel_names:
            _check_name(name)

    @property
    def channel_names(self) -> list[str]:
        return [f"{self.channel_name}.{c}" for c in self.value_columns]

    def unit_of(self, column: str) -> str:
        return self.units.get(column, self.unit)

    @classmethod
    def from_dict(cls, doc: Mapping, base_dir: Path | None = None) -> "SourceDescriptor":
        path = Path(doc["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return cls(
            path=path,
            channel_name=doc["channel_name"],
            timestamp_column=doc["timestamp_column"],
            value_columns=tuple(doc["value_columns"]),
            timestamp_format=doc.get("timestamp_format", "epoch_ms"),
            nominal_rate_hz=doc.get("nominal_rate_hz", 1),
            unit=doc.get("unit", ""),
            units=dict(doc.get("units", {})),
        )


@dataclass(frozen=True)
class DerivedChannel:
    """A software-sensor channel computed from parsed channels before merging."""

    kind: str
    name: str
    inputs: tuple[str, ...]
    params: Mapping[str, float]
    drop_inputs: bool = False

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DerivedChannel":
        kind = doc["kind"]
        if kind == "odba":
            inputs = tuple(doc["axes"])
            params = {"static_window_ms": doc.get("static_window_ms", sensors.DEFAULT_STATIC_WINDOW_MS)}
        elif kind == "oxygen_uptake":
            inputs = (doc["source"],)
            params = {
                "volume_liters": doc["volume_liters"],
                "mass_kg": doc["mass_kg"],
                "slope_window_ms": doc["slope_window_ms"],
            }
        else:
            raise InvalidSpec(f"unknown derived channel kind {kind!r}")
        return cls(kind, doc["name"], inputs, params, bool(doc.get("drop_inputs", False)))

    def compute(self, channels: Mapping[str, RawChannel]) -> RawChannel:
        missing = [c for c in self.inputs if c not in channels]
        if missing:
            raise InvalidSpec(f"derived channel {self.name!r} needs unknown channel(s) {missing}")
        if self.kind == "odba":
            accel = sensors.TriAxialAccel(*(channels[c] for c in self.inputs))
            return sensors.odba(accel, int(self.params["static_window_ms"]), name=self.name)
        setup = sensors.RespirometrySetup(self.params["volume_liters"], self.params["mass_kg"])
        return sensors.oxygen_uptake_rate(
            channels[self.inputs[0]], setup, int(self.params["slope_window_ms"]), name=self.name
        )


@dataclass(frozen=True)
class MergeSpec:
    sources: tuple[SourceDescriptor, ...]
    grid_strategy: GridStrategy = GridStrategy()
    default_policy: ResamplePolicy = ResamplePolicy()
    per_channel_policy: Mapping[str, ResamplePolicy] = field(default_factory=dict)
    feature_specs: Mapping[str, FeatureSpec] = field(default_factory=dict)
    derived: tuple[DerivedChannel, ...] = ()

    def policy_for(self, channel: str) -> ResamplePolicy:
        return self.per_channel_policy.get(channel, self.default_policy)

    @classmethod
    def from_dict(cls, doc: Mapping, base_dir: Path | None = None) -> "MergeSpec":
        validate(doc, "merge_spec", "merge spec")
        return cls(
            sources=tuple(SourceDescriptor.from_dict(s, base_dir) for s in doc["sources"]),
            grid_strategy=GridStrategy.from_dict(doc.get("grid")),
            default_policy=ResamplePolicy.from_dict(doc.get("default_policy", {})),
            per_channel_policy={k: ResamplePolicy.from_dict(v) for k, v in doc.get("policies", {}).items()},
            feature_specs={k: FeatureSpec.from_dict(v) for k, v in doc.get("features", {}).items()},
            derived=tuple(DerivedChannel.from_dict(d) for d in doc.get("derived", [])),
        )

    @classmethod
    def load(cls, path: str | Path) -> "MergeSpec":
        path = Path(path)
        return cls.from_dict(read_json(path, "merge spec"), base_dir=path.parent)


# -- parsing ---------------------------------------------------------------


@dataclass
class ParseReport:
    path: str
    physical_rows: int = 0
    good_rows: int = 0
    missing_rows: int = 0
    rejected_rows: int = 0
    rejected_lines: list[int] = field(default_factory=list)
    empty_values: dict[str, int] = field(default_factory=dict)
    bad_values: dict[str, int] = field(default_factory=dict)
    bad_value_lines: list[int] = field(default_factory=list)
    duplicate_timestamps: int = 0
    out_of_order_rows: int = 0

    @property
    def total_bad_values(self) -> int:
        return sum(self.bad_values.values())

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "physical_rows": self.physical_rows,
            "good_rows": self.good_rows,
            "missing_rows": self.missing_rows,
            "rejected_rows": self.rejected_rows,
            "rejected_lines": list(self.rejected_lines),
            "empty_values": dict(self.empty_values),
            "bad_values": dict(self.bad_values),
            "bad_value_lines": list(self.bad_value_lines),
            "duplicate_timestamps": self.duplicate_timestamps,
            "out_of_order_rows": self.out_of_order_rows,
        }


def parse_timestamp(text: str, fmt: str) -> int:
    """Milliseconds for one timestamp field; raises ValueError when unparseable."""
    text = text.strip()
    if fmt == "iso8601":
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return (dt - _EPOCH) // timedelta(milliseconds=1)
    try:
        number = Decimal(text)
    except InvalidOperation as exc:
        raise ValueError(f"not a number: {text!r}") from exc
    if not number.is_finite():
        raise ValueError(f"non-finite timestamp {text!r}")
    if fmt in ("epoch_s", "elapsed_s"):
        number = number * 1000
    return int(number.to_integral_value())


def _parse_value(text: str) -> tuple[float, str]:
    """(value, status) with status one of ``ok``, ``empty``, ``bad``."""
    text = text.strip()
    if not text:
        return float("nan"), "empty"
    try:
        value = float(text)
    except ValueError:
        return float("nan"), "bad"
    if not np.isfinite(value):
        return float("nan"), "bad"
    return value, "ok"


def parse_csv(path: str | Path, descriptor: SourceDescriptor) -> tuple[list[RawChannel], ParseReport]:
    """Read one sensor file into one channel per value column.

    Rows whose timestamp cannot be parsed are rejected (line numbers kept in
    the report); unparseable values become MISSING samples. Rows are sorted
    by time, and for a repeated timestamp the last row wins.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FileNotFound(f"sensor file not found: {path}") from exc
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptyFile(f"{path} is empty") from None
    wanted = [descriptor.timestamp_column, *descriptor.value_columns]
    absent = [c for c in wanted if c not in header]
    if absent:
        raise MissingColumn(f"{path}: column(s) {absent} not in header {header}")
    ts_idx = header.index(descriptor.timestamp_column)
    val_idx = [header.index(c) for c in descriptor.value_columns]

    report = ParseReport(
        path=Path(path).name,
        empty_values={c: 0 for c in descriptor.value_columns},
        bad_values={c: 0 for c in descriptor.value_columns},
    )
    rows: dict[int, list[float]] = {}
    last_t = None
    for record in reader:
        if not record or all(not f.strip() for f in record):
            continue
        report.physical_rows += 1
        line = reader.line_num
        try:
            if ts_idx >= len(record):
                raise ValueError("no timestamp field")
            t = parse_timestamp(record[ts_idx], descriptor.timestamp_format)
        except ValueError:
            report.rejected_rows += 1
            report.rejected_lines.append(line)
            continue
        values, complete, bad = [], True, False
        for col, idx in zip(descriptor.value_columns, val_idx):
            v, status = _parse_value(record[idx]) if idx < len(record) else (float("nan"), "empty")
            if status != "ok":
                complete = False
                if status == "bad":
                    bad = True
                    report.bad_values[col] += 1
                else:
                    report.empty_values[col] += 1
            values.append(v)
        if bad:
            report.bad_value_lines.append(line)
        if complete:
            report.good_rows += 1
        else:
            report.missing_rows += 1
        if t in rows:
            report.duplicate_timestamps += 1
        if last_t is not None and t < last_t:
            report.out_of_order_rows += 1
        last_t = t
        rows[t] = values
    if report.physical_rows == 0:
        raise EmptyFile(f"{path} has a header but no data rows")
    times = np.array(sorted(rows), dtype=np.int64)
    matrix = np.array([rows[t] for t in times], dtype=np.float64).reshape(times.size, len(val_idx))
    channels = [
        RawChannel(name, times, matrix[:, j], descriptor.nominal_rate_hz, descriptor.unit_of(col))
        for j, (name, col) in enumerate(zip(descriptor.channel_names, descriptor.value_columns))
    ]
    return channels, report


def format_source_csv(timestamp_column: str, times, columns: Mapping[str, Sequence[float]], timestamp_format: str = "epoch_ms") -> str:
    """Render raw sensor samples in the ingest dialect."""
    for name in (timestamp_column, *columns):
        _check_name(name)
    if timestamp_format not in ("epoch_ms", "epoch_s", "elapsed_s"):
        raise InvalidSpec(f"cannot write timestamp format {timestamp_format!r}")
    scale = 1 if timestamp_format == "epoch_ms" else 1000
    lines = [",".join([timestamp_column, *columns])]
    cols = [np.asarray(v, dtype=np.float64) for v in columns.values()]
    for i, t in enumerate(np.asarray(times, dtype=np.int64)):
        stamp = str(int(t)) if scale == 1 else str(Decimal(int(t)) / Decimal(scale))
        lines.append(",".join([stamp, *(format_value(c[i]) for c in cols)]))
    return "\n".join(lines) + "\n"


def write_channels_csv(path: str | Path, channels: Sequence[RawChannel], timestamp_column: str = "t", value_columns: Sequence[str] | None = None) -> None:
    """Write channels sharing one time base back out as a sensor CSV (epoch_ms)."""
    if not channels:
        raise InvalidSpec("nothing to write")
    base = channels[0].times
    if any(not np.array_equal(ch.times, base) for ch in channels):
        raise InvalidTable("channels written to one file must share timestamps")
    names = list(value_columns or [ch.name.split(".", 1)[-1] for ch in channels])
    write_text(path, format_source_csv(timestamp_column, base, dict(zip(names, (ch.values for ch in channels)))))


# -- merged tables ---------------------------------------------------------


def format_table_csv(table: TimeTable) -> str:
    for name in table.column_names:
        _check_name(name)
    cols = [table[c] for c in table.column_names]
    lines = [",".join([TIMESTAMP_COLUMN, *table.column_names])]
    for i, t in enumerate(table.times):
        lines.append(",".join([str(int(t)), *(format_value(c[i]) for c in cols)]))
    return "\n".join(lines) + "\n"


def write_table_csv(table: TimeTable, path: str | Path) -> None:
    write_text(path, format_table_csv(table))


def read_table_csv(path: str | Path) -> TimeTable:
    """Read a merged-format CSV. A grid is attached when rows are evenly spaced."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FileNotFound(f"table not found: {path}") from exc
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyFile(f"{path} is empty") from None
    if not header or header[0] != TIMESTAMP_COLUMN:
        raise MissingColumn(f"{path}: first column must be {TIMESTAMP_COLUMN!r}")
    names = header[1:]
    times: list[int] = []
    data: list[list[float]] = []
    for record in reader:
        if not record:
            continue
        if len(record) != len(header):
            raise InvalidTable(f"{path} line {reader.line_num}: expected {len(header)} fields, got {len(record)}")
        try:
            times.append(int(record[0]))
            data.append([float(f) if f != "" else float("nan") for f in record[1:]])
        except ValueError as exc:
            raise InvalidTable(f"{path} line {reader.line_num}: {exc}") from exc
    t = np.array(times, dtype=np.int64)
    matrix = np.array(data, dtype=np.float64).reshape(len(times), len(names))
    grid = None
    if t.size >= 2:
        steps = np.diff(t)
        if steps[0] > 0 and np.all(steps == steps[0]):
            grid = TimeGrid(int(t[0]), int(steps[0]), int(t.size))
    return TimeTable(t, {n: matrix[:, j] for j, n in enumerate(names)}, grid=grid)


# -- merge sources ---------------------------------------------------------


@dataclass
class MergeReport:
    grid: TimeGrid
    origin_ms: int
    grid_strategy: dict
    channels: dict = field(default_factory=dict)
    sources: list = field(default_factory=list)
    derived: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "origin_ms": self.origin_ms,
            "grid_strategy": self.grid_strategy,
            "interval_convention": "half-open [t, t+period)",
            "label_convention": "slow label channels are treated as stamped at the end of the interval they summarise",
            "odba_form": sensors.ODBA_FORM,
            "channels": self.channels,
            "sources": self.sources,
            "derived": self.derived,
        }


def _parse_all(sources: Sequence[SourceDescriptor]):
    with ThreadPoolExecutor(max_workers=min(4, max(1, len(sources)))) as pool:
        return list(pool.map(lambda d: parse_csv(d.path, d), sources))


def merge_sources(spec: MergeSpec) -> tuple[TimeTable, MergeReport]:
    """Parse every source, reconcile rates and produce one table on a common grid.

    Timestamps are re-based so that the earliest sample across all sources
    is 0. Channels listed in ``feature_specs`` become window aggregates; all
    others are resampled with their policy.
    """
    parsed = _parse_all(spec.sources)
    ordered: list[RawChannel] = []
    seen: set[str] = set()
    for channels, _ in parsed:
        for ch in channels:
            if ch.name in seen:
                raise DuplicateChannelName(f"channel {ch.name!r} defined more than once")
            seen.add(ch.name)
            ordered.append(ch)
    origin = min(int(ch.times[0]) for ch in ordered if len(ch))
    ordered = [ch.shifted(origin) for ch in ordered]
    by_name = {ch.name: ch for ch in ordered}

    dropped: set[str] = set()
    derived_info = []
    for d in spec.derived:
        if d.name in by_name:
            raise DuplicateChannelName(f"derived channel {d.name!r} clashes with an existing channel")
        ch = d.compute(by_name)
        by_name[d.name] = ch
        ordered.append(ch)
        if d.drop_inputs:
            dropped.update(d.inputs)
        derived_info.append(
            {"name": d.name, "kind": d.kind, "inputs": list(d.inputs), "params": dict(d.params), "samples": len(ch)}
        )
    for name in list(spec.feature_specs) + list(spec.per_channel_policy):
        if name not in by_name:
            raise InvalidSpec(f"merge spec refers to unknown channel {name!r}")

    emitted = [ch for ch in ordered if ch.name not in dropped]
    grid = infer_grid(emitted, spec.grid_strategy)
    columns: dict[str, np.ndarray] = {}
    units: dict[str, str] = {}
    info: dict[str, dict] = {}
    for ch in emitted:
        entry = {
            "native_rate_hz": format_rate(ch.nominal_rate_hz),
            "unit": ch.unit,
            "samples": len(ch),
            "direction": resample_direction(ch, grid),
        }
        if ch.name in spec.feature_specs:
            fs = spec.feature_specs[ch.name]
            produced = window_aggregate(ch, fs, grid)
            entry["features"] = fs.to_dict()
            entry["direction"] = "aggregated"
        else:
            policy = spec.policy_for(ch.name)
            produced = {ch.name: resample(ch, grid, policy)}
            entry["policy"] = policy.to_dict()
        entry["columns"] = {}
        for col, values in produced.items():
            if col in columns:
                raise DuplicateChannelName(f"output column {col!r} produced twice")
            columns[col] = values
            units[col] = ch.unit + ("/s" if col.endswith("_slope") else "")
            entry["columns"][col] = {"fill_fraction": float(np.count_nonzero(~np.isnan(values)) / grid.count)}
        info[ch.name] = entry
    report = MergeReport(
        grid=grid,
        origin_ms=origin,
        grid_strategy=spec.grid_strategy.to_dict() or {"default": "slowest channel"},
        channels=info,
        sources=[r.to_dict() for _, r in parsed],
        derived=derived_info,
    )
    return TimeTable.from_grid(grid, columns, units=units), report
