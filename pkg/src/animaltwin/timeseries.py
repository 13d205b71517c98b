"""Time-grid data model, rate reconciliation and windowed feature aggregation.

Times are integer milliseconds relative to the dataset start. A missing
value is stored as NaN; ``is_missing`` is the only test callers should use.
All aggregation intervals are half-open, ``[t, t + period)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyChannel,
    IncompatibleWindow,
    InvalidSpec,
    InvalidTable,
    NoTemporalOverlap,
    NonmonotonicTimestamps,
    UnknownMasterChannel,
)

MISSING = float("nan")

UPSAMPLE_KINDS = ("hold_last", "linear_interpolate")
DOWNSAMPLE_KINDS = ("mean", "median", "last", "sum")
AGGREGATIONS = ("mean", "std", "min", "max", "slope", "sum", "median", "last")
LABEL_ALIGNMENTS = ("window_end", "window_start")


def is_missing(values) -> np.ndarray:
    return np.isnan(np.asarray(values, dtype=np.float64))


def parse_rate(value) -> Fraction:
    """Exact sampling rate from ``"1/60"``, ``"0.33"``, ``25`` or a Fraction.

    Floats go through their shortest decimal repr, so ``0.33`` becomes 33/100.
    """
    if isinstance(value, Fraction):
        rate = value
    elif isinstance(value, bool):
        raise InvalidSpec(f"invalid sampling rate {value!r}")
    elif isinstance(value, int):
        rate = Fraction(value)
    elif isinstance(value, float):
        rate = Fraction(repr(value))
    elif isinstance(value, str):
        try:
            rate = Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidSpec(f"invalid sampling rate {value!r}") from exc
    else:
        raise InvalidSpec(f"invalid sampling rate {value!r}")
    if rate <= 0:
        raise InvalidSpec(f"sampling rate must be positive, got {value!r}")
    return rate


def format_rate(rate: Fraction) -> str:
    return str(rate)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class RawChannel:
    """One sensor stream at its native rate. Values may contain MISSING."""

    name: str
    times: np.ndarray
    values: np.ndarray
    nominal_rate_hz: Fraction
    unit: str = ""

    def __post_init__(self):
        if not self.name:
            raise InvalidSpec("channel name must be non-empty")
        times = np.array(self.times, dtype=np.int64).reshape(-1)
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if times.shape != values.shape:
            raise InvalidTable(
                f"channel {self.name!r}: {times.size} timestamps but {values.size} values"
            )
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise NonmonotonicTimestamps(f"channel {self.name!r}: timestamps not strictly increasing")
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "nominal_rate_hz", parse_rate(self.nominal_rate_hz))

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def period_ms(self) -> Fraction:
        return Fraction(1000) / self.nominal_rate_hz

    def renamed(self, name: str) -> "RawChannel":
        return RawChannel(name, self.times, self.values, self.nominal_rate_hz, self.unit)

    def shifted(self, offset_ms: int) -> "RawChannel":
        return RawChannel(self.name, self.times - offset_ms, self.values, self.nominal_rate_hz, self.unit)


@dataclass(frozen=True)
class TimeGrid:
    start: int
    period_ms: int
    count: int

    def __post_init__(self):
        if int(self.period_ms) <= 0:
            raise InvalidSpec(f"grid period must be positive, got {self.period_ms}")
        if int(self.count) <= 0:
            raise InvalidSpec(f"grid count must be positive, got {self.count}")
        object.__setattr__(self, "start", int(self.start))
        object.__setattr__(self, "period_ms", int(self.period_ms))
        object.__setattr__(self, "count", int(self.count))

    @property
    def times(self) -> np.ndarray:
        return self.start + self.period_ms * np.arange(self.count, dtype=np.int64)

    @property
    def rate_hz(self) -> Fraction:
        return Fraction(1000, self.period_ms)

    @property
    def end(self) -> int:
        return self.start + self.period_ms * (self.count - 1)

    def to_dict(self) -> dict:
        return {"start_ms": self.start, "period_ms": self.period_ms, "count": self.count}


class TimeTable:
    """Rectangular table of named float columns over strictly ordered times.

    ``grid`` is set when the rows sit on a regular grid; tables that lost
    rows (``drop_row`` cleaning, random splits) carry ``grid=None`` and
    report ``regular == False``.
    """

    def __init__(
        self,
        times,
        columns: Mapping[str, Iterable[float]],
        *,
        grid: TimeGrid | None = None,
        units: Mapping[str, str] | None = None,
    ):
        times = np.array(times, dtype=np.int64).reshape(-1)
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise InvalidTable("table timestamps must be strictly increasing")
        if grid is not None and (times.size != grid.count or not np.array_equal(times, grid.times)):
            raise InvalidTable("table timestamps do not match its grid")
        cols: dict[str, np.ndarray] = {}
        for name, values in columns.items():
            if not isinstance(name, str) or not name:
                raise InvalidTable(f"invalid column name {name!r}")
            if name == "timestamp_ms":
                raise InvalidTable("'timestamp_ms' is reserved for the time column")
            if name in cols:
                raise InvalidTable(f"duplicate column {name!r}")
            arr = np.array(values, dtype=np.float64).reshape(-1)
            if arr.size != times.size:
                raise InvalidTable(
                    f"column {name!r} has {arr.size} entries, expected {times.size}"
                )
            cols[name] = _frozen(arr)
        self._times = _frozen(times)
        self._columns = cols
        self.grid = grid
        self.units = MappingProxyType(dict(units or {}))

    @classmethod
    def from_grid(cls, grid: TimeGrid, columns, units=None) -> "TimeTable":
        return cls(grid.times, columns, grid=grid, units=units)

    @property
    def times(self) -> np.ndarray:
        return self._times

    @property
    def columns(self) -> Mapping[str, np.ndarray]:
        return MappingProxyType(self._columns)

    @property
    def column_names(self) -> list[str]:
        return list(self._columns)

    @property
    def n_rows(self) -> int:
        return int(self._times.size)

    @property
    def regular(self) -> bool:
        return self.grid is not None

    def __len__(self) -> int:
        return self.n_rows

    def __contains__(self, name: str) -> bool:
        return name in self._columns

    def __getitem__(self, name: str) -> np.ndarray:
        return self._columns[name]

    def __repr__(self) -> str:
        return f"TimeTable(rows={self.n_rows}, columns={self.column_names}, regular={self.regular})"

    def to_matrix(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.empty((self.n_rows, 0))
        return np.column_stack([self._columns[n] for n in names])

    def with_columns(self, columns: Mapping[str, Iterable[float]], *, keep_grid: bool = True) -> "TimeTable":
        return TimeTable(
            self._times,
            columns,
            grid=self.grid if keep_grid else None,
            units={k: v for k, v in self.units.items() if k in columns},
        )

    def take(self, rows) -> "TimeTable":
        """Subset of rows by sorted integer index; keeps a grid if the rows are contiguous."""
        rows = np.asarray(rows, dtype=np.int64)
        grid = None
        if self.grid is not None and rows.size > 0 and np.array_equal(
            rows, np.arange(rows[0], rows[0] + rows.size)
        ):
            grid = TimeGrid(self.grid.start + self.grid.period_ms * int(rows[0]), self.grid.period_ms, rows.size)
        return TimeTable(
            self._times[rows],
            {k: v[rows] for k, v in self._columns.items()},
            grid=grid,
            units=self.units,
        )

    def equals(self, other: "TimeTable") -> bool:
        """Bit-level equality of times, column order and values (MISSING == MISSING)."""
        if self.column_names != other.column_names or not np.array_equal(self._times, other._times):
            return False
        return all(
            np.array_equal(self._columns[k], other._columns[k], equal_nan=True) for k in self._columns
        )


@dataclass(frozen=True)
class ResamplePolicy:
    upsample_kind: str = "hold_last"
    downsample_kind: str = "mean"
    max_gap_ms: int | None = None

    def __post_init__(self):
        if self.upsample_kind not in UPSAMPLE_KINDS:
            raise InvalidSpec(f"unknown upsample kind {self.upsample_kind!r}")
        if self.downsample_kind not in DOWNSAMPLE_KINDS:
            raise InvalidSpec(f"unknown downsample kind {self.downsample_kind!r}")
        if self.max_gap_ms is not None and self.max_gap_ms <= 0:
            raise InvalidSpec("max_gap_ms must be positive")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ResamplePolicy":
        return cls(
            upsample_kind=doc.get("upsample", "hold_last"),
            downsample_kind=doc.get("downsample", "mean"),
            max_gap_ms=doc.get("max_gap_ms"),
        )

    def to_dict(self) -> dict:
        return {"upsample": self.upsample_kind, "downsample": self.downsample_kind, "max_gap_ms": self.max_gap_ms}


@dataclass(frozen=True)
class FeatureSpec:
    window_ms: int
    aggregations: tuple[str, ...] = ("mean",)
    label_alignment: str = "window_end"

    def __post_init__(self):
        if int(self.window_ms) <= 0:
            raise InvalidSpec("window_ms must be positive")
        aggs = tuple(self.aggregations)
        if not aggs:
            raise InvalidSpec("at least one aggregation is required")
        unknown = [a for a in aggs if a not in AGGREGATIONS]
        if unknown:
            raise InvalidSpec(f"unknown aggregations {unknown}")
        if len(set(aggs)) != len(aggs):
            raise InvalidSpec("duplicate aggregations")
        if self.label_alignment not in LABEL_ALIGNMENTS:
            raise InvalidSpec(f"unknown label alignment {self.label_alignment!r}")
        object.__setattr__(self, "aggregations", aggs)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FeatureSpec":
        return cls(
            window_ms=doc["window_ms"],
            aggregations=tuple(doc.get("aggregations", ("mean",))),
            label_alignment=doc.get("label_alignment", "window_end"),
        )

    def to_dict(self) -> dict:
        return {
            "window_ms": self.window_ms,
            "aggregations": list(self.aggregations),
            "label_alignment": self.label_alignment,
        }


@dataclass(frozen=True)
class GridStrategy:
    """Either a named master channel, an explicit period, or (neither) the slowest channel."""

    master_channel: str | None = None
    period_ms: int | None = None

    def __post_init__(self):
        if self.master_channel is not None and self.period_ms is not None:
            raise InvalidSpec("grid strategy takes a master channel or a period, not both")
        if self.period_ms is not None and int(self.period_ms) <= 0:
            raise InvalidSpec("grid period must be positive")

    @classmethod
    def from_dict(cls, doc: Mapping | None) -> "GridStrategy":
        doc = doc or {}
        return cls(master_channel=doc.get("master_channel"), period_ms=doc.get("period_ms"))

    def to_dict(self) -> dict:
        if self.master_channel is not None:
            return {"master_channel": self.master_channel}
        if self.period_ms is not None:
            return {"period_ms": self.period_ms}
        return {}


# -- numerics ---------------------------------------------------------------
# Values are shifted by their first element before summing so that a
# constant window yields its constant exactly (mean) and exactly zero
# (std, slope).


def _mean(v: np.ndarray) -> float:
    return float(v[0] + np.mean(v - v[0]))


def _std(v: np.ndarray) -> float:
    if v.size < 2:
        return MISSING
    d = v - v[0]
    return float(np.sqrt(np.sum((d - np.mean(d)) ** 2) / (v.size - 1)))


def ols_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of ``y`` against ``x``; MISSING if ``x`` has no spread."""
    if x.size < 2:
        return MISSING
    xc = x - np.mean(x)
    denom = float(np.sum(xc * xc))
    if denom == 0.0:
        return MISSING
    return float(np.sum(xc * (y - y[0])) / denom)


def _aggregate(kind: str, v: np.ndarray, t_ms: np.ndarray) -> float:
    if v.size == 0:
        return MISSING
    if kind == "mean":
        return _mean(v)
    if kind == "median":
        return float(np.median(v))
    if kind == "last":
        return float(v[-1])
    if kind == "sum":
        return float(np.sum(v))
    if kind == "min":
        return float(np.min(v))
    if kind == "max":
        return float(np.max(v))
    if kind == "std":
        return _std(v)
    if kind == "slope":
        return ols_slope((t_ms - t_ms[0]) / 1000.0, v)
    raise InvalidSpec(f"unknown aggregation {kind!r}")


def _window_values(channel: RawChannel, lo_ms: np.ndarray, hi_ms: np.ndarray):
    """Yield (values, times) of non-missing samples in each ``[lo, hi)``."""
    lo = np.searchsorted(channel.times, lo_ms, side="left")
    hi = np.searchsorted(channel.times, hi_ms, side="left")
    for a, b in zip(lo, hi):
        v = channel.values[a:b]
        t = channel.times[a:b]
        keep = ~np.isnan(v)
        yield v[keep], t[keep]


def cell_counts(channel: RawChannel, grid: TimeGrid) -> np.ndarray:
    """Number of source samples (missing or not) falling in each grid cell."""
    t = grid.times
    lo = np.searchsorted(channel.times, t, side="left")
    hi = np.searchsorted(channel.times, t + grid.period_ms, side="left")
    return hi - lo


def resample_direction(channel: RawChannel, grid: TimeGrid) -> str:
    if channel.nominal_rate_hz > grid.rate_hz:
        return "downsampled"
    if channel.nominal_rate_hz < grid.rate_hz:
        return "upsampled"
    return "aligned"


def resample(channel: RawChannel, grid: TimeGrid, policy: ResamplePolicy | None = None) -> np.ndarray:
    """Bring ``channel`` onto ``grid``.

    Channels at least as fast as the grid are aggregated per cell
    ``[t, t + period)`` with ``policy.downsample_kind``. Slower channels are
    filled with ``policy.upsample_kind``; a fill reaching further than
    ``max_gap_ms`` from its source sample(s) stays MISSING.
    """
    policy = policy or ResamplePolicy()
    if len(channel) == 0:
        raise EmptyChannel(f"channel {channel.name!r} has no samples")
    t = grid.times
    if channel.nominal_rate_hz >= grid.rate_hz:
        out = np.empty(grid.count)
        for i, (v, tv) in enumerate(_window_values(channel, t, t + grid.period_ms)):
            out[i] = _aggregate(policy.downsample_kind, v, tv)
        return out
    if policy.upsample_kind == "hold_last":
        return _hold_last(channel, t, policy.max_gap_ms)
    return _interpolate(channel, t, policy.max_gap_ms)


def _hold_last(channel: RawChannel, t: np.ndarray, max_gap_ms: int | None) -> np.ndarray:
    idx = np.searchsorted(channel.times, t, side="right") - 1
    out = np.full(t.size, MISSING)
    ok = idx >= 0
    out[ok] = channel.values[idx[ok]]
    if max_gap_ms is not None:
        stale = ok & (t - channel.times[np.maximum(idx, 0)] > max_gap_ms)
        out[stale] = MISSING
    return out


def _interpolate(channel: RawChannel, t: np.ndarray, max_gap_ms: int | None) -> np.ndarray:
    times, values = channel.times, channel.values
    prev = np.searchsorted(times, t, side="right") - 1
    out = np.full(t.size, MISSING)
    for i, (ti, p) in enumerate(zip(t, prev)):
        if p < 0:
            continue
        if times[p] == ti:
            out[i] = values[p]
            continue
        n = p + 1
        if n >= times.size:
            continue
        t0, t1 = times[p], times[n]
        if max_gap_ms is not None and t1 - t0 > max_gap_ms:
            continue
        v0, v1 = values[p], values[n]
        out[i] = v0 + (v1 - v0) * ((ti - t0) / (t1 - t0))
    return out


def window_aggregate(channel: RawChannel, spec: FeatureSpec, grid: TimeGrid) -> dict[str, np.ndarray]:
    """Per grid point, aggregate the window before (``window_end``) or after it.

    Returns one column per aggregation, named ``<channel>_<aggregation>``.
    """
    if spec.window_ms % grid.period_ms != 0:
        raise IncompatibleWindow(
            f"window {spec.window_ms} ms is not a multiple of the grid period {grid.period_ms} ms"
        )
    t = grid.times
    if spec.label_alignment == "window_end":
        lo, hi = t - spec.window_ms, t
    else:
        lo, hi = t, t + spec.window_ms
    out = {f"{channel.name}_{agg}": np.empty(grid.count) for agg in spec.aggregations}
    for i, (v, tv) in enumerate(_window_values(channel, lo, hi)):
        for agg in spec.aggregations:
            out[f"{channel.name}_{agg}"][i] = _aggregate(agg, v, tv)
    return out


def _grid_period(period: Fraction) -> int:
    # Grids are integer-millisecond; e.g. 33/100 Hz (3030.30 ms) rounds to 3030 ms.
    return max(1, int(round(period)))


def infer_grid(channels: Sequence[RawChannel], strategy: GridStrategy | None = None) -> TimeGrid:
    """Grid over the common time span of ``channels``.

    The period comes from the master channel, an explicit value, or by
    default the slowest channel. With a master channel the grid points sit
    on that channel's own sample times.
    """
    strategy = strategy or GridStrategy()
    if not channels:
        raise EmptyChannel("no channels to build a grid from")
    for ch in channels:
        if len(ch) == 0:
            raise EmptyChannel(f"channel {ch.name!r} has no samples")
    start = max(int(ch.times[0]) for ch in channels)
    end = min(int(ch.times[-1]) for ch in channels)
    if end < start:
        raise NoTemporalOverlap(
            "channel time ranges do not intersect: "
            + ", ".join(f"{ch.name}=[{ch.times[0]}, {ch.times[-1]}]" for ch in channels)
        )
    if strategy.period_ms is not None:
        period = int(strategy.period_ms)
    else:
        if strategy.master_channel is not None:
            by_name = {ch.name: ch for ch in channels}
            if strategy.master_channel not in by_name:
                raise UnknownMasterChannel(f"master channel {strategy.master_channel!r} not found")
            master = by_name[strategy.master_channel]
            first = int(master.times[np.searchsorted(master.times, start, side="left")])
            start = first
        else:
            master = min(channels, key=lambda ch: ch.nominal_rate_hz)
        period = _grid_period(master.period_ms)
    count = (end - start) // period + 1
    if count < 1:
        raise NoTemporalOverlap("no grid point falls inside the common time span")
    return TimeGrid(start, period, count)
