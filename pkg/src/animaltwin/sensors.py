"""Software sensors: quantities inferred from raw hardware channels.

``odba`` uses the absolute-sum form of overall dynamic body acceleration
(static component = centred running mean per axis). ``oxygen_uptake_rate``
uses the closed-respirometry slope formula ``-dDO/dt * V / m``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import MismatchedAxes, NonpositiveSetup, WindowTooShort
from .timeseries import MISSING, RawChannel, ols_slope

ODBA_FORM = "absolute-sum"
DEFAULT_STATIC_WINDOW_MS = 2000
MO2_UNIT = "mg O2/kg/h"


@dataclass(frozen=True, eq=False)
class TriAxialAccel:
    x: RawChannel
    y: RawChannel
    z: RawChannel

    def __post_init__(self):
        if not (np.array_equal(self.x.times, self.y.times) and np.array_equal(self.x.times, self.z.times)):
            raise MismatchedAxes("acceleration axes do not share timestamps")


@dataclass(frozen=True)
class RespirometrySetup:
    volume_liters: float
    mass_kg: float

    def __post_init__(self):
        if not (self.volume_liters > 0 and self.mass_kg > 0):
            raise NonpositiveSetup(
                f"volume and mass must be positive, got {self.volume_liters} L and {self.mass_kg} kg"
            )


def _samples_in(window_ms: int, rate_hz: Fraction) -> int:
    return int(Fraction(window_ms) * rate_hz / 1000)


def running_mean(values: np.ndarray, width: int) -> np.ndarray:
    """Centred running mean over ``width`` samples, shrinking at the edges.

    Sample ``i`` averages indices ``[i - width // 2, i - width // 2 + width)``
    clipped to the series; MISSING samples are skipped.
    """
    n = values.size
    half = width // 2
    ok = ~np.isnan(values)
    padded = np.zeros(n + width - 1)
    padded[half : half + n] = np.where(ok, values, 0.0)
    weight = np.zeros(n + width - 1)
    weight[half : half + n] = ok
    sums = sliding_window_view(padded, width).sum(axis=1)
    counts = sliding_window_view(weight, width).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), MISSING)


def _dynamic(axis: np.ndarray, width: int) -> np.ndarray:
    ok = ~np.isnan(axis)
    if not ok.any():
        return np.full(axis.size, MISSING)
    # The offset is removed first so a constant axis gives exactly zero.
    shifted = axis - axis[ok][0]
    return np.abs(shifted - running_mean(shifted, width))


def odba(accel: TriAxialAccel, static_window_ms: int = DEFAULT_STATIC_WINDOW_MS, name: str = "odba") -> RawChannel:
    """Overall dynamic body acceleration, one output sample per input sample."""
    rate = accel.x.nominal_rate_hz
    width = _samples_in(static_window_ms, rate)
    if width < 2:
        raise WindowTooShort(
            f"static window of {static_window_ms} ms holds {width} sample(s) at {rate} Hz; need at least 2"
        )
    total = sum(_dynamic(axis.values, width) for axis in (accel.x, accel.y, accel.z))
    return RawChannel(name, accel.x.times, total, rate, accel.x.unit or "m/s^2")


def oxygen_uptake_rate(
    dissolved_oxygen: RawChannel,
    setup: RespirometrySetup,
    slope_window_ms: int,
    name: str = "mo2",
) -> RawChannel:
    """Mass-specific oxygen uptake per consecutive slope window.

    Windows ``[t0 + k*w, t0 + (k+1)*w)`` tile the series from its first
    sample; only windows fully covered by the recording are emitted, each
    timestamped at its end. A rising DO gives a negative uptake, kept as is.
    """
    rate = dissolved_oxygen.nominal_rate_hz
    if _samples_in(slope_window_ms, rate) < 2:
        raise WindowTooShort(f"slope window of {slope_window_ms} ms holds fewer than 2 samples at {rate} Hz")
    times = dissolved_oxygen.times
    values = dissolved_oxygen.values
    if times.size < 2:
        raise WindowTooShort("dissolved-oxygen channel has fewer than 2 samples")
    t0 = int(times[0])
    covered_until = Fraction(int(times[-1])) + dissolved_oxygen.period_ms
    ends, rates = [], []
    k = 0
    while t0 + (k + 1) * slope_window_ms <= covered_until:
        lo, hi = t0 + k * slope_window_ms, t0 + (k + 1) * slope_window_ms
        a, b = np.searchsorted(times, [lo, hi], side="left")
        t, v = times[a:b], values[a:b]
        keep = ~np.isnan(v)
        t, v = t[keep], v[keep]
        slope_per_s = ols_slope((t - lo) / 1000.0, v) if v.size >= 2 else MISSING
        ends.append(hi)
        # + 0.0 turns a -0.0 from a flat window into 0.0
        rates.append((-(slope_per_s * 3600.0) * setup.volume_liters) / setup.mass_kg + 0.0)
        k += 1
    if not ends:
        raise WindowTooShort("recording is shorter than one slope window")
    return RawChannel(name, ends, rates, Fraction(1000, slope_window_ms), MO2_UNIT)
