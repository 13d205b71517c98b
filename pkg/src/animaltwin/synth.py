"""Synthetic scenarios with planted ground truth.

Three scenario shapes are generated:

``pig``
    Wearable channels at 1 Hz (heat flux, skin temperature, ODBA, heart rate)
    and respiration-chamber heat production every 3 minutes. The chamber
    cycles through 12, 22 and 32 degC; heat production is a planted linear
    function of the 3-minute window means plus a V-shaped thermoregulation
    term that is zero at 22 degC, which a linear model cannot represent.
``salmon``
    Tri-axial acceleration at 25 Hz and dissolved oxygen at 1 Hz. Oxygen is
    drawn down in each 40 s window at the rate implied by a planted linear
    relation between MO2 and the window's mean ODBA.
``mussel``
    Shell opening, heart rate, dissolved oxygen and respiration rate at
    1-minute cadence, with trend-dominated signals so that injected spikes
    stand out.

Every random draw comes from ``numpy.random.default_rng(seed)``, so the same
config always produces byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from ._io import dump_json, read_json, write_text
from ._schema import validate
from .errors import DurationTooShort, InvalidSpec
from .ingest import format_source_csv
from .sensors import RespirometrySetup, TriAxialAccel, odba
from .timeseries import FeatureSpec, RawChannel, TimeGrid, window_aggregate

KINDS = ("pig", "salmon", "mussel")
GROUND_TRUTH_SCHEMA_VERSION = 1
MIN_LABELS = 10
LABEL_PERIOD_S = {"pig": 180, "salmon": 40, "mussel": 60}
DEFAULT_DURATION_S = {"pig": 10800, "salmon": 1000, "mussel": 5400}
PIG_CONDITIONS_C = (12.0, 22.0, 32.0)
THERMONEUTRAL_C = 22.0
SALMON_SETUP = RespirometrySetup(volume_liters=100.0, mass_kg=2.0)
ACCEL_RATE_HZ = 25
REPORT_TIMESTAMP = "2000-01-01T00:00:00Z"

# Sensor noise sds. Skin temperature and acceleration use the typical
# accuracy of the wearables; channels without a published figure use a
# small fraction of their synthetic range. Target sds are set so the
# planted model explains roughly 95% of test variance.
DEFAULT_NOISE_SD = {
    "pig": {
        "heat_flux": 0.5,
        "skin_temp": 0.05,
        "odba": 0.01,
        "heart_rate": 1.0,
        "ambient_temp": 0.05,
        "heat_production": 3.0,
    },
    "salmon": {"accel": 0.0136, "dissolved_oxygen": 0.0005},
    "mussel": {
        "shell_opening": 0.05,
        "heart_rate": 0.3,
        "dissolved_oxygen": 0.003,
        "respiration_rate": 0.01,
    },
}

DEFAULT_PLANTED = {
    "pig": {
        "intercept": 60.0,
        "coefficients": {
            "wearable.heat_flux_mean": 1.5,
            "wearable.skin_temp_mean": 2.0,
            "wearable.odba_mean": 40.0,
            "wearable.heart_rate_mean": 0.8,
            "chamber.ambient_temp": -1.0,
        },
    },
    "salmon": {"intercept": 120.0, "coefficients": {"odba_mean": 80.0}},
    "mussel": {
        "intercept": 0.2,
        "coefficients": {
            "mussel.shell_opening": 0.05,
            "mussel.heart_rate": 0.02,
            "mussel.dissolved_oxygen": 0.1,
        },
    },
}

DEFAULT_NONLINEAR_AMPLITUDE = {"pig": 30.0, "salmon": 0.0, "mussel": 0.0}

TARGETS = {"pig": "chamber.heat_production", "salmon": "mo2", "mussel": "mussel.respiration_rate"}


@dataclass(frozen=True)
class ScenarioConfig:
    """What to generate.

    Parameters
    ----------
    kind : {"pig", "salmon", "mussel"}
    duration_s : int, optional
        Defaults to 3 h (pig), 1000 s (salmon) or 90 min (mussel).
    seed : int, default=0
    noise_sd : mapping, optional
        Per-channel overrides of ``DEFAULT_NOISE_SD[kind]``.
    intercept, coefficients : optional
        Overrides of the planted linear model; coefficients are keyed by
        merged column name.
    nonlinear_amplitude : float, optional
        Size of the thermoregulation term (pig only).
    n_missing, n_outliers : int, default=0
        Faults injected into the sensor channels.
    outlier_sd : float, default=8.0
        Spike size in units of the clean column's sample sd.
    """

    kind: str
    duration_s: int | None = None
    seed: int = 0
    noise_sd: Mapping[str, float] = field(default_factory=dict)
    intercept: float | None = None
    coefficients: Mapping[str, float] | None = None
    nonlinear_amplitude: float | None = None
    n_missing: int = 0
    n_outliers: int = 0
    outlier_sd: float = 8.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown scenario kind {self.kind!r}")
        unknown = set(self.noise_sd) - set(DEFAULT_NOISE_SD[self.kind])
        if unknown:
            raise InvalidSpec(f"no channel(s) {sorted(unknown)} in the {self.kind} scenario")
        if self.coefficients is not None:
            extra = set(self.coefficients) - set(DEFAULT_PLANTED[self.kind]["coefficients"])
            if extra:
                raise InvalidSpec(f"no feature(s) {sorted(extra)} in the {self.kind} scenario")
        if self.n_missing < 0 or self.n_outliers < 0 or self.outlier_sd <= 0:
            raise InvalidSpec("fault counts must be non-negative and outlier_sd positive")

    @classmethod
    def default(cls, kind: str) -> "ScenarioConfig":
        return cls(kind=kind)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ScenarioConfig":
        validate(doc, "scenario_config", "scenario config")
        planted = doc.get("planted", {})
        return cls(
            kind=doc["kind"],
            duration_s=doc.get("duration_s"),
            seed=doc.get("seed", 0),
            noise_sd=dict(doc.get("noise_sd", {})),
            intercept=planted.get("intercept"),
            coefficients=planted.get("coefficients"),
            nonlinear_amplitude=doc.get("nonlinear_amplitude"),
            n_missing=doc.get("n_missing", 0),
            n_outliers=doc.get("n_outliers", 0),
            outlier_sd=doc.get("outlier_sd", 8.0),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_dict(read_json(path, "scenario config"))

    @property
    def duration(self) -> int:
        return DEFAULT_DURATION_S[self.kind] if self.duration_s is None else int(self.duration_s)

    @property
    def noise(self) -> dict[str, float]:
        return {**DEFAULT_NOISE_SD[self.kind], **self.noise_sd}

    @property
    def planted(self) -> dict:
        base = DEFAULT_PLANTED[self.kind]
        coefs = dict(base["coefficients"])
        coefs.update(self.coefficients or {})
        return {"intercept": base["intercept"] if self.intercept is None else self.intercept, "coefficients": coefs}

    @property
    def amplitude(self) -> float:
        if self.nonlinear_amplitude is None:
            return DEFAULT_NONLINEAR_AMPLITUDE[self.kind]
        return float(self.nonlinear_amplitude)

    @property
    def n_labels(self) -> int:
        return self.duration // LABEL_PERIOD_S[self.kind]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "duration_s": self.duration,
            "seed": self.seed,
            "noise_sd": self.noise,
            "planted": self.planted,
            "nonlinear_amplitude": self.amplitude,
            "n_missing": self.n_missing,
            "n_outliers": self.n_outliers,
            "outlier_sd": self.outlier_sd,
        }

    def zero_noise(self) -> "ScenarioConfig":
        """Same scenario without sensor noise, target noise, nonlinearity or faults."""
        return replace(
            self,
            noise_sd={k: 0.0 for k in DEFAULT_NOISE_SD[self.kind]},
            nonlinear_amplitude=0.0,
            n_missing=0,
            n_outliers=0,
        )


@dataclass
class Scenario:
    """In-memory result before it is written out."""

    files: dict[str, str]
    ground_truth: dict
    documents: dict[str, dict]


def _planted_value(planted: dict, features: Mapping[str, np.ndarray]) -> np.ndarray:
    out = np.full(len(next(iter(features.values()))), float(planted["intercept"]))
    for name, coef in planted["coefficients"].items():
        out = out + coef * features[name]
    return out


def _window_means(name: str, times_ms: np.ndarray, values: np.ndarray, rate, window_ms: int, grid: TimeGrid):
    ch = RawChannel(name, times_ms, values, rate)
    return window_aggregate(ch, FeatureSpec(window_ms, ("mean",)), grid)[f"{name}_mean"]


def _inject_faults(rng, columns: dict[str, np.ndarray], times_ms: np.ndarray, config: ScenarioConfig, file: str):
    """Blank ``n_missing`` cells and spike ``n_outliers`` cells at distinct positions."""
    names = list(columns)
    n_rows = len(times_ms)
    total = config.n_missing + config.n_outliers
    if total > n_rows * len(names):
        raise InvalidSpec(f"cannot place {total} faults in {n_rows * len(names)} cells")
    cells = rng.choice(n_rows * len(names), size=total, replace=False) if total else np.array([], dtype=np.int64)
    clean_sd = {c: float(np.std(columns[c], ddof=1)) for c in names}
    missing, outliers = [], []
    for i, cell in enumerate(sorted(int(c) for c in cells[: config.n_missing])):
        row, col = divmod(cell, len(names))
        columns[names[col]][row] = np.nan
        missing.append({"file": file, "column": names[col], "row": row, "timestamp_ms": int(times_ms[row])})
    signs = rng.choice([-1.0, 1.0], size=config.n_outliers) if config.n_outliers else []
    for cell, sign in sorted(zip((int(c) for c in cells[config.n_missing :]), signs)):
        row, col = divmod(cell, len(names))
        name = names[col]
        delta = sign * config.outlier_sd * clean_sd[name]
        columns[name][row] = columns[name][row] + delta
        outliers.append(
            {
                "file": file,
                "column": name,
                "row": row,
                "timestamp_ms": int(times_ms[row]),
                "offset": float(delta),
                "magnitude_sd": config.outlier_sd,
            }
        )
    return {"missing": missing, "outliers": outliers, "clean_sd": clean_sd}


# -- pig -------------------------------------------------------------------


def _pig(config: ScenarioConfig, rng: np.random.Generator) -> Scenario:
    period = LABEL_PERIOD_S["pig"]
    n = config.n_labels
    noise = config.noise
    seconds = np.arange(config.duration + 1)
    t_ms = seconds * 1000
    window = np.minimum(seconds // period, n - 1)

    condition = np.array([PIG_CONDITIONS_C[(k // 3) % 3] for k in range(n)])
    activity = rng.uniform(0.05, 0.35, n)
    hr_level = 85.0 + 60.0 * activity + rng.normal(0.0, 3.0, n)
    skin_level = 33.0 + 0.12 * (condition - THERMONEUTRAL_C) + rng.normal(0.0, 0.4, n)
    flux_level = 50.0 - 1.2 * (condition - THERMONEUTRAL_C) + 15.0 * activity + rng.normal(0.0, 2.0, n)

    phase = 2 * np.pi * seconds / 60.0
    clean = {
        "heat_flux": flux_level[window] + 1.5 * np.sin(phase),
        "skin_temp": skin_level[window] + 0.1 * np.sin(phase / 3),
        "odba": np.maximum(activity[window] * (1.0 + 0.5 * np.sin(phase * 7)), 0.0),
        "heart_rate": hr_level[window] + 3.0 * np.cos(phase / 2),
    }
    measured = {k: v + rng.normal(0.0, noise[k], v.size) for k, v in clean.items()}
    measured["odba"] = np.maximum(measured["odba"], 0.0)

    grid = TimeGrid(period * 1000, period * 1000, n)
    features = {
        f"wearable.{k}_mean": _window_means(k, t_ms, v, 1, period * 1000, grid) for k, v in measured.items()
    }
    ambient = condition + rng.normal(0.0, noise["ambient_temp"], n)
    features["chamber.ambient_temp"] = ambient
    planted = config.planted
    thermo = config.amplitude * np.abs(condition - THERMONEUTRAL_C) / 10.0
    heat = _planted_value(planted, features) + thermo + rng.normal(0.0, noise["heat_production"], n)

    faults = _inject_faults(rng, measured, t_ms, config, "wearable.csv")
    label_ms = grid.times
    files = {
        "wearable.csv": format_source_csv("timestamp_ms", t_ms, measured),
        "chamber.csv": format_source_csv(
            "timestamp_ms", label_ms, {"heat_production": heat, "ambient_temp": ambient}
        ),
    }
    merge = {
        "sources": [
            {
                "path": "wearable.csv",
                "channel_name": "wearable",
                "timestamp_column": "timestamp_ms",
                "value_columns": list(measured),
                "nominal_rate_hz": 1,
                "units": {"heat_flux": "W/m^2", "skin_temp": "degC", "odba": "g", "heart_rate": "BPM"},
            },
            {
                "path": "chamber.csv",
                "channel_name": "chamber",
                "timestamp_column": "timestamp_ms",
                "value_columns": ["heat_production", "ambient_temp"],
                "nominal_rate_hz": f"1/{period}",
                "units": {"heat_production": "W", "ambient_temp": "degC"},
            },
        ],
        "grid": {"master_channel": TARGETS["pig"]},
        "features": {
            f"wearable.{k}": {"window_ms": period * 1000, "aggregations": ["mean"], "label_alignment": "window_end"}
            for k in measured
        },
    }
    truth = {
        "nonlinear": {
            "amplitude": config.amplitude,
            "form": "amplitude * |condition_degC - 22| / 10",
            "conditions_degC": condition.tolist(),
        },
        "label_times_ms": label_ms.tolist(),
        "rates_hz": {"wearable.csv": "1", "chamber.csv": f"1/{period}"},
    }
    return Scenario(files, {**truth, "faults": faults}, {"merge.json": merge})


# -- salmon ----------------------------------------------------------------


def _salmon(config: ScenarioConfig, rng: np.random.Generator) -> Scenario:
    period = LABEL_PERIOD_S["salmon"]
    noise = config.noise
    n_accel = config.duration * ACCEL_RATE_HZ
    t_accel = np.arange(n_accel, dtype=np.int64) * (1000 // ACCEL_RATE_HZ)
    n_windows = config.n_labels

    # Swimming effort changes from window to window; tail beats near 1.5 Hz.
    effort = rng.uniform(0.1, 1.2, n_windows + 1)
    level = effort[np.minimum(t_accel // (period * 1000), n_windows)]
    tt = t_accel / 1000.0
    beat = 2 * np.pi * 1.5 * tt
    clean = {
        "x": level * np.sin(beat),
        "y": 0.5 * level * np.sin(beat + 1.0),
        "z": 9.80665 + 0.3 * level * np.cos(2 * beat),
    }
    measured = {k: v + rng.normal(0.0, noise["accel"], v.size) for k, v in clean.items()}

    axes = [RawChannel(f"accel.{k}", t_accel, v, ACCEL_RATE_HZ, "m/s^2") for k, v in measured.items()]
    activity = odba(TriAxialAccel(*axes))
    grid = TimeGrid(period * 1000, period * 1000, n_windows)
    odba_mean = _window_means("odba", activity.times, activity.values, ACCEL_RATE_HZ, period * 1000, grid)
    planted = config.planted
    mo2 = _planted_value(planted, {"odba_mean": odba_mean})

    # Oxygen falls linearly inside each window at the rate that yields mo2.
    t_do = np.arange(config.duration, dtype=np.int64)
    rate_per_s = mo2 * SALMON_SETUP.mass_kg / (3600.0 * SALMON_SETUP.volume_liters)
    k = np.minimum(t_do // period, n_windows - 1)
    start = 9.5 - np.concatenate([[0.0], np.cumsum(rate_per_s * period)])[:-1]
    do_clean = start[k] - rate_per_s[k] * (t_do - k * period)
    do = do_clean + rng.normal(0.0, noise["dissolved_oxygen"], do_clean.size)

    faults = _inject_faults(rng, measured, t_accel, config, "accel.csv")
    files = {
        "accel.csv": format_source_csv("timestamp_ms", t_accel, measured),
        "oxygen.csv": format_source_csv("timestamp_ms", t_do * 1000, {"do": do}),
    }
    merge = {
        "sources": [
            {
                "path": "accel.csv",
                "channel_name": "accel",
                "timestamp_column": "timestamp_ms",
                "value_columns": ["x", "y", "z"],
                "nominal_rate_hz": ACCEL_RATE_HZ,
                "unit": "m/s^2",
            },
            {
                "path": "oxygen.csv",
                "channel_name": "chamber",
                "timestamp_column": "timestamp_ms",
                "value_columns": ["do"],
                "nominal_rate_hz": 1,
                "unit": "mg/L",
            },
        ],
        "derived": [
            {"kind": "odba", "name": "odba", "axes": ["accel.x", "accel.y", "accel.z"], "drop_inputs": True},
            {
                "kind": "oxygen_uptake",
                "name": "mo2",
                "source": "chamber.do",
                "volume_liters": SALMON_SETUP.volume_liters,
                "mass_kg": SALMON_SETUP.mass_kg,
                "slope_window_ms": period * 1000,
            },
        ],
        "grid": {"master_channel": "mo2"},
        "features": {"odba": {"window_ms": period * 1000, "aggregations": ["mean"], "label_alignment": "window_end"}},
    }
    truth = {
        "mo2_planted": mo2.tolist(),
        "label_times_ms": grid.times.tolist(),
        "setup": {"volume_liters": SALMON_SETUP.volume_liters, "mass_kg": SALMON_SETUP.mass_kg},
        "rates_hz": {"accel.csv": str(ACCEL_RATE_HZ), "oxygen.csv": "1"},
    }
    return Scenario(files, {**truth, "faults": faults}, {"merge.json": merge})


# -- mussel ----------------------------------------------------------------


def _mussel(config: ScenarioConfig, rng: np.random.Generator) -> Scenario:
    period = LABEL_PERIOD_S["mussel"]
    n = config.n_labels
    noise = config.noise
    u = np.arange(n) / max(n - 1, 1)
    # Valves close, heart rate slows and oxygen is drawn down over the exposure.
    clean = {
        "shell_opening": 8.0 - 5.0 * u + rng.uniform(-0.2, 0.2),
        "heart_rate": 30.0 - 10.0 * u**2 + rng.uniform(-1.0, 1.0),
        "dissolved_oxygen": 7.8 - 0.6 * u + 0.3 * np.sin(2 * np.pi * u) + rng.uniform(-0.1, 0.1),
    }
    measured = {k: v + rng.normal(0.0, noise[k], n) for k, v in clean.items()}
    features = {f"mussel.{k}": v for k, v in measured.items()}
    target = _planted_value(config.planted, features) + rng.normal(0.0, noise["respiration_rate"], n)

    elapsed_s = np.arange(n) * period
    faults = _inject_faults(rng, measured, elapsed_s * 1000, config, "mussel.csv")
    files = {
        "mussel.csv": format_source_csv(
            "elapsed_s", elapsed_s * 1000, {**measured, "respiration_rate": target}, timestamp_format="elapsed_s"
        ),
    }
    merge = {
        "sources": [
            {
                "path": "mussel.csv",
                "channel_name": "mussel",
                "timestamp_column": "elapsed_s",
                "timestamp_format": "elapsed_s",
                "value_columns": [*measured, "respiration_rate"],
                "nominal_rate_hz": f"1/{period}",
                "units": {
                    "shell_opening": "mm",
                    "heart_rate": "BPM",
                    "dissolved_oxygen": "mg/L",
                    "respiration_rate": "mg O2/h",
                },
            }
        ],
    }
    truth = {"label_times_ms": (elapsed_s * 1000).tolist(), "rates_hz": {"mussel.csv": f"1/{period}"}}
    return Scenario(files, {**truth, "faults": faults}, {"merge.json": merge})


_BUILDERS = {"pig": _pig, "salmon": _salmon, "mussel": _mussel}


def _manifest(name: str, sources: list[str], model_spec: str) -> dict:
    return {
        "schema_version": 1,
        "name": name,
        "steps": [
            {
                "id": "merge",
                "component": "merge",
                "params": "merge.json",
                "inputs": {"sources": sources},
                "outputs": {"table": "merged.csv", "report": "merge_report.json"},
            },
            {
                "id": "quality",
                "component": "quality",
                "params": "quality.json",
                "inputs": {"table": "merged.csv"},
                "outputs": {"table": "clean.csv", "report": "quality_report.json"},
            },
            {
                "id": "split",
                "component": "split",
                "params": "split.json",
                "inputs": {"table": "clean.csv"},
                "outputs": {"train": "train.csv", "test": "test.csv", "report": "split_report.json"},
            },
            {
                "id": "train",
                "component": "train",
                "params": model_spec,
                "inputs": {"train": "train.csv", "test": "test.csv"},
                "outputs": {"model": "model.json", "predictions": "predictions.csv"},
            },
            {
                "id": "report",
                "component": "report",
                "params": "report_params.json",
                "inputs": {"model": "model.json", "predictions": "predictions.csv", "manifest": f"{name}.json"},
                "outputs": {"markdown": "report.md", "json": "report.json"},
            },
        ],
    }


def build(config: ScenarioConfig) -> Scenario:
    """Generate a scenario in memory.

    Raises
    ------
    DurationTooShort
        If the duration gives fewer than 10 target samples.
    """
    if config.n_labels < MIN_LABELS:
        raise DurationTooShort(
            f"{config.kind} needs at least {MIN_LABELS * LABEL_PERIOD_S[config.kind]} s "
            f"for {MIN_LABELS} target samples, got {config.duration} s"
        )
    rng = np.random.default_rng(config.seed)
    scenario = _BUILDERS[config.kind](config, rng)
    target = TARGETS[config.kind]
    features = list(config.planted["coefficients"])
    docs = scenario.documents
    docs["quality.json"] = {
        "outliers": {"method": "iqr", "factor": 1.5},
        "outlier_action": "flag_only",
        "missing": {"policy": "linear_interpolate", "max_gap_cells": 3},
    }
    docs["split.json"] = {"target_column": target, "train_fraction": "5/6", "mode": "chronological"}
    docs["model_linear.json"] = {"kind": "linear", "target": target, "features": features}
    docs["model_forest.json"] = {
        "kind": "random_forest",
        "target": target,
        "features": features,
        "n_trees": 100,
        "min_samples_leaf": 5 if config.kind == "pig" else 2,
        "seed": 1,
    }
    title = {"pig": "heat production", "salmon": "oxygen uptake", "mussel": "respiration rate"}[config.kind]
    docs["report_params.json"] = {"title": f"Synthetic {config.kind} scenario: {title}", "generated_at": REPORT_TIMESTAMP}
    sources = [s["path"] for s in docs["merge.json"]["sources"]]
    docs["pipeline.json"] = _manifest("pipeline", sources, "model_linear.json")
    docs["pipeline_forest.json"] = _manifest("pipeline_forest", sources, "model_forest.json")
    docs["scenario.json"] = config.to_dict()

    truth = scenario.ground_truth
    faults = truth.pop("faults")
    scenario.ground_truth = {
        "schema_version": GROUND_TRUTH_SCHEMA_VERSION,
        "kind": config.kind,
        "seed": config.seed,
        "duration_s": config.duration,
        "label_period_s": LABEL_PERIOD_S[config.kind],
        "n_labels": config.n_labels,
        "target": target,
        "features": features,
        "planted": config.planted,
        "noise_sd": config.noise,
        "faults": faults,
        "files": {name: {"rows": text.count("\n") - 1} for name, text in scenario.files.items()},
        **truth,
    }
    validate(scenario.ground_truth, "ground_truth", "ground truth")
    return scenario


def generate(config: ScenarioConfig, out_dir: str | Path) -> dict:
    """Write a scenario's CSVs, parameter documents, manifests and ground truth.

    Returns the ground-truth document.
    """
    scenario = build(config)
    out = Path(out_dir)
    for name, text in scenario.files.items():
        write_text(out / name, text)
    for name, doc in scenario.documents.items():
        write_text(out / name, dump_json(doc))
    write_text(out / "ground_truth.json", dump_json(scenario.ground_truth))
    return scenario.ground_truth
