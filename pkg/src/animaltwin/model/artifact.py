"""Model specs, trained-model artifacts and their versioned JSON files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .. import _prng
from .._io import canonical_json, dump_json, read_json, sha256_bytes, write_text
from .._schema import schema_errors, validate
from ..errors import (
    CorruptArtifact,
    FileNotFound,
    InvalidSpec,
    MissingFeatureColumn,
    ModelTableSchemaMismatch,
    UnsupportedSchemaVersion,
)
from ..timeseries import TimeTable
from .forest import RandomForestRegressor, Tree
from .linear import LinearRegression

SCHEMA_VERSION = 1
ARTIFACT_FORMAT = "animaltwin.model"
MODEL_KINDS = ("linear", "random_forest")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    target: str
    features: tuple[str, ...]
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 5
    mtry: int | None = None
    seed: int = 0
    ridge_epsilon: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if self.kind not in MODEL_KINDS:
            raise InvalidSpec(f"unknown model kind {self.kind!r}")
        if not self.features:
            raise InvalidSpec("at least one feature is required")
        if len(set(self.features)) != len(self.features):
            raise InvalidSpec("duplicate feature names")
        if self.target in self.features:
            raise InvalidSpec("the target cannot also be a feature")
        if self.n_trees < 1 or self.min_samples_leaf < 1:
            raise InvalidSpec("n_trees and min_samples_leaf must be at least 1")
        if self.mtry is not None and not 1 <= self.mtry <= len(self.features):
            raise InvalidSpec(f"mtry must lie in [1, {len(self.features)}]")
        if not 0 <= self.seed < 2**64:
            raise InvalidSpec("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ModelSpec":
        validate(doc, "model_spec", "model spec")
        return cls(**{k: (tuple(v) if k == "features" else v) for k, v in doc.items()})

    @classmethod
    def load(cls, path: str | Path) -> "ModelSpec":
        return cls.from_dict(read_json(path, "model spec"))

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "target": self.target, "features": list(self.features), "seed": self.seed}
        if self.kind == "linear":
            doc["ridge_epsilon"] = self.ridge_epsilon
        else:
            doc.update(
                n_trees=self.n_trees,
                max_depth=self.max_depth,
                min_samples_leaf=self.min_samples_leaf,
                mtry=self.mtry,
            )
        return doc

    def with_seed(self, seed: int | None) -> "ModelSpec":
        return self if seed is None else replace(self, seed=seed)

    def estimator(self, n_jobs: int = 1):
        if self.kind == "linear":
            return LinearRegression(ridge_epsilon=self.ridge_epsilon)
        return RandomForestRegressor(
            n_trees=self.n_trees,
            max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf,
            mtry=self.mtry,
            seed=self.seed,
            n_jobs=n_jobs,
        )


def _content_hash(spec: dict, payload: dict, metadata: dict) -> str:
    body = {"schema_version": SCHEMA_VERSION, "spec": spec, "payload": payload, "metadata": metadata}
    return sha256_bytes(canonical_json(body).encode("ascii"))


@dataclass(frozen=True)
class ModelArtifact:
    spec: ModelSpec
    payload: dict
    metadata: dict
    content_hash: str = field(default="")

    def __post_init__(self):
        expected = _content_hash(self.spec.to_dict(), self.payload, self.metadata)
        if not self.content_hash:
            object.__setattr__(self, "content_hash", expected)
        elif self.content_hash != expected:
            raise CorruptArtifact("content hash does not match the artifact body")

    def to_document(self) -> dict:
        return {
            "format": ARTIFACT_FORMAT,
            "schema_version": SCHEMA_VERSION,
            "content_hash": self.content_hash,
            "spec": self.spec.to_dict(),
            "payload": self.payload,
            "metadata": self.metadata,
        }

    @classmethod
    def from_document(cls, doc: Mapping) -> "ModelArtifact":
        if not isinstance(doc, Mapping) or doc.get("format") != ARTIFACT_FORMAT:
            raise CorruptArtifact("not a model artifact")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise UnsupportedSchemaVersion(
                f"artifact schema version {doc.get('schema_version')!r}; this build reads {SCHEMA_VERSION}"
            )
        errors = schema_errors(doc, "model_artifact")
        if errors:
            raise CorruptArtifact("artifact does not match its schema: " + "; ".join(errors))
        try:
            spec = ModelSpec.from_dict(doc["spec"])
        except InvalidSpec as exc:
            raise CorruptArtifact(str(exc)) from exc
        return cls(spec, doc["payload"], doc["metadata"], doc["content_hash"])

    def estimator(self):
        """Rebuild the fitted estimator this artifact describes."""
        p = len(self.spec.features)
        if self.spec.kind == "linear":
            est = LinearRegression(ridge_epsilon=self.spec.ridge_epsilon)
            est.intercept_ = float(self.payload["intercept"])
            est.coef_ = np.array([self.payload["coefficients"][f] for f in self.spec.features], dtype=np.float64)
            est.ridge_applied_ = bool(self.metadata.get("ridge_applied", False))
        else:
            est = self.spec.estimator()
            est.trees_ = [Tree.from_dict(t) for t in self.payload["trees"]]
            est.mtry_ = int(self.payload["mtry"])
        est.n_features_in_ = p
        est.n_train_ = int(self.metadata["n_train"])
        est.n_excluded_ = int(self.metadata["n_excluded"])
        return est


def _range(values: np.ndarray) -> list[float] | None:
    ok = values[~np.isnan(values)]
    return [float(ok.min()), float(ok.max())] if ok.size else None


def _check_columns(table: TimeTable, names) -> None:
    absent = [c for c in names if c not in table]
    if absent:
        raise MissingFeatureColumn(f"table lacks column(s) {absent}")


def fit_model(train: TimeTable, spec: ModelSpec, n_jobs: int = 1) -> ModelArtifact:
    """Fit ``spec`` on ``train`` and wrap the result as an artifact."""
    _check_columns(train, [*spec.features, spec.target])
    X = train.to_matrix(spec.features)
    y = train[spec.target]
    est = spec.estimator(n_jobs=n_jobs).fit(X, y)
    used = ~(np.isnan(X).any(axis=1) | np.isnan(y))
    metadata = {
        "n_train": est.n_train_,
        "n_excluded": est.n_excluded_,
        "feature_order": list(spec.features),
        "feature_ranges": {f: _range(X[used, j]) for j, f in enumerate(spec.features)},
        "target_range": _range(y[used]),
        "feature_units": {f: train.units.get(f, "") for f in spec.features},
        "train_time_range_ms": [int(train.times[used][0]), int(train.times[used][-1])],
    }
    if spec.kind == "linear":
        payload = {
            "intercept": est.intercept_,
            "coefficients": {f: float(c) for f, c in zip(spec.features, est.coef_)},
        }
        metadata["ridge_applied"] = est.ridge_applied_
    else:
        payload = {"mtry": est.mtry_, "trees": [t.to_dict() for t in est.trees_]}
        metadata["prng"] = _prng.describe()
        metadata["tree_seed_rule"] = "seed XOR tree_index"
    for v in payload.get("coefficients", {}).values():
        if not math.isfinite(v):
            raise InvalidSpec("fit produced a non-finite coefficient")
    return ModelArtifact(spec, payload, metadata)


def fit_linear(train: TimeTable, spec: ModelSpec) -> ModelArtifact:
    if spec.kind != "linear":
        raise InvalidSpec("fit_linear needs a spec of kind 'linear'")
    return fit_model(train, spec)


def fit_forest(train: TimeTable, spec: ModelSpec, n_jobs: int = 1) -> ModelArtifact:
    if spec.kind != "random_forest":
        raise InvalidSpec("fit_forest needs a spec of kind 'random_forest'")
    return fit_model(train, spec, n_jobs=n_jobs)


def predict(model: ModelArtifact, table: TimeTable) -> tuple[np.ndarray, np.ndarray]:
    """Predictions and a per-row usable flag (False where any feature is MISSING)."""
    _check_columns(table, model.spec.features)
    units = model.metadata.get("feature_units", {})
    for f in model.spec.features:
        declared, seen = units.get(f, ""), table.units.get(f, "")
        if declared and seen and declared != seen:
            raise ModelTableSchemaMismatch(f"feature {f!r} was trained in {declared!r} but table has {seen!r}")
    X = table.to_matrix(model.spec.features)
    usable = ~np.isnan(X).any(axis=1)
    return model.estimator().predict(X), usable


def save_model(artifact: ModelArtifact, path: str | Path) -> None:
    write_text(path, dump_json(artifact.to_document()))


def load_model(path: str | Path) -> ModelArtifact:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FileNotFound(f"model artifact not found: {path}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptArtifact(f"{path} is not a readable model artifact: {exc}") from exc
    return ModelArtifact.from_document(doc)
