"""File-level pipeline components.

Each component reads its declared input files and parameter document and
writes its declared output files. The command line and the pipeline runner
both call these functions, so a step produces the same bytes whichever way
it is invoked.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from ._io import dump_json, read_json, sha256_file, write_text
from .errors import InvalidSpec, MissingColumn
from .ingest import MergeSpec, merge_sources, read_table_csv, write_table_csv
from .model import Predictions, evaluate, fit_model, load_model, predict, save_model
from .model.artifact import ModelArtifact, ModelSpec
from .model.metrics import Metrics
from .quality import QualitySpec, quality_check
from .report import RunContext, generate_report
from .split import SplitSpec, split, split_metadata
from .timeseries import TimeTable

METRICS_SCHEMA_VERSION = 1

COMPONENT_VERSIONS = {
    "merge": "1.0.0",
    "quality": "1.0.0",
    "split": "1.0.0",
    "train": "1.0.0",
    "predict": "1.0.0",
    "evaluate": "1.0.0",
    "report": "1.0.0",
    "generate": "1.0.0",
}


@dataclass(frozen=True)
class Role:
    required: bool = True
    many: bool = False


@dataclass(frozen=True)
class Component:
    name: str
    command: str
    run: Callable
    params: str  # "required", "optional" or "none"
    params_schema: str | None
    inputs: Mapping[str, Role] = field(default_factory=dict)
    outputs: Mapping[str, Role] = field(default_factory=dict)
    seeded: bool = False


Paths = Mapping[str, "Path | list[Path]"]


def _p(value) -> Path:
    return Path(value)


# -- step functions --------------------------------------------------------


def run_merge(params: Path, inputs: Paths, outputs: Paths, seed=None, n_jobs=1) -> None:
    params = _p(params)
    doc = read_json(params, "merge spec")
    declared = [Path(p) for p in inputs.get("sources") or []]
    if declared:
        by_name: dict[str, Path] = {}
        for p in declared:
            if p.name in by_name:
                raise InvalidSpec(f"two declared sources share the file name {p.name!r}")
            by_name[p.name] = p
        doc = dict(doc)
        sources = []
        for src in doc.get("sources", []):
            name = Path(src["path"]).name
            if name not in by_name:
                raise InvalidSpec(f"merge source {src['path']!r} is not among the declared inputs")
            sources.append({**src, "path": str(by_name[name].resolve())})
        doc["sources"] = sources
    spec = MergeSpec.from_dict(doc, base_dir=params.parent)
    table, report = merge_sources(spec)
    write_table_csv(table, outputs["table"])
    write_text(outputs["report"], dump_json(report.to_dict()))


def run_quality(params: Path | None, inputs: Paths, outputs: Paths, seed=None, n_jobs=1) -> None:
    spec = QualitySpec.load(params) if params else QualitySpec()
    cleaned, report = quality_check(read_table_csv(inputs["table"]), spec)
    write_table_csv(cleaned, outputs["table"])
    write_text(outputs["report"], dump_json(report.to_dict()))


def run_split(params: Path, inputs: Paths, outputs: Paths, seed=None, n_jobs=1) -> None:
    spec = SplitSpec.load(params)
    if seed is not None:
        spec = replace(spec, seed=seed)
    table = read_table_csv(inputs["table"])
    train, test = split(table, spec)
    write_table_csv(train, outputs["train"])
    write_table_csv(test, outputs["test"])
    if outputs.get("report"):
        write_text(outputs["report"], dump_json(split_metadata(table, train, test, spec)))


def predictions_for(model: ModelArtifact, table: TimeTable) -> Predictions:
    values, usable = predict(model, table)
    target = model.spec.target
    actual = table[target] if target in table else np.full(table.n_rows, np.nan)
    return Predictions(table.times, actual, values, usable)


def run_train(params: Path, inputs: Paths, outputs: Paths, seed=None, n_jobs=1) -> None:
    spec = ModelSpec.load(params).with_seed(seed)
    artifact = fit_model(read_table_csv(inputs["train"]), spec, n_jobs=n_jobs)
    save_model(artifact, outputs["model"])
    if outputs.get("predictions"):
        if not inputs.get("test"):
            raise InvalidSpec("a predictions output needs a test input")
        predictions_for(artifact, read_table_csv(inputs["test"])).write(outputs["predictions"])


def run_predict(params, inputs: Paths, outputs: Paths, seed=None, n_jobs=1) -> None:
    model = load_model(inputs["model"])
    predictions_for(model, read_table_csv(inputs["table"])).write(outputs["predictions"])


def metrics_from_predictions(predictions: Predictions) -> Metrics:
    return evaluate(*predictions.comparable())


def run_evaluate(params, inputs: Paths, outputs: Paths, seed=None, n_jobs=1) -> None:
    metrics = metrics_from_predictions(Predictions.read(inputs["predictions"]))
    write_text(outputs["metrics"], dump_json({"schema_version": METRICS_SCHEMA_VERSION, **metrics.to_dict()}))


def read_metrics(path: Path) -> Metrics:
    doc = read_json(path, "metrics")
    try:
        return Metrics.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise MissingColumn(f"metrics file {path} lacks {exc}") from exc


def input_digests(inputs: Paths) -> dict[str, str]:
    out = {}
    for role, value in inputs.items():
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            for i, p in enumerate(value):
                out[f"{role}[{i}]"] = sha256_file(p)
        else:
            out[role] = sha256_file(value)
    return out


def run_report(params: Path | None, inputs: Paths, outputs: Paths, seed=None, n_jobs=1) -> None:
    model = load_model(inputs["model"])
    predictions = Predictions.read(inputs["predictions"])
    if inputs.get("metrics"):
        metrics = read_metrics(inputs["metrics"])
    else:
        metrics = metrics_from_predictions(predictions)
    manifest = read_json(inputs["manifest"], "manifest") if inputs.get("manifest") else None
    context = RunContext.load(
        params,
        input_digests=input_digests(inputs),
        manifest=manifest,
        manifest_name=Path(inputs["manifest"]).name if manifest is not None else None,
    )
    report = generate_report(metrics, model, predictions, context)
    write_text(outputs["markdown"], report.markdown)
    write_text(outputs["json"], report.json)


def run_generate(params: Path | None, inputs: Paths, outputs: Paths, seed=None, n_jobs=1, kind=None) -> None:
    from . import synth

    if params:
        config = synth.ScenarioConfig.load(params)
    elif kind:
        config = synth.ScenarioConfig.default(kind)
    else:
        raise InvalidSpec("generate needs a scenario config or a kind")
    if kind is not None and kind != config.kind:
        config = replace(config, kind=kind)
    if seed is not None:
        config = replace(config, seed=seed)
    synth.generate(config, outputs["dir"])


REQ, OPT, MANY = Role(), Role(required=False), Role(required=False, many=True)

COMPONENTS: dict[str, Component] = {
    c.name: c
    for c in (
        Component("merge", "merge", run_merge, "required", "merge_spec",
                  {"sources": MANY}, {"table": REQ, "report": REQ}),
        Component("quality", "qc", run_quality, "optional", "quality_spec",
                  {"table": REQ}, {"table": REQ, "report": REQ}),
        Component("split", "split", run_split, "required", "split_spec",
                  {"table": REQ}, {"train": REQ, "test": REQ, "report": OPT}, seeded=True),
        Component("train", "train", run_train, "required", "model_spec",
                  {"train": REQ, "test": OPT}, {"model": REQ, "predictions": OPT}, seeded=True),
        Component("predict", "predict", run_predict, "none", None,
                  {"model": REQ, "table": REQ}, {"predictions": REQ}),
        Component("evaluate", "evaluate", run_evaluate, "none", None,
                  {"predictions": REQ}, {"metrics": REQ}),
        Component("report", "report", run_report, "optional", "report_params",
                  {"model": REQ, "predictions": REQ, "metrics": OPT, "manifest": OPT},
                  {"markdown": REQ, "json": REQ}),
        Component("generate", "generate", run_generate, "required", "scenario_config",
                  {}, {"dir": REQ}, seeded=True),
    )
}

# Command-line flag for each (component, role); "params" is the parameter document.
FLAGS: dict[str, dict[str, str]] = {
    "merge": {"params": "--spec", "sources": "--source", "table": "--out", "report": "--report"},
    "quality": {"params": "--spec", "table:in": "--in", "table": "--out", "report": "--report"},
    "split": {"params": "--spec", "table": "--in", "train": "--train", "test": "--test", "report": "--report"},
    "train": {"params": "--spec", "train": "--train", "test": "--test", "model": "--out", "predictions": "--predictions"},
    "predict": {"model": "--model", "table": "--in", "predictions": "--out"},
    "evaluate": {"predictions:in": "--predictions", "metrics": "--out"},
    "report": {
        "params": "--spec", "model": "--model", "predictions": "--predictions", "metrics": "--metrics",
        "manifest": "--manifest", "markdown": "--out-md", "json": "--out-json",
    },
    "generate": {"params": "--config", "dir": "--out"},
}


def _flag(component: str, role: str, direction: str) -> str:
    flags = FLAGS[component]
    return flags.get(f"{role}:{direction}", flags.get(role))


def cli_argv(component: str, params, inputs: Paths, outputs: Paths, seed=None, n_jobs=None) -> list[str]:
    """Arguments for the command-line subcommand equivalent to a step."""
    comp = COMPONENTS[component]
    argv = [comp.command]
    if params:
        argv += [FLAGS[component]["params"], str(params)]
    for direction, mapping in (("in", inputs), ("out", outputs)):
        for role, value in mapping.items():
            if value is None:
                continue
            flag = _flag(component, role, direction)
            for v in value if isinstance(value, (list, tuple)) else [value]:
                argv += [flag, str(v)]
    if seed is not None and comp.seeded:
        argv += ["--seed", str(seed)]
    if n_jobs is not None and component == "train":
        argv += ["--threads", str(n_jobs)]
    return argv


def run_component(component: str, params, inputs: Paths, outputs: Paths, seed=None, n_jobs=1) -> None:
    COMPONENTS[component].run(params, inputs, outputs, seed=seed, n_jobs=n_jobs)
