"""Report generation: a JSON document plus a markdown rendering of it.

The markdown is produced from the JSON document alone, so every number a
reader sees is also available to machines. Nothing here reads the clock:
``generated_at`` comes from the caller.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from ._io import DIGEST_ALGORITHM, dump_json, read_json
from ._schema import validate
from .errors import EmptyMetrics
from .model.artifact import ModelArtifact
from .model.metrics import Metrics
from .model.predictions import Predictions

REPORT_SCHEMA_VERSION = 1
DEFAULT_TITLE = "Model report"
DEFAULT_MAX_TABLE_ROWS = 20
METRIC_NAMING_NOTE = (
    "Reports are asked for accuracy and precision, which are classification terms. "
    "The target here is continuous, so the regression analogues are given: RMSE and MAE "
    "measure the size of the errors (lower is better) and R2 is the share of target "
    "variance the model explains (1 is perfect)."
)


@dataclass(frozen=True)
class RunContext:
    """Everything the report needs besides the metrics, model and predictions."""

    generated_at: str | None = None
    title: str = DEFAULT_TITLE
    notes: str = ""
    max_table_rows: int = DEFAULT_MAX_TABLE_ROWS
    input_digests: Mapping[str, str] = field(default_factory=dict)
    manifest: Mapping | None = None
    manifest_name: str | None = None

    @classmethod
    def from_params(cls, doc: Mapping | None, **kwargs) -> "RunContext":
        doc = dict(doc or {})
        validate(doc, "report_params", "report params")
        return cls(
            generated_at=doc.get("generated_at"),
            title=doc.get("title", DEFAULT_TITLE),
            notes=doc.get("notes", ""),
            max_table_rows=doc.get("max_table_rows", DEFAULT_MAX_TABLE_ROWS),
            **kwargs,
        )

    @classmethod
    def load(cls, path: str | Path | None, **kwargs) -> "RunContext":
        return cls.from_params(read_json(path, "report params") if path else None, **kwargs)


@dataclass(frozen=True)
class Report:
    document: dict
    markdown: str

    @property
    def json(self) -> str:
        return dump_json(self.document)


def _num(v):
    """JSON-safe float: MISSING becomes null."""
    if v is None:
        return None
    v = float(v)
    return None if math.isnan(v) else v


# -- reapplication manifest ------------------------------------------------

REAPPLY_OUTPUTS = {
    "predictions": "reapply/predictions.csv",
    "metrics": "reapply/metrics.json",
    "markdown": "reapply/report.md",
    "json": "reapply/report.json",
}


def reapply_manifest(original: Mapping | None, model_name: str | None = None) -> dict:
    """A predict-only manifest that applies the trained model to data prepared
    exactly as in ``original`` (same merge and quality steps, no split).

    The model is referenced as an external file, so the trained artifact has to
    sit next to this manifest under the name it had as a step output.
    """
    steps: list[dict] = []
    table = "table.csv"
    model = model_name or "model.json"
    if original:
        for step in original.get("steps", []):
            if step.get("skip"):
                continue
            if step["component"] in ("merge", "quality"):
                steps.append({k: step[k] for k in ("id", "component", "params", "inputs", "outputs") if k in step})
                table = step["outputs"]["table"]
            elif step["component"] == "train" and model_name is None:
                model = step["outputs"]["model"]
    taken = {s["id"] for s in steps}

    def sid(base: str) -> str:
        name = f"reapply_{base}"
        while name in taken:
            name += "_"
        taken.add(name)
        return name

    steps += [
        {
            "id": sid("predict"),
            "component": "predict",
            "params": None,
            "inputs": {"model": model, "table": table},
            "outputs": {"predictions": REAPPLY_OUTPUTS["predictions"]},
        },
        {
            "id": sid("evaluate"),
            "component": "evaluate",
            "params": None,
            "inputs": {"predictions": REAPPLY_OUTPUTS["predictions"]},
            "outputs": {"metrics": REAPPLY_OUTPUTS["metrics"]},
        },
        {
            "id": sid("report"),
            "component": "report",
            "params": None,
            "inputs": {
                "model": model,
                "predictions": REAPPLY_OUTPUTS["predictions"],
                "metrics": REAPPLY_OUTPUTS["metrics"],
            },
            "outputs": {"markdown": REAPPLY_OUTPUTS["markdown"], "json": REAPPLY_OUTPUTS["json"]},
        },
    ]
    name = (original or {}).get("name", "pipeline")
    return {"schema_version": 1, "name": f"{name}-reapply", "steps": steps}


# -- document --------------------------------------------------------------


def _model_section(artifact: ModelArtifact) -> dict:
    meta = artifact.metadata
    section = {
        "kind": artifact.spec.kind,
        "content_hash": artifact.content_hash,
        "parameters": artifact.spec.to_dict(),
        "target": artifact.spec.target,
        "feature_order": list(artifact.spec.features),
        "n_train": meta["n_train"],
        "n_excluded": meta["n_excluded"],
        "train_time_range_ms": meta["train_time_range_ms"],
    }
    if artifact.spec.kind == "linear":
        section["intercept"] = artifact.payload["intercept"]
        section["coefficients"] = dict(artifact.payload["coefficients"])
        section["ridge_applied"] = meta.get("ridge_applied", False)
    else:
        trees = artifact.payload["trees"]
        section["mtry"] = artifact.payload["mtry"]
        section["total_nodes"] = sum(len(t["feature"]) for t in trees)
        section["prng"] = meta.get("prng")
    return section


def build_document(metrics: Metrics, artifact: ModelArtifact, predictions: Predictions, context: RunContext) -> dict:
    meta = artifact.metadata
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "title": context.title,
        "generated_at": context.generated_at,
        "notes": context.notes,
        "metrics": {
            "rmse": metrics.rmse,
            "mae": metrics.mae,
            "r2": metrics.r2,
            "n": metrics.n,
            "note": metrics.note,
        },
        "metric_naming": METRIC_NAMING_NOTE,
        "model": _model_section(artifact),
        "data": {
            "train_rows": meta["n_train"],
            "prediction_rows": len(predictions),
            "usable_rows": int(predictions.usable.sum()),
            "evaluated_rows": metrics.n,
        },
        "guidelines": {
            "feature_ranges": meta["feature_ranges"],
            "target_range": meta["target_range"],
            "feature_units": meta.get("feature_units", {}),
            "advice": (
                "Predictions are reliable only for inputs inside the feature ranges seen in training; "
                "forest predictions never leave the target range. Rows with a MISSING feature are "
                "marked unusable and get no prediction."
            ),
        },
        "provenance": {
            "digest_algorithm": DIGEST_ALGORITHM,
            "input_digests": dict(sorted(context.input_digests.items())),
            "model_content_hash": artifact.content_hash,
            "manifest": context.manifest_name,
        },
        "reapply": {
            "command": ["animaltwin", "run", "reapply.json", "--workdir", "reapply_run"],
            "instructions": (
                "Save reapply.manifest as reapply.json next to the original manifest, copy the trained "
                "model there under the name it references, then run the command."
            ),
            "manifest": reapply_manifest(context.manifest),
        },
        "predictions": {
            "timestamp_ms": [int(t) for t in predictions.times],
            "actual": [_num(v) for v in predictions.actual],
            "predicted": [_num(v) for v in predictions.predicted],
            "usable": [bool(u) for u in predictions.usable],
        },
    }


# -- markdown --------------------------------------------------------------


def _fmt(v) -> str:
    """Render a JSON scalar exactly as it appears in the JSON part."""
    if v is None:
        return "MISSING"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, (int, float)):
        return json.dumps(v)
    return str(v)


def _table(header: list[str], rows: list[list]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(_fmt(c) for c in row) + " |" for row in rows]
    return out


def render_markdown(doc: Mapping, max_table_rows: int = DEFAULT_MAX_TABLE_ROWS) -> str:
    m, model, data, guide = doc["metrics"], doc["model"], doc["data"], doc["guidelines"]
    lines = [f"# {doc['title']}", ""]
    lines.append(f"Generated at: {_fmt(doc['generated_at'])}")
    if doc["notes"]:
        lines += ["", doc["notes"]]
    lines += ["", "## Metrics", ""]
    lines += _table(["metric", "value"], [["rmse", m["rmse"]], ["mae", m["mae"]], ["r2", m["r2"]], ["n", m["n"]]])
    if m["note"]:
        lines += ["", f"Note: {m['note']}"]
    lines += ["", doc["metric_naming"], "", "## Model", ""]
    lines += _table(["parameter", "value"], [[k, "null" if v is None else v] for k, v in sorted(model["parameters"].items()) if k != "features"])
    lines += ["", f"Features, in order: {', '.join(model['feature_order'])}", f"Content hash: `{model['content_hash']}`"]
    if model["kind"] == "linear":
        lines += ["", "| term | coefficient |", "|---|---|", f"| intercept | {_fmt(model['intercept'])} |"]
        lines += [f"| {f} | {_fmt(c)} |" for f, c in model["coefficients"].items()]
        lines += ["", f"Ridge fallback applied: {_fmt(model['ridge_applied'])}"]
    else:
        lines += ["", f"mtry: {_fmt(model['mtry'])}, total nodes: {_fmt(model['total_nodes'])}"]
    lines += ["", "## Data", ""]
    lines += _table(
        ["quantity", "rows"],
        [
            ["training rows used", data["train_rows"]],
            ["rows excluded from training", model["n_excluded"]],
            ["prediction rows", data["prediction_rows"]],
            ["usable prediction rows", data["usable_rows"]],
            ["rows evaluated", data["evaluated_rows"]],
        ],
    )
    lines += ["", "## Guidelines for reuse", "", guide["advice"], ""]
    rows = []
    for f in model["feature_order"]:
        rng = guide["feature_ranges"].get(f) or [None, None]
        rows.append([f, guide["feature_units"].get(f, ""), rng[0], rng[1]])
    lines += _table(["feature", "unit", "min seen", "max seen"], rows)
    tr = guide["target_range"] or [None, None]
    lines += ["", f"Target range seen in training: {_fmt(tr[0])} to {_fmt(tr[1])}"]
    lines += ["", "### Reapplying the model", "", doc["reapply"]["instructions"], ""]
    lines += ["```", " ".join(doc["reapply"]["command"]), "```", "", "```json"]
    lines += [json.dumps(doc["reapply"]["manifest"], indent=2, sort_keys=True), "```"]
    lines += ["", "## Provenance", ""]
    prov = doc["provenance"]
    lines += _table(["input", prov["digest_algorithm"]], [[k, v] for k, v in prov["input_digests"].items()])
    preds = doc["predictions"]
    n = len(preds["timestamp_ms"])
    shown = min(n, max_table_rows)
    lines += ["", "## Predictions", ""]
    lines += [f"Showing {shown} of {n} rows; the full series is in the JSON report.", ""]
    lines += _table(
        ["timestamp_ms", "actual", "predicted", "usable"],
        [[preds[k][i] for k in ("timestamp_ms", "actual", "predicted", "usable")] for i in range(shown)],
    )
    return "\n".join(lines) + "\n"


def generate_report(
    metrics: Metrics, artifact: ModelArtifact, predictions: Predictions, context: RunContext | None = None
) -> Report:
    """Compile metrics, model details, reuse guidance and the prediction series.

    Parameters
    ----------
    metrics : Metrics
        Must cover at least one evaluated row.
    artifact : ModelArtifact
    predictions : Predictions
    context : RunContext, optional
        Title, timestamp, input digests and the manifest the run came from.

    Returns
    -------
    Report
        ``document`` validates against the published report schema.
    """
    if metrics is None or metrics.n < 1:
        raise EmptyMetrics("metrics cover no rows")
    context = context or RunContext()
    doc = build_document(metrics, artifact, predictions, context)
    validate(doc, "report", "report")
    return Report(doc, render_markdown(doc, context.max_table_rows))
