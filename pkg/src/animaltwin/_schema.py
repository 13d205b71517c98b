"""JSON-schema validation of the parameter documents and outputs.

The schema files live in ``animaltwin/schemas`` and are the published
contract for every JSON document the pipeline reads or writes.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from jsonschema import Draft202012Validator

from .errors import InvalidSpec

SCHEMA_NAMES = (
    "manifest",
    "merge_spec",
    "quality_spec",
    "split_spec",
    "model_spec",
    "report_params",
    "scenario_config",
    "report",
    "ground_truth",
    "run_record",
    "model_artifact",
)


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("animaltwin.schemas").joinpath(f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


@lru_cache(maxsize=None)
def _validator(name: str) -> Draft202012Validator:
    return Draft202012Validator(load_schema(name))


def schema_errors(doc, name: str) -> list[str]:
    errors = sorted(_validator(name).iter_errors(doc), key=lambda e: list(e.absolute_path))
    return [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]


def validate(doc, name: str, what: str | None = None) -> None:
    errors = schema_errors(doc, name)
    if errors:
        raise InvalidSpec(f"{what or name} is invalid: " + "; ".join(errors))
