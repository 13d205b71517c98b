"""Pipeline runner: validate a manifest, run its steps in order, record provenance.

A manifest is a JSON document listing steps. Each step names a component,
its parameter document, its input files by role and its output files by
role. Paths that match an earlier step's output live in the work directory;
every other path is an external file, resolved against the manifest's
directory. Steps exchange data only through these files.
"""

from __future__ import annotations

import json
import os
import posixpath
import subprocess
import sys
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

from . import __version__
from ._io import DIGEST_ALGORITHM, dump_json, read_json, sha256_bytes, sha256_file, staged_outputs, write_text
from ._prng import describe as prng_describe
from ._schema import schema_errors
from .components import COMPONENT_VERSIONS, COMPONENTS, cli_argv, run_component
from .errors import (
    AnimalTwinError,
    ComponentProcessFailed,
    DigestMismatch,
    FileNotFound,
    InvalidSpec,
    StepFailed,
    UnparseableManifest,
    ValidationFailed,
    WorkdirNotWritable,
)

RUN_RECORD_NAME = "run_record.json"
RUN_RECORD_SCHEMA_VERSION = 1
MODES = ("inprocess", "subprocess")


@dataclass(frozen=True)
class Violation:
    code: str
    step: str | None
    message: str

    def to_dict(self) -> dict:
        return {"code": self.code, "step": self.step, "message": self.message}


def _norm(path: str) -> str:
    return posixpath.normpath(path.replace("\\", "/"))


def _under(path: str, root: str) -> bool:
    return path == root or path.startswith(root.rstrip("/") + "/")


def _values(value) -> list[str]:
    if value is None:
        return []
    return list(value) if isinstance(value, list) else [value]


def parse_manifest(source) -> tuple[dict, bytes | None]:
    """Load a manifest from a path or accept an already-parsed document."""
    if isinstance(source, Mapping):
        return dict(source), None
    path = Path(source)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise FileNotFound(f"manifest not found: {path}") from exc
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise UnparseableManifest(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UnparseableManifest(f"{path} does not hold a JSON object")
    return doc, raw


# -- validation ------------------------------------------------------------


def _producer(path: str, outputs: list[tuple[str, str, int, bool]], index: int):
    """Earliest step before ``index`` (or any later one) whose output covers ``path``."""
    earlier = later = None
    for out, step_id, i, skipped in outputs:
        if _under(path, out):
            if i < index and not skipped and earlier is None:
                earlier = step_id
            elif i >= index and later is None:
                later = step_id
    return earlier, later


def validate_manifest(manifest, base_dir: str | Path | None = None) -> list[Violation]:
    """Every problem with a manifest, not just the first.

    Parameters
    ----------
    manifest : dict or path
        A path is parsed (``UnparseableManifest`` if it is not JSON) and its
        directory becomes ``base_dir`` unless one is given.
    base_dir : path, optional
        Where external inputs and parameter documents live. Without it,
        existence and parameter-content checks are skipped.

    Returns
    -------
    list of Violation
        Empty for a valid manifest.
    """
    if not isinstance(manifest, Mapping) and base_dir is None:
        base_dir = Path(manifest).parent
    doc, _ = parse_manifest(manifest)
    base = Path(base_dir) if base_dir is not None else None
    found = [Violation("SchemaViolation", None, e) for e in schema_errors(doc, "manifest")]
    steps = doc.get("steps")
    if not isinstance(steps, list) or not all(isinstance(s, dict) and isinstance(s.get("id"), str) for s in steps):
        return found

    seen_ids: set[str] = set()
    for s in steps:
        if s["id"] in seen_ids:
            found.append(Violation("DuplicateStepId", s["id"], f"step id {s['id']!r} used more than once"))
        seen_ids.add(s["id"])

    outputs: list[tuple[str, str, int, bool]] = []
    owner: dict[str, str] = {}
    for i, s in enumerate(steps):
        for role, path in (s.get("outputs") or {}).items():
            if not isinstance(path, str):
                continue
            p = _norm(path)
            if posixpath.isabs(p) or p == ".." or p.startswith("../"):
                found.append(Violation("InvalidOutputPath", s["id"], f"output {role!r} must stay inside the work directory: {path!r}"))
            clash = next((o for o in owner if _under(p, o) or _under(o, p)), None)
            if clash is not None:
                found.append(Violation("OutputCollision", s["id"], f"output {path!r} collides with {clash!r} written by step {owner[clash]!r}"))
            else:
                owner[p] = s["id"]
            outputs.append((p, s["id"], i, bool(s.get("skip"))))

    for i, s in enumerate(steps):
        sid = s["id"]
        comp = COMPONENTS.get(s.get("component"))
        if comp is None:
            found.append(Violation("UnknownComponent", sid, f"unknown component {s.get('component')!r}; expected one of {sorted(COMPONENTS)}"))
            continue
        if s.get("skip"):
            continue
        inputs = s.get("inputs") or {}
        outs = s.get("outputs") or {}
        for kind, declared, allowed in (("input", inputs, comp.inputs), ("output", outs, comp.outputs)):
            for role in declared:
                if role not in allowed:
                    found.append(Violation("UnknownRole", sid, f"{comp.name} has no {kind} role {role!r}"))
            for role, spec in allowed.items():
                if spec.required and not declared.get(role):
                    found.append(Violation("MissingRole", sid, f"{comp.name} needs an {kind} {role!r}"))
            for role, value in declared.items():
                if role in allowed and isinstance(value, list) and not allowed[role].many:
                    found.append(Violation("SchemaViolation", sid, f"{kind} {role!r} takes a single path"))
        if comp.name == "train" and outs.get("predictions") and not inputs.get("test"):
            found.append(Violation("MissingRole", sid, "a train step writing predictions needs a test input"))

        def external_exists(path: str) -> bool:
            return base is None or (base / path).exists()

        checked_inputs = [(role, v) for role, value in inputs.items() for v in _values(value) if isinstance(v, str)]
        params = s.get("params")
        if params:
            checked_inputs.append(("params", params))
        for role, raw in checked_inputs:
            p = _norm(raw)
            earlier, later = _producer(p, outputs, i)
            if earlier is not None:
                continue
            if later is not None:
                found.append(Violation("ForwardReference", sid, f"{role} {raw!r} is only produced by later step {later!r}"))
            elif not external_exists(p):
                found.append(Violation("DanglingInput", sid, f"{role} {raw!r} is neither produced by an earlier step nor an existing file"))

        if comp.params == "required" and not params:
            found.append(Violation("MissingParams", sid, f"a {comp.name} step must reference a {comp.params_schema} document"))
        elif comp.params == "none" and params:
            found.append(Violation("InvalidParams", sid, f"{comp.name} takes no parameter document"))
        pdoc = None
        if params and base is not None and _producer(_norm(params), outputs, i)[0] is None and (base / params).is_file():
            try:
                pdoc = read_json(base / params, "parameter document")
            except AnimalTwinError as exc:
                found.append(Violation("InvalidParams", sid, str(exc)))
            if pdoc is not None and comp.params_schema:
                for err in schema_errors(pdoc, comp.params_schema):
                    found.append(Violation("InvalidParams", sid, f"{params}: {err}"))
        if comp.name == "merge" and isinstance(pdoc, dict) and isinstance(pdoc.get("sources"), list):
            declared = {posixpath.basename(_norm(v)) for v in _values(inputs.get("sources")) if isinstance(v, str)}
            for src in pdoc["sources"]:
                name = posixpath.basename(str(src.get("path", "")))
                if name not in declared:
                    found.append(Violation("UndeclaredInput", sid, f"merge source {src.get('path')!r} is not declared under inputs.sources"))
    return found


# -- run record ------------------------------------------------------------


def _digest_entry(path: Path, rel: str) -> dict:
    entry = {"path": rel, "sha256": sha256_file(path)}
    if path.is_dir():
        entry["files"] = {
            p.relative_to(path).as_posix(): sha256_file(p) for p in sorted(path.rglob("*")) if p.is_file()
        }
    return entry


def _new_record(doc: dict, raw: bytes, manifest_path: Path, mode: str) -> dict:
    return {
        "schema_version": RUN_RECORD_SCHEMA_VERSION,
        "name": doc["name"],
        "manifest": {"path": manifest_path.name, "directory": str(manifest_path.parent.resolve()), "sha256": sha256_bytes(raw)},
        "manifest_document": doc,
        "digest_algorithm": DIGEST_ALGORITHM,
        "package_version": __version__,
        "component_versions": dict(COMPONENT_VERSIONS),
        "prng": prng_describe(),
        "mode": mode,
        "status": "running",
        "steps": [],
        "error": None,
    }


def _write_record(record: dict, workdir: Path) -> None:
    path = workdir / RUN_RECORD_NAME
    tmp = workdir / f".{RUN_RECORD_NAME}.{uuid.uuid4().hex[:8]}.tmp"
    write_text(tmp, dump_json(record))
    os.replace(tmp, path)


def _check_workdir(workdir: Path) -> None:
    try:
        workdir.mkdir(parents=True, exist_ok=True)
        probe = workdir / f".probe.{uuid.uuid4().hex[:8]}"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise WorkdirNotWritable(f"cannot write to work directory {workdir}: {exc}") from exc


def _run_subprocess(argv: list[str]) -> None:
    proc = subprocess.run([sys.executable, "-m", "animaltwin", *argv], capture_output=True, text=True)
    if proc.returncode != 0:
        error = None
        for line in proc.stderr.splitlines():
            try:
                error = json.loads(line)
                break
            except json.JSONDecodeError:
                continue
        message = (error or {}).get("message") or proc.stderr.strip() or f"exit code {proc.returncode}"
        raise ComponentProcessFailed(message, proc.returncode, error)


class _Resolver:
    """Maps manifest paths to files: earlier outputs in the work directory, the rest external."""

    def __init__(self, base: Path, workdir: Path):
        self.base = base
        self.workdir = workdir
        self.produced: dict[str, tuple[str, dict]] = {}

    def locate(self, raw: str) -> tuple[Path, str | None, str | None]:
        """(file, producing step, digest recorded when it was produced)."""
        p = _norm(raw)
        for out, (step_id, entry) in self.produced.items():
            if _under(p, out):
                rel = p[len(out):].lstrip("/")
                expected = entry["sha256"] if not rel else entry.get("files", {}).get(rel)
                return self.workdir / p, step_id, expected
        return self.base / p, None, None


def run_pipeline(
    manifest_path: str | Path,
    workdir: str | Path,
    *,
    mode: str = "inprocess",
    n_jobs: int | None = None,
    after_step: Callable[[str, Path], None] | None = None,
) -> dict:
    """Execute every step of a manifest in order and return the run record.

    Parameters
    ----------
    manifest_path : path
    workdir : path
        Receives every step output and ``run_record.json``.
    mode : {"inprocess", "subprocess"}
        Subprocess mode runs each step through the command line.
    n_jobs : int, optional
        Threads for forest training; does not change any output.
    after_step : callable, optional
        Called with ``(step_id, workdir)`` after each completed step. Meant
        for debugging harnesses that tamper with intermediate files.

    Raises
    ------
    ValidationFailed
        Before anything runs, if the manifest has violations.
    StepFailed
        After recording the failure; later steps do not run. The record is
        available as ``exc.record``.
    WorkdirNotWritable
    """
    if mode not in MODES:
        raise InvalidSpec(f"mode must be one of {MODES}")
    manifest_path = Path(manifest_path)
    doc, raw = parse_manifest(manifest_path)
    base = manifest_path.parent
    violations = validate_manifest(doc, base)
    if violations:
        raise ValidationFailed(violations)
    workdir = Path(workdir)
    _check_workdir(workdir)
    record = _new_record(doc, raw, manifest_path, mode)
    _write_record(record, workdir)
    resolver = _Resolver(base, workdir)
    marker = 0

    for step in doc["steps"]:
        sid, component = step["id"], step["component"]
        entry = {
            "id": sid,
            "component": component,
            "component_version": COMPONENT_VERSIONS[component],
            "seed": step.get("seed"),
            "status": "skipped" if step.get("skip") else "running",
            "start_marker": None,
            "end_marker": None,
            "params": None,
            "inputs": {},
            "outputs": {},
            "error": None,
        }
        record["steps"].append(entry)
        if step.get("skip"):
            _write_record(record, workdir)
            continue
        marker += 1
        entry["start_marker"] = marker
        try:
            params = None
            if step.get("params"):
                params, source, expected = resolver.locate(step["params"])
                entry["params"] = {"path": step["params"], "sha256": sha256_file(params), "source": source or "external"}
                if expected is not None and entry["params"]["sha256"] != expected:
                    raise DigestMismatch(f"params {step['params']!r} changed after step {source!r} wrote it")
            inputs: dict = {}
            for role, value in (step.get("inputs") or {}).items():
                located = []
                recorded = []
                for raw_path in _values(value):
                    path, source, expected = resolver.locate(raw_path)
                    if not path.exists():
                        raise FileNotFound(f"input {role!r} not found: {raw_path}")
                    digest = sha256_file(path)
                    recorded.append({"path": raw_path, "sha256": digest, "source": source or "external"})
                    if expected is not None and digest != expected:
                        raise DigestMismatch(
                            f"input {role!r} ({raw_path}) has digest {digest[:12]}..., but step {source!r} "
                            f"recorded {expected[:12]}... when it wrote it"
                        )
                    located.append(path)
                inputs[role] = located if isinstance(value, list) else located[0]
                entry["inputs"][role] = recorded if isinstance(value, list) else recorded[0]
            finals = {role: workdir / _norm(p) for role, p in step["outputs"].items()}
            with staged_outputs(finals) as staged:
                if mode == "inprocess":
                    run_component(component, params, inputs, staged, seed=step.get("seed"), n_jobs=n_jobs or 1)
                else:
                    _run_subprocess(cli_argv(component, params, inputs, staged, seed=step.get("seed"), n_jobs=n_jobs))
            for role, p in step["outputs"].items():
                produced = _digest_entry(finals[role], p)
                entry["outputs"][role] = produced
                resolver.produced[_norm(p)] = (sid, produced)
        except Exception as exc:  # noqa: BLE001 - every failure is recorded, then re-raised
            marker += 1
            entry["end_marker"] = marker
            entry["status"] = "failed"
            entry["error"] = (
                exc.to_dict() if isinstance(exc, AnimalTwinError)
                else {"error": type(exc).__name__, "message": str(exc), "exit_code": 3}
            )
            record["status"] = "failed"
            record["error"] = {"step": sid, **entry["error"]}
            _write_record(record, workdir)
            failure = StepFailed(sid, exc)
            failure.record = record
            raise failure from exc
        marker += 1
        entry["end_marker"] = marker
        entry["status"] = "completed"
        _write_record(record, workdir)
        if after_step is not None:
            after_step(sid, workdir)

    record["status"] = "completed"
    _write_record(record, workdir)
    return record


def output_digests(record: Mapping) -> dict[str, str]:
    """``{"<step>/<role>": sha256}`` for every output in a run record."""
    return {
        f"{s['id']}/{role}": o["sha256"]
        for s in record["steps"]
        for role, o in s["outputs"].items()
    }


def replay(record_path: str | Path, workdir: str | Path, base_dir: str | Path | None = None, **kwargs) -> list[str]:
    """Re-execute a recorded run and list every digest that differs.

    The manifest embedded in the record is used; external inputs are read
    from ``base_dir`` (default: the directory recorded in the run record)
    and must still match their recorded digests.
    """
    record = read_json(record_path, "run record")
    base = Path(base_dir) if base_dir is not None else Path(record["manifest"]["directory"])
    differences = []
    for step in record["steps"]:
        items = [step["params"]] if step.get("params") else []
        for value in step["inputs"].values():
            items += value if isinstance(value, list) else [value]
        for item in items:
            if item["source"] == "external":
                path = base / item["path"]
                if not path.exists() or sha256_file(path) != item["sha256"]:
                    differences.append(f"external input {item['path']} differs from the recorded run")
    if differences:
        return differences
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    manifest = base / record["manifest"]["path"]
    if manifest.exists() and sha256_file(manifest) == record["manifest"]["sha256"]:
        again = run_pipeline(manifest, workdir, **kwargs)
    else:
        # Manifest paths are relative to the original directory, so the
        # embedded copy is materialised there for the duration of the replay.
        manifest = base / f".replay.{uuid.uuid4().hex[:8]}.json"
        write_text(manifest, dump_json(record["manifest_document"]))
        try:
            again = run_pipeline(manifest, workdir, **kwargs)
        finally:
            manifest.unlink(missing_ok=True)
    before, after = output_digests(record), output_digests(again)
    return [f"{k}: {before[k]} != {after.get(k)}" for k in before if before[k] != after.get(k)]
