import json
import shutil

import pytest

from animaltwin._schema import schema_errors
from animaltwin.errors import (
    DigestMismatch,
    StepFailed,
    UnparseableManifest,
    ValidationFailed,
    WorkdirNotWritable,
)
from animaltwin.runner import output_digests, replay, run_pipeline, validate_manifest


def codes(violations):
    return sorted(v.code for v in violations)


def load(d, name="pipeline.json"):
    return json.loads((d / name).read_text())


def step(sid, component, params=None, inputs=None, outputs=None):
    return {"id": sid, "component": component, "params": params, "inputs": inputs or {}, "outputs": outputs or {}}


# -- validation -----------------------------------------------------------


def test_canonical_pipeline_is_valid(scenario):
    d = scenario("pig")
    manifest = load(d)
    assert [s["component"] for s in manifest["steps"]] == ["merge", "quality", "split", "train", "report"]
    assert validate_manifest(d / "pipeline.json") == []


def test_predict_only_pipeline_is_valid(scenario):
    d = scenario("mussel")
    manifest = load(d)
    shutil.copy(d / "model_linear.json", d / "model.json")
    steps = manifest["steps"][:2] + [
        step("predict", "predict", inputs={"model": "model.json", "table": "clean.csv"},
             outputs={"predictions": "p.csv"}),
        step("evaluate", "evaluate", inputs={"predictions": "p.csv"}, outputs={"metrics": "m.json"}),
        step("report", "report", inputs={"model": "model.json", "predictions": "p.csv", "metrics": "m.json"},
             outputs={"markdown": "r.md", "json": "r.json"}),
    ]
    assert validate_manifest({**manifest, "steps": steps}, base_dir=d) == []


def test_dangling_input(scenario):
    d = scenario("mussel")
    manifest = load(d)
    manifest["steps"][1]["inputs"]["table"] = "nowhere.csv"
    found = validate_manifest(manifest, base_dir=d)
    assert codes(found) == ["DanglingInput"] and found[0].step == "quality"


def test_all_violations_are_reported(scenario):
    d = scenario("mussel")
    manifest = load(d)
    s = manifest["steps"]
    s[1]["id"] = "merge"                          # duplicate id
    s[2]["outputs"]["train"] = "merged.csv"       # collides with merge output
    s[3]["params"] = "split.json"                 # train needs a model spec
    s[4]["component"] = "plot"                    # unknown component
    s.insert(0, step("early", "evaluate", inputs={"predictions": "predictions.csv"}, outputs={"metrics": "m.json"}))
    s.append(step("late", "split", inputs={"table": "clean.csv"}, outputs={"train": "/abs.csv", "test": "t2.csv"}))
    found = codes(validate_manifest(manifest, base_dir=d))
    for expected in ("DuplicateStepId", "OutputCollision", "InvalidParams", "UnknownComponent",
                     "ForwardReference", "MissingParams", "InvalidOutputPath"):
        assert expected in found, expected


def test_roles_and_schema():
    manifest = {"name": "x", "schema_version": 1, "steps": [
        step("m", "merge", "merge.json", inputs={"sources": ["a.csv"], "extra": "b.csv"}, outputs={"report": "r.json"}),
    ]}
    assert codes(validate_manifest(manifest)) == ["MissingRole", "UnknownRole"]
    assert set(codes(validate_manifest({"name": "x", "steps": "nope"}))) == {"SchemaViolation"}


def test_undeclared_merge_source(scenario):
    d = scenario("pig")
    manifest = load(d)
    manifest["steps"][0]["inputs"]["sources"] = ["wearable.csv"]
    assert codes(validate_manifest(manifest, base_dir=d)) == ["UndeclaredInput"]


def test_unparseable_manifest(tmp_path):
    (tmp_path / "m.json").write_text("{not json")
    with pytest.raises(UnparseableManifest):
        validate_manifest(tmp_path / "m.json")


# -- execution ------------------------------------------------------------


def test_pig_end_to_end(scenario, tmp_path):
    d = scenario("pig")
    record = run_pipeline(d / "pipeline.json", tmp_path / "w")
    assert record["status"] == "completed" and len(record["steps"]) == 5
    assert all(s["status"] == "completed" for s in record["steps"])
    on_disk = json.loads((tmp_path / "w" / "run_record.json").read_text())
    assert on_disk == json.loads(json.dumps(record))
    assert schema_errors(on_disk, "run_record") == []
    # provenance: every declared file has a digest, chained digests agree
    produced = {}
    for s, declared in zip(record["steps"], load(d)["steps"]):
        assert set(s["outputs"]) == set(declared["outputs"])
        for role, entry in s["inputs"].items():
            for e in entry if isinstance(entry, list) else [entry]:
                assert len(e["sha256"]) == 64
                if e["source"] != "external":
                    assert produced[e["path"]] == e["sha256"]
        for o in s["outputs"].values():
            produced[o["path"]] = o["sha256"]
    assert record["prng"]["name"] == "splitmix64"


def test_rerun_gives_identical_digests(scenario, tmp_path):
    d = scenario("mussel")
    a = run_pipeline(d / "pipeline_forest.json", tmp_path / "a")
    b = run_pipeline(d / "pipeline_forest.json", tmp_path / "b", n_jobs=3)
    assert output_digests(a) == output_digests(b) and len(output_digests(a)) == 11


def test_corrupted_intermediate_is_detected(scenario, tmp_path):
    d = scenario("mussel")

    def tamper(step_id, workdir):
        if step_id == "merge":
            with open(workdir / "merged.csv", "a") as fh:
                fh.write("\n")

    with pytest.raises(StepFailed) as info:
        run_pipeline(d / "pipeline.json", tmp_path / "w", after_step=tamper)
    err = info.value
    assert err.step == "quality" and isinstance(err.cause, DigestMismatch) and err.exit_code == 3
    record = json.loads((tmp_path / "w" / "run_record.json").read_text())
    assert record["status"] == "failed" and record["error"]["step"] == "quality"
    assert [s["status"] for s in record["steps"]] == ["completed", "failed"]
    assert not (tmp_path / "w" / "clean.csv").exists()


def test_failing_step_leaves_no_outputs(scenario, tmp_path):
    d = scenario("mussel")
    spec = json.loads((d / "model_linear.json").read_text())
    spec["features"].append("not.a.column")
    (d / "model_linear.json").write_text(json.dumps(spec))
    with pytest.raises(StepFailed) as info:
        run_pipeline(d / "pipeline.json", tmp_path / "w")
    assert info.value.step == "train"
    assert not (tmp_path / "w" / "model.json").exists()
    assert not (tmp_path / "w" / "predictions.csv").exists()
    assert not list((tmp_path / "w").glob("*.tmp*"))
    assert info.value.record["steps"][-1]["error"]["error"] == "MissingFeatureColumn"


def test_invalid_manifest_runs_nothing(scenario, tmp_path):
    d = scenario("mussel")
    manifest = load(d)
    manifest["steps"][0]["component"] = "plot"
    (d / "bad.json").write_text(json.dumps(manifest))
    with pytest.raises(ValidationFailed):
        run_pipeline(d / "bad.json", tmp_path / "w")
    assert not (tmp_path / "w").exists()


def test_workdir_must_be_writable(scenario, tmp_path):
    d = scenario("mussel")
    (tmp_path / "file").write_text("")
    with pytest.raises(WorkdirNotWritable):
        run_pipeline(d / "pipeline.json", tmp_path / "file")


def test_subprocess_mode_matches_inprocess(scenario, tmp_path):
    d = scenario("mussel")
    a = run_pipeline(d / "pipeline.json", tmp_path / "a")
    b = run_pipeline(d / "pipeline.json", tmp_path / "b", mode="subprocess")
    assert b["mode"] == "subprocess" and output_digests(a) == output_digests(b)


def test_replay_reproduces_every_digest(scenario, tmp_path):
    d = scenario("mussel")
    run_pipeline(d / "pipeline.json", tmp_path / "w")
    assert replay(tmp_path / "w" / "run_record.json", tmp_path / "again") == []
    (d / "mussel.csv").write_text((d / "mussel.csv").read_text() + "\n")
    assert replay(tmp_path / "w" / "run_record.json", tmp_path / "third") != []


def test_skipped_steps(scenario, tmp_path):
    d = scenario("mussel")
    manifest = load(d)
    manifest["steps"][1]["skip"] = True
    manifest["steps"][2]["inputs"]["table"] = "merged.csv"
    (d / "skip.json").write_text(json.dumps(manifest))
    record = run_pipeline(d / "skip.json", tmp_path / "w")
    assert [s["status"] for s in record["steps"]][:2] == ["completed", "skipped"]
    assert not (tmp_path / "w" / "clean.csv").exists()
