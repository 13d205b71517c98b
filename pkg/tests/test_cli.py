import hashlib
import json
import subprocess
import sys

import pytest

from animaltwin import __version__
from animaltwin.cli import main
from animaltwin.ingest import MergeSpec, format_table_csv, merge_sources
from animaltwin.runner import output_digests, run_pipeline


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def stderr_doc(capsys):
    return json.loads(capsys.readouterr().err.splitlines()[-2])


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(["merge", "--bogus"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("usage:") and '"exit_code": 1' in err


def test_missing_subcommand(capsys):
    assert main([]) == 1
    assert stderr_doc(capsys)["error"] == "UsageError"


def test_version(capsys):
    assert main(["--version"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["animaltwin"] == __version__ and "merge" in doc["components"]


def test_merge_writes_table_and_report(scenario):
    d = scenario("pig")
    out = d / "out" / "merged.csv"
    (d / "out").mkdir()
    sources = ["--source", str(d / "wearable.csv"), "--source", str(d / "chamber.csv")]
    assert main(["merge", "--spec", str(d / "merge.json"), "--out", str(out), *sources]) == 0
    assert out.exists() and (d / "out" / "merge_report.json").exists()
    table, _ = merge_sources(MergeSpec.load(d / "merge.json"))
    assert out.read_text() == format_table_csv(table)


def test_manual_sequence_matches_run(scenario, tmp_path):
    d = scenario("mussel")
    w = tmp_path / "manual"
    w.mkdir()
    p = lambda name: str(w / name)  # noqa: E731
    steps = [
        ["merge", "--spec", str(d / "merge.json"), "--source", str(d / "mussel.csv"),
         "--out", p("merged.csv"), "--report", p("merge_report.json")],
        ["qc", "--in", p("merged.csv"), "--spec", str(d / "quality.json"),
         "--out", p("clean.csv"), "--report", p("quality_report.json")],
        ["split", "--in", p("clean.csv"), "--spec", str(d / "split.json"),
         "--train", p("train.csv"), "--test", p("test.csv"), "--report", p("split_report.json")],
        ["train", "--train", p("train.csv"), "--test", p("test.csv"), "--spec", str(d / "model_linear.json"),
         "--out", p("model.json"), "--predictions", p("predictions.csv")],
        ["report", "--model", p("model.json"), "--predictions", p("predictions.csv"),
         "--manifest", str(d / "pipeline.json"), "--spec", str(d / "report_params.json"),
         "--out-md", p("report.md"), "--out-json", p("report.json")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    record = run_pipeline(d / "pipeline.json", tmp_path / "run")
    for key, digest in output_digests(record).items():
        name = next(
            o["path"] for s in record["steps"] for role, o in s["outputs"].items() if f"{s['id']}/{role}" == key
        )
        assert sha(w / name) == digest, key


def test_predict_and_evaluate(scenario, tmp_path):
    d = scenario("mussel")
    run_pipeline(d / "pipeline.json", tmp_path)
    assert main(["predict", "--model", str(tmp_path / "model.json"), "--in", str(tmp_path / "test.csv"),
                 "--out", str(tmp_path / "p.csv")]) == 0
    assert (tmp_path / "p.csv").read_bytes() == (tmp_path / "predictions.csv").read_bytes()
    assert main(["evaluate", "--predictions", str(tmp_path / "p.csv"), "--out", str(tmp_path / "m.json")]) == 0
    metrics = json.loads((tmp_path / "m.json").read_text())
    assert metrics["n"] > 0 and metrics["rmse"] >= 0


def test_validate_reports_violations(scenario, capsys):
    d = scenario("mussel")
    assert main(["validate", str(d / "pipeline.json")]) == 0
    assert json.loads(capsys.readouterr().out)["valid"] is True
    manifest = json.loads((d / "pipeline.json").read_text())
    manifest["steps"][0]["component"] = "plot"
    (d / "bad.json").write_text(json.dumps(manifest))
    assert main(["validate", str(d / "bad.json")]) == 1
    out = json.loads(capsys.readouterr().out)
    assert [v["code"] for v in out["violations"]] == ["UnknownComponent"]


def test_errors_are_json_on_stderr(scenario, tmp_path, capsys):
    d = scenario("mussel")
    assert main(["predict", "--model", str(tmp_path / "absent.json"), "--in", str(d / "mussel.csv"),
                 "--out", str(tmp_path / "p.csv")]) == 2
    assert stderr_doc(capsys)["exit_code"] == 2
    (tmp_path / "broken.json").write_text("{")
    assert main(["predict", "--model", str(tmp_path / "broken.json"), "--in", str(d / "mussel.csv"),
                 "--out", str(tmp_path / "p.csv")]) == 2
    assert stderr_doc(capsys)["error"] == "CorruptArtifact"
    assert not (tmp_path / "p.csv").exists()


def test_run_and_generate(tmp_path, capsys):
    assert main(["generate", "--kind", "mussel", "--seed", "1", "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "ground_truth.json").exists()
    assert main(["run", str(tmp_path / "s" / "pipeline.json"), "--workdir", str(tmp_path / "w")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["status"] == "completed" and "report/markdown" in out["outputs"]


@pytest.mark.parametrize("argv", [["generate", "--out", "x"], ["train", "--train", "a", "--spec", "b",
                                                                 "--out", "c", "--predictions", "d"]])
def test_incomplete_arguments(argv, capsys):
    assert main(argv) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "animaltwin", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
