"""Command-line entry point: one subcommand per component plus ``run`` and ``validate``.

Exit codes: 0 success, 1 validation or user error, 2 I/O error, 3 internal
invariant violation. Errors are printed to standard error as one line of
JSON followed by a human-readable message.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from ._io import staged_outputs
from .components import COMPONENT_VERSIONS, run_component, run_generate
from .errors import AnimalTwinError, IOFailure, UserError

log = logging.getLogger("animaltwin")


class UsageError(UserError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _sibling(path: str, name: str) -> Path:
    return Path(path).with_name(name)


def _staged(component: str, params, inputs: dict, outputs: dict, seed=None, n_jobs=1) -> None:
    outputs = {k: v for k, v in outputs.items() if v is not None}
    inputs = {k: v for k, v in inputs.items() if v}
    with staged_outputs(outputs) as tmp:
        run_component(component, params, inputs, tmp, seed=seed, n_jobs=n_jobs)
    for role, path in outputs.items():
        log.info("wrote %s: %s", role, path)


def cmd_merge(a):
    report = a.report or _sibling(a.out, "merge_report.json")
    _staged("merge", a.spec, {"sources": a.source}, {"table": a.out, "report": report})


def cmd_qc(a):
    report = a.report or _sibling(a.out, "quality_report.json")
    _staged("quality", a.spec, {"table": a.input}, {"table": a.out, "report": report})


def cmd_split(a):
    _staged("split", a.spec, {"table": a.input}, {"train": a.train, "test": a.test, "report": a.report}, seed=a.seed)


def cmd_train(a):
    if a.predictions and not a.test:
        raise UsageError("--predictions needs --test")
    _staged(
        "train", a.spec, {"train": a.train, "test": a.test},
        {"model": a.out, "predictions": a.predictions}, seed=a.seed, n_jobs=a.threads,
    )


def cmd_predict(a):
    _staged("predict", None, {"model": a.model, "table": a.input}, {"predictions": a.out})


def cmd_evaluate(a):
    _staged("evaluate", None, {"predictions": a.predictions}, {"metrics": a.out})


def cmd_report(a):
    _staged(
        "report", a.spec,
        {"model": a.model, "predictions": a.predictions, "metrics": a.metrics, "manifest": a.manifest},
        {"markdown": a.out_md, "json": a.out_json},
    )


def cmd_generate(a):
    if not a.config and not a.kind:
        raise UsageError("generate needs --kind or --config")
    with staged_outputs({"dir": a.out}) as tmp:
        run_generate(a.config, {}, tmp, seed=a.seed, kind=a.kind)
    log.info("wrote scenario to %s", a.out)


def cmd_run(a):
    from .runner import output_digests, run_pipeline

    record = run_pipeline(
        a.manifest, a.workdir, mode="subprocess" if a.subprocess else "inprocess", n_jobs=a.threads
    )
    print(json.dumps({"status": record["status"], "outputs": output_digests(record)}, indent=2, sort_keys=True))


def cmd_validate(a):
    from .runner import validate_manifest

    violations = validate_manifest(a.manifest)
    print(json.dumps({"valid": not violations, "violations": [v.to_dict() for v in violations]}, indent=2))
    return 1 if violations else 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="animaltwin", description="Sensor-fusion pipeline for animal digital twins.")
    p.add_argument("--version", action="store_true", help="print package and component versions")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("merge", help="merge sensor sources onto one time grid")
    s.add_argument("--spec", required=True, help="merge spec JSON")
    s.add_argument("--out", required=True, help="merged table CSV")
    s.add_argument("--report", help="merge report JSON (default: merge_report.json beside --out)")
    s.add_argument("--source", action="append", help="declared source file; overrides the spec path with the same name")
    s.set_defaults(func=cmd_merge)

    s = sub.add_parser("qc", help="flag outliers and handle missing data")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--spec", help="quality spec JSON (default rules if omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--report", help="quality report JSON (default: quality_report.json beside --out)")
    s.set_defaults(func=cmd_qc)

    s = sub.add_parser("split", help="split a table into training and test sets")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--report")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="fit a model")
    s.add_argument("--train", required=True)
    s.add_argument("--spec", required=True, help="model spec JSON")
    s.add_argument("--out", required=True, help="model artifact JSON")
    s.add_argument("--test", help="table to predict after training")
    s.add_argument("--predictions", help="predictions CSV for --test")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="apply a saved model to a table")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="compute metrics from a predictions CSV")
    s.add_argument("--predictions", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="write report.md and report.json")
    s.add_argument("--model", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--metrics")
    s.add_argument("--manifest", help="manifest the model came from; used for the reapplication recipe")
    s.add_argument("--spec", help="report params JSON")
    s.add_argument("--out-md", required=True)
    s.add_argument("--out-json", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", help="execute a pipeline manifest")
    s.add_argument("manifest")
    s.add_argument("--workdir", required=True)
    s.add_argument("--subprocess", action="store_true", help="run each step as a separate process")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("validate", help="check a pipeline manifest")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("generate", help="write a synthetic scenario")
    s.add_argument("--kind", choices=["pig", "salmon", "mussel"])
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="scenario config JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)
    return p


def _fail(exc: BaseException, code: int) -> int:
    if isinstance(exc, AnimalTwinError):
        doc = exc.to_dict()
    else:
        doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    doc["exit_code"] = code
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    print(f"animaltwin: error: {doc['message']}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(exc, 1)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if args.version:
        print(json.dumps({"animaltwin": __version__, "components": COMPONENT_VERSIONS}, indent=2, sort_keys=True))
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return _fail(UsageError("a subcommand is required"), 1)
    try:
        return args.func(args) or 0
    except AnimalTwinError as exc:
        return _fail(exc, exc.exit_code)
    except OSError as exc:
        return _fail(IOFailure(str(exc)), 2)
    except Exception as exc:  # noqa: BLE001 - anything unexpected is an internal error
        log.debug("internal error", exc_info=True)
        return _fail(exc, 3)


if __name__ == "__main__":
    sys.exit(main())
