"""Command-line entry point: ``cog ground | eval | degrade | report``.

Exit codes: 0 success, 1 bad input or configuration, 2 pipeline failure.
"""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager

from . import __version__
from .dataset import load_manifest
from .degrade import STAGE_NAMES, DegradeConfig, degrade_manifest
from .evaluator import (EvalReport, InstanceOutcome, Score, evaluate, render_report,
                        write_report_files)
from .exceptions import CogError, ConfigError, ManifestError, PipelineError
from .geometry import Point
from .imaging import load_image
from .pipeline import canonical_json, load_pipeline_config, run_pipeline, write_trace

logger = logging.getLogger("cogground")

EXIT_OK, EXIT_INPUT, EXIT_PIPELINE = 0, 1, 2
FAILURE_MARKER = "FAILED"
RUN_MANIFEST = "run_manifest.json"


class InputError(Exception):
    pass


def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _write_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


class Run:
    """Bookkeeping for one command: run manifest on success, failure marker otherwise."""

    def __init__(self, command, out_dir, argv):
        self.info = {"command": command, "argv": list(argv), "config_paths": {}, "digests": {},
                     "started_at": _now(), "tool_version": __version__}
        self.out_dir = out_dir
        self.failed = False

    def prepare(self):
        os.makedirs(self.out_dir, exist_ok=True)
        for stale in (FAILURE_MARKER, RUN_MANIFEST):
            path = os.path.join(self.out_dir, stale)
            if os.path.exists(path):
                os.remove(path)

    def fail(self, message):
        self.failed = True
        if os.path.isdir(self.out_dir):
            _write_atomic(os.path.join(self.out_dir, FAILURE_MARKER), message.rstrip() + "\n")

    def finish(self):
        if self.failed:
            return
        self.info["finished_at"] = _now()
        _write_atomic(os.path.join(self.out_dir, RUN_MANIFEST),
                      json.dumps(self.info, indent=2, sort_keys=True) + "\n")


@contextmanager
def _run(command, out_dir, argv):
    run = Run(command, out_dir, argv)
    try:
        yield run
    except BaseException as exc:
        run.fail(f"{type(exc).__name__}: {exc}")
        raise
    else:
        run.finish()


def _load_config(args):
    config = load_pipeline_config(args.config, marker_profile=args.marker_profile or "large")
    return config.with_overrides(steps=args.steps, modality=args.modality,
                                 marker_profile=args.marker_profile)


def cmd_ground(args, argv) -> int:
    try:
        image = load_image(args.image)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {args.image}: {exc}")
    config = _load_config(args)
    instance_id = args.instance_id or os.path.splitext(os.path.basename(args.image))[0]
    with _run("ground", args.out, argv) as run:
        run.prepare()
        run.info["config_paths"]["pipeline"] = args.config
        run.info["digests"]["pipeline"] = config.digest
        try:
            point, trace = run_pipeline(config, image, args.instruction, instance_id=instance_id)
        except PipelineError as exc:
            if exc.trace is not None:
                write_trace(exc.trace, args.out)
            run.fail(f"PipelineError: {exc}")
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PIPELINE
        write_trace(trace, args.out)
        print(point)
    return EXIT_OK


def report_to_dict(report: EvalReport) -> dict:
    return {
        "name": report.name,
        "config_digest": report.config_digest,
        "point_tolerance": report.point_tolerance,
        "tolerance_note": report.tolerance_note,
        "categories": list(report.per_category),
        "outcomes": [o.to_dict() for o in report.outcomes],
    }


def report_from_dict(d: dict) -> EvalReport:
    outcomes = tuple(
        InstanceOutcome(o["instance_id"], o["category"],
                        None if o["predicted"] is None else Point(*o["predicted"]),
                        o["hit"], o.get("trace_path"), o.get("error"))
        for o in d["outcomes"])
    per = {c: Score(sum(o.hit for o in outcomes if o.category == c),
                    sum(1 for o in outcomes if o.category == c)) for c in d["categories"]}
    overall = Score(sum(s.hits for s in per.values()), sum(s.total for s in per.values()))
    return EvalReport(d["config_digest"], d["name"], per, overall, outcomes,
                      d["point_tolerance"], d["tolerance_note"])


def cmd_eval(args, argv) -> int:
    manifest = load_manifest(args.manifest)
    config = _load_config(args)
    if args.parallelism < 1:
        raise InputError("--parallelism must be >= 1")
    with _run("eval", args.out, argv) as run:
        run.prepare()
        run.info["config_paths"].update(pipeline=args.config, manifest=args.manifest)
        run.info["digests"]["pipeline"] = config.digest
        report = evaluate(manifest, config, parallelism=args.parallelism, out_dir=args.out)
        write_report_files(report, args.out)
        _write_atomic(os.path.join(args.out, "report.json"),
                      canonical_json(report_to_dict(report)) + "\n")
        errors = sum(o.error is not None for o in report.outcomes)
        print(f"overall: {report.overall.accuracy:.1f}")
        if errors:
            print(f"errors: {errors} of {report.overall.total} instances", file=sys.stderr)
    return EXIT_OK


def parse_stages(text):
    if text is None:
        return STAGE_NAMES
    stages = [s.strip() for s in text.split(",") if s.strip()]
    unknown = [s for s in stages if s not in STAGE_NAMES]
    if unknown:
        raise InputError(f"unknown stage(s) {', '.join(unknown)}; "
                         f"available: {', '.join(STAGE_NAMES)}")
    return tuple(stages)


def cmd_degrade(args, argv) -> int:
    stages = parse_stages(args.stages)
    manifest = load_manifest(args.manifest)
    config = DegradeConfig(seed=args.seed, severity=args.severity, stages=stages,
                           output_quality=args.quality)
    with _run("degrade", args.out, argv) as run:
        run.prepare()
        run.info["config_paths"]["manifest"] = args.manifest
        run.info["degrade_config"] = config.to_dict()
        run.info["digests"]["degrade_config"] = hashlib.sha256(
            canonical_json(config.to_dict()).encode("utf-8")).hexdigest()
        derived = degrade_manifest(manifest, config, args.out, parallelism=args.parallelism)
        print(f"wrote {len(derived)} degraded instances to {args.out}")
    return EXIT_OK


def cmd_report(args, argv) -> int:
    reports = []
    for path in args.reports:
        if os.path.isdir(path):
            path = os.path.join(path, "report.json")
        try:
            with open(path, encoding="utf-8") as fh:
                reports.append(report_from_dict(json.load(fh)))
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"cannot read report {path}: {exc}")
    sys.stdout.write(render_report(reports, args.format))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cog", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def pipeline_flags(p):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--marker-profile", choices=("large", "small"))
        p.add_argument("--modality", choices=("text", "image", "both"),
                       help="feedback modality for every refinement step")
        p.add_argument("--steps", type=int, help="truncate the chain to N steps")

    g = sub.add_parser("ground", help="ground one instruction on one screenshot")
    g.add_argument("image")
    g.add_argument("instruction")
    g.add_argument("--instance-id", help="id passed to backends (default: image file stem)")
    pipeline_flags(g)

    e = sub.add_parser("eval", help="evaluate a pipeline over a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--parallelism", type=int, default=1)
    pipeline_flags(e)

    d = sub.add_parser("degrade", help="write degraded variants of a manifest")
    d.add_argument("--manifest", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--severity", type=float, default=0.5)
    d.add_argument("--stages", help="comma-separated subset of: " + ",".join(STAGE_NAMES))
    d.add_argument("--quality", type=int, help="override the JPEG recompression quality")
    d.add_argument("--parallelism", type=int, default=1)

    r = sub.add_parser("report", help="render saved eval results as one table")
    r.add_argument("reports", nargs="+", help="eval output directories or report.json files")
    r.add_argument("--format", choices=("markdown_table", "csv", "jsonl"),
                   default="markdown_table")
    return parser


COMMANDS = {"ground": cmd_ground, "eval": cmd_eval, "degrade": cmd_degrade, "report": cmd_report}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except (InputError, ConfigError, ManifestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except CogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
