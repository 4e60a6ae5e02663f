"""Run a pipeline over a manifest and score grounding success rate."""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .dataset import Manifest
from .exceptions import PipelineError
from .geometry import Instance, Point, hit_test, round_decimal
from .imaging import load_image
from .pipeline import PipelineConfig, canonical_json, run_pipeline, write_trace

logger = logging.getLogger(__name__)

REPORT_FORMATS = ("markdown_table", "csv", "jsonl")
OUT_OF_BOUNDS_WARN_RATE = 0.2


@dataclass(frozen=True)
class InstanceOutcome:
    instance_id: str
    category: str
    predicted: Optional[Point]
    hit: bool
    trace_path: Optional[str] = None
    error: Optional[str] = None
    out_of_bounds: bool = False

    def __post_init__(self):
        if self.predicted is None and self.hit:
            raise ValueError("an outcome without a prediction cannot be a hit")

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "category": self.category,
            "predicted": None if self.predicted is None else list(self.predicted.as_tuple()),
            "hit": self.hit,
            "trace_path": self.trace_path,
            "error": self.error,
        }


@dataclass(frozen=True)
class Score:
    hits: int
    total: int

    @property
    def accuracy(self) -> float:
        return accuracy(self.hits, self.total)


@dataclass(frozen=True)
class EvalReport:
    config_digest: str
    name: str
    per_category: Dict[str, Score]
    overall: Score
    outcomes: Tuple[InstanceOutcome, ...]
    point_tolerance: float
    tolerance_note: str


def accuracy(hits: int, total: int) -> float:
    """Percentage of hits, 1 decimal, exact half-away-from-zero rounding."""
    if total <= 0:
        raise ValueError("total must be positive")
    return round_decimal(Fraction(100 * hits, total), 1)


def weighted_average(per_category: Sequence[Tuple[float, int]]) -> float:
    """Instance-weighted mean of per-category accuracies, reported to 1 decimal.

    Floats are read at their printed value; Fractions are used exactly, so
    unrounded accuracies give the same answer as recounting raw hits.

    >>> weighted_average([(50.0, 320), (40.0, 100)])
    47.6
    """
    if not per_category:
        raise ValueError("weighted_average needs at least one category")
    num = Fraction(0)
    den = 0
    for acc, n in per_category:
        if n <= 0:
            raise ValueError(f"category counts must be positive, got {n}")
        exact = acc if isinstance(acc, (Fraction, int)) else Fraction(Decimal(repr(float(acc))))
        num += exact * n
        den += n
    return round_decimal(num / den, 1)


def _trace_dirname(instance_id: str) -> str:
    safe = re.sub(r"[^\w.-]", "_", instance_id)
    if safe != instance_id or safe in ("", ".", ".."):
        safe = f"{safe}-{hashlib.sha256(instance_id.encode()).hexdigest()[:8]}"
    return safe


def _run_one(manifest: Manifest, config: PipelineConfig, inst: Instance,
             out_dir: Optional[str]) -> InstanceOutcome:
    trace_path = os.path.join("traces", _trace_dirname(inst.id)) if out_dir else None
    trace = None
    try:
        image = load_image(manifest.image_file(inst))
        point, trace = run_pipeline(config, image, inst.instruction, instance_id=inst.id)
    except PipelineError as exc:
        trace = exc.trace
        outcome = InstanceOutcome(inst.id, inst.category, None, False, trace_path,
                                  error=f"PipelineError: {exc}")
    except Exception as exc:  # crash isolation: one bad instance never aborts the run
        outcome = InstanceOutcome(inst.id, inst.category, None, False, None,
                                  error=f"{type(exc).__name__}: {exc}")
    else:
        h, w = image.shape[:2]
        oob = not (0 <= point.x < w and 0 <= point.y < h)
        outcome = InstanceOutcome(inst.id, inst.category, point, hit_test(point, inst.target),
                                  trace_path, out_of_bounds=oob)
    if out_dir and trace is not None:
        write_trace(trace, os.path.join(out_dir, trace_path))
    return outcome


def evaluate(manifest: Manifest, pipeline_config: PipelineConfig, parallelism: int = 1,
             out_dir: Optional[str] = None) -> EvalReport:
    """Score ``pipeline_config`` on every instance of ``manifest``.

    Instances run on a pool of ``parallelism`` threads. Failures become
    misses carrying a diagnostic. Outcomes are sorted by instance id so the
    report does not depend on scheduling.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if not manifest.instances:
        raise ValueError("cannot evaluate an empty manifest")

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(_run_one, manifest, pipeline_config, inst, out_dir)
                   for inst in manifest.instances]
        outcomes = sorted((f.result() for f in futures), key=lambda o: o.instance_id)

    predicted = [o for o in outcomes if o.predicted is not None]
    if predicted:
        oob = sum(o.out_of_bounds for o in predicted)
        if oob / len(predicted) > OUT_OF_BOUNDS_WARN_RATE:
            logger.warning("%d of %d predictions fall outside the image; check the backends' "
                           "coordinate_convention", oob, len(predicted))

    counts: Dict[str, List[int]] = {}
    for o in outcomes:
        c = counts.setdefault(o.category, [0, 0])
        c[0] += o.hit
        c[1] += 1
    order = [c for c in manifest.categories if c in counts]
    order += sorted(c for c in counts if c not in order)
    per_category = {c: Score(*counts[c]) for c in order}
    overall = Score(sum(s.hits for s in per_category.values()),
                    sum(s.total for s in per_category.values()))
    tol = manifest.default_point_tolerance
    return EvalReport(
        config_digest=pipeline_config.digest,
        name=pipeline_config.name,
        per_category=per_category,
        overall=overall,
        outcomes=tuple(outcomes),
        point_tolerance=tol,
        tolerance_note=f"point targets without an explicit radius are hits within {tol:g} px",
    )


def _fmt_acc(value: float) -> str:
    return f"{value:.1f}"


def render_report(report: Union[EvalReport, Sequence[EvalReport]], format: str = "markdown_table") -> str:
    """Render one or more reports, one row per configuration: categories then Avg."""
    reports = [report] if isinstance(report, EvalReport) else list(report)
    if format not in REPORT_FORMATS:
        raise ValueError(f"format must be one of {REPORT_FORMATS}")
    if not reports or any(not r.per_category for r in reports):
        raise ValueError("cannot render a report without category results")
    columns: List[str] = []
    for r in reports:
        columns += [c for c in r.per_category if c not in columns]

    def cells(r):
        return [_fmt_acc(r.per_category[c].accuracy) if c in r.per_category else ""
                for c in columns] + [_fmt_acc(r.overall.accuracy)]

    if format == "jsonl":
        lines = []
        for r in reports:
            for o in r.outcomes:
                d = o.to_dict()
                d["config_digest"] = r.config_digest
                lines.append(canonical_json(d))
        return "\n".join(lines) + "\n"

    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["Method", "config_digest", "point_tolerance_px"] + columns + ["Avg"])
        for r in reports:
            writer.writerow([r.name, r.config_digest, f"{r.point_tolerance:g}"] + cells(r))
        return buf.getvalue()

    lines = []
    for r in reports:
        lines.append(f"Config `{r.name}` digest: `{r.config_digest}`  ")
    tolerances = sorted({r.point_tolerance for r in reports})
    lines.append("Point tolerance: " + ", ".join(f"{t:g} px" for t in tolerances)
                 + f" ({reports[0].tolerance_note})")
    lines.append("")
    header = ["Method"] + columns + ["Avg"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join(["---"] + [":---:"] * (len(header) - 1)) + "|")
    for r in reports:
        lines.append("| " + " | ".join([r.name.replace("|", "\\|")] + cells(r)) + " |")
    return "\n".join(lines) + "\n"


def write_report_files(report: EvalReport, out_dir: str) -> Dict[str, str]:
    """Write report.md, report.csv and outcomes.jsonl; return their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for fmt, name in (("markdown_table", "report.md"), ("csv", "report.csv"),
                      ("jsonl", "outcomes.jsonl")):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(render_report(report, fmt))
        paths[name] = path
    return paths
