"""Chain-of-Ground: anchor a prediction, feed it back, refine.

Step 1 sees the raw screenshot and the instruction. Every later step sees the
full screenshot again, with earlier predictions fed back as drawn markers,
as textual coordinates, or both, and re-predicts. The run records a trace of
every prompt, reply, parsed point and step-image digest.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import string
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .backends import (BackendDescriptor, GroundingQuery, parse_point, request_grounding,
                       to_backend_frame)
from .exceptions import BackendError, ConfigError, PipelineError, PointParseError
from .geometry import Point, round_half_away, scale_point
from .imaging import check_image, image_digest, save_png
from .marker import MarkerSpec, marker_for_step, render_marker

logger = logging.getLogger(__name__)

MODALITIES = ("none", "text", "image", "both")
PLACEHOLDERS = {"instruction", "history", "step_index"}
NARROWING_FRACTION = 0.5

ANCHOR_TEMPLATE = (
    "You are looking at a screenshot of a user interface.\n"
    "Instruction: {instruction}\n"
    "Find the single interface element that carries out this instruction."
)
REFINE_TEMPLATE = (
    "You are looking at a screenshot of a user interface.\n"
    "Instruction: {instruction}\n"
    "This is refinement step {step_index}.\n"
    "{history}\n"
    "Look at the whole screenshot again. Check whether the earlier prediction sits on the "
    "element the instruction asks for, and correct it if it does not."
)
OUTPUT_INSTRUCTION = ("Reply with exactly one coordinate pair for the target element, "
                      "written as (x, y).")


def check_template(template: str, modality: str) -> None:
    """Reject templates with unknown or missing placeholders. Called at config load."""
    try:
        fields = {name for _, name, _, _ in string.Formatter().parse(template) if name is not None}
    except ValueError as exc:
        raise ConfigError(f"malformed prompt template: {exc}")
    unknown = fields - PLACEHOLDERS
    if unknown:
        raise ConfigError(f"unknown template placeholders: {sorted(unknown)}")
    if "instruction" not in fields:
        raise ConfigError("prompt template must contain {instruction}")
    if modality != "none" and "history" not in fields:
        raise ConfigError(f"template for a {modality!r}-feedback step must contain {{history}}")


@dataclass(frozen=True)
class StepConfig:
    backend: BackendDescriptor
    feedback_modality: str = "none"
    marker: MarkerSpec = field(default_factory=MarkerSpec)
    prompt_template: Optional[str] = None
    backend_name: str = "default"

    def __post_init__(self):
        if self.feedback_modality not in MODALITIES:
            raise ConfigError(f"feedback_modality must be one of {MODALITIES}, "
                              f"got {self.feedback_modality!r}")
        check_template(self.template, self.feedback_modality)

    @property
    def template(self) -> str:
        if self.prompt_template is not None:
            return self.prompt_template
        return ANCHOR_TEMPLATE if self.feedback_modality == "none" else REFINE_TEMPLATE


@dataclass(frozen=True)
class PipelineConfig:
    steps: Tuple[StepConfig, ...]
    adaptive_stop: Optional[float] = None  # convergence radius in pixels
    cumulative_markers: bool = True
    narrowing_baseline: bool = False
    name: str = "CoG"

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ConfigError("pipeline needs at least one step")
        if self.steps[0].feedback_modality != "none":
            raise ConfigError("step 1 is the anchoring step and must use feedback_modality 'none'")
        if self.adaptive_stop is not None:
            if self.adaptive_stop < 0:
                raise ConfigError("adaptive_stop epsilon must be > 0")
            if self.adaptive_stop == 0:
                object.__setattr__(self, "adaptive_stop", None)

    def to_dict(self) -> dict:
        backends = {}
        steps = []
        for step in self.steps:
            prev = backends.setdefault(step.backend_name, step.backend)
            if prev != step.backend or prev.to_dict() != step.backend.to_dict():
                raise ConfigError(f"backend name {step.backend_name!r} bound to two descriptors")
            steps.append({
                "backend": step.backend_name,
                "feedback_modality": step.feedback_modality,
                "marker": step.marker.to_dict(),
                "prompt_template": step.template,
            })
        return {
            "name": self.name,
            "backends": {k: v.to_dict() for k, v in sorted(backends.items())},
            "steps": steps,
            "adaptive_stop": None if self.adaptive_stop is None else {"epsilon": self.adaptive_stop},
            "cumulative_markers": self.cumulative_markers,
            "narrowing_baseline": self.narrowing_baseline,
        }

    @property
    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, d: dict, marker_profile: str = "large") -> "PipelineConfig":
        try:
            backends = {name: BackendDescriptor.from_dict(b) for name, b in d["backends"].items()}
            steps = []
            for i, s in enumerate(d["steps"], start=1):
                name = s["backend"]
                if name not in backends:
                    raise ConfigError(f"step {i} references undefined backend {name!r}")
                marker = (MarkerSpec.from_dict(s["marker"]) if s.get("marker")
                          else marker_for_step(i, marker_profile))
                steps.append(StepConfig(backend=backends[name], backend_name=name,
                                        feedback_modality=s.get("feedback_modality",
                                                                "none" if i == 1 else "image"),
                                        marker=marker, prompt_template=s.get("prompt_template")))
            stop = d.get("adaptive_stop")
            return cls(steps=tuple(steps),
                       adaptive_stop=stop.get("epsilon") if isinstance(stop, dict) else stop,
                       cumulative_markers=d.get("cumulative_markers", True),
                       narrowing_baseline=d.get("narrowing_baseline", False),
                       name=d.get("name", "CoG"))
        except ConfigError:
            raise
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise ConfigError(f"malformed pipeline config: {exc!r}")

    def with_overrides(self, steps: Optional[int] = None, modality: Optional[str] = None,
                       marker_profile: Optional[str] = None) -> "PipelineConfig":
        """Copy with CLI-style overrides: truncate depth, force refinement modality, resize markers."""
        new_steps = list(self.steps)
        if steps is not None:
            if steps < 1:
                raise ConfigError("--steps must be >= 1")
            new_steps = new_steps[:steps]
        if modality is not None:
            new_steps = [s if i == 0 else replace(s, feedback_modality=modality)
                         for i, s in enumerate(new_steps)]
        if marker_profile is not None:
            new_steps = [replace(s, marker=marker_for_step(i, marker_profile))
                         for i, s in enumerate(new_steps, start=1)]
        return replace(self, steps=tuple(new_steps))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def load_pipeline_config(path, marker_profile: str = "large") -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}")
    return PipelineConfig.from_dict(data, marker_profile=marker_profile)


def save_pipeline_config(config: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    backend_name: str
    prompt_text: str
    step_image_digest: str
    raw_reply: Optional[str]
    parsed_point: Optional[Point]
    parse_ok: bool
    latency: float
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "backend": self.backend_name,
            "prompt_text": self.prompt_text,
            "step_image_digest": self.step_image_digest,
            "raw_reply": self.raw_reply,
            "parsed_point": None if self.parsed_point is None else list(self.parsed_point.as_tuple()),
            "parse_ok": self.parse_ok,
            "latency_ms": self.latency,
            "error": self.error,
        }


@dataclass(frozen=True)
class Trace:
    instance_id: str
    config_digest: str
    records: Tuple[StepRecord, ...]
    final_point: Optional[Point]
    stopped_early: bool = False
    degraded: bool = False
    step_images: Tuple[np.ndarray, ...] = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "config_digest": self.config_digest,
            "final_point": None if self.final_point is None else list(self.final_point.as_tuple()),
            "stopped_early": self.stopped_early,
            "degraded": self.degraded,
            "n_records": len(self.records),
        }


def write_trace(trace: Trace, directory) -> None:
    """Persist a trace as ``trace.jsonl``, ``summary.json`` and ``step_<k>.png``."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "trace.jsonl"), "w", encoding="utf-8") as fh:
        for rec in trace.records:
            fh.write(canonical_json(rec.to_dict()) + "\n")
    with open(os.path.join(directory, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(trace.to_dict()) + "\n")
    for rec, img in zip(trace.records, trace.step_images):
        save_png(img, os.path.join(directory, f"step_{rec.step_index}.png"))


def build_prompt(step_index: int, instruction: str, history: Sequence[Point], modality: str,
                 template: Optional[str] = None, markers: Optional[Sequence[MarkerSpec]] = None,
                 cumulative: bool = True, attempts: Optional[Sequence[int]] = None) -> str:
    """Instantiate the prompt for one step.

    ``history`` holds prior predictions (already in the backend's coordinate
    frame), ``attempts`` the step numbers that produced them (default 1..n).
    """
    if step_index < 1:
        raise ValueError("step_index is 1-based")
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    if not instruction:
        raise ValueError("instruction must be non-empty")
    attempts = list(attempts) if attempts is not None else list(range(1, len(history) + 1))
    if len(attempts) != len(history) or len(history) > step_index - 1:
        raise ValueError("history must align with prior steps")
    if template is None:
        template = ANCHOR_TEMPLATE if modality == "none" else REFINE_TEMPLATE

    blocks = []
    if modality in ("text", "both") and history:
        blocks.append("\n".join(f"Previous prediction {k}: {p}"
                                for k, p in zip(attempts, history)))
    if modality in ("image", "both") and history:
        if markers is None:
            markers = [marker_for_step(k) for k in attempts]
        shown = list(zip(attempts, markers))
        if not cumulative:
            shown = shown[-1:]
        parts = [f"a {m.describe()} marks attempt {k}" for k, m in shown]
        blocks.append("The screenshot carries markers at earlier predicted locations: "
                      + "; ".join(parts) + ".")
    history_text = "\n".join(blocks)
    prompt = template.format(instruction=instruction, history=history_text, step_index=step_index)
    return prompt.rstrip() + "\n" + OUTPUT_INSTRUCTION


def prepare_step_image(original, history: Sequence[Point], per_step_markers: Sequence[MarkerSpec],
                       cumulative: bool = True) -> np.ndarray:
    """Draw markers for prior predictions onto a fresh copy of the full screenshot."""
    img = check_image(original)
    if len(history) != len(per_step_markers):
        raise ValueError("history and per_step_markers must align")
    pairs = list(zip(history, per_step_markers))
    if not cumulative:
        pairs = pairs[-1:]
    out = img.copy()
    for point, spec in pairs:
        out = render_marker(out, spec, point)
    return out


def narrowing_window(width: int, height: int, center: Point, fraction: float = NARROWING_FRACTION):
    """(x0, y0, w, h) of the crop used by the iterative-narrowing baseline, kept inside the image."""
    cw = max(1, round_half_away(width * fraction))
    ch = max(1, round_half_away(height * fraction))
    x0 = min(max(round_half_away(center.x) - cw // 2, 0), width - cw)
    y0 = min(max(round_half_away(center.y) - ch // 2, 0), height - ch)
    return x0, y0, cw, ch


def _parse_reply(reply, backend: BackendDescriptor, frame_w: int, frame_h: int) -> Point:
    if backend.coordinate_convention == "absolute_pixels":
        sw, sh = reply.sent_size if reply.sent_size != (0, 0) else (frame_w, frame_h)
        p = parse_point(reply.text, "absolute_pixels", sw, sh)
        if reply.scale != (1.0, 1.0):
            p = scale_point(p, *reply.scale)
        return p
    return parse_point(reply.text, backend.coordinate_convention, frame_w, frame_h)


def run_pipeline(config: PipelineConfig, image, instruction: str,
                 instance_id: str = "") -> Tuple[Point, Trace]:
    """Run every configured step and return the final point with its trace.

    Raises PipelineError when step 1's backend fails or no step yields a
    parsable point; later backend or parse failures fall back to the last
    good prediction and mark the trace as degraded.
    """
    if not instruction:
        raise ValueError("instruction must be non-empty")
    img = check_image(image)
    height, width = img.shape[:2]
    digest = config.digest

    history: List[Tuple[int, Point]] = []
    records: List[StepRecord] = []
    step_images: List[np.ndarray] = []
    stopped_early = False
    degraded = False

    def trace(final):
        return Trace(instance_id=instance_id, config_digest=digest, records=tuple(records),
                     final_point=final, stopped_early=stopped_early, degraded=degraded,
                     step_images=tuple(step_images))

    for k, step in enumerate(config.steps, start=1):
        backend = step.backend
        offset = (0, 0)
        modality = step.feedback_modality if k > 1 else "none"
        if config.narrowing_baseline and k > 1 and history:
            x0, y0, cw, ch = narrowing_window(width, height, history[-1][1])
            step_img = img[y0:y0 + ch, x0:x0 + cw].copy()
            offset = (x0, y0)
            modality = "none"
        elif modality in ("image", "both") and history:
            markers = [config.steps[i - 1].marker for i, _ in history]
            step_img = prepare_step_image(img, [p for _, p in history], markers,
                                          config.cumulative_markers)
        else:
            step_img = img
        frame_h, frame_w = step_img.shape[:2]

        shown = history if modality != "none" else []
        prompt = build_prompt(
            k, instruction,
            [to_backend_frame(p, backend, width, height) for _, p in shown],
            modality, template=step.template,
            markers=[config.steps[i - 1].marker for i, _ in shown],
            cumulative=config.cumulative_markers, attempts=[i for i, _ in shown])
        step_images.append(step_img)
        step_digest = image_digest(step_img)

        try:
            reply = request_grounding(backend, GroundingQuery(step_img, prompt, instance_id, k))
        except BackendError as exc:
            records.append(StepRecord(k, step.backend_name, prompt, step_digest, None, None,
                                      False, 0.0, error=f"{type(exc).__name__}: {exc}"))
            if k == 1:
                raise PipelineError(f"anchor step backend failed: {exc}", trace(None)) from exc
            logger.warning("instance %s step %d: backend failed, keeping previous point: %s",
                           instance_id, k, exc)
            degraded = True
            continue

        try:
            point = _parse_reply(reply, backend, frame_w, frame_h)
            point = Point(point.x + offset[0], point.y + offset[1])
        except PointParseError as exc:
            records.append(StepRecord(k, step.backend_name, prompt, step_digest, reply.text,
                                      None, False, reply.latency, error=str(exc)))
            if k > 1:
                degraded = True
            continue

        records.append(StepRecord(k, step.backend_name, prompt, step_digest, reply.text, point,
                                  True, reply.latency))
        converged = (config.adaptive_stop is not None and len(history) > 0
                     and point.distance(history[-1][1]) <= config.adaptive_stop)
        history.append((k, point))
        if converged:
            stopped_early = k < len(config.steps)
            break

    if not history:
        raise PipelineError("no step produced a parsable point", trace(None))
    final = history[-1][1]
    return final, trace(final)
