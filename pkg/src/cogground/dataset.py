"""Benchmark manifests (ScreenSpot-Pro style box targets, TPanel-UI style point targets).

A manifest is a UTF-8 JSON document::

    {
      "schema_version": 1,
      "root": "images",
      "default_point_tolerance": 14,
      "categories": ["Development", "Office"],
      "instances": [
        {"id": "a", "image_path": "a.png", "instruction": "open settings",
         "target": {"type": "box", "bbox": [10, 10, 40, 30]},
         "category": "Office", "interaction": "touch", "variant_of": null}
      ]
    }

``root`` is resolved relative to the manifest file. Point targets are written
``{"type": "point", "center": [x, y], "radius": r}``; a missing radius takes
``default_point_tolerance``.
"""
from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from .exceptions import ManifestParseError, ManifestValidationError
from .geometry import BBox, BoxTarget, Instance, Point, PointTarget

SCHEMA_VERSION = 1
DEFAULT_POINT_TOLERANCE = 14.0
SPLIT_KEYS = ("category", "interaction")
UNSPECIFIED = "unspecified"


@dataclass(frozen=True)
class Manifest:
    instances: Tuple[Instance, ...]
    categories: Tuple[str, ...]
    default_point_tolerance: float = DEFAULT_POINT_TOLERANCE
    schema_version: int = SCHEMA_VERSION
    root: str = "."
    # directory the manifest was loaded from; not serialized
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "categories", tuple(self.categories))

    def __len__(self):
        return len(self.instances)

    @property
    def image_root(self) -> str:
        return os.path.normpath(os.path.join(self.base_dir, self.root))

    def image_file(self, instance: Instance) -> str:
        return os.path.join(self.image_root, instance.image_path)


def target_to_dict(target) -> dict:
    if isinstance(target, BoxTarget):
        return {"type": "box", "bbox": list(target.box.as_tuple())}
    return {"type": "point", "center": list(target.center.as_tuple()), "radius": target.radius}


def target_from_dict(d, default_radius: float):
    if not isinstance(d, dict):
        raise ValueError("target must be an object")
    kind = d.get("type")
    if kind == "box":
        bbox = d.get("bbox")
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise ValueError("box target needs bbox [x1, y1, x2, y2]")
        return BoxTarget(BBox(*(float(v) for v in bbox)))
    if kind == "point":
        center = d.get("center")
        if not isinstance(center, list) or len(center) != 2:
            raise ValueError("point target needs center [x, y]")
        radius = d.get("radius")
        return PointTarget(Point(float(center[0]), float(center[1])),
                           float(default_radius if radius is None else radius))
    raise ValueError(f"unknown target type {kind!r}")


def instance_to_dict(inst: Instance) -> dict:
    return {
        "id": inst.id,
        "image_path": inst.image_path,
        "instruction": inst.instruction,
        "target": target_to_dict(inst.target),
        "category": inst.category,
        "interaction": inst.interaction,
        "variant_of": inst.variant_of,
    }


def manifest_to_dict(manifest: Manifest) -> dict:
    return {
        "schema_version": manifest.schema_version,
        "root": manifest.root,
        "default_point_tolerance": manifest.default_point_tolerance,
        "categories": list(manifest.categories),
        "instances": [instance_to_dict(i) for i in manifest.instances],
    }


def save_manifest(manifest: Manifest, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_dict(manifest), fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    os.replace(tmp, path)


def parse_manifest(data: dict, base_dir: str = ".", check_images: bool = True) -> Manifest:
    """Validate a decoded manifest document. Collects every problem before raising."""
    if not isinstance(data, dict):
        raise ManifestParseError("manifest must be a JSON object")
    for key in ("instances", "categories"):
        if not isinstance(data.get(key), list):
            raise ManifestParseError(f"manifest field {key!r} missing or not a list")
    tolerance = float(data.get("default_point_tolerance", DEFAULT_POINT_TOLERANCE))
    if tolerance <= 0:
        raise ManifestParseError("default_point_tolerance must be > 0")
    categories = [str(c) for c in data["categories"]]
    root = str(data.get("root", "."))
    image_root = os.path.abspath(os.path.join(base_dir, root))

    problems: List[Tuple[str, str]] = []
    seen: Counter = Counter()
    instances = []
    for n, rec in enumerate(data["instances"]):
        rid = str(rec.get("id", f"<record {n}>")) if isinstance(rec, dict) else f"<record {n}>"
        if not isinstance(rec, dict) or "id" not in rec:
            problems.append((rid, "record must be an object with an 'id'"))
            continue
        seen[rid] += 1
        if seen[rid] == 2:
            problems.append((rid, "duplicate id"))
        if seen[rid] > 1:
            continue
        errs = []
        instruction = rec.get("instruction")
        if not isinstance(instruction, str) or not instruction.strip():
            errs.append("instruction must be non-empty text")
        category = rec.get("category")
        if category not in categories:
            errs.append(f"category {category!r} not in declared categories")
        image_path = rec.get("image_path")
        if not isinstance(image_path, str) or not image_path:
            errs.append("image_path missing")
        else:
            full = os.path.normpath(os.path.join(image_root, image_path))
            if os.path.isabs(image_path) or os.path.commonpath([full, image_root]) != image_root:
                errs.append(f"image_path {image_path!r} escapes the manifest root")
            elif check_images and not os.path.isfile(full):
                errs.append(f"image not found: {full}")
        try:
            target = target_from_dict(rec.get("target"), tolerance)
        except (ValueError, TypeError) as exc:
            errs.append(f"malformed target: {exc}")
            target = None
        problems.extend((rid, e) for e in errs)
        if not errs:
            instances.append(Instance(id=rid, image_path=image_path, instruction=instruction,
                                      target=target, category=category,
                                      interaction=rec.get("interaction"),
                                      variant_of=rec.get("variant_of")))
    if problems:
        raise ManifestValidationError(problems)
    return Manifest(instances=tuple(instances), categories=tuple(categories),
                    default_point_tolerance=tolerance,
                    schema_version=int(data.get("schema_version", SCHEMA_VERSION)),
                    root=root, base_dir=base_dir)


def load_manifest(path, check_images: bool = True) -> Manifest:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"{path}: not valid JSON: {exc}")
    return parse_manifest(data, base_dir=os.path.dirname(os.path.abspath(path)),
                          check_images=check_images)


def split_counts(manifest: Manifest, key: str) -> Dict[str, int]:
    """Instance count per label of ``key`` ('category' or 'interaction')."""
    if key not in SPLIT_KEYS:
        raise ValueError(f"split key must be one of {SPLIT_KEYS}, got {key!r}")
    counts: Dict[str, int] = {}
    for inst in manifest.instances:
        label = getattr(inst, key) or UNSPECIFIED
        counts[label] = counts.get(label, 0) + 1
    return counts
