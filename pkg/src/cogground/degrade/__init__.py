"""Seeded, label-preserving image degradation.

Stages run in catalog order. Each stage draws its randomness from a private
substream keyed by (seed, stage name), so toggling one stage never changes
what another stage draws.
"""
from __future__ import annotations

import hashlib
import os
import re
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from ..dataset import Manifest, save_manifest, target_to_dict
from ..exceptions import ConfigError
from ..geometry import Instance
from ..imaging import check_image, image_digest, load_image, save_png
from ..pipeline import canonical_json
from .homography import Homography, apply_homography, transform_target
from .perlin import perlin2, perlin_grid
from .stages import CATALOG, PHOTOMETRIC, STAGE_NAMES

__all__ = ["DegradeConfig", "degrade_instance", "degrade_manifest", "stage_rng", "instance_seed",
           "perlin2", "perlin_grid", "Homography", "apply_homography", "transform_target",
           "STAGE_NAMES", "PHOTOMETRIC"]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class DegradeConfig:
    seed: int = 0
    severity: float = 0.5
    stages: Tuple[str, ...] = STAGE_NAMES
    output_quality: Optional[int] = None  # overrides the severity-derived JPEG quality

    def __post_init__(self):
        stages = tuple(self.stages)
        unknown = [s for s in stages if s not in CATALOG]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}; catalog: {', '.join(STAGE_NAMES)}")
        if not 0 <= self.severity <= 1:
            raise ConfigError(f"severity must be in [0, 1], got {self.severity}")
        if self.severity > 0 and not stages:
            raise ConfigError("a positive severity needs at least one stage")
        if self.output_quality is not None and not 1 <= self.output_quality <= 100:
            raise ConfigError("output_quality must be in 1..100")
        # duplicates collapse; execution order is always the catalog order
        object.__setattr__(self, "stages", tuple(s for s in STAGE_NAMES if s in stages))

    def to_dict(self):
        return {"seed": self.seed, "severity": self.severity, "stages": list(self.stages),
                "output_quality": self.output_quality}


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    """Independent generator for ``stage`` under ``seed``."""
    seq = np.random.SeedSequence([int(seed) & _MASK64, _name_key(stage)])
    return np.random.default_rng(seq)


def instance_seed(seed: int, instance_id: str) -> int:
    """64-bit per-instance seed so batch output does not depend on scheduling."""
    words = np.random.SeedSequence([int(seed) & _MASK64, _name_key(instance_id)]).generate_state(2)
    return int(words[0]) | (int(words[1]) << 32)


def _target_dict(target):
    return None if target is None else target_to_dict(target)


def degrade_instance(image, target, config: DegradeConfig):
    """Degrade one image and carry its target along.

    Returns ``(image, target, provenance)``; provenance lists every stage's
    drawn parameters and whether it had to be skipped.
    """
    img = check_image(image)
    provenance = {
        "config": config.to_dict(),
        "input_digest": image_digest(img),
        "target_in": _target_dict(target),
        "stages": [],
        "homography": None,
    }
    out = img.copy()
    ctx = {"target": target, "output_quality": config.output_quality}
    if config.severity > 0:
        for name in config.stages:
            ctx["flagged"] = False
            out, params = CATALOG[name](out, stage_rng(config.seed, name), config.severity, ctx)
            provenance["stages"].append({"stage": name, "params": params,
                                         "flagged": bool(ctx["flagged"])})
    if ctx.get("homography") is not None:
        provenance["homography"] = ctx["homography"].to_list()
    provenance["target_out"] = _target_dict(ctx["target"])
    provenance["output_digest"] = image_digest(out)
    return out, ctx["target"], provenance


def _safe_name(instance_id: str) -> str:
    safe = re.sub(r"[^\w.-]", "_", instance_id)
    if safe != instance_id:
        safe += "-" + hashlib.sha256(instance_id.encode()).hexdigest()[:8]
    return safe


def degrade_manifest(manifest: Manifest, config: DegradeConfig, out_dir: str,
                     parallelism: int = 1, suffix: str = "degraded") -> Manifest:
    """Write degraded copies of every instance under ``out_dir``.

    Produces ``images/``, ``manifest.json`` (instances linked to their clean
    originals through ``variant_of``) and ``provenance.jsonl``.
    """
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)

    def work(inst: Instance):
        src = manifest.image_file(inst)
        image = load_image(src)
        cfg = replace(config, seed=instance_seed(config.seed, inst.id))
        out, target, prov = degrade_instance(image, inst.target, cfg)
        new_id = f"{inst.id}__{suffix}"
        filename = _safe_name(new_id) + ".png"
        dest = os.path.join(image_dir, filename)
        if src.lower().endswith(".png") and np.array_equal(out, image):
            shutil.copyfile(src, dest)
        else:
            save_png(out, dest)
        prov = {"instance_id": new_id, "variant_of": inst.id, **prov}
        new_inst = replace(inst, id=new_id, image_path=filename, target=target, variant_of=inst.id)
        return new_inst, prov

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(work, manifest.instances))

    derived = Manifest(instances=tuple(r[0] for r in results), categories=manifest.categories,
                       default_point_tolerance=manifest.default_point_tolerance,
                       schema_version=manifest.schema_version, root="images", base_dir=out_dir)
    with open(os.path.join(out_dir, "provenance.jsonl"), "w", encoding="utf-8") as fh:
        for _, prov in results:
            fh.write(canonical_json(prov) + "\n")
    save_manifest(derived, os.path.join(out_dir, "manifest.json"))
    return derived
