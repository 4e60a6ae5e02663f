import json
import os

import numpy as np
import pytest
from PIL import Image

ACCEPTANCE_VERDICTS = []

CATEGORIES = ["Development", "Creative", "CAD", "Scientific", "Office", "OS"]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)


def make_image(width=320, height=200, seed=0):
    """Deterministic textured RGB test image."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width]
    base = np.stack([(xs * 255 // max(width - 1, 1)), (ys * 255 // max(height - 1, 1)),
                     ((xs // 16 + ys // 16) % 2) * 160 + 40], axis=-1)
    noise = rng.integers(-20, 21, size=(height, width, 3))
    return np.clip(base + noise, 0, 255).astype(np.uint8)


def write_synthetic_manifest(root, n=20, categories=CATEGORIES, width=320, height=200,
                             point_every=4):
    """Write n PNG screenshots plus a manifest; every ``point_every``-th target is a point target."""
    img_dir = os.path.join(root, "images")
    os.makedirs(img_dir, exist_ok=True)
    rng = np.random.default_rng(1234)
    records = []
    for i in range(n):
        iid = f"inst{i:03d}"
        Image.fromarray(make_image(width, height, seed=i)).save(os.path.join(img_dir, f"{iid}.png"))
        if point_every and i % point_every == 3:
            target = {"type": "point",
                      "center": [int(rng.integers(20, width - 20)), int(rng.integers(20, height - 20))]}
        else:
            x1 = int(rng.integers(0, width - 40))
            y1 = int(rng.integers(0, height - 30))
            target = {"type": "box", "bbox": [x1, y1, x1 + int(rng.integers(8, 40)),
                                              y1 + int(rng.integers(8, 30))]}
        records.append({"id": iid, "image_path": f"{iid}.png",
                        "instruction": f"click control number {i}",
                        "target": target, "category": categories[i % len(categories)],
                        "interaction": "touch" if i % 3 else "physical_button",
                        "variant_of": None})
    doc = {"schema_version": 1, "root": "images", "default_point_tolerance": 14,
           "categories": list(categories), "instances": records}
    path = os.path.join(root, "manifest.json")
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path


def oracle_script(manifest, offset=(0, 0)):
    """Scripted replies built straight from the manifest: the target centre for every step."""
    script = {}
    for inst in manifest.instances:
        c = inst.target.center
        x, y = int(c.x) + offset[0], int(c.y) + offset[1]
        script[inst.id] = {1: f"({x}, {y})", 2: f"({x}, {y})", 3: f"({x}, {y})"}
    return script


@pytest.fixture
def image():
    return make_image()


@pytest.fixture
def synthetic_manifest(tmp_path):
    return write_synthetic_manifest(str(tmp_path / "data"))


def scripted_config(script, default=None, steps=3, name="CoG"):
    """Pipeline config over a scripted backend; ``script`` maps id -> {step: reply}."""
    from cogground.backends import scripted_backend
    from cogground.marker import marker_for_step
    from cogground.pipeline import PipelineConfig, StepConfig

    flat = {(iid, step): reply for iid, replies in script.items() for step, reply in replies.items()}
    backend = scripted_backend(flat, default=default)
    return PipelineConfig(steps=[StepConfig(backend, "none" if k == 1 else "image", marker_for_step(k))
                                 for k in range(1, steps + 1)], name=name)


def write_scripted_config(path, script, default=None, steps=3):
    from cogground.pipeline import save_pipeline_config

    save_pipeline_config(scripted_config(script, default, steps), str(path))
    return str(path)
