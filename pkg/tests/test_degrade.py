import hashlib
import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cogground.dataset import load_manifest
from cogground.degrade import (DegradeConfig, Homography, PHOTOMETRIC, STAGE_NAMES,
                               apply_homography, degrade_instance, degrade_manifest, perlin2,
                               perlin_grid, stage_rng, transform_target)
from cogground.degrade.stages import CATALOG
from cogground.exceptions import ConfigError, DegenerateMappingError
from cogground.geometry import BBox, BoxTarget, Point, PointTarget, hit_test
from cogground.imaging import image_digest

from conftest import make_image


# -- independent Perlin reference: textbook scalar form with a doubled table ---------------

def reference_perlin(x, y, seed):
    p = [int(v) for v in np.random.default_rng(seed).permutation(256)] * 2
    grads = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)]

    def fade(t):
        return t ** 3 * (10 - 15 * t + 6 * t * t)

    def grad(h, dx, dy):
        gx, gy = grads[h & 7]
        return gx * dx + gy * dy

    def lerp(a, b, t):
        return a + t * (b - a)

    X, Y = math.floor(x) % 256, math.floor(y) % 256
    fx, fy = x - math.floor(x), y - math.floor(y)
    aa, ab = p[p[X] + Y], p[p[X] + Y + 1]
    ba, bb = p[p[X + 1] + Y], p[p[X + 1] + Y + 1]
    u, v = fade(fx), fade(fy)
    return lerp(lerp(grad(aa, fx, fy), grad(ba, fx - 1, fy), u),
                lerp(grad(ab, fx, fy - 1), grad(bb, fx - 1, fy - 1), u), v)


def test_perlin_matches_reference_on_grid():
    ys, xs = np.mgrid[0:256, 0:256] / 16.0
    fast = perlin_grid(xs, ys, 7)
    ref = np.array([[reference_perlin(xs[0, j], ys[i, 0], 7) for j in range(256)]
                    for i in range(256)])
    assert np.max(np.abs(fast - ref)) <= 1e-9
    mean_abs = float(np.mean(np.abs(fast)))
    assert 0 < mean_abs < 1
    assert abs(mean_abs - float(np.mean(np.abs(ref)))) <= 1e-9


def test_perlin_lattice_zero():
    rng = np.random.default_rng(0)
    for x, y, seed in zip(rng.integers(-5000, 5000, 1000), rng.integers(-5000, 5000, 1000),
                          rng.integers(0, 2 ** 31, 1000)):
        assert perlin2(float(x), float(y), int(seed)) == 0.0
    assert perlin2(3.0, 7.0, 123) == 0.0


def test_perlin_determinism_and_range():
    v = perlin2(0.5, 0.5, 1)
    assert -1 <= v <= 1 and v == perlin2(0.5, 0.5, 1)
    with pytest.raises(ValueError):
        perlin2(float("nan"), 0.0, 1)


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.integers(0, 2 ** 32 - 1))
def test_perlin_range_property(x, y, seed):
    assert -1.0 <= perlin2(x, y, seed) <= 1.0


# -- homographies ------------------------------------------------------------------------

def mild_homography(rng, w=640, h=480):
    src = np.array([(0, 0), (w - 1, 0), (w - 1, h - 1), (0, h - 1)], dtype=np.float64)
    return Homography.from_points(src, src + rng.uniform(-1, 1, (4, 2)) * 0.03 * np.array([w, h]))


def test_apply_homography_examples():
    assert apply_homography(Point(12, 34), Homography.identity()) == Point(12, 34)
    assert apply_homography(Point(0, 0), Homography.translation(10, 5)) == Point(10, 5)
    box = BoxTarget(BBox(50, 50, 100, 100))
    assert transform_target(box, Homography.translation(10, 5)) == BoxTarget(BBox(60, 55, 110, 105))
    pt = PointTarget(Point(3, 4), 9)
    assert transform_target(pt, Homography.translation(10, 5)) == PointTarget(Point(13, 9), 9)


def test_homography_round_trip_100_mild():
    rng = np.random.default_rng(11)
    for _ in range(100):
        hom = mild_homography(rng)
        inv = hom.inverse()
        for x, y in rng.integers(0, 640, (20, 2)):
            p = Point(int(x), int(y) % 480)
            back = apply_homography(apply_homography(p, hom), inv)
            assert p.distance(back) <= 1.0


def test_from_points_reproduces_correspondences():
    rng = np.random.default_rng(3)
    src = np.array([(0, 0), (99, 0), (99, 49), (0, 49)], dtype=np.float64)
    dst = src + rng.uniform(-3, 3, (4, 2))
    hom = Homography.from_points(src, dst)
    x, y = hom.map_array(src[:, 0], src[:, 1])
    assert np.allclose(np.column_stack([x, y]), dst)


def test_degenerate_homographies():
    with pytest.raises(DegenerateMappingError):
        Homography(np.zeros((3, 3)))
    with pytest.raises(DegenerateMappingError):
        Homography([[1, 2, 0], [2, 4, 0], [0, 0, 1]])
    h = Homography([[1, 0, 0], [0, 1, 0], [1, 0, 1]])
    with pytest.raises(DegenerateMappingError):
        apply_homography(Point(-1, 0), h)
    with pytest.raises(DegenerateMappingError):
        Homography.from_points([(0, 0)] * 4, [(1, 1)] * 4)


# -- degrade_instance --------------------------------------------------------------------

TARGET = BoxTarget(BBox(40, 30, 90, 70))


def test_severity_zero_is_identity():
    img = make_image(160, 100)
    out, target, prov = degrade_instance(img, TARGET, DegradeConfig(seed=5, severity=0))
    assert out.tobytes() == img.tobytes() and target == TARGET
    assert prov["input_digest"] == prov["output_digest"]
    cfg = DegradeConfig(seed=5, severity=0, stages=())
    assert degrade_instance(img, TARGET, cfg)[0].tobytes() == img.tobytes()


def test_determinism_and_provenance():
    img = make_image(160, 100)
    cfg = DegradeConfig(seed=42, severity=0.7)
    a = degrade_instance(img, TARGET, cfg)
    b = degrade_instance(img, TARGET, cfg)
    assert a[0].tobytes() == b[0].tobytes() and a[1] == b[1]
    assert json.dumps(a[2], sort_keys=True) == json.dumps(b[2], sort_keys=True)
    assert [s["stage"] for s in a[2]["stages"]] == list(STAGE_NAMES)
    assert all(s["params"] for s in a[2]["stages"])


def test_seed_changes_digest():
    img = make_image(64, 48)
    digests = {image_digest(degrade_instance(img, None, DegradeConfig(seed=s, severity=0.5))[0])
               for s in range(100)}
    assert len(digests) == 100


def test_stage_order_is_catalog_order():
    cfg = DegradeConfig(stages=("perspective", "color_shift", "color_shift"))
    assert cfg.stages == ("color_shift", "perspective")


def test_stage_independence():
    img = make_image(96, 64)
    only_noise = degrade_instance(img, None, DegradeConfig(seed=9, severity=0.8,
                                                           stages=("gaussian_noise",)))[0]
    both = degrade_instance(img, None, DegradeConfig(seed=9, severity=0.8,
                                                     stages=("gaussian_noise", "motion_blur")))[0]
    blurred, _ = CATALOG["motion_blur"](only_noise, stage_rng(9, "motion_blur"), 0.8, {})
    assert np.array_equal(both, blurred)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 64 - 1), st.floats(0.05, 1.0),
       st.sets(st.sampled_from(sorted(PHOTOMETRIC)), min_size=1))
def test_photometric_stages_keep_labels(seed, severity, stages):
    img = make_image(64, 48)
    target = PointTarget(Point(20, 30), 6)
    _, out_target, prov = degrade_instance(img, target, DegradeConfig(seed, severity, tuple(stages)))
    assert out_target == target
    assert prov["homography"] is None


def test_perspective_label_transport():
    img = make_image(160, 100)
    for seed in range(100):
        target = PointTarget(Point(20 + seed, 15 + seed % 70), 10)
        _, out, prov = degrade_instance(img, target,
                                        DegradeConfig(seed, 1.0, ("perspective",)))
        inv = Homography(prov["homography"]).inverse()
        assert apply_homography(out.center, inv).distance(target.center) <= 1.0


def footprint_pixels(target, w, h):
    return np.array([[hit_test(Point(int(x), int(y)), target) for x in range(w)] for y in range(h)])


def test_occlusion_disjoint_from_target_500_samples():
    rng = np.random.default_rng(21)
    w, h = 48, 32
    flagged = 0
    for k in range(500):
        img = make_image(w, h, seed=k % 7)
        if k % 2:
            x1, y1 = int(rng.integers(0, w - 8)), int(rng.integers(0, h - 8))
            target = BoxTarget(BBox(x1, y1, x1 + int(rng.integers(0, 12)),
                                    y1 + int(rng.integers(0, 12))))
        else:
            target = PointTarget(Point(int(rng.integers(0, w)), int(rng.integers(0, h))),
                                 int(rng.integers(1, 8)))
        out, _, prov = degrade_instance(img, target, DegradeConfig(k, 1.0, ("occlusion",)))
        params = prov["stages"][0]["params"]
        flagged += prov["stages"][0]["flagged"]
        covered = np.zeros((h, w), bool)
        for x, y, rw, rh in params["rects"]:
            covered[y:y + rh, x:x + rw] = True
        fp = footprint_pixels(target, w, h)
        assert not (covered & fp).any()
        assert np.array_equal(out[fp], img[fp])
    assert flagged < 500


def test_occlusion_skips_when_target_fills_image():
    img = make_image(32, 32)
    target = BoxTarget(BBox(0, 0, 31, 31))
    out, _, prov = degrade_instance(img, target, DegradeConfig(1, 1.0, ("occlusion",)))
    assert prov["stages"][0]["flagged"] and prov["stages"][0]["params"]["rects"] == []
    assert np.array_equal(out, img)


@pytest.mark.parametrize("stage", STAGE_NAMES)
def test_monotone_fidelity(stage):
    img = make_image(160, 100, seed=4)
    maes = []
    for s in (0.0, 0.25, 0.5, 1.0):
        out = degrade_instance(img, TARGET, DegradeConfig(seed=13, severity=s, stages=(stage,)))[0]
        maes.append(float(np.mean(np.abs(out.astype(int) - img.astype(int)))))
    assert maes[0] == 0.0
    assert maes == sorted(maes), maes


def test_config_errors():
    with pytest.raises(ConfigError):
        DegradeConfig(severity=0.5, stages=())
    with pytest.raises(ConfigError):
        DegradeConfig(severity=1.5)
    with pytest.raises(ConfigError, match="color_shift"):
        DegradeConfig(stages=("nosuch",))
    with pytest.raises(ConfigError):
        DegradeConfig(output_quality=0)


def test_output_quality_override():
    img = make_image(64, 48)
    prov = degrade_instance(img, None, DegradeConfig(1, 0.5, ("jpeg_recompress",), 30))[2]
    assert prov["stages"][0]["params"]["quality"] == 30


# -- degrade_manifest --------------------------------------------------------------------

def tree_digest(root):
    h = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_degrade_manifest_severity_zero_copies(synthetic_manifest, tmp_path):
    m = load_manifest(synthetic_manifest)
    derived = degrade_manifest(m, DegradeConfig(seed=1, severity=0), str(tmp_path / "d"))
    for src, inst in zip(m.instances, derived.instances):
        assert inst.variant_of == src.id and inst.target == src.target
        with open(m.image_file(src), "rb") as a, open(derived.image_file(inst), "rb") as b:
            assert a.read() == b.read()
    reloaded = load_manifest(tmp_path / "d" / "manifest.json")
    assert reloaded.instances == derived.instances
    lines = (tmp_path / "d" / "provenance.jsonl").read_text().splitlines()
    assert len(lines) == len(m) and json.loads(lines[0])["variant_of"] == "inst000"


def test_degrade_manifest_deterministic_across_parallelism(synthetic_manifest, tmp_path):
    m = load_manifest(synthetic_manifest)
    cfg = DegradeConfig(seed=3, severity=0.6)
    degrade_manifest(m, cfg, str(tmp_path / "a"), parallelism=1)
    degrade_manifest(m, cfg, str(tmp_path / "b"), parallelism=6)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
