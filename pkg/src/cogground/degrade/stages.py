"""Individual degradation stages.

Every stage has the signature ``stage(image, rng, severity, ctx) -> (image, params)``.
``image`` is (H, W, 3) uint8, ``rng`` a numpy Generator private to the stage,
``ctx`` carries the current target and config overrides. A stage always makes
the same rng draws whatever the severity, and scales magnitudes linearly
with severity, so severity 0 is the identity and stronger settings move
pixels further.
"""
from __future__ import annotations

import io
import math

import numpy as np
from PIL import Image
from scipy import ndimage

from ..geometry import BBox, round_half_away
from .homography import Homography, transform_target
from .perlin import fractal_noise

MAX_OCCLUSION_ATTEMPTS = 100


def to_uint8(arr) -> np.ndarray:
    return np.clip(np.floor(np.asarray(arr, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def _grid(h, w):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs, ys


def _radial(h, w, cx, cy, sigma):
    xs, ys = _grid(h, w)
    return np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma * sigma))


def color_shift(img, rng, s, ctx):
    offsets = rng.uniform(-1, 1, 3) * 40 * s
    gains = 1 + rng.uniform(-1, 1, 3) * 0.15 * s
    out = img.astype(np.float64) * gains + offsets
    return to_uint8(out), {"offsets": offsets.tolist(), "gains": gains.tolist()}


def lens_flare(img, rng, s, ctx):
    h, w = img.shape[:2]
    cx, cy = rng.uniform(0, w), rng.uniform(0, h)
    sigma = rng.uniform(0.08, 0.25) * max(w, h)
    peak = 80 * s
    tint = np.array([1.0, 0.94, 0.8])
    glow = _radial(h, w, cx, cy, sigma)
    # secondary ghost mirrored through the image centre
    ghost = 0.5 * _radial(h, w, w - cx, h - cy, 0.3 * sigma)
    out = img + peak * (glow + ghost)[..., None] * tint
    return to_uint8(out), {"center": [cx, cy], "sigma": sigma, "peak": peak}


def perlin_overlay(img, rng, s, ctx):
    h, w = img.shape[:2]
    cell = rng.uniform(0.05, 0.2) * max(w, h)
    seed = int(rng.integers(0, 2 ** 31))
    amplitude = 50 * s
    field = fractal_noise(w, h, cell, seed, octaves=2)
    out = img + amplitude * field[..., None]
    return to_uint8(out), {"cell": cell, "noise_seed": seed, "amplitude": amplitude}


def wear_pattern(img, rng, s, ctx):
    h, w = img.shape[:2]
    cell = rng.uniform(0.02, 0.08) * max(w, h)
    seed = int(rng.integers(0, 2 ** 31))
    threshold = rng.uniform(0.05, 0.3)
    darken = 60 * s
    field = fractal_noise(w, h, cell, seed, octaves=3)
    mask = np.clip((field - threshold) / 0.25, 0, 1)
    out = img - darken * mask[..., None]
    return to_uint8(out), {"cell": cell, "noise_seed": seed, "threshold": threshold,
                           "max_darken": darken}


def gaussian_noise(img, rng, s, ctx):
    sigma = 25 * s
    noise = rng.standard_normal(img.shape)
    return to_uint8(img + sigma * noise), {"sigma": sigma}


def motion_kernel(length: int, angle: float) -> np.ndarray:
    if length <= 1:
        return np.ones((1, 1))
    k = np.zeros((length, length))
    c = (length - 1) / 2
    for t in np.linspace(-c, c, 4 * length):
        x = round_half_away(c + t * math.cos(angle))
        y = round_half_away(c + t * math.sin(angle))
        k[y, x] = 1
    return k / k.sum()


def motion_blur(img, rng, s, ctx):
    angle = rng.uniform(0, math.pi)
    length = 1 + round_half_away(14 * s)
    if length == 1:
        return img.copy(), {"length": length, "angle": angle}
    kernel = motion_kernel(length, angle)
    f = img.astype(np.float64)
    out = np.stack([ndimage.convolve(f[..., c], kernel, mode="nearest") for c in range(3)], -1)
    return to_uint8(out), {"length": length, "angle": angle}


def specular_highlight(img, rng, s, ctx):
    h, w = img.shape[:2]
    count = int(rng.integers(1, 4))
    centers = np.column_stack([rng.uniform(0, w, 3), rng.uniform(0, h, 3)])
    sigmas = rng.uniform(0.02, 0.08, 3) * max(w, h)
    peak = 80 * s
    field = sum(_radial(h, w, cx, cy, sg) for (cx, cy), sg in zip(centers[:count], sigmas[:count]))
    out = img + peak * field[..., None]
    return to_uint8(out), {"centers": centers[:count].tolist(), "sigmas": sigmas[:count].tolist(),
                           "peak": peak}


def chromatic_aberration(img, rng, s, ctx):
    angle = rng.uniform(0, 2 * math.pi)
    max_shift = rng.uniform(2, 4)
    d = max_shift * s
    dx, dy = d * math.cos(angle), d * math.sin(angle)
    f = img.astype(np.float64)
    out = f.copy()
    if d > 0:
        out[..., 0] = ndimage.shift(f[..., 0], (dy, dx), order=1, mode="nearest")
        out[..., 2] = ndimage.shift(f[..., 2], (-dy, -dx), order=1, mode="nearest")
    return to_uint8(out), {"shift": [dx, dy]}


def jpeg_recompress(img, rng, s, ctx):
    quality = ctx.get("output_quality") or 95 - round_half_away(70 * s)
    if s == 0:
        return img.copy(), {"quality": None}
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as im:
        out = np.array(im.convert("RGB"))
    return out, {"quality": int(quality)}


def color_quantize(img, rng, s, ctx):
    levels = 256 - round_half_away(224 * s)
    # evenly spaced levels including 0 and 255; error then grows monotonically as levels drop
    step = 255 / (levels - 1)
    q = np.floor(img.astype(np.float64) / step + 0.5)
    return to_uint8(q * step), {"levels": levels}


def lighting_gradient(img, rng, s, ctx):
    h, w = img.shape[:2]
    angle = rng.uniform(0, 2 * math.pi)
    xs, ys = _grid(h, w)
    proj = (xs - (w - 1) / 2) * math.cos(angle) + (ys - (h - 1) / 2) * math.sin(angle)
    span = np.abs(proj).max()
    ramp = proj / span if span > 0 else proj
    factor = 1 + 0.4 * s * ramp
    return to_uint8(img * factor[..., None]), {"angle": angle, "range": [1 - 0.4 * s, 1 + 0.4 * s]}


def target_pixels(target, width, height):
    """Inclusive integer pixel bounds (x0, y0, x1, y1) covering the target footprint."""
    fp: BBox = target.footprint()
    return (math.floor(fp.x1), math.floor(fp.y1), math.ceil(fp.x2), math.ceil(fp.y2))


def rects_overlap(rect, bounds) -> bool:
    """``rect`` is (x, y, w, h) half-open; ``bounds`` inclusive (x0, y0, x1, y1)."""
    x, y, w, h = rect
    x0, y0, x1, y1 = bounds
    return x <= x1 and x + w - 1 >= x0 and y <= y1 and y + h - 1 >= y0


def occlusion(img, rng, s, ctx):
    h, w = img.shape[:2]
    count = int(rng.integers(1, 4))
    fracs = rng.uniform(0.05, 0.15, (3, 2))
    colors = rng.integers(0, 256, (3, 3))
    target = ctx.get("target")
    bounds = target_pixels(target, w, h) if target is not None else None
    out = img.copy()
    rects, flagged = [], False
    if s == 0:
        return out, {"rects": [], "skipped": 0}
    skipped = 0
    for i in range(count):
        rw = max(1, min(w, round_half_away(fracs[i, 0] * s * w)))
        rh = max(1, min(h, round_half_away(fracs[i, 1] * s * h)))
        placed = None
        for _ in range(MAX_OCCLUSION_ATTEMPTS):
            rect = (int(rng.integers(0, w - rw + 1)), int(rng.integers(0, h - rh + 1)), rw, rh)
            if bounds is None or not rects_overlap(rect, bounds):
                placed = rect
                break
        if placed is None:
            skipped += 1
            flagged = True
            continue
        x, y, _, _ = placed
        out[y:y + rh, x:x + rw] = colors[i]
        rects.append(list(placed))
    ctx["flagged"] = flagged
    return out, {"rects": rects, "colors": colors[:count].tolist(), "skipped": skipped}


def perspective(img, rng, s, ctx):
    h, w = img.shape[:2]
    jitter = rng.uniform(-1, 1, (4, 2)) * 0.03 * s * np.array([w, h])
    src = np.array([(0, 0), (w - 1, 0), (w - 1, h - 1), (0, h - 1)], dtype=np.float64)
    if s == 0:
        return img.copy(), {"corner_jitter": jitter.tolist(), "homography": None}
    hom = Homography.from_points(src, src + jitter)
    inv = hom.inverse()
    xs, ys = _grid(h, w)
    sx, sy = inv.map_array(xs, ys)
    f = img.astype(np.float64)
    out = np.stack([ndimage.map_coordinates(f[..., c], [sy, sx], order=1, mode="nearest")
                    for c in range(3)], -1)
    if ctx.get("target") is not None:
        ctx["target"] = transform_target(ctx["target"], hom)
    ctx["homography"] = hom
    return to_uint8(out), {"corner_jitter": jitter.tolist(), "homography": hom.to_list()}


CATALOG = {
    "color_shift": color_shift,
    "lens_flare": lens_flare,
    "perlin_overlay": perlin_overlay,
    "wear_pattern": wear_pattern,
    "gaussian_noise": gaussian_noise,
    "motion_blur": motion_blur,
    "specular_highlight": specular_highlight,
    "chromatic_aberration": chromatic_aberration,
    "jpeg_recompress": jpeg_recompress,
    "color_quantize": color_quantize,
    "lighting_gradient": lighting_gradient,
    "occlusion": occlusion,
    "perspective": perspective,
}
STAGE_NAMES = tuple(CATALOG)
PHOTOMETRIC = frozenset(STAGE_NAMES) - {"perspective"}
