"""Visual feedback markers painted onto screenshots.

Rasterization is hard-edged and integer-exact so marked step images are
byte-reproducible:

* disk of radius r centred on (cx, cy) paints (i, j) with (i-cx)^2 + (j-cy)^2 <= r^2
* square of side l paints cx - l//2 <= i < cx - l//2 + l (same for j), i.e. l*l pixels
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .geometry import Point, round_half_away
from .imaging import check_image

SHAPES = ("disk", "square")
PROFILES = {"large": 100, "small": 10}

RED = (255, 0, 0)
BLUE = (0, 0, 255)
GREEN = (0, 200, 0)
MAGENTA = (200, 0, 200)

COLOR_NAMES = {RED: "red", BLUE: "blue", GREEN: "green", MAGENTA: "magenta"}
SHAPE_NAMES = {"disk": "circle", "square": "square"}


@dataclass(frozen=True)
class MarkerSpec:
    shape: str = "disk"
    size: int = 100
    color: Tuple[int, int, int] = RED
    opacity: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown marker shape {self.shape!r}; expected one of {SHAPES}")
        if int(self.size) != self.size or self.size < 0:
            raise ValueError(f"marker size must be a non-negative integer, got {self.size}")
        if len(self.color) != 3 or any(not 0 <= int(c) <= 255 for c in self.color):
            raise ValueError(f"marker color must be an RGB triple in 0..255, got {self.color}")
        if not 0 < self.opacity <= 1:
            raise ValueError(f"marker opacity must be in (0, 1], got {self.opacity}")
        object.__setattr__(self, "size", int(self.size))
        object.__setattr__(self, "color", tuple(int(c) for c in self.color))

    def describe(self) -> str:
        """Human phrase such as ``red circle`` used in prompt legends."""
        color = COLOR_NAMES.get(self.color, "rgb({}, {}, {})".format(*self.color))
        return f"{color} {SHAPE_NAMES[self.shape]}"

    def to_dict(self):
        return {"shape": self.shape, "size": self.size, "color": list(self.color),
                "opacity": self.opacity}

    @classmethod
    def from_dict(cls, d):
        return cls(shape=d.get("shape", "disk"), size=d.get("size", 100),
                   color=tuple(d.get("color", RED)), opacity=d.get("opacity", 1.0))


def marker_for_step(step_index: int, profile: str = "large") -> MarkerSpec:
    """Default marker for the prediction made at ``step_index`` (1-based).

    Step 1 is a red disk, step 2 a blue square; later steps alternate a green
    disk and a magenta square.
    """
    if step_index < 1:
        raise ValueError("step_index is 1-based")
    if profile not in PROFILES:
        raise ValueError(f"unknown marker profile {profile!r}; expected one of {tuple(PROFILES)}")
    size = PROFILES[profile]
    if step_index == 1:
        return MarkerSpec("disk", size, RED)
    if step_index == 2:
        return MarkerSpec("square", size, BLUE)
    if step_index % 2 == 1:
        return MarkerSpec("disk", size, GREEN)
    return MarkerSpec("square", size, MAGENTA)


def footprint_mask(width: int, height: int, spec: MarkerSpec, center: Point) -> np.ndarray:
    """Boolean (H, W) mask of the pixels ``spec`` paints at ``center``, clipped to the canvas."""
    cx, cy = round_half_away(center.x), round_half_away(center.y)
    mask = np.zeros((height, width), dtype=bool)
    if spec.shape == "disk":
        r = spec.size
        x0, x1 = max(cx - r, 0), min(cx + r + 1, width)
        y0, y1 = max(cy - r, 0), min(cy + r + 1, height)
        if x0 >= x1 or y0 >= y1:
            return mask
        dx = np.arange(x0, x1, dtype=np.int64) - cx
        dy = np.arange(y0, y1, dtype=np.int64) - cy
        mask[y0:y1, x0:x1] = dy[:, None] ** 2 + dx[None, :] ** 2 <= r * r
    else:
        start_x = cx - spec.size // 2
        start_y = cy - spec.size // 2
        x0, x1 = max(start_x, 0), min(start_x + spec.size, width)
        y0, y1 = max(start_y, 0), min(start_y + spec.size, height)
        if x0 < x1 and y0 < y1:
            mask[y0:y1, x0:x1] = True
    return mask


def render_marker(image, spec: MarkerSpec, center: Point) -> np.ndarray:
    """Return a copy of ``image`` with ``spec`` painted at ``center``.

    Painted channels become round(opacity * color + (1 - opacity) * original);
    off-canvas parts are clipped.
    """
    img = check_image(image)
    out = img.copy()
    mask = footprint_mask(img.shape[1], img.shape[0], spec, center)
    if not mask.any():
        return out
    color = np.asarray(spec.color, dtype=np.float64)
    if spec.opacity == 1:
        out[mask] = color.astype(np.uint8)
    else:
        blended = spec.opacity * color + (1 - spec.opacity) * img[mask].astype(np.float64)
        out[mask] = np.floor(blended + 0.5).astype(np.uint8)
    return out
