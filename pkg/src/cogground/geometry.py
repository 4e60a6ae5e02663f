"""Points, boxes, grounding targets and the hit rule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Optional, Union


def round_half_away(value: float) -> int:
    """Round to the nearest integer, ties away from zero (2.5 -> 3, -2.5 -> -3)."""
    if not math.isfinite(value):
        raise ValueError(f"cannot round non-finite value {value!r}")
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


def round_decimal(value: Union[float, Fraction, Decimal], places: int = 1) -> float:
    """Round half-away-from-zero to ``places`` decimals.

    Floats go through their shortest repr so 47.65 rounds to 47.7, not 47.6.
    """
    if isinstance(value, Fraction):
        dec = Decimal(value.numerator) / Decimal(value.denominator)
    elif isinstance(value, Decimal):
        dec = value
    else:
        dec = Decimal(repr(float(value)))
    # ROUND_HALF_UP in decimal rounds ties away from zero
    return float(dec.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def as_tuple(self):
        return (self.x, self.y)

    def distance(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def __str__(self):
        return f"({_fmt(self.x)}, {_fmt(self.y)})"


def _fmt(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ValueError(f"degenerate box {self.as_tuple()}: need x1<=x2 and y1<=y2")

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def center(self) -> Point:
        return Point((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)

    def contains(self, p: Point) -> bool:
        return self.x1 <= p.x <= self.x2 and self.y1 <= p.y <= self.y2


@dataclass(frozen=True)
class BoxTarget:
    box: BBox

    @property
    def center(self) -> Point:
        return self.box.center

    def footprint(self) -> BBox:
        return self.box


@dataclass(frozen=True)
class PointTarget:
    """A point annotation accepted within ``radius`` pixels (inclusive)."""

    center: Point
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"point tolerance radius must be > 0, got {self.radius}")

    def footprint(self) -> BBox:
        c, r = self.center, self.radius
        return BBox(c.x - r, c.y - r, c.x + r, c.y + r)


TargetSpec = Union[BoxTarget, PointTarget]


def hit_test(prediction: Point, target: TargetSpec) -> bool:
    """True when ``prediction`` lands on ``target``. Boundaries count as hits.

    Predictions are never clamped, so anything outside the image simply misses.
    """
    if isinstance(target, BoxTarget):
        return target.box.contains(prediction)
    dx = prediction.x - target.center.x
    dy = prediction.y - target.center.y
    return dx * dx + dy * dy <= target.radius * target.radius


def scale_point(p: Point, sx: float, sy: float) -> Point:
    if not (sx > 0 and sy > 0):
        raise ValueError(f"scale factors must be positive, got sx={sx}, sy={sy}")
    return Point(round_half_away(p.x * sx), round_half_away(p.y * sy))


@dataclass(frozen=True)
class Instance:
    id: str
    image_path: str
    instruction: str
    target: TargetSpec
    category: str
    interaction: Optional[str] = None
    variant_of: Optional[str] = None
