"""Projective maps used by the perspective stage."""
from __future__ import annotations

import numpy as np

from ..exceptions import DegenerateMappingError
from ..geometry import BBox, BoxTarget, Point, PointTarget, round_half_away

MIN_DET = 1e-9
MIN_DENOM = 1e-9


class Homography:
    """3x3 projective matrix normalised so the bottom-right entry is 1."""

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.float64).reshape(3, 3)
        if abs(m[2, 2]) < 1e-12:
            raise DegenerateMappingError("homography with h33 = 0 cannot be normalised")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < MIN_DET:
            raise DegenerateMappingError("homography is not invertible")
        self.matrix = m

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx, ty):
        return cls([[1, 0, tx], [0, 1, ty], [0, 0, 1]])

    @classmethod
    def from_points(cls, src, dst):
        """Solve the homography taking 4 ``src`` (x, y) points onto ``dst``."""
        src = np.asarray(src, dtype=np.float64)
        dst = np.asarray(dst, dtype=np.float64)
        if src.shape != (4, 2) or dst.shape != (4, 2):
            raise ValueError("need exactly four point correspondences")
        a = np.zeros((8, 8))
        b = np.zeros(8)
        for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
            a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
            a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
            b[2 * i], b[2 * i + 1] = u, v
        try:
            h = np.linalg.solve(a, b)
        except np.linalg.LinAlgError as exc:
            raise DegenerateMappingError(f"degenerate point configuration: {exc}")
        return cls(np.append(h, 1.0))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def map_array(self, xs, ys):
        """Project float coordinate arrays; no rounding, no degeneracy check."""
        m = self.matrix
        den = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
        return ((m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / den,
                (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / den)

    def to_list(self):
        return [[float(v) for v in row] for row in self.matrix]

    def __repr__(self):
        return f"Homography({self.to_list()})"


def apply_homography(p: Point, h: Homography) -> Point:
    """Map ``p`` through ``h`` and round to integer pixels."""
    m = h.matrix
    den = m[2, 0] * p.x + m[2, 1] * p.y + m[2, 2]
    if abs(den) <= MIN_DENOM:
        raise DegenerateMappingError(f"point {p} maps to infinity")
    x = (m[0, 0] * p.x + m[0, 1] * p.y + m[0, 2]) / den
    y = (m[1, 0] * p.x + m[1, 1] * p.y + m[1, 2]) / den
    return Point(round_half_away(x), round_half_away(y))


def transform_target(target, h: Homography):
    """Carry a label through ``h``. Boxes become the axis-aligned hull of their mapped corners."""
    if isinstance(target, PointTarget):
        return PointTarget(apply_homography(target.center, h), target.radius)
    b = target.box
    corners = [apply_homography(Point(x, y), h)
               for x, y in ((b.x1, b.y1), (b.x2, b.y1), (b.x1, b.y2), (b.x2, b.y2))]
    xs = [c.x for c in corners]
    ys = [c.y for c in corners]
    return BoxTarget(BBox(min(xs), min(ys), max(xs), max(ys)))
