"""Seeded 2-D Perlin gradient noise.

The lattice hash is a 256-entry permutation drawn with
``numpy.random.default_rng(seed).permutation(256)`` and wrapped modulo 256.
Corner gradients come from the 8 directions below, blended with the quintic
fade 6t^5 - 15t^4 + 10t^3. Noise is exactly 0 on integer lattice points.
"""
import math
from functools import lru_cache

import numpy as np

GRADIENTS = np.array([(1, 0), (-1, 0), (0, 1), (0, -1),
                      (1, 1), (-1, 1), (1, -1), (-1, -1)], dtype=np.float64)


@lru_cache(maxsize=64)
def permutation(seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(256).astype(np.int64)
    perm.setflags(write=False)
    return perm


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def perlin_grid(xs, ys, seed: int) -> np.ndarray:
    """Vectorised noise at broadcastable coordinate arrays ``xs``, ``ys``."""
    perm = permutation(int(seed))
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    xs, ys = np.broadcast_arrays(xs, ys)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    xi = x0.astype(np.int64) & 255
    yi = y0.astype(np.int64) & 255

    def corner(dx, dy):
        h = perm[(perm[(xi + dx) & 255] + yi + dy) & 255] & 7
        g = GRADIENTS[h]
        return g[..., 0] * (fx - dx) + g[..., 1] * (fy - dy)

    u = _fade(fx)
    v = _fade(fy)
    top = corner(0, 0) + u * (corner(1, 0) - corner(0, 0))
    bottom = corner(0, 1) + u * (corner(1, 1) - corner(0, 1))
    return np.clip(top + v * (bottom - top), -1.0, 1.0)


def perlin2(x: float, y: float, seed: int) -> float:
    """Noise value in [-1, 1] at (x, y)."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("coordinates must be finite")
    return float(perlin_grid(x, y, seed))


def fractal_noise(width: int, height: int, cell: float, seed: int, octaves: int = 2) -> np.ndarray:
    """(H, W) field summing ``octaves`` of noise, first octave with ``cell``-pixel lattice spacing."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.zeros((height, width))
    amp, total = 1.0, 0.0
    for o in range(octaves):
        scale = (2 ** o) / cell
        out += amp * perlin_grid(xs * scale, ys * scale, seed + o)
        total += amp
        amp *= 0.5
    return out / total
