import math

import pytest
from hypothesis import given, strategies as st

from cogground.geometry import (BBox, BoxTarget, Point, PointTarget, hit_test, round_decimal,
                                round_half_away, scale_point)


def box(*c):
    return BoxTarget(BBox(*c))


def test_hit_inclusive_corner():
    assert hit_test(Point(10, 10), box(10, 10, 20, 20))
    assert hit_test(Point(20, 20), box(10, 10, 20, 20))


def test_miss_one_pixel_outside():
    assert not hit_test(Point(21, 10), box(10, 10, 20, 20))


def test_point_tolerance_boundary():
    # brute force: sqrt(3^2 + 4^2) = 5, exactly on the radius
    assert math.sqrt((13 - 10) ** 2 + (14 - 10) ** 2) == 5
    assert hit_test(Point(13, 14), PointTarget(Point(10, 10), 5))
    assert not hit_test(Point(13, 15), PointTarget(Point(10, 10), 5))


def test_out_of_image_prediction_is_not_clamped():
    assert not hit_test(Point(-1, -1), box(0, 0, 10, 10))


def test_invalid_shapes():
    with pytest.raises(ValueError):
        BBox(5, 0, 4, 10)
    with pytest.raises(ValueError):
        PointTarget(Point(0, 0), 0)
    with pytest.raises(ValueError):
        Point(float("nan"), 0)


@pytest.mark.parametrize("p, sx, sy, expected", [
    ((100, 200), 1, 1, (100, 200)),
    ((500, 500), 2.56, 1.44, (1280, 720)),
    ((3, 3), 0.5, 0.5, (2, 2)),
])
def test_scale_point(p, sx, sy, expected):
    assert scale_point(Point(*p), sx, sy).as_tuple() == expected


@pytest.mark.parametrize("sx", [0, -1])
def test_scale_point_rejects_non_positive(sx):
    with pytest.raises(ValueError):
        scale_point(Point(1, 1), sx, 1)


def test_round_half_away():
    assert [round_half_away(v) for v in (1.5, 2.5, -1.5, -2.5, 0.49, -0.5)] == [2, 3, -2, -3, 0, -1]


def test_round_decimal_ties():
    assert round_decimal(47.65) == 47.7
    assert round_decimal(-0.25) == -0.3


def test_box_matches_pixel_scan():
    # every box with corners on a coarse 50x50 grid against a per-pixel membership scan
    coords = range(0, 50, 7)
    for x1 in coords:
        for x2 in (c for c in coords if c >= x1):
            for y1 in coords:
                for y2 in (c for c in coords if c >= y1):
                    t = box(x1, y1, x2, y2)
                    inside = {(x, y) for x in range(x1, x2 + 1) for y in range(y1, y2 + 1)}
                    for x in range(0, 50, 3):
                        for y in range(0, 50, 3):
                            assert hit_test(Point(x, y), t) == ((x, y) in inside)


coord = st.integers(-100, 100)


@given(coord, coord, coord, coord, coord, coord, st.integers(0, 20), st.integers(0, 20),
       st.integers(0, 20), st.integers(0, 20))
def test_enlarging_a_box_never_loses_a_hit(px, py, x1, y1, w, h, a, b, c, d):
    w, h = abs(w), abs(h)
    small = box(x1, y1, x1 + w, y1 + h)
    big = box(x1 - a, y1 - b, x1 + w + c, y1 + h + d)
    p = Point(px, py)
    if hit_test(p, small):
        assert hit_test(p, big)


@given(st.integers(0, 5000), st.integers(0, 5000), st.sampled_from([0.5, 2, 4]))
def test_scale_round_trip_within_one_pixel(x, y, s):
    p = Point(x, y)
    back = scale_point(scale_point(p, s, s), 1 / s, 1 / s)
    assert abs(back.x - x) <= 1 and abs(back.y - y) <= 1


@given(st.integers(0, 5000), st.integers(0, 5000))
def test_quarter_scale_round_trip_bounded_by_half_a_source_pixel(x, y):
    # at s=0.25 one rounded pixel spans 4 original pixels, so the error reaches 2
    back = scale_point(scale_point(Point(x, y), 0.25, 0.25), 4, 4)
    assert abs(back.x - x) <= 2 and abs(back.y - y) <= 2


def test_quarter_scale_round_trip_can_exceed_one_pixel():
    assert scale_point(scale_point(Point(2, 2), 0.25, 0.25), 4, 4) == Point(4, 4)
