import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stinteract.geometry import (
    Disc,
    GeometryError,
    Raster,
    Region,
    Window,
    as_polygon_region,
    disc_window_area,
    disc_window_areas,
    polygon_area,
    read_ascii_grid,
    ripley_weight,
    temporal_weight,
    write_ascii_grid,
)

UNIT = Window.box(0, 0, 1, 1, 1.0)


def mc_area(region: Region, rng, inside_extra=None, n=1_000_000):
    x0, y0, x1, y1 = region.bbox
    pts = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    hit = region.contains(pts)
    if inside_extra is not None:
        hit &= inside_extra(pts)
    box = (x1 - x0) * (y1 - y0)
    p = hit.mean()
    return box * p, box * math.sqrt(p * (1 - p) / n)


def test_square_area():
    assert polygon_area(UNIT) == 1.0


def test_square_with_hole():
    hole = [(0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75)]
    reg = Region.from_polygons([[[(0, 0), (1, 0), (1, 1), (0, 1)], hole]])
    assert polygon_area(reg) == pytest.approx(0.75, abs=1e-15)


def test_convex_heptagon_matches_monte_carlo():
    rng = np.random.default_rng(7)
    ang = np.sort(rng.uniform(0, 2 * math.pi, 7))
    rad = rng.uniform(0.6, 1.0, 7)
    ring = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    from scipy.spatial import ConvexHull

    ring = ring[ConvexHull(ring).vertices]
    reg = Region.from_polygons([[ring]])
    est, se = mc_area(reg, rng)
    assert abs(polygon_area(reg) - est) < 3 * se


def test_degenerate_ring_rejected():
    with pytest.raises(GeometryError):
        Region.from_polygons([[[(0, 0), (1, 0)]]])


def test_self_intersecting_ring_rejected():
    with pytest.raises(GeometryError, match="not simple"):
        Region.from_polygons([[[(0, 0), (3, 1), (3, 0), (0, 2)]]])


def test_shared_edges_rejected():
    a = [(0, 0), (1, 0), (1, 1), (0, 1)]
    b = [(1, 0), (2, 0), (2, 1), (1, 1)]
    with pytest.raises(GeometryError):
        Region.from_polygons([[a], [b]])


def test_nonpositive_t_max_rejected():
    with pytest.raises(GeometryError):
        Window.box(0, 0, 1, 1, 0.0)


def test_interior_disc():
    assert disc_window_area(Disc((0.5, 0.5), 0.1), UNIT) == pytest.approx(math.pi * 0.01, rel=1e-12)


def test_corner_disc():
    assert disc_window_area(Disc((0.0, 0.0), 0.1), UNIT) == pytest.approx(math.pi * 0.01 / 4, rel=1e-12)


def test_edge_disc_matches_monte_carlo():
    rng = np.random.default_rng(3)
    c = np.array([0.1, 0.5])
    est, se = mc_area(UNIT.region, rng, lambda p: np.hypot(*(p - c).T) <= 0.3)
    assert abs(disc_window_area(Disc(tuple(c), 0.3), UNIT) - est) < 3 * se


def test_disc_outside_window_is_zero():
    assert disc_window_area(Disc((5.0, 5.0), 0.5), UNIT) == 0.0


def test_disc_in_window_with_hole():
    hole = [(0.4, 0.4), (0.6, 0.4), (0.6, 0.6), (0.4, 0.6)]
    w = Window(Region.from_polygons([[[(0, 0), (1, 0), (1, 1), (0, 1)], hole]]), 1.0)
    # Disc of radius 0.5 around the centre covers the whole hole.
    assert disc_window_area(Disc((0.5, 0.5), 0.5), w) == pytest.approx(math.pi * 0.25 - 0.04, rel=1e-12)


def test_negative_radius_rejected():
    with pytest.raises(GeometryError):
        Disc((0, 0), -1.0)


@settings(max_examples=60, deadline=None)
@given(
    cx=st.floats(-0.2, 1.2),
    cy=st.floats(-0.2, 1.2),
    r1=st.floats(0.0, 1.5),
    dr=st.floats(0.0, 1.0),
)
def test_disc_area_monotone_and_bounded(cx, cy, r1, dr):
    a1, a2 = disc_window_areas([[cx, cy]] * 2, np.array([r1, r1 + dr]), UNIT)
    assert a1 <= a2 + 1e-12
    for a, r in ((a1, r1), (a2, r1 + dr)):
        assert 0.0 <= a <= min(math.pi * r * r, 1.0) + 1e-12


@settings(max_examples=40, deadline=None)
@given(cx=st.floats(0.3, 0.7), cy=st.floats(0.3, 0.7), r=st.floats(0.0, 0.29))
def test_disc_strictly_inside_is_full(cx, cy, r):
    assert disc_window_area(Disc((cx, cy), r), UNIT) == pytest.approx(math.pi * r * r, rel=1e-9, abs=1e-300)


def _raster_of(region: Region, h: float) -> Raster:
    x0, y0, x1, y1 = region.bbox
    nc, nr = int(round((x1 - x0) / h)), int(round((y1 - y0) / h))
    cx = x0 + (np.arange(nc) + 0.5) * h
    cy = y0 + (np.arange(nr) + 0.5) * h
    gx, gy = np.meshgrid(cx, cy)
    mask = region.contains(np.column_stack([gx.ravel(), gy.ravel()])).reshape(nr, nc)
    return Raster(x0, y0, h, mask)


@settings(max_examples=40, deadline=None)
@given(cx=st.floats(-0.1, 1.1), cy=st.floats(-0.1, 1.1), r=st.floats(0.0, 0.8))
def test_raster_and_polygon_agree(cx, cy, r):
    h = 0.02
    w = Window(UNIT.region, 1.0, _raster_of(UNIT.region, h))
    a_poly = disc_window_area(Disc((cx, cy), r), w, method="polygon")
    a_rast = disc_window_area(Disc((cx, cy), r), w, method="raster")
    assert abs(a_poly - a_rast) <= 2 * h * h + 1e-12


def test_raster_area_mismatch_rejected():
    with pytest.raises(GeometryError, match="raster area"):
        Window(UNIT.region, 1.0, Raster(0, 0, 0.5, np.ones((1, 1), bool)))


def test_ascii_grid_round_trip(tmp_path):
    mask = np.array([[1, 1, 0], [1, 1, 1]], dtype=bool)
    r = Raster(1.0, 2.0, 0.5, mask)
    write_ascii_grid(r, tmp_path / "g.asc")
    back = read_ascii_grid(tmp_path / "g.asc")
    assert np.array_equal(back.mask, mask) and back.area == r.area
    assert as_polygon_region(Window(None, 1.0, back)).area == pytest.approx(r.area)


def test_ripley_interior():
    assert ripley_weight((0.5, 0.5), 0.1, UNIT) == 1.0


def test_ripley_edge_midpoint():
    w = Window.box(0, 0, 100, 100, 1.0)
    assert ripley_weight((50.0, 0.0), 1.0, w) == pytest.approx(2.0, rel=1e-12)


def test_ripley_near_corner_matches_rays():
    c = np.array([0.05, 0.08])
    r = 0.12
    theta = (np.arange(100_000) + 0.5) * 2 * math.pi / 100_000
    pts = c + r * np.column_stack([np.cos(theta), np.sin(theta)])
    frac = UNIT.contains(pts).mean()
    assert ripley_weight(tuple(c), r, UNIT) == pytest.approx(1 / frac, abs=1e-3)


@settings(max_examples=60, deadline=None)
@given(cx=st.floats(0.01, 0.99), cy=st.floats(0.01, 0.99), r=st.floats(1e-3, 0.6))
def test_ripley_at_least_one(cx, cy, r):
    w = ripley_weight((cx, cy), r, UNIT)
    assert w >= 1.0
    if min(cx, cy, 1 - cx, 1 - cy) > r:
        assert w == 1.0


def test_temporal_weights():
    assert temporal_weight(500, 10, 1000) == 1.0
    assert temporal_weight(5, 10, 1000) == 2.0
    assert temporal_weight(995, 10, 1000) == 2.0


def test_temporal_weight_undefined():
    with pytest.raises(GeometryError):
        temporal_weight(5, 20, 10)
