"""Observation window geometry and edge corrections.

Coordinates are kilometres, times are days.  A :class:`Window` holds the
spatial region as polygon rings (outer boundaries plus holes), optionally a
pixel raster, and the length ``t_max`` of the observation period ``(0, t_max]``.

Disc areas are exact: the area of ``b(c, r) ∩ W`` is the sum over polygon
edges of the signed area of the disc intersected with the triangle spanned by
the centre and the edge.  Circle-in-window fractions (Ripley's isotropic
weights) come from the crossing angles of the circle with the boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GeometryError",
    "Region",
    "Raster",
    "Window",
    "Disc",
    "polygon_area",
    "disc_window_area",
    "disc_window_areas",
    "ripley_weight",
    "ripley_weights",
    "temporal_weight",
    "temporal_weights",
    "clip_ring_to_box",
    "clip_region_edges",
    "edges_area",
    "disc_edges_areas",
    "as_polygon_region",
    "read_geojson_regions",
    "read_geojson_window",
    "read_ascii_grid",
    "sample_uniform",
]

TWO_PI = 2.0 * math.pi

# Upper bound on elements in the (points x edges) work arrays.
_CHUNK_ELEMENTS = 2_000_000


class GeometryError(ValueError):
    """Invalid or degenerate geometric input."""


def _signed_ring_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _as_ring(coords) -> np.ndarray:
    ring = np.asarray(coords, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise GeometryError(f"ring must be an (m, 2) coordinate array, got shape {ring.shape}")
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        raise GeometryError(f"degenerate ring with {len(ring)} distinct vertices (need >= 3)")
    if not np.all(np.isfinite(ring)):
        raise GeometryError("ring contains non-finite coordinates")
    return ring


def _segments_intersect(p1, q1, p2, q2) -> np.ndarray:
    """Closed-segment intersection test, broadcasting over leading axes."""

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (
            c[..., 0] - a[..., 0]
        )

    o1, o2 = orient(p1, q1, p2), orient(p1, q1, q2)
    o3, o4 = orient(p2, q2, p1), orient(p2, q2, q1)
    cross = (o1 * o2 <= 0) & (o3 * o4 <= 0)
    collinear = (o1 == 0) & (o2 == 0)
    overlap = np.ones_like(cross)
    for ax in (0, 1):
        lo1 = np.minimum(p1[..., ax], q1[..., ax])
        hi1 = np.maximum(p1[..., ax], q1[..., ax])
        lo2 = np.minimum(p2[..., ax], q2[..., ax])
        hi2 = np.maximum(p2[..., ax], q2[..., ax])
        overlap = overlap & (lo1 <= hi2) & (lo2 <= hi1)
    return cross & (~collinear | overlap)


@dataclass(frozen=True, eq=False)
class Region:
    """A polygonal region: disjoint outer rings, each with optional holes.

    Outer rings are stored counter-clockwise and holes clockwise, so signed
    edge sums (areas, disc intersections) need no further bookkeeping.

    Use :meth:`from_polygons` with GeoJSON-style nesting
    ``[[outer, hole, ...], ...]``.
    """

    rings: tuple[np.ndarray, ...]
    is_hole: tuple[bool, ...]
    check_simple: bool = True
    area: float = field(init=False)
    edges_a: np.ndarray = field(init=False, repr=False)
    edges_b: np.ndarray = field(init=False, repr=False)
    bbox: tuple[float, float, float, float] = field(init=False)

    def __post_init__(self):
        if len(self.rings) != len(self.is_hole) or not self.rings:
            raise GeometryError("region needs at least one ring and one hole flag per ring")
        if self.is_hole[0]:
            raise GeometryError("first ring of a region must be an outer boundary")
        oriented = []
        for ring, hole in zip(self.rings, self.is_hole):
            ring = _as_ring(ring)
            a = _signed_ring_area(ring)
            if a == 0.0:
                raise GeometryError("ring with zero area")
            if (a > 0) == hole:
                ring = ring[::-1].copy()
            ring.setflags(write=False)
            oriented.append(ring)
        object.__setattr__(self, "rings", tuple(oriented))
        ea = np.concatenate(oriented)
        eb = np.concatenate([np.roll(r, -1, axis=0) for r in oriented])
        ea.setflags(write=False)
        eb.setflags(write=False)
        object.__setattr__(self, "edges_a", ea)
        object.__setattr__(self, "edges_b", eb)
        area = math.fsum(_signed_ring_area(r) for r in oriented)
        if not area > 0:
            raise GeometryError(f"region area must be positive, got {area}")
        object.__setattr__(self, "area", area)
        lo, hi = ea.min(axis=0), ea.max(axis=0)
        object.__setattr__(self, "bbox", (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])))
        if self.check_simple:
            self._validate_simple()

    @classmethod
    def from_polygons(cls, polygons: Sequence[Sequence], check_simple: bool = True) -> "Region":
        rings, holes = [], []
        for poly in polygons:
            if len(poly) == 0:
                raise GeometryError("empty polygon")
            for k, ring in enumerate(poly):
                rings.append(ring)
                holes.append(k > 0)
        return cls(tuple(rings), tuple(holes), check_simple)

    @classmethod
    def box(cls, x0: float, y0: float, x1: float, y1: float) -> "Region":
        return cls.from_polygons([[[(x0, y0), (x1, y0), (x1, y1), (x0, y1)]]])

    def _validate_simple(self) -> None:
        # Non-adjacent edges must not touch: rings are simple and rings of
        # different polygons (or holes) share no points.
        a, b = self.edges_a, self.edges_b
        ring_id = np.concatenate([np.full(len(r), k) for k, r in enumerate(self.rings)])
        pos = np.concatenate([np.arange(len(r)) for r in self.rings])
        size = np.concatenate([np.full(len(r), len(r)) for r in self.rings])
        n = len(a)
        step = max(1, _CHUNK_ELEMENTS // max(n, 1))
        for i0 in range(0, n, step):
            i = np.arange(i0, min(n, i0 + step))[:, None]
            j = np.arange(n)[None, :]
            same = ring_id[i] == ring_id[j]
            d = np.abs(pos[i] - pos[j])
            adjacent = same & ((d == 1) | (d == size[i] - 1))
            hit = _segments_intersect(a[i], b[i], a[j], b[j]) & (j > i) & ~adjacent
            if hit.any():
                ii, jj = np.argwhere(hit)[0]
                raise GeometryError(
                    "rings are not simple or touch each other: edges "
                    f"{int(i[ii, 0])} and {int(jj)} intersect (shared edges between "
                    "polygon parts are not supported)"
                )

    def contains(self, points) -> np.ndarray:
        """Even-odd point-in-region test for an (m, 2) array of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(pts), dtype=bool)
        a, b = self.edges_a, self.edges_b
        ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
        step = max(1, _CHUNK_ELEMENTS // len(a))
        with np.errstate(divide="ignore", invalid="ignore"):
            for k in range(0, len(pts), step):
                px = pts[k : k + step, 0:1]
                py = pts[k : k + step, 1:2]
                straddle = (ay > py) != (by > py)
                xint = ax + (py - ay) * (bx - ax) / (by - ay)
                out[k : k + step] = (np.count_nonzero(straddle & (px < xint), axis=1) % 2) == 1
        return out

    def boundary_distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the nearest boundary edge."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        a, b = self.edges_a, self.edges_b
        d = b - a
        dd = np.einsum("ij,ij->i", d, d)
        out = np.empty(len(pts))
        step = max(1, _CHUNK_ELEMENTS // len(a))
        for k in range(0, len(pts), step):
            p = pts[k : k + step, None, :]
            u = np.clip(np.einsum("pej,ej->pe", p - a, d) / dd, 0.0, 1.0)
            q = a + u[..., None] * d - p
            out[k : k + step] = np.sqrt(np.min(np.einsum("pej,pej->pe", q, q), axis=1))
        return out

    def to_geojson(self) -> dict:
        polys: list[list] = []
        for ring, hole in zip(self.rings, self.is_hole):
            closed = np.vstack([ring, ring[:1]]).tolist()
            if hole:
                polys[-1].append(closed)
            else:
                polys.append([closed])
        return {"type": "MultiPolygon", "coordinates": polys}


@dataclass(frozen=True, eq=False)
class Raster:
    """Pixel mask of the observation region.

    ``mask[row, col]`` is True for pixels inside the region; row 0 is the
    southernmost row and ``(x0, y0)`` is the lower-left corner of the grid.
    """

    x0: float
    y0: float
    cellsize: float
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise GeometryError("raster mask must be two-dimensional")
        if not self.cellsize > 0:
            raise GeometryError("raster cell size must be positive")
        if not mask.any():
            raise GeometryError("raster has no cell inside the region")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def area(self) -> float:
        return float(np.count_nonzero(self.mask)) * self.cellsize**2

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        nr, nc = self.mask.shape
        return (self.x0, self.y0, self.x0 + nc * self.cellsize, self.y0 + nr * self.cellsize)

    def cell_index(self, points) -> tuple[np.ndarray, np.ndarray]:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        col = np.floor((pts[:, 0] - self.x0) / self.cellsize).astype(np.int64)
        row = np.floor((pts[:, 1] - self.y0) / self.cellsize).astype(np.int64)
        return row, col

    def contains(self, points) -> np.ndarray:
        row, col = self.cell_index(points)
        nr, nc = self.mask.shape
        ok = (row >= 0) & (row < nr) & (col >= 0) & (col < nc)
        out = np.zeros(len(row), dtype=bool)
        out[ok] = self.mask[row[ok], col[ok]]
        return out

    def cells_near(self, center, radius: float) -> np.ndarray:
        """Lower-left corners (k, 2) of inside pixels overlapping the disc's bounding box."""
        h = self.cellsize
        nr, nc = self.mask.shape
        c0 = max(0, int(math.floor((center[0] - radius - self.x0) / h)))
        c1 = min(nc - 1, int(math.floor((center[0] + radius - self.x0) / h)))
        r0 = max(0, int(math.floor((center[1] - radius - self.y0) / h)))
        r1 = min(nr - 1, int(math.floor((center[1] + radius - self.y0) / h)))
        if c0 > c1 or r0 > r1:
            return np.empty((0, 2))
        rows, cols = np.nonzero(self.mask[r0 : r1 + 1, c0 : c1 + 1])
        return np.column_stack([self.x0 + (cols + c0) * h, self.y0 + (rows + r0) * h])


@dataclass(frozen=True, eq=False)
class Window:
    """Spatial region ``W`` (km) and observation period ``(0, t_max]`` (days)."""

    region: Region | None
    t_max: float
    raster: Raster | None = None

    def __post_init__(self):
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise GeometryError(f"t_max must be positive and finite, got {self.t_max}")
        if self.region is None and self.raster is None:
            raise GeometryError("a window needs polygon rings, a raster, or both")
        if self.region is not None and self.raster is not None:
            rel = abs(self.raster.area - self.region.area) / self.region.area
            if rel > 1e-3:
                raise GeometryError(
                    f"raster area {self.raster.area:.6g} disagrees with polygon area "
                    f"{self.region.area:.6g} (relative difference {rel:.2e} > 1e-3)"
                )

    @classmethod
    def box(cls, x0: float, y0: float, x1: float, y1: float, t_max: float) -> "Window":
        return cls(Region.box(x0, y0, x1, y1), t_max)

    @property
    def rings(self) -> tuple[np.ndarray, ...]:
        return () if self.region is None else self.region.rings

    @property
    def area(self) -> float:
        return self.region.area if self.region is not None else self.raster.area

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return self.region.bbox if self.region is not None else self.raster.bbox

    @property
    def representation(self) -> str:
        return "polygon" if self.region is not None else "raster"

    def contains(self, points) -> np.ndarray:
        if self.region is not None:
            return self.region.contains(points)
        return self.raster.contains(points)


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise GeometryError(f"disc radius must be >= 0, got {self.radius}")


def polygon_area(window: Window | Region) -> float:
    """Area of the polygon rings with holes subtracted (raster area if no rings)."""
    if isinstance(window, Region):
        return window.area
    return window.area


# --------------------------------------------------------------------------
# disc areas
# --------------------------------------------------------------------------


def _disc_triangle_sum(A: np.ndarray, B: np.ndarray, r) -> np.ndarray:
    """Sum over the edge axis of signed |disc(0, r) ∩ triangle(0, A, B)|.

    ``A`` and ``B`` have shape (..., E, 2) and are relative to the disc centre;
    ``r`` broadcasts against the leading axes.
    """
    r = np.asarray(r, dtype=float)[..., None]
    D = B - A
    dd = np.einsum("...j,...j->...", D, D)
    ad = np.einsum("...j,...j->...", A, D)
    aa = np.einsum("...j,...j->...", A, A)
    r2 = r * r
    disc = ad * ad - dd * (aa - r2)
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        u1 = np.where((disc > 0) & (dd > 0), (-ad - sq) / dd, 0.0)
        u2 = np.where((disc > 0) & (dd > 0), (-ad + sq) / dd, 0.0)
    u1 = np.clip(u1, 0.0, 1.0)[..., None]
    u2 = np.clip(u2, 0.0, 1.0)[..., None]
    P1 = A + u1 * D
    P2 = A + u2 * D

    def cross(p, q):
        return p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]

    def sector(p, q):
        return 0.5 * r2 * np.arctan2(cross(p, q), np.einsum("...j,...j->...", p, q))

    total = sector(A, P1) + 0.5 * cross(P1, P2) + sector(P2, B)
    return total.sum(axis=-1)


def _region_disc_areas(centers: np.ndarray, radii: np.ndarray, region: Region) -> np.ndarray:
    out = np.pi * radii**2
    inside = region.contains(centers)
    dist = region.boundary_distance(centers)
    clear = dist >= radii
    out[clear & ~inside] = 0.0
    todo = np.nonzero(~clear)[0]
    a, b = region.edges_a, region.edges_b
    step = max(1, _CHUNK_ELEMENTS // len(a))
    for k in range(0, len(todo), step):
        idx = todo[k : k + step]
        c = centers[idx, None, :]
        out[idx] = _disc_triangle_sum(a[None] - c, b[None] - c, radii[idx])
    return np.clip(out, 0.0, np.minimum(np.pi * radii**2, region.area))


def _square_corners(ll: np.ndarray, h: float) -> np.ndarray:
    off = np.array([[0.0, 0.0], [h, 0.0], [h, h], [0.0, h]])
    return ll[:, None, :] + off[None, :, :]


def _raster_disc_area(center: np.ndarray, radius: float, raster: Raster) -> float:
    if radius == 0:
        return 0.0
    ll = raster.cells_near(center, radius)
    if len(ll) == 0:
        return 0.0
    corners = _square_corners(ll, raster.cellsize) - center
    A = corners
    B = np.roll(corners, -1, axis=1)
    area = float(np.sum(_disc_triangle_sum(A, B, radius)))
    return min(max(area, 0.0), math.pi * radius**2)


def disc_window_areas(centers, radius, window: Window, method: str = "auto") -> np.ndarray:
    """Vectorised :func:`disc_window_area` for an (m, 2) array of centres.

    ``radius`` is a scalar or an (m,) array.  ``method`` is ``"polygon"``,
    ``"raster"``, or ``"auto"`` (polygon whenever rings exist).
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.broadcast_to(np.asarray(radius, dtype=float), (len(centers),)).copy()
    if np.any(radii < 0):
        raise GeometryError("disc radius must be >= 0")
    method = _resolve_method(window, method)
    if method == "polygon":
        return _region_disc_areas(centers, radii, window.region)
    return np.array([_raster_disc_area(c, r, window.raster) for c, r in zip(centers, radii)])


def _resolve_method(window: Window, method: str) -> str:
    if method == "auto":
        return "polygon" if window.region is not None else "raster"
    if method == "polygon" and window.region is None:
        raise GeometryError("window has no polygon rings")
    if method == "raster" and window.raster is None:
        raise GeometryError("window has no raster")
    if method not in ("polygon", "raster"):
        raise ValueError(f"unknown method {method!r}")
    return method


def disc_window_area(disc: Disc, window: Window, method: str = "auto") -> float:
    """Area of ``b(center, radius) ∩ W`` in km² (0 for a disc outside W)."""
    return float(disc_window_areas([disc.center], disc.radius, window, method)[0])


# --------------------------------------------------------------------------
# circle fractions (Ripley's isotropic correction)
# --------------------------------------------------------------------------


def _crossing_angles(A: np.ndarray, B: np.ndarray, r) -> np.ndarray:
    """Angles in [0, 2π) where circles of radius r cross edges A→B, NaN-padded.

    Shapes as in :func:`_disc_triangle_sum`; returns (..., 2E) sorted per row.
    """
    r = np.asarray(r, dtype=float)[..., None]
    D = B - A
    dd = np.einsum("...j,...j->...", D, D)
    ad = np.einsum("...j,...j->...", A, D)
    aa = np.einsum("...j,...j->...", A, A)
    disc = ad * ad - dd * (aa - r * r)
    good = (disc > 0) & (dd > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.where(good, disc, 0.0))
        us = [(-ad - sq) / dd, (-ad + sq) / dd]
    angles = []
    for u in us:
        ok = good & (u >= 0) & (u <= 1)
        p = A + np.where(ok, u, 0.0)[..., None] * D
        ang = np.mod(np.arctan2(p[..., 1], p[..., 0]), TWO_PI)
        angles.append(np.where(ok, ang, np.nan))
    return np.sort(np.concatenate(angles, axis=-1), axis=-1)


def _arcs(angles: np.ndarray):
    """Arc start angles, lengths and validity for sorted NaN-padded angle rows."""
    k = np.count_nonzero(~np.isnan(angles), axis=-1)
    j = np.arange(angles.shape[-1])
    valid = j < k[..., None]
    nxt_idx = np.where(j + 1 < k[..., None], j + 1, 0)
    nxt = np.take_along_axis(angles, nxt_idx, axis=-1)
    wrap = (j + 1 == k[..., None])
    nxt = np.where(wrap, angles[..., :1] + TWO_PI, nxt)
    length = np.where(valid, nxt - angles, 0.0)
    return angles, np.nan_to_num(length), valid, k


def _region_circle_fractions(centers, radii, region: Region) -> np.ndarray:
    inside = region.contains(centers)
    out = inside.astype(float)
    dist = region.boundary_distance(centers)
    todo = np.nonzero((dist < radii) & (radii > 0))[0]
    a, b = region.edges_a, region.edges_b
    step = max(1, _CHUNK_ELEMENTS // (4 * len(a)))
    for k in range(0, len(todo), step):
        idx = todo[k : k + step]
        c = centers[idx]
        r = radii[idx]
        ang, length, valid, count = _arcs(_crossing_angles(a[None] - c[:, None], b[None] - c[:, None], r))
        mid = np.where(valid, ang + 0.5 * length, 0.0)
        pts = c[:, None, :] + r[:, None, None] * np.stack([np.cos(mid), np.sin(mid)], axis=-1)
        flat_valid = valid.ravel()
        ins = np.zeros(flat_valid.shape, dtype=bool)
        ins[flat_valid] = region.contains(pts.reshape(-1, 2)[flat_valid])
        frac = np.sum(length * ins.reshape(valid.shape), axis=-1) / TWO_PI
        # no crossings: whole circle on one side of the boundary
        none = count == 0
        if none.any():
            probe = c[none] + np.column_stack([r[none], np.zeros(none.sum())])
            frac[none] = region.contains(probe).astype(float)
        out[idx] = frac
    return np.clip(out, 0.0, 1.0)


def _raster_circle_fraction(center: np.ndarray, radius: float, raster: Raster) -> float:
    if radius == 0:
        return float(raster.contains(center[None])[0])
    ll = raster.cells_near(center, radius)
    if len(ll) == 0:
        return 0.0
    h = raster.cellsize
    corners = _square_corners(ll, h) - center
    ang, length, valid, count = _arcs(_crossing_angles(corners, np.roll(corners, -1, axis=1), radius))
    mid = np.where(valid, ang + 0.5 * length, 0.0)
    px = center[0] + radius * np.cos(mid)
    py = center[1] + radius * np.sin(mid)
    x0, y0 = ll[:, 0:1], ll[:, 1:2]
    ins = (px > x0) & (px < x0 + h) & (py > y0) & (py < y0 + h) & valid
    total = float(np.sum(length * ins))
    none = count == 0
    if none.any():
        qx, qy = center[0] + radius, center[1]
        x0n, y0n = ll[none, 0], ll[none, 1]
        total += TWO_PI * float(np.count_nonzero((qx > x0n) & (qx < x0n + h) & (qy > y0n) & (qy < y0n + h)))
    return min(total / TWO_PI, 1.0)


def _circle_fractions(centers, radii, window: Window, method: str) -> np.ndarray:
    method = _resolve_method(window, method)
    if method == "polygon":
        return _region_circle_fractions(centers, radii, window.region)
    return np.array([_raster_circle_fraction(c, r, window.raster) for c, r in zip(centers, radii)])


def ripley_weights(centers, distances, window: Window, method: str = "auto") -> np.ndarray:
    """Vectorised :func:`ripley_weight`; zero distances get weight 1."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    dist = np.broadcast_to(np.asarray(distances, dtype=float), (len(centers),)).copy()
    if np.any(dist < 0):
        raise GeometryError("distances must be >= 0")
    frac = _circle_fractions(centers, dist, window, method)
    frac[dist == 0] = 1.0
    if np.any(frac <= 0):
        bad = int(np.argmax(frac <= 0))
        raise GeometryError(
            f"circle of radius {dist[bad]} around {tuple(centers[bad])} lies outside the window"
        )
    return 1.0 / frac


def ripley_weight(center, distance: float, window: Window, method: str = "auto") -> float:
    """Inverse fraction of the circle of radius ``distance`` around ``center`` inside W."""
    if not distance > 0:
        raise GeometryError(f"distance must be > 0, got {distance}")
    return float(ripley_weights([center], distance, window, method)[0])


def temporal_weights(t, lag, t_max: float) -> np.ndarray:
    """Vectorised one-dimensional edge weights; see :func:`temporal_weight`."""
    t = np.asarray(t, dtype=float)
    lag = np.asarray(lag, dtype=float)
    lo, hi = t - lag, t + lag
    k = ((lo > 0) & (lo <= t_max)).astype(np.int8) + ((hi > 0) & (hi <= t_max)).astype(np.int8)
    if np.any(k == 0):
        raise GeometryError("lag reaches outside (0, t_max] on both sides")
    return np.where(k == 2, 1.0, 2.0)


def temporal_weight(t: float, lag: float, t_max: float) -> float:
    """Reciprocal of the interior fraction of the two-point set ``{t - lag, t + lag}``.

    1 when both points lie in ``(0, t_max]``, 2 when exactly one does.
    """
    if not (0 < t <= t_max):
        raise GeometryError(f"t={t} outside (0, {t_max}]")
    if lag < 0:
        raise GeometryError(f"lag must be >= 0, got {lag}")
    return float(temporal_weights(t, lag, t_max))


# --------------------------------------------------------------------------
# clipping and sampling
# --------------------------------------------------------------------------


def clip_ring_to_box(ring: np.ndarray, box: tuple[float, float, float, float]) -> np.ndarray:
    """Sutherland-Hodgman clip of a ring against an axis-aligned box.

    The result keeps the ring's orientation; it may contain degenerate
    edges along the box boundary, which leave signed areas unchanged.
    """
    x0, y0, x1, y1 = box
    pts = np.asarray(ring, dtype=float)
    for axis, bound, keep_ge in ((0, x0, True), (0, x1, False), (1, y0, True), (1, y1, False)):
        if len(pts) == 0:
            break
        cur = pts
        prev = np.roll(cur, 1, axis=0)
        vin = cur[:, axis] >= bound if keep_ge else cur[:, axis] <= bound
        pin = np.roll(vin, 1)
        out = []
        for p, q, p_in, q_in in zip(prev, cur, pin, vin):
            if q_in:
                if not p_in:
                    out.append(_cut(p, q, axis, bound))
                out.append(q)
            elif p_in:
                out.append(_cut(p, q, axis, bound))
        pts = np.array(out) if out else np.empty((0, 2))
    return pts


def clip_region_edges(region: Region, box: tuple[float, float, float, float]) -> tuple[np.ndarray, np.ndarray]:
    """Directed edges ``(a, b)`` of ``region ∩ box`` with orientation preserved.

    Signed-edge sums over the result (shoelace, disc kernel) give areas of
    the clipped piece.  Empty arrays when the region misses the box.
    """
    ea, eb = [], []
    for ring in region.rings:
        x0, y0, x1, y1 = box
        lo, hi = ring.min(axis=0), ring.max(axis=0)
        if hi[0] <= x0 or lo[0] >= x1 or hi[1] <= y0 or lo[1] >= y1:
            continue
        clipped = clip_ring_to_box(ring, box)
        if len(clipped) >= 3:
            ea.append(clipped)
            eb.append(np.roll(clipped, -1, axis=0))
    if not ea:
        return np.empty((0, 2)), np.empty((0, 2))
    return np.concatenate(ea), np.concatenate(eb)


def edges_area(ea: np.ndarray, eb: np.ndarray) -> float:
    """Signed shoelace area of a set of directed edges."""
    if len(ea) == 0:
        return 0.0
    return 0.5 * float(np.sum(ea[:, 0] * eb[:, 1] - eb[:, 0] * ea[:, 1]))


def disc_edges_areas(centers, radius: float, ea: np.ndarray, eb: np.ndarray) -> np.ndarray:
    """Area of discs of ``radius`` around ``centers`` intersected with the polygon ``(ea, eb)``."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if len(ea) == 0 or radius == 0:
        return np.zeros(len(centers))
    out = np.empty(len(centers))
    step = max(1, _CHUNK_ELEMENTS // len(ea))
    for k in range(0, len(centers), step):
        c = centers[k : k + step, None, :]
        out[k : k + step] = _disc_triangle_sum(ea[None] - c, eb[None] - c, radius)
    return np.clip(out, 0.0, math.pi * radius**2)


def as_polygon_region(window: Window) -> Region:
    """Polygon form of a window; raster-only windows become one square per pixel."""
    if window.region is not None:
        return window.region
    r = window.raster
    rows, cols = np.nonzero(r.mask)
    h = r.cellsize
    rings = tuple(
        np.array([[x, y], [x + h, y], [x + h, y + h], [x, y + h]])
        for x, y in zip(r.x0 + cols * h, r.y0 + rows * h)
    )
    return Region(rings, (False,) * len(rings), check_simple=False)


def _cut(p, q, axis, bound):
    s = (bound - p[axis]) / (q[axis] - p[axis])
    r = p + s * (q - p)
    r[axis] = bound
    return r


def sample_uniform(target: Region | Window, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points uniformly on a region or window (rejection from its bounding box)."""
    out = np.empty((n, 2))
    if n == 0:
        return out
    if isinstance(target, Window) and target.region is None:
        raster = target.raster
        rows, cols = np.nonzero(raster.mask)
        pick = rng.integers(0, len(rows), size=n)
        u = rng.random((n, 2))
        out[:, 0] = raster.x0 + (cols[pick] + u[:, 0]) * raster.cellsize
        out[:, 1] = raster.y0 + (rows[pick] + u[:, 1]) * raster.cellsize
        return out
    region = target.region if isinstance(target, Window) else target
    x0, y0, x1, y1 = region.bbox
    accept = max(region.area / ((x1 - x0) * (y1 - y0)), 1e-3)
    filled = 0
    while filled < n:
        m = int(1.2 * (n - filled) / accept) + 16
        cand = np.column_stack([x0 + (x1 - x0) * rng.random(m), y0 + (y1 - y0) * rng.random(m)])
        cand = cand[region.contains(cand)]
        take = min(len(cand), n - filled)
        out[filled : filled + take] = cand[:take]
        filled += take
    return out


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------


def _polygons_of(geometry: dict, scale: float) -> list[list[np.ndarray]]:
    kind = geometry.get("type")
    coords = geometry.get("coordinates")
    if kind == "Polygon":
        parts = [coords]
    elif kind == "MultiPolygon":
        parts = coords
    else:
        raise GeometryError(f"unsupported GeoJSON geometry type {kind!r} (need Polygon or MultiPolygon)")
    return [[np.asarray(ring, dtype=float)[:, :2] * scale for ring in poly] for poly in parts]


def _geojson_features(doc: dict) -> list[dict]:
    kind = doc.get("type")
    if kind == "FeatureCollection":
        return list(doc.get("features", []))
    if kind == "Feature":
        return [doc]
    return [{"type": "Feature", "properties": {}, "geometry": doc}]


def read_geojson_regions(path: str | Path, key: str, scale: float = 1.0) -> dict[str, Region]:
    """Read a FeatureCollection keyed by the feature property ``key``."""
    doc = json.loads(Path(path).read_text())
    out: dict[str, Region] = {}
    for feat in _geojson_features(doc):
        props = feat.get("properties") or {}
        if key not in props:
            raise GeometryError(f"feature without property {key!r} in {path}")
        name = str(props[key])
        if name in out:
            raise GeometryError(f"duplicate {key} {name!r} in {path}")
        out[name] = Region.from_polygons(_polygons_of(feat["geometry"], scale))
    return out


def read_geojson_window(path: str | Path, t_max: float, scale: float = 1.0, raster: Raster | None = None) -> Window:
    """Window from a GeoJSON Polygon/MultiPolygon (all features are merged)."""
    doc = json.loads(Path(path).read_text())
    polys: list[list[np.ndarray]] = []
    for feat in _geojson_features(doc):
        polys.extend(_polygons_of(feat["geometry"], scale))
    if not polys:
        raise GeometryError(f"no polygon geometry in {path}")
    return Window(Region.from_polygons(polys), t_max, raster)


def read_ascii_grid(path: str | Path, scale: float = 1.0) -> Raster:
    """Read an ESRI ASCII grid; nonzero, non-NODATA cells are inside."""
    header: dict[str, float] = {}
    lines = Path(path).read_text().split("\n")
    k = 0
    while k < len(lines):
        parts = lines[k].split()
        if len(parts) == 2 and parts[0][0].isalpha():
            header[parts[0].lower()] = float(parts[1])
            k += 1
        else:
            break
    for req in ("ncols", "nrows", "cellsize"):
        if req not in header:
            raise GeometryError(f"ASCII grid header is missing {req!r}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    h = header["cellsize"]
    if "xllcorner" in header:
        x0, y0 = header["xllcorner"], header["yllcorner"]
    elif "xllcenter" in header:
        x0, y0 = header["xllcenter"] - h / 2, header["yllcenter"] - h / 2
    else:
        raise GeometryError("ASCII grid header needs xllcorner/yllcorner or xllcenter/yllcenter")
    values = np.array(" ".join(lines[k:]).split(), dtype=float)
    if values.size != ncols * nrows:
        raise GeometryError(f"ASCII grid has {values.size} values, expected {ncols * nrows}")
    grid = values.reshape(nrows, ncols)[::-1]
    nodata = header.get("nodata_value")
    mask = grid != 0
    if nodata is not None:
        mask &= grid != nodata
    return Raster(x0 * scale, y0 * scale, h * scale, mask)


def write_ascii_grid(raster: Raster, path: str | Path) -> None:
    nr, nc = raster.mask.shape
    rows = "\n".join(" ".join("1" if v else "0" for v in row) for row in raster.mask[::-1])
    Path(path).write_text(
        f"ncols {nc}\nnrows {nr}\nxllcorner {raster.x0!r}\nyllcorner {raster.y0!r}\n"
        f"cellsize {raster.cellsize!r}\nNODATA_value -9999\n{rows}\n"
    )
