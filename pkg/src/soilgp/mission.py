"""Sampling-mission geometry: auger sizing and grid sample plans.

The drill extracts a cylindrical core, so target mass fixes the auger
diameter once bulk density and depth are known:

    m = ρ · π · L · (d/2)²   [g, with ρ in g/mm³ and L, d in mm]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .data import Location

__all__ = [
    "MAX_DRILL_DEPTH_MM",
    "DrillSpec",
    "FieldBoundary",
    "SamplePlan",
    "sample_mass",
    "auger_diameter",
    "grid_plan",
]

# Hardware travel limit of the drill actuator.
MAX_DRILL_DEPTH_MM = 243.0


@dataclass(frozen=True)
class DrillSpec:
    """Core-extraction geometry: bulk density (g/mm³), depth and auger
    diameter (mm)."""

    bulk_density: float
    depth: float
    diameter: float

    def __post_init__(self):
        if not (self.bulk_density > 0 and math.isfinite(self.bulk_density)):
            raise ValueError("bulk density must be positive")
        if not (0 <= self.depth <= MAX_DRILL_DEPTH_MM):
            raise ValueError(
                f"depth must be in [0, {MAX_DRILL_DEPTH_MM}] mm, got {self.depth}"
            )
        if not (self.diameter > 0 and math.isfinite(self.diameter)):
            raise ValueError("auger diameter must be positive")


def sample_mass(spec: DrillSpec) -> float:
    """Extracted soil mass in grams for one full-depth core."""
    return spec.bulk_density * math.pi * spec.depth * (spec.diameter / 2.0) ** 2


def auger_diameter(target_mass: float, bulk_density: float, depth: float) -> float:
    """Auger diameter (mm) that extracts ``target_mass`` grams.

    Exact inverse of :func:`sample_mass`: d = 2·√(m / (ρ·π·L)).
    """
    if target_mass < 0:
        raise ValueError("target mass must be non-negative")
    if bulk_density <= 0 or depth <= 0:
        raise ValueError("bulk density and depth must be positive")
    return 2.0 * math.sqrt(target_mass / (bulk_density * math.pi * depth))


def _polygon_area2(poly) -> float:
    """Twice the signed shoelace area."""
    n = len(poly)
    s = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return s


def _segments_properly_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def _validate_simple_polygon(poly, what: str):
    if len(poly) < 3:
        raise ValueError(f"{what} needs at least 3 vertices")
    if abs(_polygon_area2(poly)) < 1e-12:
        raise ValueError(f"{what} is degenerate (zero area)")
    n = len(poly)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent edges share a vertex
            a, b = poly[i], poly[(i + 1) % n]
            c, d = poly[j], poly[(j + 1) % n]
            if _segments_properly_intersect(a, b, c, d):
                raise ValueError(f"{what} is self-intersecting")


def _on_edge(poly, x: float, y: float, tol: float = 1e-9) -> bool:
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        dx, dy = x2 - x1, y2 - y1
        seg2 = dx * dx + dy * dy
        if seg2 == 0:
            continue
        t = ((x - x1) * dx + (y - y1) * dy) / seg2
        if -tol <= t <= 1 + tol:
            px, py = x1 + t * dx, y1 + t * dy
            if math.hypot(x - px, y - py) <= tol:
                return True
    return False


def _point_in_polygon(poly, x: float, y: float, count_edge_as_inside: bool) -> bool:
    """Even-odd rule; edge membership is decided explicitly so boundary
    and exclusion semantics stay exact."""
    if _on_edge(poly, x, y):
        return count_edge_as_inside
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


@dataclass(frozen=True)
class FieldBoundary:
    """Field outline with optional keep-out polygons (meters).

    Points on the boundary edge count as inside the field; points on an
    exclusion edge count as excluded.
    """

    polygon: tuple[tuple[float, float], ...]
    exclusions: tuple[tuple[tuple[float, float], ...], ...] = ()

    def __post_init__(self):
        _validate_simple_polygon(self.polygon, "boundary polygon")
        for k, ex in enumerate(self.exclusions):
            _validate_simple_polygon(ex, f"exclusion polygon {k}")

    def contains(self, x: float, y: float) -> bool:
        if not _point_in_polygon(self.polygon, x, y, count_edge_as_inside=True):
            return False
        return not any(
            _point_in_polygon(ex, x, y, count_edge_as_inside=True)
            for ex in self.exclusions
        )

    def bounding_box(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.polygon]
        ys = [p[1] for p in self.polygon]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class SamplePlan:
    """Ordered sample visit list on a square lattice."""

    points: tuple[Location, ...]
    spacing: float


def grid_plan(boundary: FieldBoundary, spacing: float) -> SamplePlan:
    """Square lattice anchored at the bounding-box minimum corner.

    Keeps lattice nodes inside the boundary and outside every exclusion;
    rows are ordered south to north and traversed serpentine to shorten
    travel between consecutive samples.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    xmin, ymin, xmax, ymax = boundary.bounding_box()
    nx = int(math.floor((xmax - xmin) / spacing + 1e-9)) + 1
    ny = int(math.floor((ymax - ymin) / spacing + 1e-9)) + 1

    points = []
    for iy in range(ny):
        y = ymin + iy * spacing
        xs = range(nx) if iy % 2 == 0 else range(nx - 1, -1, -1)
        for ix in xs:
            x = xmin + ix * spacing
            if boundary.contains(x, y):
                points.append(Location(x, y))
    return SamplePlan(tuple(points), spacing)
