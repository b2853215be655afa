"""Land-use labels for grid cells from tagged GeoJSON polygons.

Each cell takes the land-use class covering the largest share of its area
(polygon-rectangle clipping in the grid's local meter frame); cells with no
coverage are labeled "unknown".  Class-area ties break toward the
lexicographically smaller class name.
"""

from __future__ import annotations

import json
import warnings

from .errors import DataError
from .grid import GridSpec, cell_bounds_m

UNKNOWN = "unknown"


def _clip_ring_rect(ring: list[tuple[float, float]], rect: tuple[float, float, float, float]) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clip of a closed ring against an axis-aligned rect."""
    x0, y0, x1, y1 = rect
    edges = (
        lambda p: p[0] >= x0,
        lambda p: p[0] <= x1,
        lambda p: p[1] >= y0,
        lambda p: p[1] <= y1,
    )

    def intersect(a, b, axis, bound):
        ax, ay = a
        bx, by = b
        if axis == 0:
            t = (bound - ax) / (bx - ax)
            return (bound, ay + t * (by - ay))
        t = (bound - ay) / (by - ay)
        return (ax + t * (bx - ax), bound)

    bounds = ((0, x0), (0, x1), (1, y0), (1, y1))
    poly = ring[:-1] if ring and ring[0] == ring[-1] else list(ring)
    for inside, (axis, bound) in zip(edges, bounds):
        if not poly:
            return []
        clipped = []
        prev = poly[-1]
        prev_in = inside(prev)
        for cur in poly:
            cur_in = inside(cur)
            if cur_in:
                if not prev_in:
                    clipped.append(intersect(prev, cur, axis, bound))
                clipped.append(cur)
            elif prev_in:
                clipped.append(intersect(prev, cur, axis, bound))
            prev, prev_in = cur, cur_in
        poly = clipped
    return poly


def _ring_area(points: list[tuple[float, float]]) -> float:
    if len(points) < 3:
        return 0.0
    area = 0.0
    for i in range(len(points)):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % len(points)]
        area += x1 * y2 - x2 * y1
    return abs(area) / 2.0


def _local_ring(grid: GridSpec, ring, name: str) -> list[tuple[float, float]]:
    if not isinstance(ring, list) or len(ring) < 4:
        raise DataError(f"feature {name}: polygon ring needs at least 4 positions")
    if ring[0] != ring[-1]:
        raise DataError(f"feature {name}: polygon ring is not closed")
    return [grid.to_local(float(lon), float(lat)) for lon, lat in ring]


def _polygons_of(geometry: dict, name: str) -> list[list[list]]:
    gtype = geometry.get("type")
    coords = geometry.get("coordinates")
    if gtype == "Polygon":
        return [coords]
    if gtype == "MultiPolygon":
        return list(coords)
    raise DataError(f"feature {name}: unsupported geometry type {gtype!r}")


def landuse_labels(grid: GridSpec, geojson) -> dict[int, str]:
    """Label every cell by the dominant land-use class of its covering polygons.

    `geojson` is a FeatureCollection dict or a path to one.  Features must
    carry a `landuse` property; features without one are skipped with a
    warning, and invalid rings raise DataError naming the feature.
    """
    if isinstance(geojson, str):
        with open(geojson, "r", encoding="utf-8") as f:
            geojson = json.load(f)
    if geojson.get("type") != "FeatureCollection":
        raise DataError("land-use input must be a GeoJSON FeatureCollection")
    coverage: dict[int, dict[str, float]] = {}
    for idx, feature in enumerate(geojson.get("features", [])):
        props = feature.get("properties") or {}
        name = str(props.get("id", feature.get("id", idx)))
        landuse = props.get("landuse")
        if not landuse:
            warnings.warn(f"feature {name}: no landuse property, skipped", stacklevel=2)
            continue
        landuse = str(landuse).lower()
        for rings in _polygons_of(feature.get("geometry") or {}, name):
            local_rings = [_local_ring(grid, ring, name) for ring in rings]
            xs = [p[0] for p in local_rings[0]]
            ys = [p[1] for p in local_rings[0]]
            col_lo = max(0, int(min(xs) // grid.cell_width_m))
            col_hi = min(grid.n_cols - 1, int(max(xs) // grid.cell_width_m))
            row_lo = max(0, int(min(ys) // grid.cell_height_m))
            row_hi = min(grid.n_rows - 1, int(max(ys) // grid.cell_height_m))
            for row in range(row_lo, row_hi + 1):
                for col in range(col_lo, col_hi + 1):
                    cell = row * grid.n_cols + col
                    rect = cell_bounds_m(grid, cell)
                    area = _ring_area(_clip_ring_rect(local_rings[0], rect))
                    for hole in local_rings[1:]:
                        area -= _ring_area(_clip_ring_rect(hole, rect))
                    if area > 0:
                        per = coverage.setdefault(cell, {})
                        per[landuse] = per.get(landuse, 0.0) + area
    labels: dict[int, str] = {}
    for cell in range(grid.n_cells):
        per = coverage.get(cell)
        if not per:
            labels[cell] = UNKNOWN
            continue
        # max area; ties toward the lexicographically smaller class
        labels[cell] = min(per.items(), key=lambda kv: (-kv[1], kv[0]))[0]
    return labels
