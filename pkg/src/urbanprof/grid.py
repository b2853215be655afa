"""Rectangular analysis grid: cell indexing, centroids, and radius queries.

Cells are indexed row-major from the lower-left corner: cell 0 spans the
origin, ``row = index // n_cols``, ``col = index % n_cols``.  Geometry is
done in a local equirectangular frame anchored at the grid origin
(meters per degree evaluated at the origin latitude), which keeps errors
sub-meter at city scale without pulling in a projection library.

Cell rectangles use half-open intervals (inclusive lower/left edge,
exclusive upper/right edge) so that boundary points belong to exactly
one cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DataError

# Mean Earth radius (IUGG); only used for the local meters<->degrees scale.
EARTH_RADIUS_M = 6_371_008.8

_M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the rectangular analysis grid."""

    origin_lon: float
    origin_lat: float
    cell_width_m: float
    cell_height_m: float
    n_cols: int
    n_rows: int

    def __post_init__(self) -> None:
        if self.n_cols < 1 or self.n_rows < 1:
            raise DataError("grid must have at least one row and one column")
        if not (self.cell_width_m > 0 and self.cell_height_m > 0):
            raise DataError("cell dimensions must be positive")
        if not (math.isfinite(self.origin_lon) and math.isfinite(self.origin_lat)):
            raise DataError("grid origin must be finite")
        if abs(self.origin_lat) >= 90.0:
            raise DataError("grid origin latitude must lie strictly inside (-90, 90)")

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    @property
    def width_m(self) -> float:
        return self.n_cols * self.cell_width_m

    @property
    def height_m(self) -> float:
        return self.n_rows * self.cell_height_m

    def meters_per_degree(self) -> tuple[float, float]:
        """(m per degree of longitude, m per degree of latitude) at the origin."""
        return _M_PER_DEG * math.cos(math.radians(self.origin_lat)), _M_PER_DEG

    def to_local(self, lon: float, lat: float) -> tuple[float, float]:
        """Project lon/lat into grid-local meters (origin at (0, 0))."""
        mx, my = self.meters_per_degree()
        return (lon - self.origin_lon) * mx, (lat - self.origin_lat) * my

    def to_lonlat(self, x_m: float, y_m: float) -> tuple[float, float]:
        mx, my = self.meters_per_degree()
        return self.origin_lon + x_m / mx, self.origin_lat + y_m / my


def rowcol_of(grid: GridSpec, cell: int) -> tuple[int, int]:
    check_cell(grid, cell)
    return cell // grid.n_cols, cell % grid.n_cols


def cell_at(grid: GridSpec, row: int, col: int) -> int:
    if not (0 <= row < grid.n_rows and 0 <= col < grid.n_cols):
        raise DataError(f"(row, col) = ({row}, {col}) outside grid")
    return row * grid.n_cols + col


def check_cell(grid: GridSpec, cell: int) -> None:
    if not (0 <= cell < grid.n_cells):
        raise DataError(f"cell id {cell} out of range [0, {grid.n_cells})")


def cell_of_point(grid: GridSpec, lon: float, lat: float) -> int | None:
    """Cell containing the point, or None if it falls outside the grid."""
    x, y = grid.to_local(lon, lat)
    return cell_of_local(grid, x, y)


def cell_of_local(grid: GridSpec, x_m: float, y_m: float) -> int | None:
    """Like cell_of_point but for coordinates already in grid-local meters."""
    col = math.floor(x_m / grid.cell_width_m)
    row = math.floor(y_m / grid.cell_height_m)
    if not (0 <= col < grid.n_cols and 0 <= row < grid.n_rows):
        return None
    return row * grid.n_cols + col


def cell_bounds_m(grid: GridSpec, cell: int) -> tuple[float, float, float, float]:
    """(x0, y0, x1, y1) of the cell rectangle in local meters."""
    row, col = rowcol_of(grid, cell)
    x0 = col * grid.cell_width_m
    y0 = row * grid.cell_height_m
    return x0, y0, x0 + grid.cell_width_m, y0 + grid.cell_height_m


def centroid_local(grid: GridSpec, cell: int) -> tuple[float, float]:
    x0, y0, x1, y1 = cell_bounds_m(grid, cell)
    return (x0 + x1) / 2.0, (y0 + y1) / 2.0


def centroid(grid: GridSpec, cell: int) -> tuple[float, float]:
    """Geometric center of the cell rectangle, in lon/lat degrees."""
    return grid.to_lonlat(*centroid_local(grid, cell))


def _rect_point_dist2(bounds: tuple[float, float, float, float], px: float, py: float) -> float:
    # Squared distance from a point to the closest point of the rectangle.
    x0, y0, x1, y1 = bounds
    dx = max(x0 - px, 0.0, px - x1)
    dy = max(y0 - py, 0.0, py - y1)
    return dx * dx + dy * dy


def cells_within_radius(grid: GridSpec, cell: int, radius_m: float) -> set[int]:
    """All cells whose rectangle intersects the closed disk around the centroid.

    The disk is centered on centroid(cell); intersection uses the exact
    closest-point distance, not centroid-to-centroid distance.  Always
    contains the cell itself (radius 0 degenerates to the centroid).
    """
    if radius_m < 0:
        raise DataError("radius must be non-negative")
    cx, cy = centroid_local(grid, cell)
    r2 = radius_m * radius_m
    # Bounding box of the disk -> candidate row/col window.
    col_lo = max(0, math.floor((cx - radius_m) / grid.cell_width_m))
    col_hi = min(grid.n_cols - 1, math.floor((cx + radius_m) / grid.cell_width_m))
    row_lo = max(0, math.floor((cy - radius_m) / grid.cell_height_m))
    row_hi = min(grid.n_rows - 1, math.floor((cy + radius_m) / grid.cell_height_m))
    hits: set[int] = set()
    for row in range(row_lo, row_hi + 1):
        y0 = row * grid.cell_height_m
        for col in range(col_lo, col_hi + 1):
            x0 = col * grid.cell_width_m
            bounds = (x0, y0, x0 + grid.cell_width_m, y0 + grid.cell_height_m)
            if _rect_point_dist2(bounds, cx, cy) <= r2:
                hits.add(row * grid.n_cols + col)
    hits.add(cell)
    return hits


def cell_polygon(grid: GridSpec, cell: int) -> list[tuple[float, float]]:
    """Closed lon/lat ring (5 points, CCW) of the cell rectangle."""
    x0, y0, x1, y1 = cell_bounds_m(grid, cell)
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
    return [grid.to_lonlat(x, y) for x, y in corners]
