"""Activity-profile matrix: POI counting, adaptive aggregation, tf-idf weights.

Cells play the role of documents: the weight of feature f in cell l is

    tf(f, l) * idf(f) = N(f, l) / max_w N(w, l) * ln(|L| / df(f))

with df(f) the number of cells containing f.  |L| counts POI-bearing cells
by default (``idf_corpus="occupied"``); set ``idf_corpus="all"`` to count
every grid cell instead.  Natural logarithm throughout; any other base is a
uniform rescale and cannot change cosine similarities.

Per-cell tf-idf is computed first and then summed over the cell's
aggregation neighborhood (weights are per location, aggregation after).
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .grid import GridSpec, cells_within_radius, check_cell
from .poi import CATEGORIES, CategoryMapping, PoiRecord

FLAG_EMPTY = "empty"  # no POIs anywhere in the cell's aggregation reach
FLAG_CAPPED = "capped"  # radius hit the cap before reaching the threshold h

PROFILE_CSV_HEADER = ["cell_id", *CATEGORIES, "flags"]


@dataclass
class PoiCellCounts:
    """Per-cell POI feature counts N(f, l) on a given grid."""

    grid: GridSpec
    by_cell: dict[int, Counter]
    dropped_outside: int = 0
    totals: dict[int, int] = field(init=False)

    def __post_init__(self) -> None:
        self.totals = {cell: sum(c.values()) for cell, c in self.by_cell.items()}

    def count(self, cell: int, feature: str) -> int:
        return self.by_cell.get(cell, Counter()).get(feature, 0)

    def total(self, cell: int) -> int:
        return self.totals.get(cell, 0)

    def occupied_cells(self) -> list[int]:
        return sorted(c for c, t in self.totals.items() if t > 0)


def count_pois(grid: GridSpec, pois: list[PoiRecord]) -> PoiCellCounts:
    """Spatial join of POIs onto grid cells; out-of-grid POIs are counted, not fatal."""
    from .grid import cell_of_point

    by_cell: dict[int, Counter] = {}
    dropped = 0
    for p in pois:
        cell = cell_of_point(grid, p.lon, p.lat)
        if cell is None:
            dropped += 1
            continue
        by_cell.setdefault(cell, Counter())[p.feature] += 1
    return PoiCellCounts(grid=grid, by_cell=by_cell, dropped_outside=dropped)


@dataclass
class AggregationPlan:
    """Per-cell aggregation radius and the member cells it covers."""

    radius_m: dict[int, float]
    member_cells: dict[int, frozenset[int]]
    capped: frozenset[int]


def plan_aggregation(
    grid: GridSpec,
    counts: PoiCellCounts,
    h: int,
    radius_step_m: float,
    radius_cap_m: float,
) -> AggregationPlan:
    """Grow each cell's radius in radius_step_m increments until the POI total
    over the covered cells reaches h, or the cap is hit (cell flagged, not fatal).
    """
    if h < 1:
        raise DataError("threshold h must be >= 1")
    if radius_step_m <= 0:
        raise DataError("radius_step_m must be positive")
    radius: dict[int, float] = {}
    members: dict[int, frozenset[int]] = {}
    capped: set[int] = set()
    for cell in range(grid.n_cells):
        r = 0.0
        while True:
            cover = cells_within_radius(grid, cell, r)
            total = sum(counts.total(c) for c in cover)
            if total >= h or r >= radius_cap_m:
                break
            r = min(r + radius_step_m, radius_cap_m)
        if total < h:
            capped.add(cell)
        radius[cell] = r
        members[cell] = frozenset(cover)
    return AggregationPlan(radius_m=radius, member_cells=members, capped=frozenset(capped))


@dataclass(frozen=True)
class _CorpusStats:
    n_docs: int  # |L|
    df: dict[str, int]  # feature -> number of cells containing it
    max_count: dict[int, int]  # cell -> max feature occurrence in that cell


def _corpus_stats(counts: PoiCellCounts, idf_corpus: str) -> _CorpusStats:
    if idf_corpus not in ("occupied", "all"):
        raise DataError(f"idf_corpus must be 'occupied' or 'all', got {idf_corpus!r}")
    df: dict[str, int] = {}
    max_count: dict[int, int] = {}
    for cell, counter in counts.by_cell.items():
        if not counter:
            continue
        max_count[cell] = max(counter.values())
        for feature in counter:
            df[feature] = df.get(feature, 0) + 1
    n_docs = counts.grid.n_cells if idf_corpus == "all" else len(max_count)
    return _CorpusStats(n_docs=n_docs, df=df, max_count=max_count)


def _tf_idf(stats: _CorpusStats, counts: PoiCellCounts, feature: str, cell: int) -> float:
    n = counts.count(cell, feature)
    mx = stats.max_count.get(cell, 0)
    if mx == 0:
        raise DataError(f"cell {cell} has no POIs; tf-idf undefined")
    d = stats.df.get(feature, 0)
    if d == 0:
        raise DataError(f"feature {feature!r} absent from the corpus")
    return (n / mx) * math.log(stats.n_docs / d)


def tf_idf(counts: PoiCellCounts, feature: str, cell: int, idf_corpus: str = "occupied") -> float:
    """tf-idf weight of a feature in one cell; the cell must hold POIs."""
    check_cell(counts.grid, cell)
    return _tf_idf(_corpus_stats(counts, idf_corpus), counts, feature, cell)


@dataclass
class ActivityProfileMatrix:
    """n x m matrix of per-cell activity-category weights (m = 10)."""

    grid: GridSpec
    values: np.ndarray  # (n_cells, len(CATEGORIES)), non-negative
    empty_cells: frozenset[int]
    capped_cells: frozenset[int]

    def __post_init__(self) -> None:
        expected = (self.grid.n_cells, len(CATEGORIES))
        if self.values.shape != expected:
            raise DataError(f"profile matrix shape {self.values.shape}, expected {expected}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("profile matrix contains NaN or infinity")

    def flags(self, cell: int) -> str:
        parts = []
        if cell in self.empty_cells:
            parts.append(FLAG_EMPTY)
        if cell in self.capped_cells:
            parts.append(FLAG_CAPPED)
        return ";".join(parts)

    def active_cells(self) -> list[int]:
        """Cells usable for similarity work: unflagged-empty and nonzero rows."""
        norms = np.linalg.norm(self.values, axis=1)
        return [c for c in range(self.grid.n_cells) if c not in self.empty_cells and norms[c] > 0]

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(PROFILE_CSV_HEADER)
            for cell in range(self.grid.n_cells):
                row = [str(cell)] + [f"{v:.12g}" for v in self.values[cell]] + [self.flags(cell)]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path: str, grid: GridSpec) -> "ActivityProfileMatrix":
        values = np.zeros((grid.n_cells, len(CATEGORIES)))
        empty: set[int] = set()
        capped: set[int] = set()
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != PROFILE_CSV_HEADER:
                raise DataError(f"profile CSV header mismatch in {path}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    cell = int(row[0])
                    values[cell] = [float(x) for x in row[1 : 1 + len(CATEGORIES)]]
                except (ValueError, IndexError):
                    raise DataError(f"profile CSV row {lineno}: malformed") from None
                flags = row[1 + len(CATEGORIES)] if len(row) > 1 + len(CATEGORIES) else ""
                if FLAG_EMPTY in flags:
                    empty.add(cell)
                if FLAG_CAPPED in flags:
                    capped.add(cell)
        return cls(grid=grid, values=values, empty_cells=frozenset(empty), capped_cells=frozenset(capped))


def build_profiles(
    plan: AggregationPlan,
    counts: PoiCellCounts,
    mapping: CategoryMapping,
    idf_corpus: str = "occupied",
) -> ActivityProfileMatrix:
    """A[l][c] = sum over member cells and features mapped to category c of
    tf_idf(feature, member) * share(feature, c).

    Cells whose whole aggregation reach holds zero POIs are flagged empty and
    left as zero rows.  Unmapped features are ignored for category mass but
    still participate in the tf denominator through max_count.
    """
    grid = counts.grid
    stats = _corpus_stats(counts, idf_corpus)
    cat_index = {c: i for i, c in enumerate(CATEGORIES)}
    values = np.zeros((grid.n_cells, len(CATEGORIES)))
    empty: set[int] = set()
    for cell in range(grid.n_cells):
        members = plan.member_cells.get(cell)
        if members is None:
            raise DataError(f"aggregation plan is missing cell {cell}")
        reach_total = sum(counts.total(m) for m in members)
        if reach_total == 0:
            empty.add(cell)
            continue
        row = values[cell]
        for member in sorted(members):
            counter = counts.by_cell.get(member)
            if not counter:
                continue
            for feature in counter:
                if feature not in mapping:
                    continue
                w = _tf_idf(stats, counts, feature, member)
                for category, share in mapping.shares(feature):
                    row[cat_index[category]] += w * share
    return ActivityProfileMatrix(
        grid=grid,
        values=values,
        empty_cells=frozenset(empty),
        capped_cells=plan.capped,
    )
