"""Synthetic cities with planted area types, POIs, and matching CDR timelines.

Each archetype is a mix over the 10 activity categories plus a derived
diurnal template: the template is the mix-weighted blend of fixed
per-category 8-slot patterns, so cells with similar activity mixes also get
similar timelines (the property the statistics modules are meant to detect).

POI counts per (cell, feature) are deterministic expected counts at
poi_noise 0 and Poisson draws around a lognormal-perturbed expectation
otherwise; timelines likewise use lognormal multiplicative noise.  All
randomness is derived from (seed, cell), so generation is reproducible and
order-independent.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .grid import GridSpec, cell_bounds_m
from .poi import CATEGORIES, CategoryMapping, PoiRecord, default_mapping
from .timelines import N_SLOTS, SLOT_BOUNDS_H, CdrRecord, days_in_month, epoch_minutes

# Fixed diurnal shape of each activity category over the eight slots
# (synthetic values; qualitative daytime/evening structure only).
CATEGORY_DIURNAL = {
    "eating": (0.2, 0.5, 0.6, 1.6, 0.8, 1.2, 1.6, 0.9),
    "educational": (0.1, 0.8, 1.6, 1.4, 1.2, 0.5, 0.2, 0.1),
    "entertainment": (0.6, 0.2, 0.3, 0.5, 0.6, 1.0, 1.6, 1.8),
    "health": (0.1, 0.7, 1.5, 1.3, 1.2, 0.6, 0.2, 0.1),
    "outdoor": (0.2, 0.5, 1.0, 1.3, 1.5, 1.2, 0.6, 0.3),
    "residential": (0.9, 1.1, 0.5, 0.6, 0.7, 1.2, 1.5, 1.4),
    "shopping": (0.1, 0.4, 1.2, 1.4, 1.5, 1.3, 0.6, 0.2),
    "sporting": (0.2, 0.5, 0.5, 0.7, 0.9, 1.5, 1.6, 0.8),
    "traveling": (0.4, 1.7, 0.9, 0.8, 1.0, 1.7, 0.9, 0.5),
    "working": (0.1, 0.9, 1.7, 1.5, 1.6, 0.8, 0.3, 0.2),
}

CATEGORY_WEEKEND_FACTOR = {
    "eating": 1.1,
    "educational": 0.25,
    "entertainment": 1.5,
    "health": 0.4,
    "outdoor": 1.6,
    "residential": 1.2,
    "shopping": 1.3,
    "sporting": 1.4,
    "traveling": 0.6,
    "working": 0.25,
}


@dataclass(frozen=True)
class Archetype:
    """A planted area type: category mix (sums to 1) and its diurnal profile."""

    name: str
    mix: tuple[float, ...]
    template: tuple[float, ...]
    weekend_factor: float = 1.0

    def __post_init__(self) -> None:
        if len(self.mix) != len(CATEGORIES):
            raise DataError(f"archetype {self.name}: mix must have {len(CATEGORIES)} entries")
        if any(v < 0 for v in self.mix) or abs(sum(self.mix) - 1.0) > 1e-9:
            raise DataError(f"archetype {self.name}: mix must be non-negative and sum to 1")
        if len(self.template) != N_SLOTS:
            raise DataError(f"archetype {self.name}: template must have {N_SLOTS} slots")


def archetype_from_mix(name: str, mix_by_category: dict[str, float]) -> Archetype:
    """Build an archetype whose timeline template follows its activity mix."""
    mix = tuple(mix_by_category.get(c, 0.0) for c in CATEGORIES)
    template = np.zeros(N_SLOTS)
    weekend = 0.0
    for c, share in zip(CATEGORIES, mix):
        template += share * np.asarray(CATEGORY_DIURNAL[c])
        weekend += share * CATEGORY_WEEKEND_FACTOR[c]
    template = template / template.mean()
    return Archetype(name=name, mix=mix, template=tuple(float(v) for v in template), weekend_factor=float(weekend))


def default_archetypes() -> list[Archetype]:
    """Six planted area types used by the default scenario."""
    specs = [
        ("office_core", {"working": 0.50, "traveling": 0.15, "eating": 0.15, "shopping": 0.08, "health": 0.05, "entertainment": 0.03, "educational": 0.02, "residential": 0.02}),
        ("residential_quarter", {"residential": 0.48, "eating": 0.14, "shopping": 0.12, "health": 0.08, "educational": 0.08, "outdoor": 0.05, "sporting": 0.03, "entertainment": 0.02}),
        ("nightlife_district", {"entertainment": 0.40, "eating": 0.30, "shopping": 0.10, "residential": 0.08, "traveling": 0.07, "working": 0.05}),
        ("retail_strip", {"shopping": 0.45, "eating": 0.20, "traveling": 0.12, "working": 0.10, "residential": 0.08, "entertainment": 0.05}),
        ("campus", {"educational": 0.45, "eating": 0.15, "sporting": 0.12, "residential": 0.12, "outdoor": 0.08, "working": 0.08}),
        ("greenbelt", {"outdoor": 0.40, "sporting": 0.30, "eating": 0.10, "traveling": 0.10, "entertainment": 0.05, "residential": 0.05}),
    ]
    return [archetype_from_mix(name, mix) for name, mix in specs]


@dataclass
class CityScenario:
    grid: GridSpec
    archetypes: list[Archetype]
    assignment: dict[int, int]  # cell -> archetype index
    poi_noise: float = 0.0
    timeline_noise: float = 0.0
    base_pois: float = 80.0  # expected POIs per cell
    base_activity: float = 100.0  # mean slot activity volume per cell
    month: tuple[int, int] = (2013, 11)
    seed: int = 42

    def __post_init__(self) -> None:
        if not self.archetypes:
            raise DataError("scenario needs at least one archetype")
        for cell, a in self.assignment.items():
            if not (0 <= a < len(self.archetypes)):
                raise DataError(f"cell {cell}: archetype index {a} out of range")


def default_scenario(
    n_cols: int = 20,
    n_rows: int = 20,
    noise: float = 0.1,
    seed: int = 42,
    cell_m: float = 235.0,
    month: tuple[int, int] = (2013, 11),
) -> CityScenario:
    """The 6-archetype test city; `noise` drives both POI and timeline noise."""
    grid = GridSpec(
        origin_lon=9.05,
        origin_lat=45.40,
        cell_width_m=cell_m,
        cell_height_m=cell_m,
        n_cols=n_cols,
        n_rows=n_rows,
    )
    archetypes = default_archetypes()
    rng = np.random.default_rng(seed)
    assignment = {cell: int(a) for cell, a in enumerate(rng.integers(0, len(archetypes), size=grid.n_cells))}
    # tiny grids could miss an archetype by chance; force one cell of each
    for a in range(len(archetypes)):
        if a not in assignment.values():
            assignment[a % grid.n_cells] = a
    return CityScenario(
        grid=grid,
        archetypes=archetypes,
        assignment=assignment,
        poi_noise=noise,
        timeline_noise=noise,
        seed=seed,
        month=month,
    )


@dataclass
class SynthCity:
    pois: list[PoiRecord]
    cdr: list[CdrRecord]
    truth: dict[int, int]  # cell -> planted archetype index
    scenario: CityScenario | None = field(repr=False, default=None)


def _feature_sampler(mapping: CategoryMapping) -> dict[str, list[tuple[str, float]]]:
    """Invert the mapping: category -> [(feature, p(feature|category)), ...]."""
    by_cat: dict[str, list[tuple[str, float]]] = {c: [] for c in CATEGORIES}
    for feature in mapping.features:
        for category, share in mapping.shares(feature):
            by_cat[category].append((feature, share))
    out: dict[str, list[tuple[str, float]]] = {}
    for category, pairs in by_cat.items():
        total = sum(s for _, s in pairs)
        if total > 0:
            out[category] = [(f, s / total) for f, s in sorted(pairs)]
    return out


def generate(scenario: CityScenario, mapping: CategoryMapping | None = None) -> SynthCity:
    """Materialize POIs, CDR records, and ground-truth labels for a scenario."""
    if mapping is None:
        mapping = default_mapping()
    grid = scenario.grid
    sampler = _feature_sampler(mapping)
    year, mon = scenario.month
    n_days = days_in_month(scenario.month)
    weekend = [dt.date(year, mon, d + 1).weekday() >= 5 for d in range(n_days)]
    slot_starts = [
        epoch_minutes(f"{year:04d}-{mon:02d}-{day + 1:02d}T{SLOT_BOUNDS_H[j]:02d}:00")
        for day in range(n_days)
        for j in range(N_SLOTS)
    ]
    channel_split = (0.15, 0.15, 0.2, 0.2, 0.3)  # sms in/out, call in/out, internet

    pois: list[PoiRecord] = []
    cdr: list[CdrRecord] = []
    poi_seq = 0
    for cell in sorted(scenario.assignment):
        arch = scenario.archetypes[scenario.assignment[cell]]
        rng = np.random.default_rng([scenario.seed, cell])
        x0, y0, x1, y1 = cell_bounds_m(grid, cell)
        # --- POIs ---------------------------------------------------------
        for category, share in zip(CATEGORIES, arch.mix):
            if share == 0.0 or category not in sampler:
                continue
            for feature, p in sampler[category]:
                expected = scenario.base_pois * share * p
                if scenario.poi_noise > 0:
                    expected *= rng.lognormal(0.0, scenario.poi_noise)
                    count = int(rng.poisson(expected))
                else:
                    count = int(round(expected))
                for _ in range(count):
                    px = x0 + rng.random() * (x1 - x0)
                    py = y0 + rng.random() * (y1 - y0)
                    lon, lat = grid.to_lonlat(px, py)
                    pois.append(PoiRecord(id=f"p{poi_seq}", lon=lon, lat=lat, feature=feature))
                    poi_seq += 1
        # --- CDR ------------------------------------------------------------
        for day in range(n_days):
            wf = arch.weekend_factor if weekend[day] else 1.0
            for j in range(N_SLOTS):
                volume = scenario.base_activity * arch.template[j] * wf
                if scenario.timeline_noise > 0:
                    volume *= rng.lognormal(0.0, scenario.timeline_noise)
                total = round(volume, 3)
                if total <= 0:
                    continue
                parts = [round(total * frac, 3) for frac in channel_split]
                cdr.append(CdrRecord(cell, slot_starts[day * N_SLOTS + j], *parts))
    return SynthCity(pois=pois, cdr=cdr, truth=dict(scenario.assignment), scenario=scenario)


def write_truth_csv(truth: dict[int, int], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cell_id", "archetype"])
        for cell in sorted(truth):
            w.writerow([cell, truth[cell]])


def read_truth_csv(path: str) -> dict[int, int]:
    truth: dict[int, int] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["cell_id", "archetype"]:
            raise DataError(f"truth CSV header mismatch in {path}")
        for row in reader:
            if row:
                truth[int(row[0])] = int(row[1])
    return truth
