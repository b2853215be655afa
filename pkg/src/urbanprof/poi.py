"""POI ingestion: OSM-XML subset and CSV parsers, feature -> category mapping.

A POI's ``feature`` is the string "key:value" of the first recognized tag
key present on the node, in the fixed precedence order RECOGNIZED_KEYS.
Feature strings are normalized to lower case.  Only ``node`` elements are
consulted; ways and relations are ignored.
"""

from __future__ import annotations

import csv
import io
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from importlib import resources

from .errors import DataError

# Tag keys that can define a POI feature, in precedence order.
RECOGNIZED_KEYS = (
    "amenity",
    "shop",
    "leisure",
    "tourism",
    "building",
    "landuse",
    "highway",
    "office",
    "sport",
)

# The fixed activity-category universe (m = 10), in CSV column order.
CATEGORIES = (
    "eating",
    "educational",
    "entertainment",
    "health",
    "outdoor",
    "residential",
    "shopping",
    "sporting",
    "traveling",
    "working",
)

POI_CSV_HEADER = ["id", "lon", "lat", "feature"]


@dataclass(frozen=True)
class PoiRecord:
    id: str
    lon: float
    lat: float
    feature: str

    def __post_init__(self) -> None:
        if not self.feature:
            raise DataError("POI feature must be non-empty")
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise DataError(f"POI {self.id!r} has non-finite coordinates")


@dataclass
class OsmParseResult:
    records: list[PoiRecord]
    skipped: int  # nodes without a recognized tag or with missing/bad coordinates


def _feature_of_node(node: ET.Element) -> str | None:
    tags = {}
    for tag in node.iter("tag"):
        k = tag.get("k")
        v = tag.get("v")
        if k and v:
            tags[k.lower()] = v.lower()
    for key in RECOGNIZED_KEYS:
        if key in tags:
            return f"{key}:{tags[key]}"
    return None


def parse_osm_xml(source) -> OsmParseResult:
    """Extract POIs from an OSM XML stream (or path).

    Nodes lacking any recognized tag key, or lacking usable lat/lon
    attributes, are skipped and counted.  Malformed XML raises DataError
    with the offending line number.
    """
    if isinstance(source, str):
        stream = open(source, "rb")
        close = True
    else:
        stream = source
        close = False
    records: list[PoiRecord] = []
    skipped = 0
    try:
        for _event, elem in ET.iterparse(stream, events=("end",)):
            tag = elem.tag.rsplit("}", 1)[-1]  # tolerate a default namespace
            if tag != "node":
                continue
            feature = _feature_of_node(elem)
            if feature is None:
                skipped += 1
                elem.clear()
                continue
            lat_s, lon_s = elem.get("lat"), elem.get("lon")
            try:
                lon, lat = float(lon_s), float(lat_s)  # type: ignore[arg-type]
            except (TypeError, ValueError):
                skipped += 1
                elem.clear()
                continue
            records.append(PoiRecord(id=elem.get("id", ""), lon=lon, lat=lat, feature=feature))
            elem.clear()
    except ET.ParseError as exc:
        line = exc.position[0] if exc.position else "?"
        raise DataError(f"malformed OSM XML at line {line}: {exc}") from exc
    finally:
        if close:
            stream.close()
    return OsmParseResult(records=records, skipped=skipped)


def _open_text(source):
    if isinstance(source, str):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8")), False
    if hasattr(source, "read"):
        first = source.read(0)
        if isinstance(first, bytes):
            return io.TextIOWrapper(source, encoding="utf-8", newline=""), False
        return source, False
    raise DataError(f"unsupported source type: {type(source)!r}")


def parse_poi_csv(source) -> list[PoiRecord]:
    """Read POIs from CSV with the exact header ``id,lon,lat,feature``.

    Row numbers in error messages are file line numbers (header = line 1).
    """
    stream, close = _open_text(source)
    try:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("POI CSV is empty (missing header)") from None
        if header != POI_CSV_HEADER:
            raise DataError(f"POI CSV header must be {','.join(POI_CSV_HEADER)!r}, got {','.join(header)!r}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"POI CSV row {lineno}: expected 4 fields, got {len(row)}")
            poi_id, lon_s, lat_s, feature = row
            try:
                lon, lat = float(lon_s), float(lat_s)
            except ValueError:
                raise DataError(f"POI CSV row {lineno}: non-numeric coordinate") from None
            records.append(PoiRecord(id=poi_id, lon=lon, lat=lat, feature=feature.strip().lower()))
        return records
    finally:
        if close:
            stream.close()


def write_poi_csv(records: list[PoiRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(POI_CSV_HEADER)
        for r in records:
            w.writerow([r.id, f"{r.lon:.7f}", f"{r.lat:.7f}", r.feature])


@dataclass(frozen=True)
class CategoryMapping:
    """Maps feature strings onto weighted shares over the 10 categories."""

    entries: dict[str, tuple[tuple[str, float], ...]]

    def __post_init__(self) -> None:
        for feature, shares in self.entries.items():
            total = 0.0
            for category, share in shares:
                if category not in CATEGORIES:
                    raise DataError(f"mapping for {feature!r}: unknown category {category!r}")
                if share <= 0:
                    raise DataError(f"mapping for {feature!r}: share must be positive")
                total += share
            if abs(total - 1.0) > 1e-9:
                raise DataError(f"mapping for {feature!r}: shares sum to {total}, expected 1")

    def __contains__(self, feature: str) -> bool:
        return feature in self.entries

    def shares(self, feature: str) -> tuple[tuple[str, float], ...]:
        return self.entries[feature]

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(self.entries)

    @classmethod
    def from_csv(cls, source) -> "CategoryMapping":
        """Parse ``feature,category,share`` lines; '#' starts a comment line."""
        stream, close = _open_text(source)
        try:
            entries: dict[str, list[tuple[str, float]]] = {}
            for lineno, raw in enumerate(stream, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = [p.strip() for p in line.split(",")]
                if len(parts) != 3:
                    raise DataError(f"mapping line {lineno}: expected feature,category,share")
                feature, category, share_s = parts
                try:
                    share = float(share_s)
                except ValueError:
                    raise DataError(f"mapping line {lineno}: bad share {share_s!r}") from None
                entries.setdefault(feature.lower(), []).append((category.lower(), share))
            return cls(entries={f: tuple(v) for f, v in entries.items()})
        finally:
            if close:
                stream.close()


def default_mapping() -> CategoryMapping:
    """The mapping shipped with the package (~60 common OSM features)."""
    text = resources.files("urbanprof.data").joinpath("default_mapping.csv").read_text("utf-8")
    return CategoryMapping.from_csv(io.StringIO(text))


def filter_relevant(pois: list[PoiRecord], mapping: CategoryMapping) -> list[PoiRecord]:
    """Order-preserving subset of records whose feature appears in the mapping."""
    return [p for p in pois if p.feature in mapping]
