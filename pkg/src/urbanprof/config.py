"""Flat key=value pipeline configuration.

Grammar: one ``key = value`` per line, ``#`` starts a comment line, blank
lines ignored.  Unknown keys are errors.  Defaults encode the reference
configuration (100x100 grid of 235 m cells, h=50, k_nn=10, 10 folds).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .errors import ConfigError


@dataclass
class PipelineConfig:
    # grid geometry
    grid_origin_lon: float = 9.05
    grid_origin_lat: float = 45.40
    grid_cell_width_m: float = 235.0
    grid_cell_height_m: float = 235.0
    grid_n_cols: int = 100
    grid_n_rows: int = 100
    # input paths ("" = not configured)
    paths_poi: str = ""
    paths_poi_format: str = "csv"  # csv | osm
    paths_cdr: str = ""
    paths_mapping: str = ""  # "" -> shipped default mapping
    paths_landuse: str = ""
    # activity profiles
    profiles_h: int = 50
    profiles_radius_step_m: float = 117.5
    profiles_radius_cap_m: float = 2350.0
    profiles_idf_corpus: str = "occupied"  # occupied | all
    # spectral clustering
    cluster_k_nn: int = 10
    cluster_k_override: int = 0  # 0 -> eigengap heuristic
    cluster_k_max: int = 20
    cluster_row_normalize: bool = True
    cluster_knn_mode: str = "or"  # or | and
    cluster_restarts: int = 8
    # timelines
    time_year: int = 2013
    time_month: int = 11
    time_utc_offset_minutes: int = 0
    features_mode: str = "weekday_weekend"  # mean_day | weekday_weekend
    # classification
    classify_model: str = "forest"  # forest | knn | tree
    classify_folds: int = 10
    classify_knn_k: int = 5
    classify_n_trees: int = 100
    classify_max_depth: int = 0  # 0 -> unbounded
    classify_mtry: int = 0  # 0 -> ceil(sqrt(q))
    # statistics
    stats_hopkins_m: int = 0  # 0 -> n // 10
    stats_cca_ridge: float = -1.0  # negative -> auto ridge
    # synthetic city
    synth_n_cols: int = 20
    synth_n_rows: int = 20
    synth_noise: float = 0.1
    synth_base_pois: float = 80.0
    synth_base_activity: float = 100.0
    # run
    seed: int = 42
    out_dir: str = "out"


_GROUPS = ("grid", "paths", "profiles", "cluster", "time", "features", "classify", "stats", "synth")


def _key_of(name: str) -> str:
    return name.replace("_", ".", 1) if name.split("_", 1)[0] in _GROUPS else name


_KEY_TO_FIELD = {_key_of(f.name): f for f in fields(PipelineConfig)}


def _coerce(field, raw: str):
    if field.type in ("int", int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{field.name}: expected integer, got {raw!r}") from None
    if field.type in ("float", float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{field.name}: expected number, got {raw!r}") from None
    if field.type in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{field.name}: expected true/false, got {raw!r}")
    return raw


def parse_config(text: str) -> PipelineConfig:
    cfg = PipelineConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        field = _KEY_TO_FIELD.get(key)
        if field is None:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        setattr(cfg, field.name, _coerce(field, value))
    validate_config(cfg)
    return cfg


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config(f.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc


def validate_config(cfg: PipelineConfig) -> None:
    checks = [
        (cfg.grid_n_cols >= 1 and cfg.grid_n_rows >= 1, "grid must be at least 1x1"),
        (cfg.grid_cell_width_m > 0 and cfg.grid_cell_height_m > 0, "cell dimensions must be positive"),
        (cfg.paths_poi_format in ("csv", "osm"), "paths.poi_format must be csv or osm"),
        (cfg.profiles_h >= 1, "profiles.h must be >= 1"),
        (cfg.profiles_radius_step_m > 0, "profiles.radius_step_m must be positive"),
        (cfg.profiles_radius_cap_m >= 0, "profiles.radius_cap_m must be non-negative"),
        (cfg.profiles_idf_corpus in ("occupied", "all"), "profiles.idf_corpus must be occupied or all"),
        (cfg.cluster_k_nn >= 1, "cluster.k_nn must be >= 1"),
        (cfg.cluster_k_override == 0 or cfg.cluster_k_override >= 2, "cluster.k_override must be 0 or >= 2"),
        (cfg.cluster_k_max >= 2, "cluster.k_max must be >= 2"),
        (cfg.cluster_knn_mode in ("or", "and"), "cluster.knn_mode must be or/and"),
        (cfg.cluster_restarts >= 1, "cluster.restarts must be >= 1"),
        (1 <= cfg.time_month <= 12, "time.month must be in 1..12"),
        (cfg.features_mode in ("mean_day", "weekday_weekend"), "features.mode invalid"),
        (cfg.classify_model in ("forest", "knn", "tree"), "classify.model must be forest/knn/tree"),
        (cfg.classify_folds >= 2, "classify.folds must be >= 2"),
        (cfg.classify_knn_k >= 1, "classify.knn_k must be >= 1"),
        (cfg.classify_n_trees >= 1, "classify.n_trees must be >= 1"),
        (cfg.synth_n_cols >= 1 and cfg.synth_n_rows >= 1, "synth grid must be at least 1x1"),
        (cfg.synth_noise >= 0, "synth.noise must be non-negative"),
        (cfg.synth_base_pois > 0, "synth.base_pois must be positive"),
        (cfg.synth_base_activity > 0, "synth.base_activity must be positive"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)


def canonical_text(cfg: PipelineConfig) -> str:
    lines = []
    for key in sorted(_KEY_TO_FIELD):
        value = getattr(cfg, _KEY_TO_FIELD[key].name)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()[:16]
