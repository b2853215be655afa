"""Subcommand CLI: ingest -> profiles -> clustering -> timelines -> statistics
-> classification -> report, with persistent CSV/GeoJSON artifacts.

Every command writes into the configured output directory and records each
artifact (sha256, producing command, config hash, seed) in manifest.csv.
Artifacts are deterministic for a fixed config + inputs; wall-clock timings
go to stderr only.  Exit codes: 0 ok, 2 config error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
import time

import numpy as np

from . import classify as cls
from . import landuse as lu
from . import profiles as prof
from . import spectral as spec
from . import stats as st
from . import synth as syn
from . import timelines as tl
from .config import PipelineConfig, config_hash, load_config
from .errors import ConfigError, DataError, NumericError
from .grid import GridSpec
from .poi import CategoryMapping, default_mapping, filter_relevant, parse_osm_xml, parse_poi_csv, write_poi_csv

COMMANDS = (
    "synth",
    "ingest-poi",
    "profiles",
    "cluster",
    "timelines",
    "hopkins",
    "cca",
    "classify",
    "landuse-compare",
    "report",
)

# artifact file -> command that produces it (for prerequisite errors)
PRODUCERS = {
    "pois.csv": "ingest-poi (or synth)",
    "cdr.csv": "synth (or configure paths.cdr)",
    "truth.csv": "synth",
    "profiles.csv": "profiles",
    "clusters.csv": "cluster",
    "spectrum.csv": "cluster",
    "features.csv": "timelines",
    "timeline_flags.csv": "timelines",
    "table1.csv": "classify",
    "confusion.csv": "classify",
    "per_class.csv": "classify",
}


class _Run:
    """Shared state for one command invocation; tracks created artifacts so a
    failing stage can remove its partial output."""

    def __init__(self, cfg: PipelineConfig, command: str, quiet: bool):
        self.cfg = cfg
        self.command = command
        self.quiet = quiet
        self.out_dir = cfg.out_dir
        self.created: list[str] = []
        os.makedirs(self.out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def artifact(self, name: str) -> str:
        p = self.path(name)
        self.created.append(name)
        return p

    def require(self, name: str) -> str:
        p = self.path(name)
        if not os.path.exists(p):
            producer = PRODUCERS.get(name, "an earlier command")
            raise DataError(f"missing artifact {name}; run {producer} first")
        return p

    def log(self, message: str) -> None:
        if not self.quiet:
            print(message, file=sys.stderr)

    def cleanup_partial(self) -> None:
        for name in self.created:
            p = self.path(name)
            if os.path.exists(p):
                os.remove(p)

    def finish(self) -> None:
        update_manifest(self)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def update_manifest(run: _Run) -> None:
    """Rewrite manifest.csv with this command's artifact rows merged in."""
    manifest_path = run.path("manifest.csv")
    rows: dict[str, list[str]] = {}
    if os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            next(reader, None)
            for row in reader:
                if row:
                    rows[row[0]] = row
    chash = config_hash(run.cfg)
    for name in run.created:
        rows[name] = [name, _sha256(run.path(name)), run.command, chash, str(run.cfg.seed)]
    with open(manifest_path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["artifact", "sha256", "command", "config_hash", "seed"])
        for name in sorted(rows):
            w.writerow(rows[name])


# ---------------------------------------------------------------------------
# shared loaders


def _grid(cfg: PipelineConfig) -> GridSpec:
    return GridSpec(
        origin_lon=cfg.grid_origin_lon,
        origin_lat=cfg.grid_origin_lat,
        cell_width_m=cfg.grid_cell_width_m,
        cell_height_m=cfg.grid_cell_height_m,
        n_cols=cfg.grid_n_cols,
        n_rows=cfg.grid_n_rows,
    )


def _synth_grid(cfg: PipelineConfig) -> GridSpec:
    return GridSpec(
        origin_lon=cfg.grid_origin_lon,
        origin_lat=cfg.grid_origin_lat,
        cell_width_m=cfg.grid_cell_width_m,
        cell_height_m=cfg.grid_cell_height_m,
        n_cols=cfg.synth_n_cols,
        n_rows=cfg.synth_n_rows,
    )


def _active_grid(run: _Run) -> GridSpec:
    """The grid artifacts were built on: synthetic if truth.csv exists."""
    if os.path.exists(run.path("truth.csv")):
        return _synth_grid(run.cfg)
    return _grid(run.cfg)


def _mapping(cfg: PipelineConfig) -> CategoryMapping:
    if cfg.paths_mapping:
        return CategoryMapping.from_csv(cfg.paths_mapping)
    return default_mapping()


def _classifier_spec(cfg: PipelineConfig, kind: str | None = None) -> cls.ClassifierSpec:
    return cls.ClassifierSpec(
        kind=kind or cfg.classify_model,
        knn_k=cfg.classify_knn_k,
        n_trees=cfg.classify_n_trees,
        max_depth=cfg.classify_max_depth or None,
        mtry=cfg.classify_mtry or None,
    )


def _read_features(path: str) -> tuple[list[int], np.ndarray, list[str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "cell_id":
            raise DataError(f"feature CSV header mismatch in {path}")
        cells, rows = [], []
        for row in reader:
            if row:
                cells.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
    return cells, np.array(rows), header[1:]


def _write_features(path: str, cells: list[int], x: np.ndarray, names: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cell_id", *names])
        for cell, row in zip(cells, x):
            w.writerow([cell, *[f"{v:.12g}" for v in row]])


def _stats_rows(path: str, rows: list[tuple[str, str, float, int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["statistic", "scope", "value", "seed"])
        for statistic, scope, value, seed in rows:
            w.writerow([statistic, scope, f"{value:.12g}", seed])


def _aligned_dataset(run: _Run) -> tuple[cls.Dataset, list[int]]:
    """Join timeline features with cluster labels on cell id."""
    labels = spec.read_cluster_csv(run.require("clusters.csv"))
    cells, x, _names = _read_features(run.require("features.csv"))
    rows, y = [], []
    keep_cells = []
    for i, cell in enumerate(cells):
        if cell in labels:
            rows.append(x[i])
            y.append(labels[cell])
            keep_cells.append(cell)
    if not rows:
        raise DataError("no cells shared between clusters.csv and features.csv")
    k = max(y) + 1
    names = [f"S{i + 1}" for i in range(k)]
    return cls.Dataset(np.array(rows), np.array(y), names), keep_cells


# ---------------------------------------------------------------------------
# commands


def cmd_synth(run: _Run) -> None:
    cfg = run.cfg
    scenario = syn.default_scenario(
        n_cols=cfg.synth_n_cols,
        n_rows=cfg.synth_n_rows,
        noise=cfg.synth_noise,
        seed=cfg.seed,
        cell_m=cfg.grid_cell_width_m,
        month=(cfg.time_year, cfg.time_month),
    )
    scenario.base_pois = cfg.synth_base_pois
    scenario.base_activity = cfg.synth_base_activity
    city = syn.generate(scenario, _mapping(cfg))
    write_poi_csv(city.pois, run.artifact("pois.csv"))
    tl.write_cdr_csv(city.cdr, run.artifact("cdr.csv"))
    syn.write_truth_csv(city.truth, run.artifact("truth.csv"))
    run.log(f"synth: {len(city.pois)} POIs, {len(city.cdr)} CDR records, {scenario.grid.n_cells} cells")


def cmd_ingest_poi(run: _Run) -> None:
    cfg = run.cfg
    if not cfg.paths_poi:
        raise ConfigError("paths.poi is not configured")
    if cfg.paths_poi_format == "osm":
        result = parse_osm_xml(cfg.paths_poi)
        records, skipped = result.records, result.skipped
    else:
        records = parse_poi_csv(cfg.paths_poi)
        skipped = 0
    relevant = filter_relevant(records, _mapping(cfg))
    write_poi_csv(relevant, run.artifact("pois.csv"))
    run.log(f"ingest-poi: {len(records)} parsed, {skipped} skipped, {len(relevant)} activity-relevant")


def cmd_profiles(run: _Run) -> None:
    cfg = run.cfg
    grid = _active_grid(run)
    mapping = _mapping(cfg)
    pois = filter_relevant(parse_poi_csv(run.require("pois.csv")), mapping)
    counts = prof.count_pois(grid, pois)
    plan = prof.plan_aggregation(
        grid,
        counts,
        h=cfg.profiles_h,
        radius_step_m=cfg.profiles_radius_step_m,
        radius_cap_m=cfg.profiles_radius_cap_m,
    )
    matrix = prof.build_profiles(plan, counts, mapping, idf_corpus=cfg.profiles_idf_corpus)
    matrix.to_csv(run.artifact("profiles.csv"))
    run.log(
        f"profiles: {len(counts.occupied_cells())} occupied cells, "
        f"{len(matrix.empty_cells)} empty, {len(matrix.capped_cells)} capped, "
        f"{counts.dropped_outside} POIs outside grid"
    )


def cmd_cluster(run: _Run) -> None:
    cfg = run.cfg
    grid = _active_grid(run)
    matrix = prof.ActivityProfileMatrix.from_csv(run.require("profiles.csv"), grid)
    model = spec.spectral_cluster(
        matrix,
        k_nn=cfg.cluster_k_nn,
        k_override=cfg.cluster_k_override or None,
        seed=cfg.seed,
        k_max=cfg.cluster_k_max,
        row_normalize=cfg.cluster_row_normalize,
        knn_mode=cfg.cluster_knn_mode,
        restarts=cfg.cluster_restarts,
    )
    spec.write_cluster_csv(model, run.artifact("clusters.csv"))
    spec.write_spectrum_csv(model, run.artifact("spectrum.csv"))
    spec.write_clusters_geojson(model, grid, run.artifact("clusters.geojson"))
    sizes = np.bincount(model.label_array(grid.n_cells)[model.label_array(grid.n_cells) >= 0])
    run.log(f"cluster: k={model.k}, sizes={sizes.tolist()}")


def cmd_timelines(run: _Run) -> None:
    cfg = run.cfg
    grid = _active_grid(run)
    cdr_path = run.path("cdr.csv")
    if not os.path.exists(cdr_path):
        if cfg.paths_cdr:
            cdr_path = cfg.paths_cdr
        else:
            raise DataError("missing artifact cdr.csv; run synth or configure paths.cdr")
    records = tl.parse_cdr_csv(cdr_path)
    tensor = tl.build_tensor(
        records, grid, month=(cfg.time_year, cfg.time_month), utc_offset_minutes=cfg.time_utc_offset_minutes
    )
    normalized = tl.zscore(tensor)
    tl.write_normalized_csv(normalized, run.artifact("timeline_z.csv"), run.artifact("timeline_flags.csv"))
    feats = tl.timeline_features(normalized, mode=cfg.features_mode)
    cells = [c for c in range(grid.n_cells) if c not in normalized.flagged]
    _write_features(run.artifact("features.csv"), cells, feats[cells], tl.feature_names(cfg.features_mode))
    run.log(f"timelines: {len(records)} records, {len(normalized.flagged)} constant cells flagged")


def cmd_hopkins(run: _Run) -> None:
    cfg = run.cfg
    grid = _active_grid(run)
    matrix = prof.ActivityProfileMatrix.from_csv(run.require("profiles.csv"), grid)
    active = matrix.active_cells()
    _cells, feats, _names = _read_features(run.require("features.csv"))
    rows = []
    for scope, data in (("profiles", matrix.values[active]), ("timelines", feats)):
        m = cfg.stats_hopkins_m or max(1, data.shape[0] // 10)
        result = st.hopkins(data, m=m, seed=cfg.seed)
        rows.append(("hopkins", scope, result.H, cfg.seed))
    _stats_rows(run.artifact("stats_hopkins.csv"), rows)
    run.log("hopkins: " + ", ".join(f"{r[1]}={r[2]:.4f}" for r in rows))


def cmd_cca(run: _Run) -> None:
    cfg = run.cfg
    grid = _active_grid(run)
    matrix = prof.ActivityProfileMatrix.from_csv(run.require("profiles.csv"), grid)
    labels = spec.read_cluster_csv(run.require("clusters.csv"))
    cells, feats, _names = _read_features(run.require("features.csv"))
    feat_by_cell = {c: feats[i] for i, c in enumerate(cells)}
    shared = [c for c in sorted(labels) if c in feat_by_cell]
    if not shared:
        raise DataError("no cells shared between clusters.csv and features.csv")
    x = matrix.values[shared]
    y = np.array([feat_by_cell[c] for c in shared])
    lab = np.array([labels[c] for c in shared])
    ridge = None if cfg.stats_cca_ridge < 0 else cfg.stats_cca_ridge
    rows: list[tuple[str, str, float, int]] = []
    global_result = st.cca(x, y, ridge=ridge)
    for j, rho in enumerate(global_result.correlations, start=1):
        rows.append((f"cca_rho_{j}", "all", float(rho), cfg.seed))
    for cluster, result in st.cca_by_cluster(x, y, lab, ridge=ridge).items():
        rows.append(("cca_rho_1", f"S{cluster + 1}", float(result.correlations[0]), cfg.seed))
    rows.append(("distance_correlation", "all", st.distance_correlation(x, y, lab), cfg.seed))
    _stats_rows(run.artifact("stats_cca.csv"), rows)
    run.log(f"cca: rho_1={global_result.correlations[0]:.4f}, distance r={rows[-1][2]:.4f}")


TABLE1_SPECS: list[tuple[str, str | None, dict]] = [
    ("Random classifier", "random", {}),
    ("K-NN (k=5, euclidean dist)", "knn", {"knn_k": 5}),
    ("K-NN (k=10, euclidean dist)", "knn", {"knn_k": 10}),
    ("Decision Tree", "tree", {}),
    ("Random Forest", "forest", {}),
]


def cmd_classify(run: _Run) -> None:
    cfg = run.cfg
    data, _cells = _aligned_dataset(run)
    folds = cfg.classify_folds
    table_rows = []
    primary_cv: cls.CvResult | None = None
    for display, kind, overrides in TABLE1_SPECS:
        spec_obj = _classifier_spec(cfg, kind)
        for key, value in overrides.items():
            spec_obj = cls.ClassifierSpec(**{**spec_obj.__dict__, key: value})
        cv = cls.cross_validate(data, spec_obj, folds=folds, seed=cfg.seed)
        acc = float((cv.oof_pred == data.y).mean())
        table_rows.append((display, cv.cv_error, acc))
        if kind == cfg.classify_model and primary_cv is None:
            primary_cv = cv
    assert primary_cv is not None
    report = cls.evaluate(primary_cv.oof_pred, data.y, scores=primary_cv.oof_scores, class_names=data.class_names)
    report.cv_error = primary_cv.cv_error
    with open(run.artifact("table1.csv"), "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["algorithm", "cv_error", "overall_acc"])
        for display, cv_error, acc in table_rows:
            w.writerow([display, f"{cv_error:.4f}", f"{acc:.4f}"])
    _write_eval_artifacts(run, report)
    run.log("classify: " + "; ".join(f"{d}: acc={a:.3f}" for d, _e, a in table_rows))


def _write_eval_artifacts(run: _Run, report: cls.EvalReport) -> None:
    k = len(report.class_names)
    with open(run.artifact("confusion.csv"), "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["truth\\pred", *report.class_names])
        for i in range(k):
            w.writerow([report.class_names[i], *[f"{v:.6f}" for v in report.confusion[i]]])
    with open(run.artifact("per_class.csv"), "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "precision", "recall", "f_measure", "support"])
        for name, m in zip(report.class_names, report.per_class):
            fmt = lambda v: "na" if v is None else f"{v:.6f}"
            w.writerow([name, fmt(m.precision), fmt(m.recall), fmt(m.f_measure), m.support])
    with open(run.artifact("roc.csv"), "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "fpr", "tpr", "threshold"])
        for c in sorted(report.roc):
            for fpr, tpr, threshold in report.roc[c]:
                w.writerow([report.class_names[c], f"{fpr:.6f}", f"{tpr:.6f}", f"{threshold:.6g}"])


def cmd_landuse_compare(run: _Run) -> None:
    cfg = run.cfg
    if not cfg.paths_landuse:
        raise ConfigError("paths.landuse is not configured")
    grid = _active_grid(run)
    labels = spec.read_cluster_csv(run.require("clusters.csv"))
    cells, feats, _names = _read_features(run.require("features.csv"))
    land = lu.landuse_labels(grid, cfg.paths_landuse)

    shared = [c for c in sorted(labels) if land.get(c, lu.UNKNOWN) != lu.UNKNOWN]
    if not shared:
        raise DataError("no clustered cells carry a land-use label")
    land_classes = sorted(set(land[c] for c in shared))
    land_index = {name: i for i, name in enumerate(land_classes)}
    k = max(labels.values()) + 1
    cluster_names = [f"S{i + 1}" for i in range(k)]

    # cross-tabulation: fraction of each land-use class falling in each cluster
    with open(run.artifact("landuse_crosstab.csv"), "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["landuse", *cluster_names, "n_cells"])
        for name in land_classes:
            members = [c for c in shared if land[c] == name]
            hist = np.bincount([labels[c] for c in members], minlength=k) / len(members)
            w.writerow([name, *[f"{v:.6f}" for v in hist], len(members)])

    feat_by_cell = {c: feats[i] for i, c in enumerate(cells)}
    spec_obj = _classifier_spec(cfg)
    rows = []
    # direction 1: one-hot land-use -> cluster label
    both = [c for c in shared if c in feat_by_cell]
    if len(both) < cfg.classify_folds:
        raise DataError("too few labeled cells for land-use comparison")
    x_land = np.eye(len(land_classes))[[land_index[land[c]] for c in both]]
    y_cluster = np.array([labels[c] for c in both])
    cv = cls.cross_validate(cls.Dataset(x_land, y_cluster, cluster_names), spec_obj, cfg.classify_folds, cfg.seed)
    rows.append(("cluster_from_landuse", cv.cv_error, float((cv.oof_pred == y_cluster).mean())))
    # direction 2: timeline features -> land-use label
    x_time = np.array([feat_by_cell[c] for c in both])
    y_land = np.array([land_index[land[c]] for c in both])
    cv = cls.cross_validate(cls.Dataset(x_time, y_land, land_classes), spec_obj, cfg.classify_folds, cfg.seed)
    rows.append(("landuse_from_timeline", cv.cv_error, float((cv.oof_pred == y_land).mean())))
    # reference: timeline features -> cluster label, on the same cells
    x_ref = x_time
    cv = cls.cross_validate(cls.Dataset(x_ref, y_cluster, cluster_names), spec_obj, cfg.classify_folds, cfg.seed)
    rows.append(("cluster_from_timeline", cv.cv_error, float((cv.oof_pred == y_cluster).mean())))
    with open(run.artifact("landuse_eval.csv"), "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["direction", "cv_error", "overall_acc"])
        for direction, cv_error, acc in rows:
            w.writerow([direction, f"{cv_error:.4f}", f"{acc:.4f}"])
    run.log("landuse-compare: " + "; ".join(f"{d}: acc={a:.3f}" for d, _e, a in rows))


def cmd_report(run: _Run) -> None:
    lines = ["urbanprof run report", "====================", ""]
    table1 = run.require("table1.csv")
    with open(table1, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    lines.append("Predictive models (10-fold cross validation)")
    lines.append(f"{'Algorithm':<32} {'CV error':>9} {'Overall ACC':>12}")
    for row in rows[1:]:
        lines.append(f"{row[0]:<32} {float(row[1]):>9.4f} {100 * float(row[2]):>11.2f}%")
    lines.append("")
    with open(run.require("confusion.csv"), "r", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    names = rows[0][1:]
    lines.append("Confusion matrix (fractions; rows = true class)")
    lines.append(" " * 6 + "".join(f"{n:>9}" for n in names))
    for row in rows[1:]:
        lines.append(f"{row[0]:<6}" + "".join(f"{100 * float(v):>8.2f}%" for v in row[1:]))
    lines.append("")
    with open(run.require("per_class.csv"), "r", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    lines.append(f"{'Class':<8} {'Prec.':>8} {'Recall':>8} {'F-measure':>10}")
    for row in rows[1:]:
        vals = [("na" if v == "na" else f"{100 * float(v):.2f}%") for v in row[1:4]]
        lines.append(f"{row[0]:<8} {vals[0]:>8} {vals[1]:>8} {vals[2]:>10}")
    lines.append("")
    for stats_file in ("stats_hopkins.csv", "stats_cca.csv"):
        p = run.path(stats_file)
        if os.path.exists(p):
            with open(p, "r", encoding="utf-8", newline="") as f:
                rows = list(csv.reader(f))
            lines.append(f"Statistics ({stats_file})")
            for row in rows[1:]:
                lines.append(f"  {row[0]:<24} {row[1]:<12} {float(row[2]):.4f}")
            lines.append("")
    with open(run.artifact("report.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    run.log("report: written")


HANDLERS = {
    "synth": cmd_synth,
    "ingest-poi": cmd_ingest_poi,
    "profiles": cmd_profiles,
    "cluster": cmd_cluster,
    "timelines": cmd_timelines,
    "hopkins": cmd_hopkins,
    "cca": cmd_cca,
    "classify": cmd_classify,
    "landuse-compare": cmd_landuse_compare,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urbanprof",
        description="Characterize grid cells by POI activity profiles and validate them against mobile-phone timelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="path to key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default=None, help="override the configured output directory")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        run = _Run(cfg, args.command, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    try:
        HANDLERS[args.command](run)
        run.finish()
    except ConfigError as exc:
        run.cleanup_partial()
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        run.cleanup_partial()
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        run.cleanup_partial()
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    run.log(f"{args.command}: done in {time.perf_counter() - start:.2f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
