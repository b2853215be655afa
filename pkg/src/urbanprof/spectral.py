"""Spectral clustering of cell activity profiles.

Pipeline: cosine kNN similarity graph -> symmetric normalized Laplacian
I - D^{-1/2} W D^{-1/2} -> ascending eigenpairs (in-repo solver) -> cluster
count from the eigengap heuristic (largest consecutive eigenvalue gap) ->
row-normalized spectral embedding -> seeded k-means.

Flagged (empty) and all-zero profile rows are excluded before graph
construction; labels are reported only for the active cells.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .eigen import LaplacianSpectrum, sym_eig
from .errors import DataError, NumericError
from .grid import cell_polygon
from .profiles import ActivityProfileMatrix


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Standard cosine; raises on zero vectors (callers must exclude empty cells)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DataError("cosine similarity undefined for zero vectors")
    return float(np.dot(u, v) / (nu * nv))


@dataclass
class SimilarityGraph:
    """kNN cosine similarity graph over the active cells."""

    weights: np.ndarray  # (n_active, n_active), symmetric, zero diagonal
    degrees: np.ndarray  # row sums of weights
    cells: list[int]  # active cell ids, row order

    def __post_init__(self) -> None:
        if not np.allclose(self.weights, self.weights.T):
            raise DataError("similarity graph weights must be symmetric")


def knn_graph(profiles: ActivityProfileMatrix, k_nn: int, mode: str = "or") -> SimilarityGraph:
    """Keep an edge when either endpoint ranks the other among its k_nn most
    similar cells (mode="or"); mode="and" requires both.  Neighbor ties break
    toward the smaller cell id.
    """
    if k_nn < 1:
        raise DataError("k_nn must be >= 1")
    if mode not in ("or", "and"):
        raise DataError(f"knn mode must be 'or' or 'and', got {mode!r}")
    cells = profiles.active_cells()
    n = len(cells)
    if k_nn >= n:
        raise DataError(f"k_nn={k_nn} needs at least {k_nn + 1} active cells, have {n}")
    x = profiles.values[cells]
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    sim = np.clip(xn @ xn.T, -1.0, 1.0)
    np.fill_diagonal(sim, -np.inf)  # self never a neighbor
    # argsort descending by similarity; stable, so ties go to the lower index
    order = np.argsort(-sim, axis=1, kind="stable")
    chosen = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), k_nn)
    chosen[rows, order[:, :k_nn].ravel()] = True
    keep = (chosen | chosen.T) if mode == "or" else (chosen & chosen.T)
    np.fill_diagonal(sim, 0.0)
    weights = np.where(keep, np.clip(sim, 0.0, 1.0), 0.0)
    np.fill_diagonal(weights, 0.0)
    return SimilarityGraph(weights=weights, degrees=weights.sum(axis=1), cells=cells)


def laplacian(graph: SimilarityGraph, normalized: bool = True) -> np.ndarray:
    """Unnormalized D - W, or symmetric normalized I - D^{-1/2} W D^{-1/2}."""
    w = graph.weights
    d = graph.degrees
    if not normalized:
        return np.diag(d) - w
    if np.any(d <= 0):
        isolated = [graph.cells[i] for i in np.nonzero(d <= 0)[0]]
        raise NumericError(f"normalized Laplacian undefined: zero-degree cells {isolated[:5]}")
    inv_sqrt = 1.0 / np.sqrt(d)
    return np.eye(len(d)) - (inv_sqrt[:, None] * w) * inv_sqrt[None, :]


def eigengap_k(eigenvalues: np.ndarray, k_max: int = 20) -> int:
    """k = argmax over i in [1, k_max] of (lambda_{i+1} - lambda_i), eigenvalues
    ascending and 1-indexed; ties break toward smaller i; k is clamped to >= 2.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size < k_max + 1:
        raise DataError(f"need at least k_max+1={k_max + 1} eigenvalues, got {lam.size}")
    gaps = np.diff(lam[: k_max + 1])
    k = int(np.argmax(gaps)) + 1  # first occurrence wins ties
    if k < 2:
        warnings.warn("eigengap heuristic chose k=1; clamping to k=2", stacklevel=2)
        k = 2
    return k


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total == 0.0:
            centroids[j:] = points[int(rng.integers(n))]
            break
        probs = d2 / total
        idx = int(rng.choice(n, p=probs))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, float]:
    labels = np.full(points.shape[0], -1)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)  # ties -> smaller centroid index
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(centroids.shape[0]):
            mask = labels == j
            if mask.any():
                centroids[j] = points[mask].mean(axis=0)
            else:
                # re-seed an empty cluster on the point farthest from its centroid
                worst = int(np.argmax(d2[np.arange(len(labels)), labels]))
                centroids[j] = points[worst]
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(labels)), labels].sum())
    return labels, centroids, inertia


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 42,
    restarts: int = 8,
    max_iter: int = 300,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Seeded k-means++ / Lloyd; returns the best (labels, centroids, inertia)
    over restarts.  Deterministic for a given seed.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise DataError("kmeans expects an n x r matrix")
    n = points.shape[0]
    if k > n:
        raise DataError(f"k={k} exceeds the number of points {n}")
    n_distinct = np.unique(points, axis=0).shape[0]
    if k > n_distinct:
        raise DataError(f"k={k} exceeds the number of distinct points {n_distinct}")
    best: tuple[np.ndarray, np.ndarray, float] | None = None
    rng = np.random.default_rng(seed)
    for _ in range(max(1, restarts)):
        init = _kmeans_pp_init(points, k, rng)
        labels, centroids, inertia = _lloyd(points, init.copy(), max_iter)
        if best is None or inertia < best[2]:
            best = (labels, centroids, inertia)
    assert best is not None
    return best


@dataclass
class ClusterModel:
    """Result of the spectral pipeline: labels over active cells only."""

    k: int
    labels: dict[int, int]  # cell id -> cluster index in [0, k)
    centroids: np.ndarray  # (k, k) in embedding space
    eigenvalues: np.ndarray  # ascending Laplacian spectrum
    eigengaps: np.ndarray  # consecutive differences of eigenvalues

    def label_array(self, n_cells: int, missing: int = -1) -> np.ndarray:
        out = np.full(n_cells, missing)
        for cell, lab in self.labels.items():
            out[cell] = lab
        return out


def spectral_cluster(
    profiles: ActivityProfileMatrix,
    k_nn: int = 10,
    k_override: int | None = None,
    seed: int = 42,
    k_max: int = 20,
    row_normalize: bool = True,
    knn_mode: str = "or",
    restarts: int = 8,
) -> ClusterModel:
    """Full profile-clustering pipeline; k comes from the eigengap heuristic
    unless k_override pins it (the reference configuration uses k=6).
    """
    graph = knn_graph(profiles, k_nn, mode=knn_mode)
    n = len(graph.cells)
    lap = laplacian(graph, normalized=True)
    k_cap = min(k_max, n - 1)
    spectrum: LaplacianSpectrum = sym_eig(lap, r=min(n, max(k_override or 2, k_cap + 1)))
    if k_override is not None:
        if not (2 <= k_override <= n):
            raise DataError(f"k_override={k_override} outside [2, {n}]")
        k = k_override
    else:
        k = eigengap_k(spectrum.eigenvalues, k_cap)
    embedding = spectrum.eigenvectors[:, :k].copy()
    if row_normalize:
        norms = np.linalg.norm(embedding, axis=1, keepdims=True)
        embedding = np.where(norms > 0, embedding / np.where(norms == 0, 1.0, norms), embedding)
    labels, centroids, _ = kmeans(embedding, k, seed=seed, restarts=restarts)
    return ClusterModel(
        k=k,
        labels={cell: int(lab) for cell, lab in zip(graph.cells, labels)},
        centroids=centroids,
        eigenvalues=spectrum.eigenvalues,
        eigengaps=np.diff(spectrum.eigenvalues),
    )


def adjusted_rand_index(a: np.ndarray, b: np.ndarray) -> float:
    """Permutation-invariant agreement between two labelings (ARI)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DataError("label arrays must have equal length")
    n = a.size
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x: np.ndarray) -> float:
        return float((x * (x - 1) // 2).sum())

    sum_cells = comb2(table)
    sum_rows = comb2(table.sum(axis=1))
    sum_cols = comb2(table.sum(axis=0))
    total = n * (n - 1) / 2
    expected = sum_rows * sum_cols / total
    max_index = (sum_rows + sum_cols) / 2
    if max_index == expected:
        return 1.0
    return (sum_cells - expected) / (max_index - expected)


def write_cluster_csv(model: ClusterModel, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cell_id", "cluster"])
        for cell in sorted(model.labels):
            w.writerow([cell, model.labels[cell]])


def read_cluster_csv(path: str) -> dict[int, int]:
    labels: dict[int, int] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["cell_id", "cluster"]:
            raise DataError(f"cluster CSV header mismatch in {path}")
        for row in reader:
            if row:
                labels[int(row[0])] = int(row[1])
    return labels


def write_spectrum_csv(model: ClusterModel, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["i", "lambda", "gap"])
        lam = model.eigenvalues
        for i, value in enumerate(lam, start=1):
            gap = lam[i] - value if i < lam.size else ""
            w.writerow([i, f"{value:.12g}", f"{gap:.12g}" if gap != "" else ""])


def clusters_geojson(model: ClusterModel, grid) -> dict:
    """FeatureCollection with one polygon per labeled cell (property `cluster`)."""
    features = []
    for cell in sorted(model.labels):
        ring = [[round(lon, 7), round(lat, 7)] for lon, lat in cell_polygon(grid, cell)]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"cell_id": cell, "cluster": model.labels[cell]},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def write_clusters_geojson(model: ClusterModel, grid, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(clusters_geojson(model, grid), f, separators=(",", ":"), sort_keys=True)
        f.write("\n")
