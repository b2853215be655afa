"""Statistical validation: Hopkins tendency, CCA, cluster-distance correlation.

Orientation convention for Hopkins here: the numerator sums nearest-neighbor
distances of *sampled real points* (to the rest of the data), so strongly
clustered data drives H toward 0 and uniform data sits near 0.5.  Textbook
presentations often use the opposite orientation; this one matches reading
small values as "highly clustered".
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError


@dataclass(frozen=True)
class HopkinsResult:
    H: float
    m: int
    seed: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.H <= 1.0):
            raise NumericError(f"Hopkins statistic {self.H} outside [0, 1]")


def hopkins(data: np.ndarray, m: int | None = None, seed: int = 42) -> HopkinsResult:
    """Clustering tendency of an n x q point set; H -> 0 means clustered.

    Samples m real points (without replacement) and m uniform points in the
    data bounding box; H = sum(real NN dists) / (sum(uniform NN dists) +
    sum(real NN dists)).  Deterministic given (data, m, seed).
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise DataError("hopkins expects an n x q matrix")
    n, q = x.shape
    if n < 2:
        raise DataError("hopkins needs at least 2 points")
    if m is None:
        m = max(1, n // 10)
    if not (1 <= m <= n):
        raise DataError(f"sample size m={m} outside [1, {n}]")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    if np.all(hi == lo):
        raise DataError("degenerate bounding box: zero extent in every dimension")
    rng = np.random.default_rng(seed)
    sample_idx = rng.choice(n, size=m, replace=False)
    uniform = rng.uniform(lo, hi, size=(m, q))

    # NN distance of each uniform probe to the data
    du = np.sqrt(((uniform[:, None, :] - x[None, :, :]) ** 2).sum(axis=2))
    u = du.min(axis=1)
    # NN distance of each sampled real point to the data minus itself
    dw = np.sqrt(((x[sample_idx][:, None, :] - x[None, :, :]) ** 2).sum(axis=2))
    dw[np.arange(m), sample_idx] = np.inf
    w = dw.min(axis=1)

    denom = u.sum() + w.sum()
    if denom == 0.0:
        raise NumericError("hopkins denominator is zero (all distances vanish)")
    return HopkinsResult(H=float(w.sum() / denom), m=m, seed=seed)


@dataclass
class CcaResult:
    """Canonical correlations (non-increasing, clipped to [0, 1]) and the
    projection matrices for both sides."""

    correlations: np.ndarray  # shape (r,)
    x_weights: np.ndarray  # (q1, r)
    y_weights: np.ndarray  # (q2, r)
    clip_amount: float  # how far raw singular values exceeded 1 before clipping

    def __post_init__(self) -> None:
        c = self.correlations
        if c.size and (np.any(c < 0) or np.any(c > 1) or np.any(np.diff(c) > 1e-12)):
            raise NumericError("canonical correlations must be non-increasing in [0, 1]")


def _whiten(cov: np.ndarray, ridge: float) -> np.ndarray:
    """Inverse square root of a covariance block (+ ridge * I)."""
    cov = cov + ridge * np.eye(cov.shape[0])
    evals, evecs = np.linalg.eigh(cov)
    tol = 1e-12 * max(1.0, float(evals.max(initial=0.0)))
    if np.any(evals <= tol):
        raise NumericError("singular covariance block; pass ridge > 0")
    return evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T


def cca(x: np.ndarray, y: np.ndarray, ridge: float | None = None) -> CcaResult:
    """Canonical correlation analysis by whitening both covariance blocks and
    taking singular values of the cross-block.

    ridge=None uses 1e-6 * trace/q per block; ridge=0 demands full-rank blocks.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DataError("cca expects two matrices with equal row counts")
    n = x.shape[0]
    if n < 2:
        raise DataError("cca needs at least 2 rows")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    cxx = xc.T @ xc / (n - 1)
    cyy = yc.T @ yc / (n - 1)
    cxy = xc.T @ yc / (n - 1)
    if ridge is None:
        ridge_x = 1e-6 * float(np.trace(cxx)) / cxx.shape[0]
        ridge_y = 1e-6 * float(np.trace(cyy)) / cyy.shape[0]
    else:
        ridge_x = ridge_y = float(ridge)
    wx = _whiten(cxx, ridge_x)
    wy = _whiten(cyy, ridge_y)
    u, s, vt = np.linalg.svd(wx @ cxy @ wy)
    r = min(x.shape[1], y.shape[1])
    clip = float(max(0.0, s.max(initial=0.0) - 1.0))
    rho = np.clip(s[:r], 0.0, 1.0)
    return CcaResult(
        correlations=rho,
        x_weights=wx @ u[:, :r],
        y_weights=wy @ vt[:r].T,
        clip_amount=clip,
    )


def cca_by_cluster(
    x: np.ndarray,
    y: np.ndarray,
    labels: np.ndarray,
    ridge: float | None = None,
) -> dict[int, CcaResult]:
    """Per-cluster CCA; clusters with too few rows are skipped with a warning."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    labels = np.asarray(labels)
    if labels.shape[0] != x.shape[0]:
        raise DataError("labels length must match the row count")
    min_rows = min(x.shape[1], y.shape[1]) + 1
    out: dict[int, CcaResult] = {}
    for cluster in sorted(set(int(v) for v in labels)):
        mask = labels == cluster
        rows = int(mask.sum())
        if rows <= min_rows:
            warnings.warn(f"cluster {cluster}: only {rows} rows, skipping CCA", stacklevel=2)
            continue
        out[cluster] = cca(x[mask], y[mask], ridge=ridge)
    return out


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size != b.size or a.size < 2:
        raise DataError("pearson needs two equal-length vectors of size >= 2")
    sa = a.std()
    sb = b.std()
    if sa == 0.0 or sb == 0.0:
        raise NumericError("pearson undefined for constant inputs")
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


def distance_correlation(
    profiles: np.ndarray,
    timelines: np.ndarray,
    labels: np.ndarray,
) -> float:
    """Pearson correlation between inter-cluster-mean distances in profile
    space and in timeline space, over all cluster pairs (k >= 3 required).
    """
    profiles = np.asarray(profiles, dtype=float)
    timelines = np.asarray(timelines, dtype=float)
    labels = np.asarray(labels)
    if not (profiles.shape[0] == timelines.shape[0] == labels.shape[0]):
        raise DataError("profiles, timelines, and labels must share row count")
    clusters = sorted(set(int(v) for v in labels))
    if len(clusters) < 3:
        raise DataError("distance correlation needs at least 3 clusters")
    mu_a = np.array([profiles[labels == c].mean(axis=0) for c in clusters])
    mu_t = np.array([timelines[labels == c].mean(axis=0) for c in clusters])
    da, dt = [], []
    for i in range(len(clusters)):
        for j in range(i + 1, len(clusters)):
            da.append(np.linalg.norm(mu_a[i] - mu_a[j]))
            dt.append(np.linalg.norm(mu_t[i] - mu_t[j]))
    return pearson(np.array(da), np.array(dt))
