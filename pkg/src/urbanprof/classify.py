"""Supervised validation: kNN, CART decision tree, random forest, k-fold CV,
and the metric report (confusion matrix, precision/recall/F, one-vs-rest ROC).

All classifiers expose predict_proba(X) -> (n, k) class-score rows; argmax
with smaller-class-index tie-break gives the label.  Every stochastic stage
takes an explicit seed.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

THREADS_ENV = "URBANPROF_THREADS"


def worker_count() -> int:
    """Worker cap from the URBANPROF_THREADS env var (>= 1; default 1)."""
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class Dataset:
    """Feature matrix with small-integer class labels."""

    X: np.ndarray
    y: np.ndarray
    class_names: list[str]

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise DataError("X must be n x q and y length n")
        if self.X.shape[0] == 0:
            raise DataError("dataset is empty")
        if self.y.min() < 0 or self.y.max() >= len(self.class_names):
            raise DataError("labels must index into class_names")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.class_names)


# ---------------------------------------------------------------------------
# k nearest neighbors


class KnnModel:
    def __init__(self, train: Dataset, k: int):
        if train.X.shape[0] == 0:
            raise DataError("empty training set")
        if not (1 <= k <= train.X.shape[0]):
            raise DataError(f"k={k} outside [1, {train.X.shape[0]}]")
        self.train = train
        self.k = k

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = np.sqrt(((x[:, None, :] - self.train.X[None, :, :]) ** 2).sum(axis=2))
        # stable argsort: equal distances resolve to the lower training row
        nearest = np.argsort(d, axis=1, kind="stable")[:, : self.k]
        votes = np.zeros((x.shape[0], self.train.n_classes))
        for c in range(self.train.n_classes):
            votes[:, c] = (self.train.y[nearest] == c).sum(axis=1)
        return votes / self.k

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)


def knn_classify(train: Dataset, x: np.ndarray, k: int) -> tuple[int, np.ndarray]:
    """Majority vote among the k Euclidean nearest neighbors of one query.

    Returns (label, per-class vote fractions).  Distance ties break toward
    the lower training row; vote ties toward the smaller class index.
    """
    scores = KnnModel(train, k).predict_proba(np.asarray(x, dtype=float)[None, :])[0]
    return int(np.argmax(scores)), scores


# ---------------------------------------------------------------------------
# CART decision tree


@dataclass
class _Node:
    distribution: np.ndarray  # class fractions at this node
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _best_split(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    features: np.ndarray,
    min_leaf: int,
) -> tuple[int, float, float] | None:
    """Best (feature, threshold, impurity_decrease) over candidate features;
    split points are midpoints of consecutive distinct sorted values.
    """
    n = y.size
    onehot = np.eye(n_classes)[y]
    parent_counts = onehot.sum(axis=0)
    parent_gini = _gini(parent_counts)
    best: tuple[int, float, float] | None = None
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        left_counts = np.cumsum(onehot[order], axis=0)  # counts after i+1 samples
        # split between position i-1 and i (left size i), for i in 1..n-1
        sizes_l = np.arange(1, n)
        valid = (xs[1:] != xs[:-1]) & (sizes_l >= min_leaf) & ((n - sizes_l) >= min_leaf)
        if not valid.any():
            continue
        lc = left_counts[:-1]
        rc = parent_counts - lc
        gini_l = 1.0 - ((lc / sizes_l[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - ((rc / (n - sizes_l)[:, None]) ** 2).sum(axis=1)
        weighted = (sizes_l * gini_l + (n - sizes_l) * gini_r) / n
        weighted = np.where(valid, weighted, np.inf)
        i = int(np.argmin(weighted))
        decrease = parent_gini - weighted[i]
        if decrease <= 1e-15:
            continue
        threshold = (xs[i] + xs[i + 1]) / 2.0
        if best is None or decrease > best[2]:
            best = (int(f), float(threshold), float(decrease))
    return best


class TreeModel:
    """Binary CART with axis-aligned thresholds minimizing Gini impurity."""

    def __init__(self, root: _Node, n_classes: int):
        self.root = root
        self.n_classes = n_classes

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros((x.shape[0], self.n_classes))
        # route index blocks down the tree instead of per-row descent
        stack = [(self.root, np.arange(x.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if idx.size == 0:
                continue
            if node.is_leaf:
                out[idx] = node.distribution
                continue
            go_left = x[idx, node.feature] <= node.threshold
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)

    def depth(self) -> int:
        def walk(node: _Node) -> int:
            if node.is_leaf:
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)


def _grow(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    depth: int,
    max_depth: int | None,
    min_leaf: int,
    mtry: int | None,
    rng: np.random.Generator | None,
) -> _Node:
    counts = np.bincount(y, minlength=n_classes).astype(float)
    node = _Node(distribution=counts / counts.sum())
    if (max_depth is not None and depth >= max_depth) or np.unique(y).size == 1 or y.size < 2 * min_leaf:
        return node
    q = x.shape[1]
    if mtry is not None and rng is not None and mtry < q:
        features = np.sort(rng.choice(q, size=mtry, replace=False))
    else:
        features = np.arange(q)
    split = _best_split(x, y, n_classes, features, min_leaf)
    if split is None:
        return node
    f, threshold, _ = split
    mask = x[:, f] <= threshold
    node.feature = f
    node.threshold = threshold
    node.left = _grow(x[mask], y[mask], n_classes, depth + 1, max_depth, min_leaf, mtry, rng)
    node.right = _grow(x[~mask], y[~mask], n_classes, depth + 1, max_depth, min_leaf, mtry, rng)
    return node


def decision_tree_fit(
    train: Dataset,
    max_depth: int | None = None,
    min_leaf: int = 1,
) -> TreeModel:
    if min_leaf < 1:
        raise DataError("min_leaf must be >= 1")
    root = _grow(train.X, train.y, train.n_classes, 0, max_depth, min_leaf, None, None)
    return TreeModel(root, train.n_classes)


# ---------------------------------------------------------------------------
# random forest


class ForestModel:
    def __init__(self, trees: list[TreeModel], n_classes: int):
        self.trees = trees
        self.n_classes = n_classes

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        acc = np.zeros((x.shape[0], self.n_classes))
        for tree in self.trees:  # fixed order keeps aggregation deterministic
            acc += tree.predict_proba(x)
        return acc / len(self.trees)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)


def random_forest_fit(
    train: Dataset,
    n_trees: int = 100,
    max_depth: int | None = None,
    mtry: int | None = None,
    seed: int = 42,
    bootstrap: bool = True,
) -> ForestModel:
    """Bagged CART ensemble; per-tree seeds are (seed + tree index), so the
    model is reproducible regardless of the worker count.
    """
    if n_trees < 1:
        raise DataError("n_trees must be >= 1")
    q = train.X.shape[1]
    if mtry is None:
        mtry = int(np.ceil(np.sqrt(q)))
    if not (1 <= mtry <= q):
        raise DataError(f"mtry={mtry} outside [1, {q}]")
    n = train.X.shape[0]

    def build(t: int) -> TreeModel:
        rng = np.random.default_rng(seed + t)
        if bootstrap:
            idx = rng.integers(0, n, size=n)
            xs, ys = train.X[idx], train.y[idx]
        else:
            xs, ys = train.X, train.y
        root = _grow(xs, ys, train.n_classes, 0, max_depth, 1, mtry if mtry < q else None, rng)
        return TreeModel(root, train.n_classes)

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(build, range(n_trees)))
    else:
        trees = [build(t) for t in range(n_trees)]
    return ForestModel(trees, train.n_classes)


# ---------------------------------------------------------------------------
# model specs and cross-validation


@dataclass(frozen=True)
class ClassifierSpec:
    """Named classifier + hyperparameters, as configured in the pipeline."""

    kind: str  # knn | tree | forest | random
    knn_k: int = 5
    n_trees: int = 100
    max_depth: int | None = None
    mtry: int | None = None
    min_leaf: int = 1
    bootstrap: bool = True

    def display_name(self) -> str:
        if self.kind == "knn":
            return f"K-NN (k={self.knn_k}, euclidean dist)"
        if self.kind == "tree":
            return "Decision Tree"
        if self.kind == "forest":
            return "Random Forest"
        if self.kind == "random":
            return "Random classifier"
        return self.kind


class _RandomModel:
    def __init__(self, n_classes: int, seed: int):
        self.n_classes = n_classes
        self.rng = np.random.default_rng(seed)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        labels = self.rng.integers(0, self.n_classes, size=x.shape[0])
        return np.eye(self.n_classes)[labels]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)


def fit_model(spec: ClassifierSpec, train: Dataset, seed: int = 42):
    if spec.kind == "knn":
        return KnnModel(train, spec.knn_k)
    if spec.kind == "tree":
        return decision_tree_fit(train, max_depth=spec.max_depth, min_leaf=spec.min_leaf)
    if spec.kind == "forest":
        return random_forest_fit(
            train,
            n_trees=spec.n_trees,
            max_depth=spec.max_depth,
            mtry=spec.mtry,
            seed=seed,
            bootstrap=spec.bootstrap,
        )
    if spec.kind == "random":
        return _RandomModel(train.n_classes, seed)
    raise DataError(f"unknown classifier kind {spec.kind!r}")


@dataclass
class CvResult:
    cv_error: float
    fold_accuracies: list[float]
    oof_pred: np.ndarray  # out-of-fold predicted labels, aligned with data rows
    oof_scores: np.ndarray  # out-of-fold class scores


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold index per row; per-class round-robin after a seeded shuffle keeps
    every fold's class mix within +-1 of the global mix.  Falls back to a
    plain shuffle (with a warning) when a class is smaller than `folds`.
    """
    y = np.asarray(y)
    n = y.size
    if folds < 2:
        raise DataError("folds must be >= 2")
    if folds > n:
        raise DataError(f"folds={folds} exceeds {n} rows")
    rng = np.random.default_rng(seed)
    assignment = np.zeros(n, dtype=int)
    class_sizes = np.bincount(y)
    if class_sizes[class_sizes > 0].min() < folds:
        warnings.warn(
            f"smallest class has fewer than {folds} rows; using unstratified folds",
            stacklevel=2,
        )
        perm = rng.permutation(n)
        assignment[perm] = np.arange(n) % folds
        return assignment
    for c in np.unique(y):
        idx = np.nonzero(y == c)[0]
        perm = rng.permutation(idx.size)
        assignment[idx[perm]] = np.arange(idx.size) % folds
    return assignment


def cross_validate(data: Dataset, spec: ClassifierSpec, folds: int = 10, seed: int = 42) -> CvResult:
    """Stratified k-fold CV; cv_error is the mean misclassification fraction
    over folds, and out-of-fold predictions/scores cover every row once.
    """
    assignment = stratified_folds(data.y, folds, seed)
    oof_pred = np.full(data.y.size, -1)
    oof_scores = np.zeros((data.y.size, data.n_classes))
    fold_acc = []
    for f in range(folds):
        test = assignment == f
        train = ~test
        model = fit_model(spec, data.subset(np.nonzero(train)[0]), seed=seed + f)
        scores = model.predict_proba(data.X[test])
        pred = np.argmax(scores, axis=1)
        oof_pred[test] = pred
        oof_scores[test] = scores
        fold_acc.append(float((pred == data.y[test]).mean()))
    return CvResult(
        cv_error=float(1.0 - np.mean(fold_acc)),
        fold_accuracies=fold_acc,
        oof_pred=oof_pred,
        oof_scores=oof_scores,
    )


# ---------------------------------------------------------------------------
# evaluation report


@dataclass
class ClassMetrics:
    precision: float | None
    recall: float | None
    f_measure: float | None
    support: int


@dataclass
class EvalReport:
    """Confusion fractions, per-class metrics, and one-vs-rest ROC curves."""

    class_names: list[str]
    confusion: np.ndarray  # (k, k) fractions, rows = truth, cols = predicted
    overall_acc: float
    per_class: list[ClassMetrics]
    roc: dict[int, list[tuple[float, float, float]]] = field(default_factory=dict)
    auc: dict[int, float] = field(default_factory=dict)
    cv_error: float | None = None

    def macro_f(self) -> float | None:
        vals = [m.f_measure for m in self.per_class if m.f_measure is not None]
        return float(np.mean(vals)) if vals else None


def _roc_curve(truth_pos: np.ndarray, scores: np.ndarray) -> list[tuple[float, float, float]]:
    """One-vs-rest ROC by threshold sweep over distinct scores (descending)."""
    pos = int(truth_pos.sum())
    neg = truth_pos.size - pos
    order = np.argsort(-scores, kind="stable")
    sorted_pos = truth_pos[order]
    sorted_scores = scores[order]
    points = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    i = 0
    n = truth_pos.size
    while i < n:
        threshold = sorted_scores[i]
        while i < n and sorted_scores[i] == threshold:
            if sorted_pos[i]:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((fp / neg, tp / pos, float(threshold)))
    return points


def _auc(points: list[tuple[float, float, float]]) -> float:
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.trapezoid(tpr, fpr))


def evaluate(
    pred: np.ndarray,
    truth: np.ndarray,
    scores: np.ndarray | None = None,
    class_names: list[str] | None = None,
) -> EvalReport:
    """Build the full metric report from labels (and class scores, for ROC).

    Classes absent from the truth (recall) or never predicted (precision)
    report None and are excluded from macro averages.
    """
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise DataError("pred and truth must have equal length")
    n = truth.size
    if n == 0:
        raise DataError("cannot evaluate an empty prediction set")
    k = len(class_names) if class_names else int(max(pred.max(), truth.max())) + 1
    names = class_names if class_names else [f"class_{i}" for i in range(k)]
    if pred.max() >= k or truth.max() >= k or pred.min() < 0 or truth.min() < 0:
        raise DataError(f"labels must lie in [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    per_class = []
    for c in range(k):
        tp = int(counts[c, c])
        fp = int(counts[:, c].sum() - tp)
        fn = int(counts[c, :].sum() - tp)
        support = tp + fn
        precision = tp / (tp + fp) if (tp + fp) > 0 else None
        recall = tp / support if support > 0 else None
        if precision is not None and recall is not None and (precision + recall) > 0:
            f = 2 * precision * recall / (precision + recall)
        elif precision is not None and recall is not None:
            f = 0.0
        else:
            f = None
        per_class.append(ClassMetrics(precision=precision, recall=recall, f_measure=f, support=support))
    roc: dict[int, list[tuple[float, float, float]]] = {}
    auc: dict[int, float] = {}
    if scores is not None:
        scores = np.asarray(scores, dtype=float)
        if scores.shape != (n, k):
            raise DataError(f"scores must have shape ({n}, {k})")
        for c in range(k):
            truth_pos = truth == c
            pos = int(truth_pos.sum())
            if pos == 0 or pos == n:
                continue  # one-vs-rest undefined
            curve = _roc_curve(truth_pos, scores[:, c])
            roc[c] = curve
            auc[c] = _auc(curve)
    return EvalReport(
        class_names=list(names),
        confusion=counts / n,
        overall_acc=float(np.trace(counts) / n),
        per_class=per_class,
        roc=roc,
        auc=auc,
    )


def baseline_random(data: Dataset, seed: int = 42) -> EvalReport:
    """Uniform random class prediction; expected accuracy 1/k."""
    model = _RandomModel(data.n_classes, seed)
    scores = model.predict_proba(data.X)
    pred = np.argmax(scores, axis=1)
    report = evaluate(pred, data.y, scores=scores, class_names=data.class_names)
    report.cv_error = 1.0 - report.overall_acc
    return report
