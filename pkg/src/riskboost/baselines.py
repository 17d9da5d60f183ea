"""Brute-force k-nearest-neighbours comparator."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .data import Cohort
from .errors import ContractError, TuningError
from .metrics import DEFAULT_THRESHOLD, EvalReport, summarize
from .tune import DEFAULT_K, average_precision, map_ordered, stratified_kfold

DEFAULT_K_GRID = (3, 5, 7, 9, 15)


@dataclass(frozen=True)
class KnnConfig:
    k: int = 5
    metric: str = "euclidean"
    weighting: str = "uniform"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ContractError(f"k must be a positive integer, got {self.k}")
        if self.metric not in ("euclidean", "manhattan"):
            raise ContractError(f"unknown metric {self.metric!r}")
        if self.weighting not in ("uniform", "inverse-distance"):
            raise ContractError(f"unknown weighting {self.weighting!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def _distances(train: np.ndarray, X: np.ndarray, metric: str) -> np.ndarray:
    # per-feature accumulation of explicit differences: exact duplicates land at
    # distance 0 and memory stays at len(X) x len(train)
    D = np.zeros((X.shape[0], train.shape[0]))
    for f in range(train.shape[1]):
        diff = X[:, f, None] - train[None, :, f]
        D += np.abs(diff) if metric == "manhattan" else diff * diff
    return D if metric == "manhattan" else np.sqrt(D)


def nearest_neighbors(train_X, X, k: int, metric: str = "euclidean", chunk: int = 256):
    """Indices and distances of the ``k`` nearest training rows, ties to the lower index."""
    nn = np.empty((X.shape[0], k), dtype=np.intp)
    dist = np.empty((X.shape[0], k))
    for start in range(0, X.shape[0], chunk):
        D = _distances(train_X, X[start:start + chunk], metric)
        # stable sort: equal distances keep training order
        idx = np.argsort(D, axis=1, kind="stable")[:, :k]
        nn[start:start + chunk] = idx
        dist[start:start + chunk] = np.take_along_axis(D, idx, axis=1)
    return nn, dist


def _neighbor_scores(nn, dist, train_y, config: KnnConfig) -> np.ndarray:
    nn, d = nn[:, :config.k], dist[:, :config.k]
    y = train_y[nn]
    if config.weighting == "uniform":
        return y.mean(axis=1)
    zero = d == 0.0
    with np.errstate(divide="ignore"):
        # exact matches, when present, take all the weight
        w = np.where(zero.any(axis=1, keepdims=True), zero.astype(float), 1.0 / d)
    return (w * y).sum(axis=1) / w.sum(axis=1)


def _prepare(train_X, X, config, features):
    train_X = np.asarray(train_X, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if train_X.shape[0] == 0:
        raise ContractError("training set is empty")
    if X.shape[1] != train_X.shape[1]:
        raise ContractError(f"input has {X.shape[1]} features, training data has {train_X.shape[1]}")
    if config.k > train_X.shape[0]:
        raise ContractError(f"k={config.k} exceeds the {train_X.shape[0]} training points")
    if features is not None:
        cols = np.asarray(features, dtype=np.intp)
        train_X, X = train_X[:, cols], X[:, cols]
    return train_X, X


def knn_scores(train_X, train_y, X, config: KnnConfig, features: Sequence[int] | None = None) -> np.ndarray:
    train_X, X = _prepare(train_X, X, config, features)
    nn, dist = nearest_neighbors(train_X, X, config.k, config.metric)
    return _neighbor_scores(nn, dist, np.asarray(train_y, dtype=np.float64), config)


def knn_score(train: Cohort, config: KnnConfig, x, features: Sequence[int] | None = None) -> float:
    return float(knn_scores(train.features, train.labels, np.asarray(x)[None, :], config, features)[0])


def knn_evaluate(train: Cohort, test: Cohort, config: KnnConfig, features: Sequence[int] | None = None,
                 threshold: float = DEFAULT_THRESHOLD) -> EvalReport:
    scores = knn_scores(train.features, train.labels, test.features, config, features)
    return summarize(scores, test.labels, threshold)


def knn_grid_search(train: Cohort, features: Sequence[int] | None = None, ks: Sequence[int] = DEFAULT_K_GRID,
                    base: KnnConfig | None = None, k_folds: int = DEFAULT_K, seed: int = 0,
                    workers: int = 1) -> tuple[KnnConfig, list[tuple[KnnConfig, list[float]]]]:
    """Choose k by mean cross-validated average precision; ties go to the smaller k."""
    base = base or KnnConfig()
    folds = stratified_kfold(train.labels, k_folds, seed)
    configs = [replace(base, k=int(k)) for k in ks]
    if not configs:
        raise TuningError("empty k grid")

    max_k = max(c.k for c in configs)

    def run(fold):
        tr, va = fold
        train_X, X = _prepare(train.features[tr], train.features[va], replace(base, k=max_k), features)
        nn, dist = nearest_neighbors(train_X, X, max_k, base.metric)
        y = train.labels[tr].astype(np.float64)
        return [average_precision(_neighbor_scores(nn, dist, y, c), train.labels[va]) for c in configs]

    per_fold = map_ordered(run, folds, workers)
    results = [(c, [per_fold[f][i] for f in range(len(folds))]) for i, c in enumerate(configs)]
    best = min(results, key=lambda r: (-float(np.mean(r[1])), r[0].k))[0]
    return best, results
