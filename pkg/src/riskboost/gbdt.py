"""Second-order gradient-boosted regression trees with logistic loss."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .data import Cohort
from .errors import ContractError, ModelLoadError, TrainingError

SCHEMA_VERSION = 1
PROBA_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    scale_pos_weight: float = 1.0
    # None: weighted prevalence of the training labels
    base_score: float | None = None
    seed: int = 0

    def __post_init__(self):
        if int(self.n_trees) != self.n_trees or self.n_trees < 0:
            raise ContractError(f"n_trees must be a nonnegative integer, got {self.n_trees}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise ContractError(f"max_depth must be a positive integer, got {self.max_depth}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ContractError(f"learning_rate must be in (0,1], got {self.learning_rate}")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ContractError("reg_lambda, gamma and min_child_weight must be nonnegative")
        if not self.scale_pos_weight > 0:
            raise ContractError(f"scale_pos_weight must be positive, got {self.scale_pos_weight}")
        if self.base_score is not None and not 0.0 < self.base_score < 1.0:
            raise ContractError(f"base_score must be in (0,1), got {self.base_score}")
        object.__setattr__(self, "n_trees", int(self.n_trees))
        object.__setattr__(self, "max_depth", int(self.max_depth))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, k: int) -> bool:
        return self.feature[k] < 0

    def depth(self) -> int:
        def walk(k):
            if self.feature[k] < 0:
                return 0
            return 1 + max(walk(self.left[k]), walk(self.right[k]))

        return walk(0)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
            np.asarray(d["cover"], dtype=np.float64),
        )

    @classmethod
    def leaf(cls, weight: float, cover: float = 1.0) -> "Tree":
        return cls(
            np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
            np.array([float(weight)]), np.array([float(cover)]),
        )


@dataclass(frozen=True, eq=False)
class BoostedModel:
    trees: tuple[Tree, ...]
    config: TrainConfig
    feature_names: tuple[str, ...]
    base_score: float
    training_log: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "training_log", tuple(float(v) for v in self.training_log))
        if len(self.trees) > self.config.n_trees:
            raise ContractError(f"{len(self.trees)} trees exceed config.n_trees={self.config.n_trees}")
        d = len(self.feature_names)
        for t in self.trees:
            if t.n_nodes and t.feature.max() >= d:
                raise ContractError("tree references a feature index beyond feature_names")

    @property
    def base_margin(self) -> float:
        return logit(self.base_score)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @cached_property
    def packed(self):
        """Concatenated node arrays and per-tree root offsets."""
        if not self.trees:
            empty_i = np.zeros(0, np.int64)
            empty_f = np.zeros(0)
            return empty_i, empty_i, empty_f, empty_i, empty_i, empty_f, empty_f
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees[:-1]]).astype(np.int64)
        cat = lambda name: np.ascontiguousarray(np.concatenate([getattr(t, name) for t in self.trees]))
        return (
            offsets,
            cat("feature").astype(np.int64),
            cat("threshold"),
            cat("left").astype(np.int64),
            cat("right").astype(np.int64),
            cat("value"),
            cat("cover"),
        )

    def used_features(self) -> list[int]:
        used = set()
        for t in self.trees:
            used.update(int(f) for f in t.feature if f >= 0)
        return sorted(used)

    def max_depth(self) -> int:
        return max((t.depth() for t in self.trees), default=0)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=np.float64)))


def logistic_grad_hess(p, y, w=1.0):
    """Gradient and hessian of the weighted logistic loss w.r.t. the margin."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ContractError("probability must lie strictly inside (0,1)")
    g = w * (p - y)
    h = w * p * (1.0 - p)
    if np.ndim(g) == 0:
        return float(g), float(h)
    return g, h


def split_gain(GL, HL, GR, HR, reg_lambda=1.0, gamma=0.0):
    G, H = GL + GR, HL + HR
    return 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda) - G * G / (H + reg_lambda)) - gamma


def resolve_base_score(labels, config: TrainConfig) -> float:
    if config.base_score is not None:
        return float(config.base_score)
    labels = np.asarray(labels)
    pos = float(labels.sum()) * config.scale_pos_weight
    neg = float(len(labels) - labels.sum())
    return pos / (pos + neg)


def presort(X: np.ndarray, features: np.ndarray):
    cols = np.ascontiguousarray(X[:, features].T)
    order = np.argsort(cols, axis=1, kind="stable")
    sorted_values = np.take_along_axis(cols, order, axis=1)
    return np.ascontiguousarray(order.astype(np.int32)), np.ascontiguousarray(sorted_values)


def fit_arrays(X, y, feature_subset: Sequence[int] | None, config: TrainConfig,
               feature_names: Sequence[str] | None = None) -> BoostedModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if feature_names is None:
        feature_names = [f"Feature{j + 1}" for j in range(d)]
    if n == 0:
        raise TrainingError("training set is empty")
    if y.min() == y.max():
        raise TrainingError("training labels contain a single class")
    if feature_subset is None:
        features = np.arange(d, dtype=np.int64)
    else:
        features = np.unique(np.asarray(feature_subset, dtype=np.int64))
        if features.size == 0 or features[0] < 0 or features[-1] >= d:
            raise TrainingError(f"feature subset must be a nonempty set of indices in [0,{d})")
    if not np.all(np.isfinite(X[:, features])):
        raise TrainingError("non-finite feature value in training data")

    base_score = resolve_base_score(y, config)
    w = np.where(y == 1.0, config.scale_pos_weight, 1.0)
    order, sorted_values = presort(X, features)
    margin = np.full(n, logit(base_score))
    trees, log = [], []
    for it in range(config.n_trees):
        p = np.clip(sigmoid(margin), PROBA_EPS, 1.0 - PROBA_EPS)
        g = w * (p - y)
        h = w * p * (1.0 - p)
        feat, thr, left, right, value, cover, leaf_of = _kernels.grow_tree(
            order, sorted_values, X, features, g, h, config.max_depth, config.reg_lambda,
            config.gamma, config.min_child_weight, config.learning_rate,
        )
        if not (np.all(np.isfinite(value)) and np.all(np.isfinite(cover))):
            raise TrainingError(f"non-finite leaf value at iteration {it}")
        trees.append(Tree(feat, thr, left, right, value, cover))
        margin = margin + value[leaf_of]
        p = np.clip(sigmoid(margin), PROBA_EPS, 1.0 - PROBA_EPS)
        loss = -(w * (y * np.log(p) + (1.0 - y) * np.log(1.0 - p))).sum() / w.sum()
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite training loss at iteration {it}")
        log.append(float(loss))
    return BoostedModel(tuple(trees), config, tuple(feature_names), base_score, tuple(log))


def fit(train: Cohort, feature_subset: Sequence[int] | None, config: TrainConfig) -> BoostedModel:
    return fit_arrays(train.features, train.labels, feature_subset, config, train.feature_names)


def _as_matrix(model: BoostedModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] < model.n_features:
        used = model.used_features()
        if used and used[-1] >= X.shape[1]:
            raise ContractError(f"input has {X.shape[1]} features; model needs index {used[-1]}")
    if not np.all(np.isfinite(X)):
        raise ContractError("input contains non-finite values")
    return np.ascontiguousarray(X)


def predict_margin(model: BoostedModel, X) -> np.ndarray | float:
    """Log-odds output; a 1-D input gives a scalar, a matrix gives one value per row."""
    single = np.ndim(X) == 1
    M = _as_matrix(model, X)
    if not model.trees:
        out = np.full(M.shape[0], model.base_margin)
    else:
        offsets, feat, thr, left, right, value, _ = model.packed
        out = _kernels.predict_margins(M, offsets, feat, thr, left, right, value, model.base_margin)
    return float(out[0]) if single else out


def predict_proba(model: BoostedModel, X):
    p = np.clip(sigmoid(predict_margin(model, X)), PROBA_EPS, 1.0 - PROBA_EPS)
    return float(p) if np.ndim(p) == 0 else p


def model_to_dict(model: BoostedModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": model.config.to_dict(),
        "base_score": model.base_score,
        "feature_names": list(model.feature_names),
        "training_log": list(model.training_log),
        "trees": [t.to_dict() for t in model.trees],
    }


def save_model(model: BoostedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def model_from_dict(d: dict) -> BoostedModel:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ModelLoadError(
            f"model schema_version {d.get('schema_version')!r} is not supported (expected {SCHEMA_VERSION})"
        )
    try:
        return BoostedModel(
            tuple(Tree.from_dict(t) for t in d["trees"]),
            TrainConfig.from_dict(d["config"]),
            tuple(d["feature_names"]),
            float(d["base_score"]),
            tuple(d.get("training_log", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelLoadError(f"malformed model document: {exc}") from exc


def load_model(path) -> BoostedModel:
    path = Path(path)
    if not path.exists():
        raise ModelLoadError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelLoadError(f"{path}: not a valid model JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ModelLoadError(f"{path}: model document must be a JSON object")
    return model_from_dict(doc)
