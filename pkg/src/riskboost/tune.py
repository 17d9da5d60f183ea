"""Stratified k-fold cross-validation and grid search on average precision."""

from __future__ import annotations

import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import gbdt
from .data import Cohort
from .errors import ContractError, MetricsError, RiskboostError, TuningError
from .gbdt import BoostedModel, TrainConfig
from .metrics import step_average_precision

DEFAULT_K = 5
BALANCED = "balanced"


def stratified_kfold(labels_or_cohort, k: int = DEFAULT_K, seed: int = 0):
    """Per-class seeded shuffle, then round-robin assignment to ``k`` folds.

    Returns a list of ``(train_indices, validation_indices)``, both sorted.
    """
    labels = labels_or_cohort.labels if isinstance(labels_or_cohort, Cohort) else labels_or_cohort
    labels = np.asarray(labels)
    if k < 2:
        raise TuningError(f"k must be at least 2, got {k}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for cls in (1, 0):
        members = np.flatnonzero(labels == cls)
        if members.size < k:
            raise TuningError(f"class {cls} has {members.size} members, fewer than k={k}")
        members = members[rng.permutation(members.size)]
        fold_of[members] = (np.arange(members.size) + offset) % k
        # the next class continues where this one stopped, evening out fold sizes
        offset = (offset + members.size) % k
    idx = np.arange(labels.size)
    return [(idx[fold_of != f], idx[fold_of == f]) for f in range(k)]


def average_precision(scores, labels) -> float:
    try:
        return step_average_precision(scores, labels)
    except MetricsError as exc:
        raise TuningError(str(exc)) from exc


def _resolve_spw(value, labels) -> float:
    if value == BALANCED:
        labels = np.asarray(labels)
        return float(labels.size - labels.sum()) / float(labels.sum())
    return float(value)


@dataclass(frozen=True)
class Grid:
    n_trees: tuple = (100, 200, 400)
    max_depth: tuple = (3, 4, 6)
    learning_rate: tuple = (0.03, 0.1, 0.3)
    # "balanced" resolves to negatives/positives of the cohort being tuned
    scale_pos_weight: tuple = (1.0, BALANCED)

    def __post_init__(self):
        for name in ("n_trees", "max_depth", "learning_rate", "scale_pos_weight"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise TuningError(f"grid dimension {name} is empty")
            object.__setattr__(self, name, vals)
        for spw in self.scale_pos_weight:
            if spw != BALANCED and not float(spw) > 0:
                raise TuningError(f"scale_pos_weight candidate {spw!r} must be positive or 'balanced'")
        try:
            for nt, md, lr in itertools.product(self.n_trees, self.max_depth, self.learning_rate):
                TrainConfig(n_trees=nt, max_depth=md, learning_rate=lr)
        except ContractError as exc:
            raise TuningError(f"invalid grid candidate: {exc}") from exc

    @property
    def size(self) -> int:
        return len(self.n_trees) * len(self.max_depth) * len(self.learning_rate) * len(self.scale_pos_weight)

    def configs(self, labels, base: TrainConfig | None = None) -> list[TrainConfig]:
        base = base or TrainConfig()
        return [
            replace(base, n_trees=nt, max_depth=md, learning_rate=lr, scale_pos_weight=_resolve_spw(spw, labels))
            for nt, md, lr, spw in itertools.product(
                self.n_trees, self.max_depth, self.learning_rate, self.scale_pos_weight
            )
        ]

    def to_dict(self) -> dict:
        return {
            "n_trees": list(self.n_trees),
            "max_depth": list(self.max_depth),
            "learning_rate": list(self.learning_rate),
            "scale_pos_weight": list(self.scale_pos_weight),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TuningError(f"unknown grid dimensions: {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in d.items()})


@dataclass
class ConfigScore:
    config: TrainConfig
    fold_scores: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_scores))


@dataclass
class CvResult:
    scores: list[ConfigScore]
    best_config: TrainConfig
    k: int
    seed: int
    metric: str = "average_precision"

    @property
    def best(self) -> ConfigScore:
        return next(s for s in self.scores if s.config == self.best_config)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "k": self.k,
            "seed": self.seed,
            "best_config": self.best_config.to_dict(),
            "best_mean_score": self.best.mean,
            "results": [
                {"config": s.config.to_dict(), "mean_score": s.mean, "fold_scores": list(s.fold_scores)}
                for s in self.scores
            ],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n_trees", "max_depth", "learning_rate", "scale_pos_weight", "fold", "score"])
            for s in self.scores:
                c = s.config
                for f, v in enumerate(s.fold_scores):
                    w.writerow([c.n_trees, c.max_depth, repr(c.learning_rate), repr(c.scale_pos_weight), f, repr(v)])


def _tie_key(cs: ConfigScore):
    # higher mean first; then fewer trees, shallower, larger learning rate
    c = cs.config
    return (-cs.mean, c.n_trees, c.max_depth, -c.learning_rate)


def pick_best(scores: Sequence[ConfigScore]) -> TrainConfig:
    return min(scores, key=_tie_key).config


def truncate(model: BoostedModel, n_trees: int) -> BoostedModel:
    """The first ``n_trees`` trees of a fitted model, equal to a fit with that many trees."""
    return BoostedModel(
        model.trees[:n_trees],
        replace(model.config, n_trees=n_trees),
        model.feature_names,
        model.base_score,
        model.training_log[:n_trees],
    )


def map_ordered(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is preserved."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def cross_validate(cohort: Cohort, feature_subset, config: TrainConfig, folds,
                   scorer: Callable = average_precision) -> list[float]:
    out = []
    for f, (tr, va) in enumerate(folds):
        model = gbdt.fit_arrays(cohort.features[tr], cohort.labels[tr], feature_subset, config,
                                cohort.feature_names)
        out.append(float(scorer(gbdt.predict_proba(model, cohort.features[va]), cohort.labels[va])))
    return out


def grid_search(train: Cohort, feature_subset, grid: Grid | None = None, k: int = DEFAULT_K,
                seed: int = 0, workers: int = 1, base: TrainConfig | None = None) -> CvResult:
    grid = grid or Grid()
    base = replace(base or TrainConfig(), seed=seed)
    folds = stratified_kfold(train.labels, k, seed)
    configs = grid.configs(train.labels, base)

    # configs differing only in n_trees share one fit, truncated per candidate
    families: dict[TrainConfig, list[int]] = {}
    for c in configs:
        families.setdefault(replace(c, n_trees=0), []).append(c.n_trees)
    jobs = [(fam, f) for fam in families for f in range(k)]

    def run(job):
        fam, f = job
        tr, va = folds[f]
        longest = replace(fam, n_trees=max(families[fam]))
        try:
            model = gbdt.fit_arrays(train.features[tr], train.labels[tr], feature_subset, longest,
                                    train.feature_names)
            return {
                nt: average_precision(gbdt.predict_proba(truncate(model, nt), train.features[va]),
                                      train.labels[va])
                for nt in families[fam]
            }
        except RiskboostError as exc:
            raise TuningError(f"fit failed for config {longest.to_dict()} on fold {f}: {exc}") from exc

    results = dict(zip(jobs, map_ordered(run, jobs, workers)))
    scores = [
        ConfigScore(c, [results[(replace(c, n_trees=0), f)][c.n_trees] for f in range(k)])
        for c in configs
    ]
    return CvResult(scores, pick_best(scores), k, seed)
