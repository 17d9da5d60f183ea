"""Three-stage feature selection.

1. drop features whose most frequent (6-decimal quantized) value dominates;
2. prune one member of every strongly correlated pair, keeping the
   higher-entropy feature;
3. rank survivors by histogram entropy and keep the shortest prefix with
   the best cross-validated AUC.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Cohort
from .errors import ContractError, RiskboostError, SelectionError
from .gbdt import TrainConfig
from .metrics import auc_roc
from .tune import DEFAULT_K, cross_validate, map_ordered, stratified_kfold

DOMINANCE_THRESHOLD = 0.90
CORRELATION_THRESHOLD = 0.70
ENTROPY_BINS = 10


@dataclass
class SelectionReport:
    dropped_low_variance: list[tuple[int, float]] = field(default_factory=list)
    dropped_correlated: list[tuple[int, int, float]] = field(default_factory=list)
    entropy_order: list[int] = field(default_factory=list)
    entropies: dict[int, float] = field(default_factory=dict)
    auc_by_prefix: list[tuple[int, float]] = field(default_factory=list)
    selected: list[int] = field(default_factory=list)
    best_auc: float = float("nan")
    n_input_features: int = 0
    feature_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        names = self.feature_names
        return {
            "n_input_features": self.n_input_features,
            "dropped_low_variance": [
                {"feature": int(j), "name": names[j], "dominant_fraction": frac}
                for j, frac in self.dropped_low_variance
            ],
            "dropped_correlated": [
                {"kept": int(a), "dropped": int(b), "kept_name": names[a], "dropped_name": names[b], "r": r}
                for a, b, r in self.dropped_correlated
            ],
            "entropy_order": [int(j) for j in self.entropy_order],
            "entropies": {names[j]: self.entropies[j] for j in self.entropy_order if j in self.entropies},
            "auc_by_prefix": [{"n_features": int(L), "cv_auc": a} for L, a in self.auc_by_prefix],
            "selected": [int(j) for j in self.selected],
            "selected_names": [names[j] for j in self.selected],
            "best_auc": self.best_auc,
            "feature_names": list(names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionReport":
        order = [int(j) for j in d["entropy_order"]]
        index = {name: j for j, name in enumerate(d["feature_names"])}
        ent = {index[name]: h for name, h in d.get("entropies", {}).items()}
        return cls(
            dropped_low_variance=[(e["feature"], e["dominant_fraction"]) for e in d["dropped_low_variance"]],
            dropped_correlated=[(e["kept"], e["dropped"], e["r"]) for e in d["dropped_correlated"]],
            entropy_order=order,
            entropies=ent,
            auc_by_prefix=[(e["n_features"], e["cv_auc"]) for e in d["auc_by_prefix"]],
            selected=[int(j) for j in d["selected"]],
            best_auc=d["best_auc"],
            n_input_features=d["n_input_features"],
            feature_names=list(d["feature_names"]),
        )

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    def write_prefix_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n_features", "cv_auc", "added_feature"])
            for (L, a), j in zip(self.auc_by_prefix, self.entropy_order):
                w.writerow([L, repr(a), self.feature_names[j] if self.feature_names else j])


def variance_filter(cohort: Cohort, dominance_threshold: float = DOMINANCE_THRESHOLD,
                    candidates: Sequence[int] | None = None):
    """Drop features whose most common quantized value covers > threshold of samples."""
    if not 0.0 < dominance_threshold <= 1.0:
        raise ContractError(f"dominance_threshold must be in (0,1], got {dominance_threshold}")
    if cohort.n_subjects == 0:
        raise SelectionError("cannot filter an empty cohort")
    candidates = range(cohort.n_features) if candidates is None else candidates
    survivors, dropped = [], []
    n = cohort.n_subjects
    for j in candidates:
        q = np.round(cohort.features[:, j], 6)
        _, counts = np.unique(q, return_counts=True)
        frac = counts.max() / n
        if frac > dominance_threshold:
            dropped.append((int(j), float(frac)))
        else:
            survivors.append(int(j))
    return survivors, dropped


def pearson(x, y) -> float:
    """Sample Pearson correlation; NaN when either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError(f"pearson needs two equal-length 1-D sequences, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ContractError("pearson needs at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return float("nan")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def correlation_matrix(X: np.ndarray) -> np.ndarray:
    dX = X - X.mean(axis=0)
    ss = np.sqrt(np.einsum("ij,ij->j", dX, dX))
    with np.errstate(invalid="ignore", divide="ignore"):
        Z = dX / ss
        R = Z.T @ Z
    R[:, ss == 0.0] = np.nan
    R[ss == 0.0, :] = np.nan
    return np.clip(R, -1.0, 1.0)


def feature_entropy(column, n_bins: int = ENTROPY_BINS) -> float:
    """Shannon entropy (bits) of an equal-width histogram on [0,1]."""
    col = np.asarray(column, dtype=np.float64).ravel()
    if col.size == 0:
        raise ContractError("entropy of an empty column is undefined")
    if n_bins < 2:
        raise ContractError(f"n_bins must be at least 2, got {n_bins}")
    bins = np.minimum(np.floor(col * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(np.clip(bins, 0, n_bins - 1), minlength=n_bins)
    p = counts[counts > 0] / col.size
    h = float(-np.sum(p * np.log2(p)))
    return h if h > 0.0 else 0.0


def correlation_prune(cohort: Cohort, survivors: Sequence[int], threshold: float = CORRELATION_THRESHOLD,
                      n_bins: int = ENTROPY_BINS):
    """Resolve every pair with |r| > threshold, strongest first.

    Within a pair the lower-entropy feature is dropped (the higher index on an
    entropy tie); pairs where one member is already gone are skipped.
    """
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"correlation threshold must be in (0,1), got {threshold}")
    survivors = sorted(int(j) for j in survivors)
    if len(survivors) < 2:
        return survivors, []
    R = correlation_matrix(cohort.features[:, survivors])
    iu, ju = np.triu_indices(len(survivors), k=1)
    r = R[iu, ju]
    hit = np.abs(r) > threshold  # NaN compares False
    pairs = sorted(
        ((abs(rv), survivors[a], survivors[b], rv) for a, b, rv in zip(iu[hit], ju[hit], r[hit])),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    entropy = {j: feature_entropy(cohort.features[:, j], n_bins) for j in {p[1] for p in pairs} | {p[2] for p in pairs}}
    alive = set(survivors)
    dropped = []
    for _, a, b, rv in pairs:
        if a not in alive or b not in alive:
            continue
        if entropy[a] > entropy[b]:
            keep, drop = a, b
        elif entropy[b] > entropy[a]:
            keep, drop = b, a
        else:
            keep, drop = a, b  # a < b: the higher index goes
        alive.discard(drop)
        dropped.append((keep, drop, float(rv)))
    return sorted(alive), dropped


def entropy_ranking(cohort: Cohort, survivors: Sequence[int], n_bins: int = ENTROPY_BINS):
    ent = {int(j): feature_entropy(cohort.features[:, j], n_bins) for j in survivors}
    order = sorted(ent, key=lambda j: (-ent[j], j))
    return order, ent


def cv_auc_evaluator(config: TrainConfig | None = None, k: int = DEFAULT_K):
    """Mean stratified k-fold AUC of a boosted model on a feature subset."""
    config = config or TrainConfig()

    def evaluate(cohort: Cohort, features, seed: int) -> float:
        folds = stratified_kfold(cohort.labels, k, seed)
        return float(np.mean(cross_validate(cohort, features, config, folds, scorer=auc_roc)))

    return evaluate


def forward_select(train: Cohort, entropy_order: Sequence[int], evaluator=None, seed: int = 0,
                   workers: int = 1) -> SelectionReport:
    if not entropy_order:
        raise SelectionError("entropy_order is empty")
    evaluator = evaluator or cv_auc_evaluator()
    order = [int(j) for j in entropy_order]

    def score(L: int) -> float:
        try:
            auc = evaluator(train, order[:L], seed)
        except RiskboostError as exc:
            raise SelectionError(f"evaluation failed at prefix length {L}: {exc}") from exc
        if not math.isfinite(auc):
            raise SelectionError(f"evaluation returned non-finite AUC at prefix length {L}")
        return auc

    lengths = list(range(1, len(order) + 1))
    aucs = map_ordered(score, lengths, workers)
    best = max(aucs)
    best_len = lengths[aucs.index(best)]
    return SelectionReport(
        entropy_order=order,
        auc_by_prefix=list(zip(lengths, aucs)),
        selected=order[:best_len],
        best_auc=best,
        n_input_features=train.n_features,
        feature_names=list(train.feature_names),
    )


def select_features(train: Cohort, dominance_threshold: float = DOMINANCE_THRESHOLD,
                    correlation_threshold: float = CORRELATION_THRESHOLD, n_bins: int = ENTROPY_BINS,
                    evaluator=None, seed: int = 0, workers: int = 1) -> SelectionReport:
    """Run the full pipeline on a training cohort."""
    survivors, low_var = variance_filter(train, dominance_threshold)
    if not survivors:
        raise SelectionError("variance filter removed every feature")
    survivors, correlated = correlation_prune(train, survivors, correlation_threshold, n_bins)
    order, ent = entropy_ranking(train, survivors, n_bins)
    report = forward_select(train, order, evaluator, seed, workers)
    report.dropped_low_variance = low_var
    report.dropped_correlated = correlated
    report.entropies = ent
    return report
