"""Exact path-dependent TreeSHAP attributions and derived data products.

Attributions are on the margin (log-odds) scale. A feature that is "absent"
from a coalition sends weight down both children of every node splitting on
it, in proportion to the children's training cover.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .data import Cohort
from .errors import ExplanationError
from .gbdt import BoostedModel, Tree, predict_margin
from .tune import map_ordered

SCALE = "margin (log-odds)"


@dataclass(eq=False)
class AttributionSet:
    base_value: float
    phi: np.ndarray
    sample_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    margins: np.ndarray | None = None

    def row(self, sample_id: str) -> int:
        try:
            return self.sample_ids.index(str(sample_id))
        except ValueError:
            raise ExplanationError(f"sample {sample_id!r} is not in the attribution set") from None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject_id", *self.feature_names])
            for sid, row in zip(self.sample_ids, self.phi.tolist()):
                w.writerow([sid, *map(repr, row)])

    def metadata(self) -> dict:
        return {
            "base_value": self.base_value,
            "scale": SCALE,
            "n_samples": int(self.phi.shape[0]),
            "n_features": int(self.phi.shape[1]),
            "method": "path-dependent TreeSHAP (cover-weighted conditional expectations)",
        }


def _check_covers(model: BoostedModel) -> None:
    for t, tree in enumerate(model.trees):
        if np.any(tree.cover <= 0.0):
            raise ExplanationError(f"tree {t} has a node with zero cover")


def _tree_expectation(tree: Tree) -> float:
    leaves = tree.feature < 0
    return float(np.sum(tree.value[leaves] * tree.cover[leaves]) / tree.cover[0])


def expected_margin(model: BoostedModel) -> float:
    """Base margin plus the cover-weighted mean leaf value of every tree."""
    return model.base_margin + sum(_tree_expectation(t) for t in model.trees)


def tree_shap_matrix(model: BoostedModel, X) -> tuple[float, np.ndarray]:
    # a fresh C-contiguous float64 copy keeps the kernel to a single specialization
    X = np.array(np.atleast_2d(X), dtype=np.float64, order="C", copy=True)
    if not np.all(np.isfinite(X)):
        raise ExplanationError("inputs must be finite")
    d = model.n_features
    if X.shape[1] < d:
        raise ExplanationError(f"inputs have {X.shape[1]} features, model expects {d}")
    if not model.trees:
        return model.base_margin, np.zeros((X.shape[0], d))
    _check_covers(model)
    offsets, feat, thr, left, right, value, cover = model.packed
    phi = _kernels.tree_shap_batch(X, d, offsets, model.max_depth(), feat, thr, left, right, value, cover)
    return expected_margin(model), phi


def tree_shap(model: BoostedModel, x) -> tuple[float, np.ndarray]:
    base, phi = tree_shap_matrix(model, np.asarray(x, dtype=np.float64)[None, :])
    return base, phi[0]


def _coalition_values(model: BoostedModel, x: np.ndarray, used: list[int]) -> np.ndarray:
    """v(S) for every subset S of ``used`` (bit q set = used[q] present)."""
    m = len(used)
    pos = {f: q for q, f in enumerate(used)}
    masks = np.arange(2 ** m)
    v = np.full(2 ** m, model.base_margin)
    for tree in model.trees:
        stack = [(0, np.ones(2 ** m))]
        while stack:
            k, w = stack.pop()
            f = tree.feature[k]
            if f < 0:
                v += w * tree.value[k]
                continue
            present = ((masks >> pos[f]) & 1).astype(bool)
            l, r = tree.left[k], tree.right[k]
            go_left = x[f] < tree.threshold[k]
            hot, cold = (l, r) if go_left else (r, l)
            stack.append((hot, w * np.where(present, 1.0, tree.cover[hot] / tree.cover[k])))
            stack.append((cold, w * np.where(present, 0.0, tree.cover[cold] / tree.cover[k])))
    return v


def brute_force_shapley(model: BoostedModel, x, max_features: int = 20) -> np.ndarray:
    """Shapley values by enumerating every coalition of the features the model uses."""
    x = np.asarray(x, dtype=np.float64)
    used = model.used_features()
    m = len(used)
    if m > max_features:
        raise ExplanationError(f"model uses {m} features; exhaustive enumeration is capped at {max_features}")
    phi = np.zeros(model.n_features)
    if m == 0:
        return phi
    _check_covers(model)
    v = _coalition_values(model, x, used)
    masks = np.arange(2 ** m)
    sizes = np.array([bin(s).count("1") for s in range(2 ** m)])
    weight = np.array([math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) if s < m else 0.0
                       for s in range(m + 1)])
    for q, f in enumerate(used):
        without = masks[((masks >> q) & 1) == 0]
        phi[f] = float(np.sum(weight[sizes[without]] * (v[without | (1 << q)] - v[without])))
    return phi


def explain(model: BoostedModel, cohort: Cohort, workers: int = 1, chunk: int = 256) -> AttributionSet:
    X = np.ascontiguousarray(cohort.features)
    chunks = [slice(i, min(i + chunk, X.shape[0])) for i in range(0, X.shape[0], chunk)]
    parts = map_ordered(lambda sl: tree_shap_matrix(model, X[sl]), chunks, workers)
    base = expected_margin(model)
    phi = np.vstack([p for _, p in parts]) if parts else np.zeros((0, model.n_features))
    margins = np.asarray(predict_margin(model, X)) if X.shape[0] else np.zeros(0)
    return AttributionSet(base, phi, cohort.subject_ids, tuple(model.feature_names), margins)


@dataclass
class ImportanceRanking:
    entries: list[tuple[str, float]]
    indices: list[int] = field(default_factory=list)

    def top(self, k: int) -> "ImportanceRanking":
        return ImportanceRanking(self.entries[:k], self.indices[:k])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "feature", "mean_abs_attribution"])
            for r, (name, v) in enumerate(self.entries, start=1):
                w.writerow([r, name, repr(v)])


def global_importance(attr: AttributionSet) -> ImportanceRanking:
    if attr.phi.shape[0] == 0:
        raise ExplanationError("cannot rank features over an empty attribution set")
    mean_abs = np.abs(attr.phi).mean(axis=0)
    order = sorted(range(mean_abs.size), key=lambda j: (-mean_abs[j], j))
    return ImportanceRanking([(attr.feature_names[j], float(mean_abs[j])) for j in order], order)


def _normalize(col: np.ndarray) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if hi == lo:
        return np.full(col.shape, 0.5)
    return (col - lo) / (hi - lo)


def summary_data(attr: AttributionSet, cohort: Cohort, top_k: int = 20) -> list[dict]:
    """One record per (sample, top-k feature) with the min-max normalised feature value."""
    rows = [cohort.index_of(s) for s in attr.sample_ids]
    ranking = global_importance(attr).top(top_k)
    records = []
    for rank, j in enumerate(ranking.indices, start=1):
        norm = _normalize(cohort.features[rows, j])
        for i, sid in enumerate(attr.sample_ids):
            records.append({
                "rank": rank,
                "feature": attr.feature_names[j],
                "subject_id": sid,
                "attribution": float(attr.phi[i, j]),
                "normalized_value": float(norm[i]),
            })
    return records


def dependence_data(attr: AttributionSet, cohort: Cohort, feature: int | str) -> list[tuple[float, float]]:
    j = attr.feature_names.index(feature) if isinstance(feature, str) else int(feature)
    rows = [cohort.index_of(s) for s in attr.sample_ids]
    return [(float(cohort.features[r, j]), float(attr.phi[i, j])) for i, r in enumerate(rows)]


@dataclass
class Waterfall:
    sample_id: str
    base_value: float
    steps: list[dict]
    final_margin: float

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "scale": SCALE,
            "base_value": self.base_value,
            "steps": self.steps,
            "final_margin": self.final_margin,
        }


def waterfall(attr: AttributionSet, sample_id: str, top_k: int = 10) -> Waterfall:
    i = attr.row(sample_id)
    phi = attr.phi[i]
    order = sorted(range(phi.size), key=lambda j: (-abs(phi[j]), j))
    top, rest = order[:top_k], order[top_k:]
    steps = []
    running = attr.base_value
    for j in top:
        running += phi[j]
        steps.append({"feature": attr.feature_names[j], "index": j, "contribution": float(phi[j]),
                      "cumulative": float(running)})
    if rest:
        other = float(np.sum(phi[rest]))
        running += other
        steps.append({"feature": f"other ({len(rest)} features)", "index": None, "contribution": other,
                      "cumulative": float(running)})
    return Waterfall(str(sample_id), attr.base_value, steps, float(running))


def write_records_csv(records: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not records:
            return
        w = csv.DictWriter(fh, fieldnames=list(records[0]), lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
