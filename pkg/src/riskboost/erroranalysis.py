"""Test-set error analysis: FN-vs-TP feature comparison and FP case studies."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Cohort
from .errors import AnalysisError
from .explain import AttributionSet, waterfall
from .metrics import DEFAULT_THRESHOLD
from .stats import TTestResult, welch_t_test

ALPHA = 0.05

# Published FN-vs-TP group means for the four features flagged in the original
# cohort. Context only: they cannot be reproduced without the private data.
REFERENCE_FLAGGED = (
    {"feature": "Feature80", "mean_fn": 0.1038, "mean_tp": 0.0205},
    {"feature": "Feature53", "mean_fn": 0.0764, "mean_tp": 0.1194},
    {"feature": "Feature72", "mean_fn": 0.0637, "mean_tp": 0.0118},
    {"feature": "Feature32", "mean_fn": 0.2033, "mean_tp": 0.0645},
)


@dataclass(frozen=True)
class OutcomePartition:
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray
    threshold: float

    def counts(self) -> dict:
        return {"tp": int(self.tp.size), "fp": int(self.fp.size), "tn": int(self.tn.size), "fn": int(self.fn.size)}


def partition_outcomes(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> OutcomePartition:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores >= threshold
    pos = labels == 1
    return OutcomePartition(
        tp=np.flatnonzero(pred & pos),
        fp=np.flatnonzero(pred & ~pos),
        tn=np.flatnonzero(~pred & ~pos),
        fn=np.flatnonzero(~pred & pos),
        threshold=float(threshold),
    )


@dataclass
class FeatureComparison:
    result: TTestResult
    flagged: bool
    p_bonferroni: float
    selected: bool | None

    def to_dict(self) -> dict:
        d = self.result.to_dict()
        d.update(flagged=self.flagged, p_bonferroni=self.p_bonferroni, selected=self.selected)
        return d


def fn_vs_tp_report(cohort: Cohort, partition: OutcomePartition, selected: Sequence[int] | None = None,
                    alpha: float = ALPHA) -> list[FeatureComparison]:
    """Welch t-test of every feature between the FN group (a) and the TP group (b).

    Sorted by p-value, then feature index. The Bonferroni column is
    supplementary; flags use the unadjusted p-value.
    """
    if partition.fn.size < 2 or partition.tp.size < 2:
        raise AnalysisError(
            f"need at least 2 false negatives and 2 true positives (have {partition.fn.size} FN, "
            f"{partition.tp.size} TP); try a different classification threshold"
        )
    m = cohort.n_features
    chosen = None if selected is None else set(int(j) for j in selected)
    rows = []
    for j in range(m):
        r = welch_t_test(cohort.features[partition.fn, j], cohort.features[partition.tp, j],
                         feature=j, name=cohort.feature_names[j])
        rows.append(FeatureComparison(
            r, bool(r.p_value < alpha), min(1.0, r.p_value * m), None if chosen is None else j in chosen,
        ))
    rows.sort(key=lambda c: (c.result.p_value, c.result.feature))
    return rows


def write_report_csv(rows: Sequence[FeatureComparison], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "name", "mean_fn", "mean_tp", "t_statistic", "degrees_of_freedom",
                    "p_value", "p_bonferroni", "flagged", "selected"])
        for c in rows:
            r = c.result
            w.writerow([r.feature, r.name, repr(r.mean_a), repr(r.mean_b), repr(r.t_statistic),
                        repr(r.degrees_of_freedom), repr(r.p_value), repr(c.p_bonferroni),
                        int(c.flagged), "" if c.selected is None else int(c.selected)])


def fp_case_study(attr: AttributionSet, cohort: Cohort, partition: OutcomePartition, sample_id: str,
                  top_k: int = 10) -> dict:
    """Waterfall decomposition of one false positive plus its strongest contributors."""
    if partition.fp.size == 0:
        raise AnalysisError("no false-positive cases at this threshold; the FP case study is unavailable")
    fp_ids = {cohort.subject_ids[i] for i in partition.fp}
    if str(sample_id) not in fp_ids:
        raise AnalysisError(f"sample {sample_id!r} is not a false positive")
    wf = waterfall(attr, sample_id, top_k)
    phi = attr.phi[attr.row(sample_id)]
    up = int(np.argmax(phi))
    down = int(np.argmin(phi))
    row = cohort.index_of(sample_id)
    out = wf.to_dict()
    out["top_positive"] = {"feature": attr.feature_names[up], "contribution": float(phi[up]),
                           "value": float(cohort.features[row, up])}
    out["top_negative"] = {"feature": attr.feature_names[down], "contribution": float(phi[down]),
                           "value": float(cohort.features[row, down])}
    return out
