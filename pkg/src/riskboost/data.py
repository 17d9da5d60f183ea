"""Cohort loading, validation, simulation and stratified splitting.

A cohort is a dense table of per-subject diagnostic probabilities with a
binary outcome label. The on-disk format is CSV with the columns
``subject_id, label, <feature columns...>``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IngestionError, SimulationError, SplitError

DEFAULT_N_FEATURES = 150


def default_feature_names(n_features: int) -> list[str]:
    return [f"Feature{j + 1}" for j in range(n_features)]


@dataclass(frozen=True, eq=False)
class Cohort:
    subject_ids: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int8, copy=True)
        if features.ndim != 2:
            raise IngestionError(f"features must be a 2-D matrix, got shape {features.shape}")
        n, d = features.shape
        if labels.shape != (n,):
            raise IngestionError(f"labels length {labels.shape} does not match {n} feature rows")
        if len(self.subject_ids) != n:
            raise IngestionError(f"{len(self.subject_ids)} subject ids for {n} feature rows")
        if len(self.feature_names) != d:
            raise IngestionError(f"{len(self.feature_names)} feature names for {d} feature columns")
        if not np.all(np.isfinite(features)):
            r, c = np.argwhere(~np.isfinite(features))[0]
            raise IngestionError(f"non-finite value at row {r}, column {self.feature_names[c]}")
        bad = (features < 0.0) | (features > 1.0)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise IngestionError(
                f"value {features[r, c]!r} outside [0,1] at row {r}, column {self.feature_names[c]}"
            )
        if not np.all((labels == 0) | (labels == 1)):
            r = int(np.flatnonzero((labels != 0) & (labels != 1))[0])
            raise IngestionError(f"label at row {r} is not 0 or 1")
        ids = tuple(str(s) for s in self.subject_ids)
        if len(set(ids)) != n:
            seen = set()
            for r, s in enumerate(ids):
                if s in seen:
                    raise IngestionError(f"duplicate subject_id {s!r} at row {r}")
                seen.add(s)
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "subject_ids", ids)
        object.__setattr__(self, "feature_names", tuple(str(s) for s in self.feature_names))

    @classmethod
    def from_arrays(cls, features, labels, subject_ids=None, feature_names=None) -> "Cohort":
        features = np.asarray(features, dtype=np.float64)
        if subject_ids is None:
            subject_ids = [f"S{i:05d}" for i in range(features.shape[0])]
        if feature_names is None:
            feature_names = default_feature_names(features.shape[1])
        return cls(tuple(subject_ids), features, labels, tuple(feature_names))

    @property
    def n_subjects(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    @property
    def prevalence(self) -> float:
        return self.n_positive / self.n_subjects

    def subset(self, rows: Sequence[int]) -> "Cohort":
        rows = np.asarray(rows, dtype=np.intp)
        return Cohort(
            tuple(self.subject_ids[i] for i in rows),
            self.features[rows],
            self.labels[rows],
            self.feature_names,
        )

    def index_of(self, subject_id: str) -> int:
        try:
            return self.subject_ids.index(str(subject_id))
        except ValueError:
            raise KeyError(subject_id) from None


def load_cohort(path, n_features: int | None = None) -> Cohort:
    """Read a cohort CSV, validating every cell.

    ``n_features``, when given, is the expected feature column count.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"cohort file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file, expected a header row") from None
        if len(header) < 3 or header[0] != "subject_id" or header[1] != "label":
            raise IngestionError(
                f"{path}: header must start with 'subject_id,label' followed by feature columns"
            )
        names = header[2:]
        if n_features is not None and len(names) != n_features:
            raise IngestionError(f"{path}: expected {n_features} feature columns, found {len(names)}")
        ids, labels, rows = [], [], []
        seen = set()
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise IngestionError(f"{path}: row {lineno} has {len(rec)} fields, expected {len(header)}")
            sid = rec[0].strip()
            if not sid:
                raise IngestionError(f"{path}: row {lineno} has a missing subject_id")
            if sid in seen:
                raise IngestionError(f"{path}: row {lineno} repeats subject_id {sid!r}")
            seen.add(sid)
            if rec[1].strip() not in ("0", "1"):
                raise IngestionError(f"{path}: row {lineno} label {rec[1]!r} is not 0 or 1")
            values = []
            for name, cell in zip(names, rec[2:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {lineno}, column {name}: non-numeric value {cell!r}"
                    ) from None
                if not (0.0 <= v <= 1.0):
                    raise IngestionError(
                        f"{path}: row {lineno}, column {name}: value {cell} outside [0,1]"
                    )
                values.append(v)
            ids.append(sid)
            labels.append(int(rec[1]))
            rows.append(values)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return Cohort(tuple(ids), np.array(rows, dtype=np.float64), np.array(labels), tuple(names))


def write_cohort(cohort: Cohort, path) -> None:
    # repr() is the shortest string that round-trips a float64 exactly
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "label", *cohort.feature_names])
        for sid, y, row in zip(cohort.subject_ids, cohort.labels, cohort.features.tolist()):
            w.writerow([sid, int(y), *map(repr, row)])


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise SplitError(f"test_fraction must be in (0,1), got {self.test_fraction}")


def class_test_count(class_count: int, test_fraction: float) -> int:
    """Round-half-up of ``class_count * test_fraction``, kept inside [1, count-1]."""
    # the tiny epsilon absorbs binary representation error, e.g. 0.2 * 175
    n = math.floor(class_count * test_fraction + 0.5 + 1e-9)
    return min(max(n, 1), class_count - 1)


def stratified_split(cohort: Cohort, spec: SplitSpec) -> tuple[Cohort, Cohort]:
    rng = np.random.default_rng(spec.seed)
    train_rows, test_rows = [], []
    for cls in (0, 1):
        members = np.flatnonzero(cohort.labels == cls)
        if len(members) < 2:
            raise SplitError(f"class {cls} has {len(members)} member(s); at least 2 are required")
        shuffled = members[rng.permutation(len(members))]
        n_test = class_test_count(len(members), spec.test_fraction)
        test_rows.append(shuffled[:n_test])
        train_rows.append(shuffled[n_test:])
    # row order within each split follows the source cohort
    train = np.sort(np.concatenate(train_rows))
    test = np.sort(np.concatenate(test_rows))
    return cohort.subset(train), cohort.subset(test)


# Default planted indices mirror the features reported as strongest risk and
# protective predictors (1-based names Feature62/11/9 and Feature1/99).
DEFAULT_RISK = (61, 10, 8)
DEFAULT_PROTECTIVE = (0, 98)


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the synthetic cohort generator.

    Background features are Beta draws independent of the label. Planted
    risk (protective) features are replaced by a Gaussian bump whose mean is
    raised by ``effect_size`` in positives (negatives); ``noise_scale`` is
    the bump's standard deviation. The second member of each duplicate pair
    is the first plus small Gaussian jitter. Near-constant features take the
    value 0.0 in ``near_constant_fraction`` of subjects.
    """

    n_subjects: int = 6634
    n_features: int = DEFAULT_N_FEATURES
    prevalence: float = 0.0264
    planted_risk: tuple[int, ...] = DEFAULT_RISK
    planted_protective: tuple[int, ...] = DEFAULT_PROTECTIVE
    planted_duplicate_pairs: tuple[tuple[int, int], ...] = ()
    planted_near_constant: tuple[int, ...] = ()
    noise_scale: float = 0.1
    effect_size: float = 0.1
    near_constant_fraction: float = 0.95
    seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "planted_risk", tuple(int(i) for i in self.planted_risk))
        object.__setattr__(self, "planted_protective", tuple(int(i) for i in self.planted_protective))
        object.__setattr__(
            self,
            "planted_duplicate_pairs",
            tuple((int(a), int(b)) for a, b in self.planted_duplicate_pairs),
        )
        object.__setattr__(self, "planted_near_constant", tuple(int(i) for i in self.planted_near_constant))
        self.validate()

    def validate(self):
        if self.n_subjects < 1 or self.n_features < 1:
            raise SimulationError("n_subjects and n_features must be positive")
        if not 0.0 < self.prevalence < 1.0:
            raise SimulationError(f"prevalence must be in (0,1), got {self.prevalence}")
        if self.noise_scale < 0 or self.effect_size < 0:
            raise SimulationError("noise_scale and effect_size must be nonnegative")
        if not 0.0 < self.near_constant_fraction <= 1.0:
            raise SimulationError("near_constant_fraction must be in (0,1]")
        groups = [
            set(self.planted_risk),
            set(self.planted_protective),
            {i for pair in self.planted_duplicate_pairs for i in pair},
            set(self.planted_near_constant),
        ]
        flat = [i for g in groups for i in g]
        if len(flat) != len(set(flat)):
            raise SimulationError("planted feature sets must be disjoint")
        if any(i < 0 or i >= self.n_features for i in flat):
            raise SimulationError(f"planted indices must lie in [0, {self.n_features})")
        for a, b in self.planted_duplicate_pairs:
            if a == b:
                raise SimulationError(f"duplicate pair ({a},{b}) must reference distinct features")
        if self.prevalence * self.n_subjects < 5:
            raise SimulationError(
                f"prevalence {self.prevalence} x {self.n_subjects} subjects gives fewer than 5 positives"
            )

    def to_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "n_features": self.n_features,
            "prevalence": self.prevalence,
            "planted_risk": list(self.planted_risk),
            "planted_protective": list(self.planted_protective),
            "planted_duplicate_pairs": [list(p) for p in self.planted_duplicate_pairs],
            "planted_near_constant": list(self.planted_near_constant),
            "noise_scale": self.noise_scale,
            "effect_size": self.effect_size,
            "near_constant_fraction": self.near_constant_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SimulationError(f"unknown simulation settings: {sorted(unknown)}")
        d = dict(d)
        if "planted_duplicate_pairs" in d:
            d["planted_duplicate_pairs"] = tuple(tuple(p) for p in d["planted_duplicate_pairs"])
        return cls(**d)


def simulate_cohort(config: SimConfig) -> Cohort:
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, d = config.n_subjects, config.n_features

    n_pos = int(round(config.prevalence * n))
    labels = np.zeros(n, dtype=np.int8)
    labels[rng.permutation(n)[:n_pos]] = 1

    means = rng.uniform(0.05, 0.35, size=d)
    concentration = rng.uniform(4.0, 12.0, size=d)
    X = rng.beta(means * concentration, (1.0 - means) * concentration, size=(n, d))

    pos = labels == 1
    # planted bumps sit away from 0 so clamping rarely bites
    centres = means + 0.15
    for j in config.planted_risk:
        bump = rng.normal(0.0, 1.0, size=n) * config.noise_scale
        X[:, j] = centres[j] + np.where(pos, config.effect_size, 0.0) + bump
    for j in config.planted_protective:
        bump = rng.normal(0.0, 1.0, size=n) * config.noise_scale
        X[:, j] = centres[j] + np.where(pos, 0.0, config.effect_size) + bump
    for a, b in config.planted_duplicate_pairs:
        jitter = rng.normal(0.0, 1.0, size=n) * (0.05 * X[:, a].std())
        X[:, b] = X[:, a] + jitter
    for j in config.planted_near_constant:
        keep = rng.random(n) >= config.near_constant_fraction
        X[:, j] = np.where(keep, X[:, j], 0.0)

    np.clip(X, 0.0, 1.0, out=X)
    width = max(5, len(str(n)))
    ids = tuple(f"S{i:0{width}d}" for i in range(n))
    return Cohort(ids, X, labels, tuple(default_feature_names(d)))
