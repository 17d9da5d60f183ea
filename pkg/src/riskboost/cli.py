"""Command-line pipeline: simulate, select, train, evaluate, explain, errors, baseline, run-all.

Every stage reads a single JSON config (``--config``); stage flags override
it and ``RISKBOOST_SEED`` overrides the global seed. Each stage appends its
outputs, with SHA-256 hashes, to ``manifest.json`` in its output directory.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import baselines, erroranalysis, explain, gbdt, metrics, selection, svg, tune
from .data import SimConfig, SplitSpec, load_cohort, simulate_cohort, stratified_split, write_cohort
from .errors import ConfigError, ContractError, InputError, RiskboostError

log = logging.getLogger("riskboost")

SEED_ENV = "RISKBOOST_SEED"
MANIFEST = "manifest.json"

DEFAULT_CONFIG = {
    "seed": 7,
    "simulate": {},
    "split": {"test_fraction": 0.2},
    "select": {
        "dominance_threshold": selection.DOMINANCE_THRESHOLD,
        "correlation_threshold": selection.CORRELATION_THRESHOLD,
        "entropy_bins": selection.ENTROPY_BINS,
        "cv_folds": tune.DEFAULT_K,
        "evaluator": {},
    },
    "train": {"cv_folds": tune.DEFAULT_K, "grid": tune.Grid().to_dict(), "base": {}},
    "evaluate": {"threshold": metrics.DEFAULT_THRESHOLD, "svg": True},
    "explain": {"top_k": 20, "dependence_top": 9},
    "errors": {"threshold": metrics.DEFAULT_THRESHOLD, "waterfall_top_k": 10, "max_fp_cases": 5},
    "baseline": {"k_grid": list(baselines.DEFAULT_K_GRID), "metric": "euclidean", "weighting": "uniform",
                 "cv_folds": tune.DEFAULT_K},
}

# Published confusion matrix and precision/recall, cross-checked in every
# evaluation report.
REFERENCE_CONFUSION = {"tn": 1290, "fp": 2, "tp": 10, "fn": 25}
REFERENCE_RATES = {"precision": 0.818, "recall": 0.257}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("grid", "evaluator", "base", "simulate"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(user) - set(DEFAULT_CONFIG) - {"workers"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = _merge(cfg, user)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            cfg["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {cfg['seed']!r}")
    return cfg


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def record_stage(out_dir: Path, stage: str, outputs: dict[str, Path], cfg: dict, started: str,
                 inputs: dict[str, Path] | None = None) -> dict:
    """Add a stage entry to the output directory's manifest and return the manifest."""
    path = out_dir / MANIFEST
    manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {"stages": {}}
    entry = {
        "seed": cfg["seed"],
        "config": cfg.get(stage, {}),
        "outputs": {
            name: {"path": os.path.relpath(p, out_dir), "sha256": sha256(p)} for name, p in sorted(outputs.items())
        },
        "started_at": started,
        "finished_at": _now(),
    }
    if inputs:
        entry["inputs"] = {name: {"path": str(p), "sha256": sha256(Path(p))} for name, p in sorted(inputs.items())}
    manifest["stages"][stage] = entry
    manifest["config"] = {k: v for k, v in cfg.items() if k != "workers"}
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def verify_manifest(out_dir) -> list[str]:
    """Problems found re-reading a manifest: missing files or hash mismatches."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / MANIFEST).read_text(encoding="utf-8"))
    problems = []
    for stage, entry in manifest["stages"].items():
        for name, rec in entry["outputs"].items():
            p = out_dir / rec["path"]
            if not p.exists():
                problems.append(f"{stage}/{name}: missing {p}")
            elif sha256(p) != rec["sha256"]:
                problems.append(f"{stage}/{name}: hash mismatch for {p}")
    return problems


def manifest_hashes(out_dir) -> dict[str, str]:
    manifest = json.loads((Path(out_dir) / MANIFEST).read_text(encoding="utf-8"))
    return {
        f"{stage}/{name}": rec["sha256"]
        for stage, entry in manifest["stages"].items()
        for name, rec in entry["outputs"].items()
    }


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")
    return path


def _write_points(path: Path, header: tuple[str, str], pts) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for x, y in np.asarray(pts).tolist():
            fh.write(f"{x!r},{y!r}\n")
    return path


def _split(cohort, cfg):
    return stratified_split(cohort, SplitSpec(cfg["split"]["test_fraction"], cfg["seed"]))


def _pick(cohort, cfg, which: str):
    if which == "all":
        return cohort
    train, test = _split(cohort, cfg)
    return train if which == "train" else test


def _load_selection(path) -> selection.SelectionReport:
    try:
        return selection.SelectionReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise InputError(f"selection report not found: {path}") from None
    except (json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"malformed selection report {path}: {exc}") from None


def _train_config(section: dict, seed: int) -> gbdt.TrainConfig:
    try:
        return gbdt.TrainConfig.from_dict({**section, "seed": seed})
    except (ContractError, TypeError) as exc:
        raise ConfigError(f"invalid training settings {section}: {exc}") from None


# --- stages -----------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> Path:
    started = _now()
    sim = {"seed": cfg["seed"], **cfg["simulate"]}
    try:
        config = SimConfig.from_dict(sim)
    except TypeError as exc:
        raise ConfigError(f"invalid simulation settings: {exc}") from None
    cohort = simulate_cohort(config)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cohort(cohort, out)
    record_stage(out.parent, "simulate", {"cohort": out}, cfg, started)
    log.info("simulated %d subjects (%d positive) -> %s", cohort.n_subjects, cohort.n_positive, out)
    return out


def cmd_select(cfg: dict, cohort_path: Path, out_dir: Path, workers: int) -> selection.SelectionReport:
    started = _now()
    sc = cfg["select"]
    train, _ = _split(load_cohort(cohort_path), cfg)
    evaluator = selection.cv_auc_evaluator(_train_config(sc.get("evaluator", {}), cfg["seed"]), sc["cv_folds"])
    report = selection.select_features(
        train, sc["dominance_threshold"], sc["correlation_threshold"], sc["entropy_bins"],
        evaluator=evaluator, seed=cfg["seed"], workers=workers,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"report": out_dir / "selection.json", "prefix_auc": out_dir / "selection_prefix_auc.csv"}
    report.write_json(outputs["report"])
    report.write_prefix_csv(outputs["prefix_auc"])
    if cfg["evaluate"].get("svg", True):
        n = len(report.auc_by_prefix)
        pts = [((L - 1) / max(n - 1, 1), a) for L, a in report.auc_by_prefix]
        outputs["prefix_svg"] = out_dir / "selection_prefix_auc.svg"
        outputs["prefix_svg"].write_text(svg.curves({"CV AUC": pts}, "AUC by feature-prefix length",
                                                    "prefix length (scaled)", "AUC"))
    record_stage(out_dir, "select", outputs, cfg, started, {"cohort": cohort_path})
    log.info("selected %d of %d features (best CV AUC %.4f)", len(report.selected), train.n_features, report.best_auc)
    return report


def cmd_train(cfg: dict, cohort_path: Path, selection_path: Path, out_dir: Path, workers: int) -> gbdt.BoostedModel:
    started = _now()
    tc = cfg["train"]
    train, _ = _split(load_cohort(cohort_path), cfg)
    report = _load_selection(selection_path)
    try:
        grid = tune.Grid.from_dict(tc["grid"])
    except TypeError as exc:
        raise ConfigError(f"invalid grid: {exc}") from None
    base = _train_config(tc.get("base", {}), cfg["seed"])
    cv = tune.grid_search(train, report.selected, grid, tc["cv_folds"], cfg["seed"], workers, base)
    model = gbdt.fit(train, report.selected, cv.best_config)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"model": out_dir / "model.json", "cv": out_dir / "cv_result.json", "cv_table": out_dir / "cv_result.csv"}
    gbdt.save_model(model, outputs["model"])
    _write_json(outputs["cv"], cv.to_dict())
    cv.write_csv(outputs["cv_table"])
    record_stage(out_dir, "train", outputs, cfg, started, {"cohort": cohort_path, "selection": selection_path})
    log.info("trained %d trees (best mean AP %.4f)", len(model.trees), cv.best.mean)
    return model


def _reference_check() -> dict:
    c, r = REFERENCE_CONFUSION, REFERENCE_RATES
    return metrics.crosscheck_reported(c["tp"], c["fp"], c["tn"], c["fn"], r["precision"], r["recall"])


def cmd_evaluate(cfg: dict, model_path: Path, cohort_path: Path, out_dir: Path, which: str = "test") -> metrics.EvalReport:
    started = _now()
    model = gbdt.load_model(model_path)
    cohort = _pick(load_cohort(cohort_path), cfg, which)
    threshold = cfg["evaluate"]["threshold"]
    report = metrics.summarize(gbdt.predict_proba(model, cohort.features), cohort.labels, threshold)
    check = _reference_check()
    report.notes.extend(f"published reference matrix: {n}" for n in check["notes"])
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["split"] = which
    doc["reference_crosscheck"] = check
    outputs = {
        "report": _write_json(out_dir / "eval_report.json", doc),
        "roc": _write_points(out_dir / "roc_points.csv", ("fpr", "tpr"), report.roc_points),
        "pr": _write_points(out_dir / "pr_points.csv", ("recall", "precision"), report.pr_points),
    }
    if cfg["evaluate"].get("svg", True):
        outputs["roc_svg"] = out_dir / "roc.svg"
        outputs["roc_svg"].write_text(svg.curves({f"boosted (AUC {report.auc_roc:.3f})": report.roc_points},
                                                 "ROC", "false positive rate", "true positive rate", diagonal=True))
        outputs["pr_svg"] = out_dir / "pr.svg"
        outputs["pr_svg"].write_text(svg.curves({f"boosted (AP {report.auc_pr:.3f})": report.pr_points},
                                                "Precision-recall", "recall", "precision"))
    record_stage(out_dir, "evaluate", outputs, cfg, started, {"model": model_path, "cohort": cohort_path})
    log.info("AUC %.4f  AP %.4f  F1 %.4f", report.auc_roc, report.auc_pr, report.f1)
    return report


def cmd_explain(cfg: dict, model_path: Path, cohort_path: Path, out_dir: Path, workers: int,
                which: str = "test") -> explain.AttributionSet:
    started = _now()
    ec = cfg["explain"]
    model = gbdt.load_model(model_path)
    cohort = _pick(load_cohort(cohort_path), cfg, which)
    attr = explain.explain(model, cohort, workers)
    ranking = explain.global_importance(attr)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"attributions": out_dir / "attributions.csv", "importance": out_dir / "importance.csv",
               "summary": out_dir / "summary.csv", "dependence": out_dir / "dependence.csv"}
    attr.write_csv(outputs["attributions"])
    meta = attr.metadata()
    meta["split"] = which
    meta["max_local_accuracy_error"] = float(np.max(np.abs(attr.base_value + attr.phi.sum(axis=1) - attr.margins)))
    outputs["metadata"] = _write_json(out_dir / "attributions_meta.json", meta)
    ranking.write_csv(outputs["importance"])
    explain.write_records_csv(explain.summary_data(attr, cohort, ec["top_k"]), outputs["summary"])
    dep = []
    for j in ranking.indices[: ec["dependence_top"]]:
        for v, a in explain.dependence_data(attr, cohort, j):
            dep.append({"feature": attr.feature_names[j], "value": v, "attribution": a})
    explain.write_records_csv(dep, outputs["dependence"])
    if cfg["evaluate"].get("svg", True):
        outputs["importance_svg"] = out_dir / "importance.svg"
        outputs["importance_svg"].write_text(svg.bars(ranking.top(ec["top_k"]).entries, "Mean |attribution|"))
    record_stage(out_dir, "explain", outputs, cfg, started, {"model": model_path, "cohort": cohort_path})
    return attr


def cmd_errors(cfg: dict, model_path: Path, cohort_path: Path, out_dir: Path, workers: int,
               selection_path: Path | None = None, which: str = "test") -> dict:
    started = _now()
    ec = cfg["errors"]
    model = gbdt.load_model(model_path)
    cohort = _pick(load_cohort(cohort_path), cfg, which)
    scores = gbdt.predict_proba(model, cohort.features)
    part = erroranalysis.partition_outcomes(scores, cohort.labels, ec["threshold"])
    selected = _load_selection(selection_path).selected if selection_path else None
    out_dir.mkdir(parents=True, exist_ok=True)
    doc: dict = {"threshold": part.threshold, "counts": part.counts(), "split": which, "notes": [],
                 "reference_flagged": list(erroranalysis.REFERENCE_FLAGGED)}
    outputs = {}
    try:
        rows = erroranalysis.fn_vs_tp_report(cohort, part, selected)
        doc["fn_vs_tp"] = [r.to_dict() for r in rows]
        doc["flagged"] = [r.result.name for r in rows if r.flagged]
        outputs["ttests"] = out_dir / "fn_vs_tp.csv"
        erroranalysis.write_report_csv(rows, outputs["ttests"])
    except erroranalysis.AnalysisError as exc:
        doc["notes"].append(f"FN-vs-TP comparison skipped: {exc}")
    if part.fp.size == 0:
        doc["notes"].append("no FP cases at this threshold")
        doc["fp_cases"] = []
    else:
        fp_cohort = cohort.subset(part.fp)
        attr = explain.explain(model, fp_cohort, workers)
        doc["fp_cases"] = [
            erroranalysis.fp_case_study(attr, cohort, part, sid, ec["waterfall_top_k"])
            for sid in fp_cohort.subject_ids[: ec["max_fp_cases"]]
        ]
    outputs["report"] = _write_json(out_dir / "error_analysis.json", doc)
    record_stage(out_dir, "errors", outputs, cfg, started, {"model": model_path, "cohort": cohort_path})
    return doc


def cmd_baseline(cfg: dict, cohort_path: Path, selection_path: Path, out_dir: Path, workers: int,
                 model_path: Path | None = None) -> dict:
    started = _now()
    bc = cfg["baseline"]
    train, test = _split(load_cohort(cohort_path), cfg)
    features = _load_selection(selection_path).selected
    try:
        base = baselines.KnnConfig(metric=bc["metric"], weighting=bc["weighting"])
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    best, results = baselines.knn_grid_search(train, features, bc["k_grid"], base, bc["cv_folds"], cfg["seed"], workers)
    threshold = cfg["evaluate"]["threshold"]
    report = baselines.knn_evaluate(train, test, best, features, threshold)
    doc = {
        "config": best.to_dict(),
        "cv": [{"k": c.k, "mean_ap": float(np.mean(s)), "fold_ap": s} for c, s in results],
        "report": report.to_dict(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {
        "report": _write_json(out_dir / "knn_report.json", doc),
        "roc": _write_points(out_dir / "knn_roc_points.csv", ("fpr", "tpr"), report.roc_points),
    }
    if model_path is not None:
        model = gbdt.load_model(model_path)
        boosted = metrics.summarize(gbdt.predict_proba(model, test.features), test.labels, threshold)
        keys = ("auc_roc", "auc_pr", "accuracy", "precision", "recall", "f1")
        comparison = {"boosted": {k: getattr(boosted, k) for k in keys}, "knn": {k: getattr(report, k) for k in keys}}
        outputs["comparison"] = _write_json(out_dir / "comparison.json", comparison)
        if cfg["evaluate"].get("svg", True):
            outputs["comparison_svg"] = out_dir / "roc_comparison.svg"
            outputs["comparison_svg"].write_text(svg.curves(
                {f"boosted ({boosted.auc_roc:.3f})": boosted.roc_points, f"KNN ({report.auc_roc:.3f})": report.roc_points},
                "ROC comparison", "false positive rate", "true positive rate", diagonal=True))
    record_stage(out_dir, "baseline", outputs, cfg, started, {"cohort": cohort_path, "selection": selection_path})
    log.info("KNN k=%d AUC %.4f", best.k, report.auc_roc)
    return doc


def cmd_run_all(cfg: dict, out_dir: Path, workers: int, cohort_path: Path | None = None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    if cohort_path is None:
        cohort_path = cmd_simulate(cfg, out_dir / "cohort.csv")
    cmd_select(cfg, cohort_path, out_dir, workers)
    sel = out_dir / "selection.json"
    cmd_train(cfg, cohort_path, sel, out_dir, workers)
    model = out_dir / "model.json"
    cmd_evaluate(cfg, model, cohort_path, out_dir)
    cmd_explain(cfg, model, cohort_path, out_dir, workers)
    cmd_errors(cfg, model, cohort_path, out_dir, workers, sel)
    cmd_baseline(cfg, cohort_path, sel, out_dir, workers, model)
    return out_dir / MANIFEST


# --- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskboost", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--workers", type=int, default=None, help="worker threads (default: CPU count)")
    p.add_argument("--seed", type=int, default=None, help="override the global seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic cohort CSV")
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("select", help="three-stage feature selection on the training split")
    s.add_argument("--cohort", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("train", help="grid search and fit the boosted model")
    s.add_argument("--cohort", required=True, type=Path)
    s.add_argument("--selection", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)

    for name, help_ in (("evaluate", "metrics and curves"), ("explain", "TreeSHAP attributions"),
                        ("errors", "FN/TP t-tests and FP waterfalls")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--model", required=True, type=Path)
        s.add_argument("--cohort", required=True, type=Path)
        s.add_argument("--out", required=True, type=Path)
        s.add_argument("--split", choices=("test", "train", "all"), default="test")
        if name in ("evaluate", "errors"):
            s.add_argument("--threshold", type=float, default=None)
        if name == "evaluate":
            s.add_argument("--no-svg", action="store_true")
        if name == "explain":
            s.add_argument("--top-k", type=int, default=None)
        if name == "errors":
            s.add_argument("--selection", type=Path, default=None)

    s = sub.add_parser("baseline", help="KNN comparator")
    s.add_argument("--cohort", required=True, type=Path)
    s.add_argument("--selection", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--model", type=Path, default=None, help="boosted model for a combined comparison")

    s = sub.add_parser("run-all", help="every stage end to end")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--cohort", type=Path, default=None, help="existing cohort CSV (default: simulate one)")
    s.add_argument("--no-svg", action="store_true")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    workers = args.workers or cfg.get("workers") or os.cpu_count() or 1
    if getattr(args, "no_svg", False):
        cfg["evaluate"]["svg"] = False
    if getattr(args, "threshold", None) is not None:
        cfg["evaluate"]["threshold"] = cfg["errors"]["threshold"] = args.threshold
    if getattr(args, "top_k", None) is not None:
        cfg["explain"]["top_k"] = args.top_k

    cmd = args.command
    if cmd == "simulate":
        cmd_simulate(cfg, args.out)
    elif cmd == "select":
        cmd_select(cfg, args.cohort, args.out, workers)
    elif cmd == "train":
        cmd_train(cfg, args.cohort, args.selection, args.out, workers)
    elif cmd == "evaluate":
        cmd_evaluate(cfg, args.model, args.cohort, args.out, args.split)
    elif cmd == "explain":
        cmd_explain(cfg, args.model, args.cohort, args.out, workers, args.split)
    elif cmd == "errors":
        cmd_errors(cfg, args.model, args.cohort, args.out, workers, args.selection, args.split)
    elif cmd == "baseline":
        cmd_baseline(cfg, args.cohort, args.selection, args.out, workers, args.model)
    elif cmd == "run-all":
        cmd_run_all(cfg, args.out, workers, args.cohort)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except RiskboostError as exc:
        print(f"riskboost: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError, TypeError, ValueError) as exc:
        # config values of the wrong shape surface here
        print(f"riskboost: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
