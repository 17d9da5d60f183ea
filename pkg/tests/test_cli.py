import json

import pytest

from riskboost import cli

SMALL = {
    "seed": 3,
    "simulate": {"n_subjects": 500, "n_features": 12, "prevalence": 0.12, "planted_risk": [0, 1],
                 "planted_protective": [2], "planted_duplicate_pairs": [[4, 5]], "planted_near_constant": [8],
                 "effect_size": 0.25},
    "select": {"cv_folds": 3, "evaluator": {"n_trees": 5, "max_depth": 2, "learning_rate": 0.3}},
    "train": {"cv_folds": 3, "grid": {"n_trees": [10, 20], "max_depth": [2], "learning_rate": [0.3],
                                      "scale_pos_weight": [1.0]}},
    "explain": {"top_k": 5, "dependence_top": 3},
    "baseline": {"k_grid": [3, 5], "cv_folds": 3},
}


def _config(tmp_path, extra=None, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps({**SMALL, **(extra or {})}))
    return str(path)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _config(root)
    out = root / "a"
    assert cli.main(["--config", cfg, "--workers", "1", "run-all", "--out", str(out)]) == 0
    return root, cfg, out


def test_run_all_writes_a_consistent_manifest(run):
    _, _, out = run
    assert cli.verify_manifest(out) == []
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["stages"]) == {"simulate", "select", "train", "evaluate", "explain", "errors", "baseline"}
    for name in ("model.json", "eval_report.json", "attributions.csv", "error_analysis.json", "comparison.json",
                 "roc.svg", "importance.svg"):
        assert (out / name).exists(), name


def test_rerun_is_byte_identical(run):
    root, cfg, out = run
    again = root / "b"
    assert cli.main(["--config", cfg, "--workers", "2", "run-all", "--out", str(again)]) == 0
    assert cli.manifest_hashes(again) == cli.manifest_hashes(out)


def test_tampered_output_is_reported(run, tmp_path):
    import shutil
    _, _, out = run
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    (copy / "roc_points.csv").write_text("tampered\n")
    problems = cli.verify_manifest(copy)
    assert problems and any("roc_points.csv" in p for p in problems)


def test_evaluate_reports_reference_crosscheck(run):
    _, _, out = run
    rep = json.loads((out / "eval_report.json").read_text())
    assert 0.0 <= rep["auc_roc"] <= 1.0
    check = rep["reference_crosscheck"]
    assert check["from_reported_rates"]["implied_tp"] == 9
    assert not check["consistent"] and "TP=10" in check["notes"][0]


def test_threshold_monotonicity(run, tmp_path):
    _, cfg, out = run
    positives = []
    for thr in (0.05, 0.2, 0.5, 0.9):
        d = tmp_path / f"t{thr}"
        assert cli.main(["--config", cfg, "evaluate", "--model", str(out / "model.json"),
                         "--cohort", str(out / "cohort.csv"), "--out", str(d), "--threshold", str(thr),
                         "--no-svg"]) == 0
        cm = json.loads((d / "eval_report.json").read_text())["confusion"]
        positives.append(cm["tp"] + cm["fp"])
        assert not (d / "roc.svg").exists()
    assert positives == sorted(positives, reverse=True)


def test_no_fp_note(run, tmp_path):
    _, cfg, out = run
    d = tmp_path / "err"
    assert cli.main(["--config", cfg, "errors", "--model", str(out / "model.json"),
                     "--cohort", str(out / "cohort.csv"), "--out", str(d), "--threshold", "0.999999"]) == 0
    doc = json.loads((d / "error_analysis.json").read_text())
    assert doc["counts"]["fp"] == 0
    assert "no FP cases at this threshold" in doc["notes"]


def test_comparison_document(run):
    _, _, out = run
    comp = json.loads((out / "comparison.json").read_text())
    assert set(comp) == {"boosted", "knn"}
    assert set(comp["boosted"]) == set(comp["knn"])


def test_missing_model_exits_2(run, tmp_path, capsys):
    _, cfg, out = run
    code = cli.main(["--config", cfg, "evaluate", "--model", str(tmp_path / "nope.json"),
                     "--cohort", str(out / "cohort.csv"), "--out", str(tmp_path / "e")])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_empty_cohort_exits_2(run, tmp_path):
    _, cfg, _ = run
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert cli.main(["--config", cfg, "select", "--cohort", str(empty), "--out", str(tmp_path / "s")]) == 2


@pytest.mark.parametrize("content", ["{not json", "[1, 2]", '{"bogus": {}}', '{"seed": -1}'])
def test_bad_config_exits_2(tmp_path, content):
    path = tmp_path / "bad.json"
    path.write_text(content)
    assert cli.main(["--config", str(path), "simulate", "--out", str(tmp_path / "c.csv")]) == 2
    assert cli.main(["--config", str(tmp_path / "absent.json"), "simulate", "--out", str(tmp_path / "c.csv")]) == 2


def test_seed_environment_override(tmp_path, monkeypatch):
    cfg = _config(tmp_path)
    monkeypatch.setenv("RISKBOOST_SEED", "11")
    assert cli.load_config(cfg)["seed"] == 11
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["--config", cfg, "simulate", "--out", str(a)]) == 0
    monkeypatch.setenv("RISKBOOST_SEED", "12")
    assert cli.main(["--config", cfg, "simulate", "--out", str(b)]) == 0
    assert a.read_bytes() != b.read_bytes()
    monkeypatch.setenv("RISKBOOST_SEED", "x")
    assert cli.main(["--config", cfg, "simulate", "--out", str(a)]) == 2
