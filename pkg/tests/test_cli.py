import json

import pytest

from crsbench.cli import (
    EXIT_LEAKAGE,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_REPLAY_MISS,
    EXIT_VALIDATION,
    main,
)
from crsbench.cohort import label_records, parse_cohort, stratified_split
from crsbench.protocol import build_prompt, load_prompt_template, serialize_case, store_replay_responses


@pytest.fixture
def cohort_csv(tmp_path):
    out = tmp_path / "cohort.csv"
    assert main(["synth", "--n", "80", "--seed", "1", "--out", str(out)]) == EXIT_OK
    return out


def test_synth_writes_csv_and_respects_force(tmp_path, cohort_csv, schema):
    records, report = parse_cohort(cohort_csv.read_bytes(), schema)
    assert report.rejected == 0
    assert len(records) == 80
    assert main(["synth", "--n", "80", "--seed", "1", "--out", str(cohort_csv)]) == EXIT_VALIDATION
    assert main(
        ["synth", "--n", "80", "--seed", "1", "--out", str(cohort_csv), "--force"]
    ) == EXIT_OK


def test_synth_rejects_bad_n(tmp_path):
    assert main(["synth", "--n", "0", "--seed", "1", "--out", str(tmp_path / "x.csv")]) == EXIT_VALIDATION


def test_preprocess_artifacts(tmp_path, cohort_csv):
    out_dir = tmp_path / "prep"
    code = main(["preprocess", "--cohort", str(cohort_csv), "--out-dir", str(out_dir), "--seed", "3"])
    assert code == EXIT_OK
    split = json.loads((out_dir / "split.json").read_text())
    assert split["seed"] == 3
    assert len(split["train_ids"]) + len(split["test_ids"]) == 80
    assert len(split["test_ids"]) == 16
    scaler = json.loads((out_dir / "scaler.json").read_text())
    assert set(scaler["columns"]) == {"SNOT22_BLN_TOTAL", "Age", "BLN_CT_TOTAL", "BLN_ENDO_TOTAL"}
    rej = json.loads((out_dir / "rejections.json").read_text())
    assert rej["rows_total"] == 80 and rej["accepted"] == 80


def test_missing_cohort_is_validation_error(tmp_path):
    assert main(
        ["preprocess", "--cohort", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path / "o")]
    ) == EXIT_VALIDATION


def test_postop_column_aborts_with_leakage_code(tmp_path, cohort_csv):
    lines = cohort_csv.read_text().splitlines()
    tainted = tmp_path / "tainted.csv"
    tainted.write_text(
        "\n".join([lines[0] + ",POSTOP_ENDO_SCORE"] + [l + ",3" for l in lines[1:]]) + "\n"
    )
    code = main(["preprocess", "--cohort", str(tainted), "--out-dir", str(tmp_path / "o")])
    assert code == EXIT_LEAKAGE


def test_train_predict_evaluate_flow(tmp_path, cohort_csv):
    model_file = tmp_path / "logreg.json"
    assert main(
        ["train", "--cohort", str(cohort_csv), "--model", "logreg", "--out", str(model_file)]
    ) == EXIT_OK
    preds = tmp_path / "preds.json"
    assert main(
        ["predict", "--model-file", str(model_file), "--cohort", str(cohort_csv), "--out", str(preds)]
    ) == EXIT_OK
    doc = json.loads(preds.read_text())
    assert doc["model_name"] == "logreg"
    assert len(doc["case_ids"]) == 16
    assert set(doc["hard_labels"]) <= {0, 1}
    report_dir = tmp_path / "reports"
    assert main(
        ["evaluate", "--predictions", str(preds), "--out-dir", str(report_dir)]
    ) == EXIT_OK
    report = json.loads((report_dir / "logreg_report.json").read_text())
    assert 0.0 <= report["auroc"] <= 1.0
    assert (report_dir / "logreg_report.md").exists()
    assert (report_dir / "curves" / "logreg_roc.csv").exists()


def test_compare_command(tmp_path, cohort_csv):
    model_file = tmp_path / "gnb.json"
    assert main(
        ["train", "--cohort", str(cohort_csv), "--model", "gnb", "--out", str(model_file)]
    ) == EXIT_OK
    pred_a = tmp_path / "a.json"
    assert main(
        ["predict", "--model-file", str(model_file), "--cohort", str(cohort_csv), "--out", str(pred_a)]
    ) == EXIT_OK
    out = tmp_path / "cmp.json"
    assert main(
        ["compare", "--pred-a", str(pred_a), "--pred-b", str(pred_a), "--out", str(out)]
    ) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["delong"]["flagged_zero_variance"] is True
    assert doc["winners"]["auroc"] == "tie"


def test_compare_single_class_predictions_is_numeric_failure(tmp_path):
    preds = tmp_path / "p.json"
    preds.write_text(json.dumps({
        "model_name": "broken",
        "case_ids": ["a", "b", "c"],
        "labels": [1, 1, 1],
        "scores": [0.5, 0.6, 0.7],
        "hard_labels": [1, 1, 1],
    }))
    assert main(
        ["compare", "--pred-a", str(preds), "--pred-b", str(preds), "--out", str(tmp_path / "o.json")]
    ) == EXIT_NUMERIC


def test_importance_command(tmp_path, cohort_csv):
    model_file = tmp_path / "logreg.json"
    assert main(
        ["train", "--cohort", str(cohort_csv), "--model", "logreg", "--out", str(model_file)]
    ) == EXIT_OK
    out = tmp_path / "imp.json"
    assert main(
        ["importance", "--model-file", str(model_file), "--cohort", str(cohort_csv),
         "--repeats", "3", "--out", str(out)]
    ) == EXIT_OK
    rows = json.loads(out.read_text())
    assert len(rows) == 21
    deltas = [r["mean_delta_balanced_accuracy"] for r in rows]
    assert deltas == sorted(deltas, reverse=True)


def test_rag_build_command():
    assert main(["rag-build"]) == EXIT_OK


def test_genai_replay_miss_exit_code(tmp_path, cohort_csv):
    empty_store = tmp_path / "store"
    empty_store.mkdir()
    code = main([
        "genai", "--replay-store", str(empty_store), "--cohort", str(cohort_csv),
        "--model-id", "model-x", "--out", str(tmp_path / "p.json"),
    ])
    assert code == EXIT_REPLAY_MISS


def test_genai_replay_flow(tmp_path, cohort_csv, schema):
    # seed the store with canned responses for every test-split prompt
    records, _ = parse_cohort(cohort_csv.read_bytes(), schema)
    labeled, labels, _ = label_records(records)
    split = stratified_split(labeled, 0.2, seed=0)
    template = load_prompt_template()
    store = tmp_path / "store"
    for rec in labeled:
        if rec.patient_id not in split.test_ids:
            continue
        _, prompt_hash = build_prompt([serialize_case(rec, schema)], template)
        reply = f"PREDICTION: {labels[rec.patient_id]}\nCONFIDENCE: somewhat confident"
        store_replay_responses(store, prompt_hash, [reply] * 5)

    out = tmp_path / "genai_preds.json"
    audit = tmp_path / "audit.jsonl"
    code = main([
        "genai", "--replay-store", str(store), "--cohort", str(cohort_csv),
        "--model-id", "model-x", "--audit-log", str(audit), "--out", str(out),
    ])
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["hard_labels"] == doc["labels"]  # replay echoed the truth
    assert len(audit.read_text().splitlines()) == 1 + len(doc["case_ids"])


def test_genai_live_mode_rejected(tmp_path, cohort_csv):
    code = main([
        "genai", "--mode", "live", "--replay-store", str(tmp_path), "--cohort", str(cohort_csv),
        "--model-id", "m", "--out", str(tmp_path / "p.json"),
    ])
    assert code == EXIT_VALIDATION


def test_run_pipeline_and_report(tmp_path):
    config = {
        "seed": 2,
        "out_dir": str(tmp_path / "run"),
        "synthetic": {"n": 80},
        "models": ["logreg", "heuristic"],
    }
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(config))
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    run_dir = tmp_path / "run"
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["models"] == ["logreg", "heuristic"]
    assert manifest["seed"] == 2
    assert manifest["split"]["test"] == 16
    assert (run_dir / "heuristic_traces.jsonl").exists()
    assert not (run_dir / ".lock").exists()  # released after the run
    assert main(["report", "--run-dir", str(run_dir)]) == EXIT_OK
    summary = (run_dir / "summary.md").read_text()
    assert "logreg" in summary and "heuristic" in summary


def test_run_requires_seed(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"out_dir": str(tmp_path / "r")}))
    assert main(["run", "--config", str(cfg)]) == EXIT_VALIDATION


def test_run_lock_conflict(tmp_path):
    out_dir = tmp_path / "run"
    out_dir.mkdir()
    (out_dir / ".lock").touch()
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "out_dir": str(out_dir), "synthetic": {"n": 40}}))
    assert main(["run", "--config", str(cfg)]) == EXIT_VALIDATION
    assert (out_dir / ".lock").exists()  # a foreign lock is left in place


def test_bad_json_config_is_validation_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert main(["run", "--config", str(cfg)]) == EXIT_VALIDATION
