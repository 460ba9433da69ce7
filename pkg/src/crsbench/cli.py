"""Operator surface: configuration loading, pipeline orchestration, artifacts.

Subcommands: synth, preprocess, train, predict, genai, rag-build, evaluate,
compare, importance, report, run. Exit codes: 0 success, 2 validation error,
3 leakage violation, 4 replay miss, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import csv as csv_mod
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import (
    CohortError,
    LeakageError,
    encode_matrix,
    fit_scaler,
    label_records,
    leakage_guard,
    parse_cohort,
    serialize_cohort,
    stratified_split,
)
from .heuristic import predict_heuristic
from .metrics import (
    MetricError,
    PredictionSet,
    compare as compare_sets,
    evaluate,
    permutation_importance,
    write_curve_csvs,
    write_report_json,
)
from .models import (
    DivergenceError,
    LossConfig,
    ModelError,
    load_model,
    predict_hard,
    predict_proba,
    save_model,
    train_gnb,
    train_logreg,
    train_mlp,
)
from .protocol import (
    AuditLog,
    DecodingParams,
    ModelIdentity,
    ProtocolError,
    ReplayClient,
    ReplayMissError,
    load_prompt_template,
    proxy_score,
    run_trial,
)
from .rag import Bm25Index, RagError, case_query, load_corpus
from .schema import SchemaError, load_schema
from .synthetic import GeneratorConfig, generate_synthetic

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_LEAKAGE = 3
EXIT_REPLAY_MISS = 4
EXIT_NUMERIC = 5


class CliError(ValueError):
    """Usage/validation failure; maps to exit code 2."""


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_records(cohort_path: Path, schema):
    records, report = parse_cohort(cohort_path.read_bytes(), schema)
    if not records:
        raise CliError(f"no valid records in {cohort_path}")
    return records, report


def _guard_csv_header(cohort_path: Path, schema) -> None:
    """Run the leakage guard over raw CSV columns before anything else.

    The sanctioned label column and the id column are exempt; any other
    blocklisted column halts the run.
    """
    header_line = cohort_path.read_text(encoding="utf-8").splitlines()[0]
    columns = next(csv_mod.reader(io.StringIO(header_line)))
    candidates = [c for c in columns if c not in ("PATIENT_ID", "SNOT22_6MO_TOTAL")]
    leakage_guard(candidates, schema.blocklist)


def _write_predictions(path: Path, name, case_ids, labels, scores, hard):
    path.write_text(
        json.dumps(
            {
                "model_name": name,
                "case_ids": list(case_ids),
                "labels": [int(v) for v in labels],
                "scores": [float(v) for v in scores],
                "hard_labels": [int(v) for v in hard],
            },
            indent=1,
        ),
        encoding="utf-8",
    )


def _read_predictions(path: Path) -> tuple[str, PredictionSet]:
    doc = json.loads(path.read_text(encoding="utf-8"))
    return doc["model_name"], PredictionSet(
        tuple(doc["case_ids"]),
        np.array(doc["labels"]),
        np.array(doc["scores"]),
        np.array(doc["hard_labels"]),
    )


def _report_markdown(report) -> str:
    m = report.metrics
    lines = [
        f"# Evaluation: {report.model_name}",
        "",
        f"Confusion matrix [tn, fp; fn, tp]: [{report.cm.tn}, {report.cm.fp}; "
        f"{report.cm.fn}, {report.cm.tp}] (n={report.cm.n})",
        "",
        "| metric | value |",
        "|---|---|",
        f"| accuracy | {m['accuracy']:.4f} |",
        f"| precision (class 0) | {m['precision0']:.4f} |",
        f"| recall (class 0) | {m['recall0']:.4f} |",
        f"| precision (class 1) | {m['precision1']:.4f} |",
        f"| recall (class 1) | {m['recall1']:.4f} |",
        f"| F1 (class 1) | {m['f1_pos']:.4f} |",
        f"| balanced accuracy | {m['balanced_accuracy']:.4f} |",
        f"| AUROC | {report.auroc:.4f} |",
        f"| average precision | {report.average_precision:.4f} |",
        f"| Brier | {report.brier:.4f} |",
    ]
    if report.calibration_on_rescaled_proxy:
        lines.append("")
        lines.append(
            "Calibration block computed on linearly rescaled proxy scores "
            "(hard-label model)."
        )
    if m["flags"]:
        lines.append("")
        lines.extend(f"- flag: {f}" for f in m["flags"])
    return "\n".join(lines) + "\n"


def _emit_report(pred_set: PredictionSet, name: str, out_dir: Path) -> None:
    report = evaluate(pred_set, model_name=name)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out_dir / f"{name}_report.json")
    (out_dir / f"{name}_report.md").write_text(_report_markdown(report), encoding="utf-8")
    write_curve_csvs(report, out_dir / "curves")


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        raise CliError(f"{out} exists; pass --force to overwrite")
    if args.n < 1:
        raise CliError("--n must be >= 1")
    schema = load_schema(args.schema)
    records = generate_synthetic(args.n, args.seed, GeneratorConfig())
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(serialize_cohort(records, schema))
    _, labels, _ = label_records(records)
    prevalence = sum(labels.values()) / len(labels)
    print(f"wrote {len(records)} records to {out} (label prevalence {prevalence:.3f})")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    schema = load_schema(args.schema)
    cohort_path = Path(args.cohort)
    _guard_csv_header(cohort_path, schema)
    records, rejection = _load_records(cohort_path, schema)
    labeled, labels, unlabeled = label_records(records)
    split = stratified_split(labeled, args.test_fraction, args.seed)
    by_id = {r.patient_id: r for r in labeled}
    scaler = fit_scaler([by_id[i] for i in sorted(split.train_ids)], schema)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "split.json").write_text(
        json.dumps(
            {
                "seed": split.seed,
                "train_ids": sorted(split.train_ids),
                "test_ids": sorted(split.test_ids),
                "label_prevalence_train": split.label_prevalence_train,
                "label_prevalence_test": split.label_prevalence_test,
            },
            indent=1,
        ),
        encoding="utf-8",
    )
    (out_dir / "scaler.json").write_text(
        json.dumps(
            {
                "columns": list(scaler.columns),
                "means": list(scaler.means),
                "sds": list(scaler.sds),
                "state_id": scaler.state_id,
            },
            indent=1,
        ),
        encoding="utf-8",
    )
    (out_dir / "rejections.json").write_text(
        json.dumps(
            {
                "rows_total": rejection.rows_total,
                "accepted": rejection.accepted,
                "rejections": [{"row": r, "reason": why} for r, why in rejection.rejections],
                "unlabeled": unlabeled,
            },
            indent=1,
        ),
        encoding="utf-8",
    )
    print(
        f"split: {len(split.train_ids)} train / {len(split.test_ids)} test, "
        f"prevalence {split.label_prevalence_train:.3f}/{split.label_prevalence_test:.3f}"
    )
    return EXIT_OK


def _train_one(kind, X, y, feature_names, schema, seed, loss_kind):
    if kind == "logreg":
        from .models import inverse_prevalence_weights

        return train_logreg(
            X, y, feature_names, class_weights=inverse_prevalence_weights(y),
            l2=1e-3, seed=seed, schema=schema,
        )
    if kind == "gnb":
        return train_gnb(X, y, feature_names, schema=schema)
    if kind == "mlp":
        if loss_kind == "focal":
            p0 = float(np.mean(np.asarray(y) == 0))
            loss = LossConfig(kind="focal", gamma=2.0, alpha=1.0 - p0)
        else:
            loss = LossConfig(kind="weighted")
        return train_mlp(X, y, feature_names, loss=loss, seed=seed, schema=schema)
    raise CliError(f"unknown model kind: {kind}")


def cmd_train(args) -> int:
    schema = load_schema(args.schema)
    cohort_path = Path(args.cohort)
    _guard_csv_header(cohort_path, schema)
    records, _ = _load_records(cohort_path, schema)
    labeled, labels, _ = label_records(records)
    split = stratified_split(labeled, args.test_fraction, args.seed)
    by_id = {r.patient_id: r for r in labeled}
    train = [by_id[i] for i in sorted(split.train_ids)]
    scaler = fit_scaler(train, schema)
    X = encode_matrix(train, schema, scaler)
    y = np.array([labels[r.patient_id] for r in train])
    model = _train_one(args.model, X, y, schema.feature_order, schema, args.seed, args.loss)
    save_model(model, args.out)
    print(f"trained {args.model} on {len(train)} cases -> {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    schema = load_schema(args.schema)
    model = load_model(args.model_file, schema)
    cohort_path = Path(args.cohort)
    _guard_csv_header(cohort_path, schema)
    records, _ = _load_records(cohort_path, schema)
    labeled, labels, _ = label_records(records)
    split = stratified_split(labeled, args.test_fraction, args.seed)
    by_id = {r.patient_id: r for r in labeled}
    train = [by_id[i] for i in sorted(split.train_ids)]
    test = [by_id[i] for i in sorted(split.test_ids)]
    scaler = fit_scaler(train, schema)
    X_test = encode_matrix(test, schema, scaler)
    scores = predict_proba(model, X_test)
    hard = (scores >= args.threshold).astype(int)
    _write_predictions(
        Path(args.out),
        model.kind,
        [r.patient_id for r in test],
        [labels[r.patient_id] for r in test],
        scores,
        hard,
    )
    print(f"wrote {len(test)} predictions to {args.out}")
    return EXIT_OK


def cmd_genai(args) -> int:
    schema = load_schema(args.schema)
    cohort_path = Path(args.cohort)
    _guard_csv_header(cohort_path, schema)
    records, _ = _load_records(cohort_path, schema)
    labeled, labels, _ = label_records(records)
    split = stratified_split(labeled, args.test_fraction, args.seed)
    by_id = {r.patient_id: r for r in labeled}
    test = [by_id[i] for i in sorted(split.test_ids)]

    if args.mode != "replay":
        raise CliError("only replay mode is wired in; live adapters plug into ModelClient")
    client = ReplayClient(args.replay_store)
    identity = ModelIdentity(args.vendor, args.model_id, args.access_date)
    decoding = DecodingParams(temperature=args.temperature, top_p=args.top_p)
    template = load_prompt_template(args.template)
    audit = AuditLog(args.audit_log) if args.audit_log else None

    rag_index = None
    if args.rag:
        rag_index = Bm25Index(load_corpus(args.corpus))

    from .protocol import serialize_case

    case_ids, scores, hard = [], [], []
    for rec in test:
        passages = None
        if rag_index is not None:
            passages, _ = rag_index.retrieve(case_query(serialize_case(rec, schema)), k=args.rag_k)
        transcript = run_trial(
            client, rec, schema, identity, decoding, k=args.k,
            template=template, rag_passages=passages, audit_log=audit,
        )
        case_ids.append(rec.patient_id)
        agg = transcript.aggregate
        scores.append(agg.mean_proxy if agg.mean_proxy is not None else 0.0)
        hard.append(agg.final_label)
    _write_predictions(
        Path(args.out), args.model_id,
        case_ids, [labels[i] for i in case_ids], scores, hard,
    )
    print(f"ran {len(test)} replay trials -> {args.out}")
    return EXIT_OK


def cmd_rag_build(args) -> int:
    corpus = load_corpus(args.corpus)
    index = Bm25Index(corpus)
    print(
        f"indexed {index.n_docs} passages, vocabulary {len(index.postings)} terms, "
        f"avg length {index.avg_doc_length:.1f} tokens"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    name, pred_set = _read_predictions(Path(args.predictions))
    _emit_report(pred_set, args.name or name, Path(args.out_dir))
    print(f"evaluation written under {args.out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    name_a, pred_a = _read_predictions(Path(args.pred_a))
    name_b, pred_b = _read_predictions(Path(args.pred_b))
    result = compare_sets(pred_a, pred_b, seed=args.seed)
    doc = {"model_a": name_a, "model_b": name_b, **result}
    Path(args.out).write_text(json.dumps(doc, indent=1), encoding="utf-8")
    print(
        f"delong p={result['delong']['p_value']:.4f}, "
        f"mcnemar p={result['mcnemar']['p_value']:.4f} -> {args.out}"
    )
    return EXIT_OK


def cmd_importance(args) -> int:
    schema = load_schema(args.schema)
    model = load_model(args.model_file, schema)
    cohort_path = Path(args.cohort)
    _guard_csv_header(cohort_path, schema)
    records, _ = _load_records(cohort_path, schema)
    labeled, labels, _ = label_records(records)
    split = stratified_split(labeled, args.test_fraction, args.seed)
    by_id = {r.patient_id: r for r in labeled}
    train = [by_id[i] for i in sorted(split.train_ids)]
    test = [by_id[i] for i in sorted(split.test_ids)]
    scaler = fit_scaler(train, schema)
    X = encode_matrix(test, schema, scaler)
    y = np.array([labels[r.patient_id] for r in test])

    def predict_fn(mat):
        return predict_hard(model, mat)

    rows = []
    for j, name in enumerate(schema.feature_order):
        res = permutation_importance(predict_fn, X, y, j, repeats=args.repeats, seed=args.seed + j)
        rows.append({"feature": name, **res})
    rows.sort(key=lambda r: -r["mean_delta_balanced_accuracy"])
    Path(args.out).write_text(json.dumps(rows, indent=1), encoding="utf-8")
    print(f"permutation importance for {len(rows)} features -> {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    reports = sorted(run_dir.glob("**/*_report.json"))
    if not reports:
        raise CliError(f"no *_report.json found under {run_dir}")
    lines = ["# Run summary", ""]
    for path in reports:
        doc = json.loads(path.read_text(encoding="utf-8"))
        m = doc["threshold_metrics"]
        lines.append(
            f"- {doc['model_name']}: accuracy {m['accuracy']:.3f}, "
            f"balanced accuracy {m['balanced_accuracy']:.3f}, AUROC {doc['auroc']:.3f}"
        )
    out = run_dir / "summary.md"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if "seed" not in config:
        raise CliError("config must pin a seed (no wall-clock default)")
    seed = int(config["seed"])
    out_dir = Path(config.get("out_dir", "run"))
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        lock.touch(exist_ok=False)
    except FileExistsError:
        raise CliError(f"run directory {out_dir} is locked by another process")
    try:
        return _run_pipeline(config, seed, out_dir, args)
    finally:
        lock.unlink(missing_ok=True)


def _run_pipeline(config, seed, out_dir, args) -> int:
    schema = load_schema(config.get("schema"))
    test_fraction = float(config.get("test_fraction", 0.2))

    if "cohort_csv" in config:
        cohort_path = Path(config["cohort_csv"])
        if not cohort_path.exists():
            raise CliError(f"cohort file not found: {cohort_path}")
    else:
        synth_cfg = config.get("synthetic", {"n": 524})
        records = generate_synthetic(int(synth_cfg.get("n", 524)), seed, GeneratorConfig())
        cohort_path = out_dir / "cohort.csv"
        cohort_path.write_bytes(serialize_cohort(records, schema))

    _guard_csv_header(cohort_path, schema)
    records, rejection = _load_records(cohort_path, schema)
    labeled, labels, _ = label_records(records)
    split = stratified_split(labeled, test_fraction, seed)
    by_id = {r.patient_id: r for r in labeled}
    train = [by_id[i] for i in sorted(split.train_ids)]
    test = [by_id[i] for i in sorted(split.test_ids)]
    scaler = fit_scaler(train, schema)
    X_train = encode_matrix(train, schema, scaler)
    X_test = encode_matrix(test, schema, scaler)
    y_train = np.array([labels[r.patient_id] for r in train])
    y_test = np.array([labels[r.patient_id] for r in test])
    case_ids = [r.patient_id for r in test]

    model_specs = config.get("models", ["mlp", "heuristic"])
    reports_dir = out_dir / "reports"
    produced = []
    for spec in model_specs:
        if spec in ("logreg", "gnb", "mlp"):
            model = _train_one(
                spec, X_train, y_train, schema.feature_order, schema, seed,
                config.get("loss", "weighted"),
            )
            save_model(model, out_dir / f"{spec}_model.json")
            scores = predict_proba(model, X_test)
            hard = (scores >= float(config.get("threshold", 0.5))).astype(int)
            name = spec
        elif spec == "heuristic":
            preds = [predict_heuristic(r) for r in test]
            scores = np.array([proxy_score(p.label, p.confidence) for p in preds])
            hard = np.array([p.label for p in preds])
            with (out_dir / "heuristic_traces.jsonl").open("w", encoding="utf-8") as fh:
                for r, p in zip(test, preds):
                    fh.write(json.dumps({"case_id": r.patient_id, **p.to_dict()}) + "\n")
            name = spec
        elif spec.startswith("replay:"):
            name = spec.split(":", 1)[1]
            replay_cfg = config.get("replay", {})
            client = ReplayClient(replay_cfg["store"])
            identity = ModelIdentity(
                replay_cfg.get("vendor", "replay"), name,
                replay_cfg.get("access_date", "1970-01-01"),
            )
            decoding = DecodingParams(**config.get("decoding", {}))
            audit = AuditLog(out_dir / "audit.jsonl")
            template = load_prompt_template(config.get("template"))
            scores, hard = [], []
            for rec in test:
                t = run_trial(
                    client, rec, schema, identity, decoding,
                    k=int(config.get("k", 5)), template=template, audit_log=audit,
                )
                scores.append(t.aggregate.mean_proxy if t.aggregate.mean_proxy is not None else 0.0)
                hard.append(t.aggregate.final_label)
            scores = np.array(scores)
            hard = np.array(hard)
        else:
            raise CliError(f"unknown model spec: {spec}")
        pred_path = out_dir / f"{name}_predictions.json"
        _write_predictions(pred_path, name, case_ids, y_test, scores, hard)
        _emit_report(
            PredictionSet(tuple(case_ids), y_test, np.asarray(scores), np.asarray(hard)),
            name, reports_dir,
        )
        produced.append(name)

    manifest = {
        "crsbench_version": __version__,
        "seed": seed,
        "test_fraction": test_fraction,
        "cohort_csv": str(cohort_path),
        "cohort_checksum": _sha256_file(cohort_path),
        "schema_version": schema.version,
        "schema_checksum": schema.checksum,
        "scaler_state_id": scaler.state_id,
        "n_records": len(records),
        "rejections": rejection.rejected,
        "split": {
            "train": len(split.train_ids),
            "test": len(split.test_ids),
            "prevalence_train": split.label_prevalence_train,
            "prevalence_test": split.label_prevalence_test,
        },
        "models": produced,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    print(f"run complete: {', '.join(produced)} -> {out_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crsbench")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--schema", default=None, help="schema file (packaged default)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--test-fraction", type=float, default=0.2)

    p = sub.add_parser("synth", help="generate a synthetic cohort CSV")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--schema", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="parse, label, split, fit scaler")
    p.add_argument("--cohort", required=True)
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a supervised model")
    p.add_argument("--cohort", required=True)
    p.add_argument("--model", required=True, choices=["logreg", "gnb", "mlp"])
    p.add_argument("--loss", default="weighted", choices=["weighted", "focal"])
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score the held-out split with a saved model")
    p.add_argument("--model-file", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("genai", help="run LLM trials (replay mode)")
    p.add_argument("--mode", default="replay", choices=["replay", "live"])
    p.add_argument("--replay-store", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--vendor", default="replay")
    p.add_argument("--model-id", required=True)
    p.add_argument("--access-date", default="1970-01-01")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--temperature", type=float, default=0.2)
    p.add_argument("--top-p", type=float, default=0.9)
    p.add_argument("--template", default=None)
    p.add_argument("--audit-log", default=None)
    p.add_argument("--rag", action="store_true")
    p.add_argument("--rag-k", type=int, default=5)
    p.add_argument("--corpus", default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_genai)

    p = sub.add_parser("rag-build", help="validate and summarize the BM25 corpus")
    p.add_argument("--corpus", default=None)
    p.set_defaults(func=cmd_rag_build)

    p = sub.add_parser("evaluate", help="full evaluation report for stored predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="paired DeLong/McNemar/bootstrap comparison")
    p.add_argument("--pred-a", required=True)
    p.add_argument("--pred-b", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("importance", help="permutation feature importance")
    p.add_argument("--model-file", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("report", help="summarize reports under a run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="orchestrate the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except LeakageError as exc:
        print(f"leakage violation: {exc}", file=sys.stderr)
        return EXIT_LEAKAGE
    except ReplayMissError as exc:
        print(f"replay miss: {exc}", file=sys.stderr)
        return EXIT_REPLAY_MISS
    except (DivergenceError, MetricError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CliError, CohortError, SchemaError, ModelError, ProtocolError, RagError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
