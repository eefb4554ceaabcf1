"""Pipeline command line.

Stages write their artifacts into named subdirectories of the run directory
and stamp a manifest with a schema tag; every stage validates that its
upstream stage ran first. All randomness flows from the single config seed.

    r2gcn synth            --config run.cfg
    r2gcn ingest           --config run.cfg
    r2gcn featurize        --config run.cfg
    r2gcn graph            --config run.cfg [--students s0001,s0002] [--dump]
    r2gcn train            --config run.cfg [--variant r2gcn|rgcn_e2n|rgcn_no_e2n|lr|majority]
    r2gcn evaluate         --config run.cfg [--variant ...]
    r2gcn sweep-labels     --config run.cfg [--label-fraction ...]
    r2gcn analyze-distance --config run.cfg [--variant ...]
    r2gcn report           --config run.cfg
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import baselines as baselines_mod
from .config import RunConfig, config_hash, load_config
from .features import (
    FeatureConfig,
    FeatureVocab,
    MOUSE_FEATURE_NAMES,
    compute_question_stats,
    compute_student_stats,
    detect_generalized_clicks,
    export_feature_matrix,
    extract_mouse_features,
    question_feature_names,
    student_feature_names,
)
from .graph import (
    SIQGraph,
    build_personal_snapshot,
    dump_graph,
    snapshot_distances,
    write_distance_report,
)
from .ingest import Trajectory, first_trials, load_events, load_questions, load_scores
from .model import ModelConfig, VARIANTS, forward, init_params, logits_to_levels, wiring_for
from .optim import load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate
from .training import (
    StudentRunResult,
    TrainConfig,
    aggregate_results,
    label_size_sweep,
    run_experiment,
    write_report_json,
    write_student_csv,
)
from . import metrics

BASELINE_VARIANTS = ("lr", "majority")
MANIFEST = "manifest.json"


class StageError(Exception):
    """A pipeline precondition failed; the message names the missing stage."""


def _write_manifest(stage_dir: Path, stage: str, payload: dict) -> None:
    stage_dir.mkdir(parents=True, exist_ok=True)
    body = {"schema": f"r2gcn/stage-{stage}/v1"}
    body.update(payload)
    (stage_dir / MANIFEST).write_text(json.dumps(body, indent=2, sort_keys=True), encoding="utf-8")


def _require_stage(out: Path, stage: str, subdir: str | None = None) -> dict:
    path = out / (subdir or stage) / MANIFEST
    if not path.exists():
        raise StageError(f"missing artifact of stage '{stage}': run `r2gcn {stage}` first")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    expected = f"r2gcn/stage-{stage}/v1"
    if manifest.get("schema") != expected:
        raise StageError(
            f"stage '{stage}' artifact has schema {manifest.get('schema')!r}, expected {expected!r}"
        )
    return manifest


@dataclass
class RawData:
    trajectories: list[Trajectory]
    records: list
    questions: dict
    discarded: dict[str, int]


def _data_dir(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg.data_dir) if cfg.data_dir else out / "synth"


def _load_raw(cfg: RunConfig, out: Path) -> RawData:
    base = _data_dir(cfg, out)
    paths = {name: base / name for name in ("events.jsonl", "scores.csv", "questions.csv")}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise StageError(
            f"missing data files {missing}: run `r2gcn synth` first or point data_dir at a dataset"
        )
    trajectories, ev_disc = load_events(paths["events.jsonl"])
    records, sc_disc = load_scores(paths["scores.csv"])
    questions, q_disc = load_questions(paths["questions.csv"])
    return RawData(
        trajectories,
        records,
        questions,
        {"events": ev_disc, "scores": sc_disc, "questions": q_disc},
    )


def _feature_config(cfg: RunConfig) -> FeatureConfig:
    return FeatureConfig(
        drag_threshold_px=cfg.drag_threshold_px,
        attempt_gap_ms=cfg.attempt_gap_ms,
        utc_offset_hours=cfg.utc_offset_hours,
    )


def _resolve_cutoff(cfg: RunConfig, out: Path, raw: RawData) -> int:
    if cfg.feature_cutoff_ms >= 0:
        return cfg.feature_cutoff_ms
    synth_manifest = out / "synth" / MANIFEST
    if not cfg.data_dir and synth_manifest.exists():
        manifest = json.loads(synth_manifest.read_text(encoding="utf-8"))
        if "era_boundary_ms" in manifest:
            return int(manifest["era_boundary_ms"])
    times = [t.events[0].t_ms for t in raw.trajectories if t.events]
    return min(times) if times else 0


def _model_config(cfg: RunConfig, variant: str) -> ModelConfig:
    return ModelConfig(
        hidden=cfg.hidden,
        readout_hidden=cfg.readout_hidden,
        num_layers=cfg.num_layers,
        variant=variant,
    )


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        runs=cfg.runs,
        seed=cfg.seed,
        label_fraction=cfg.label_fraction,
    )


def _qualifying_students(raw: RawData, cfg: RunConfig, requested: list[str] | None) -> list[str]:
    traj_pairs = {(t.student_id, t.question_id) for t in raw.trajectories}
    counts: dict[str, int] = {}
    for r in first_trials(raw.records):
        if (r.student_id, r.question_id) in traj_pairs:
            counts[r.student_id] = counts.get(r.student_id, 0) + 1
    cohort = sorted(s for s, n in counts.items() if n >= cfg.min_records)
    if requested:
        missing = sorted(set(requested) - set(cohort))
        if missing:
            raise StageError(
                f"students {missing} do not qualify (need >= {cfg.min_records} records with trajectories)"
            )
        cohort = [s for s in cohort if s in set(requested)]
    elif cfg.max_students > 0:
        cohort = cohort[: cfg.max_students]
    if not cohort:
        raise StageError("no student qualifies for evaluation; lower min_records")
    return cohort


def _interaction_feature_cache(out: Path) -> dict[tuple[str, str], np.ndarray]:
    path = out / "featurize" / "interaction_features.csv"
    cache: dict[tuple[str, str], np.ndarray] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            cache[(row[0], row[1])] = np.array([float(v) for v in row[2:]], dtype=np.float64)
    return cache


def _build_graphs(
    cfg: RunConfig, out: Path, students: list[str] | None
) -> tuple[dict[str, SIQGraph], dict]:
    feat_manifest = _require_stage(out, "featurize")
    raw = _load_raw(cfg, out)
    cutoff = int(feat_manifest["feature_cutoff_ms"])
    vocab = FeatureVocab(math_dimensions=tuple(feat_manifest["math_dimensions"]))
    cohort = _qualifying_students(raw, cfg, students)
    cache = _interaction_feature_cache(out)
    s_stats, _ = compute_student_stats(
        raw.records, raw.questions, cutoff, vocab, level_thresholds=cfg.level_thresholds
    )
    q_stats, _ = compute_question_stats(
        raw.records, raw.questions, cutoff, vocab, level_thresholds=cfg.level_thresholds
    )
    graphs: dict[str, SIQGraph] = {}
    skipped: dict[str, str] = {}
    for sid in cohort:
        try:
            graphs[sid] = build_personal_snapshot(
                sid,
                raw.records,
                raw.trajectories,
                raw.questions,
                vocab=vocab,
                split_fractions=cfg.split_cuts(),
                min_records=cfg.min_records,
                feature_cutoff_ms=cutoff,
                feature_config=_feature_config(cfg),
                feature_cache=cache,
                stats_cache=(s_stats, q_stats),
                level_thresholds=cfg.level_thresholds,
            )
        except ValueError as exc:
            skipped[sid] = str(exc)
    if not graphs:
        raise StageError("every qualifying student failed snapshot construction")
    meta = {"cohort": cohort, "skipped": skipped, "feature_cutoff_ms": cutoff}
    return graphs, meta


# ---------------------------------------------------------------- stages

def cmd_synth(cfg: RunConfig, out: Path, args) -> int:
    synth_cfg = SynthConfig(
        num_students=cfg.synth_students,
        num_questions=cfg.synth_questions,
        interactions_per_student=cfg.synth_interactions,
        latent_dim=cfg.synth_latent_dim,
        noise_sigma=cfg.synth_noise_sigma,
        num_math_dimensions=cfg.synth_math_dimensions,
        seed=cfg.seed,
        history_fraction=cfg.synth_history_fraction,
        window_days=cfg.synth_window_days,
        second_trial_prob=cfg.synth_second_trial_prob,
    )
    result = generate(synth_cfg, out / "synth")
    _write_manifest(out / "synth", "synth", result.summary)
    print(f"synth: {result.summary['score_records']} records, {result.summary['events']} events")
    return 0


def cmd_ingest(cfg: RunConfig, out: Path, args) -> int:
    raw = _load_raw(cfg, out)
    payload = {
        "data_dir": str(_data_dir(cfg, out)),
        "trajectories": len(raw.trajectories),
        "events": sum(len(t) for t in raw.trajectories),
        "score_records": len(raw.records),
        "first_trials": len(first_trials(raw.records)),
        "questions": len(raw.questions),
        "discarded": raw.discarded,
    }
    _write_manifest(out / "ingest", "ingest", payload)
    print(
        f"ingest: {payload['trajectories']} trajectories, {payload['score_records']} records, "
        f"discarded {raw.discarded}"
    )
    return 0


def cmd_featurize(cfg: RunConfig, out: Path, args) -> int:
    _require_stage(out, "ingest")
    raw = _load_raw(cfg, out)
    cutoff = _resolve_cutoff(cfg, out, raw)
    vocab = FeatureVocab.from_questions(raw.questions)
    fc = _feature_config(cfg)
    stage = out / "featurize"
    stage.mkdir(parents=True, exist_ok=True)

    keys, rows = [], []
    for traj in raw.trajectories:
        gcs = detect_generalized_clicks(traj, fc.drag_threshold_px)
        keys.append((traj.student_id, traj.question_id))
        rows.append(extract_mouse_features(traj, gcs, fc))
    matrix = np.stack(rows) if rows else np.zeros((0, len(MOUSE_FEATURE_NAMES)))
    export_feature_matrix(
        stage / "interaction_features.csv",
        stage / "interaction_features.schema",
        ["student_id", "question_id"],
        keys,
        list(MOUSE_FEATURE_NAMES),
        matrix,
    )

    s_stats, s_skip = compute_student_stats(
        raw.records, raw.questions, cutoff, vocab, level_thresholds=cfg.level_thresholds
    )
    student_ids = sorted(s_stats)
    export_feature_matrix(
        stage / "student_features.csv",
        stage / "student_features.schema",
        ["student_id"],
        [(s,) for s in student_ids],
        student_feature_names(vocab),
        np.stack([s_stats[s].to_vector() for s in student_ids])
        if student_ids
        else np.zeros((0, len(student_feature_names(vocab)))),
    )

    q_stats, q_skip = compute_question_stats(
        raw.records, raw.questions, cutoff, vocab, level_thresholds=cfg.level_thresholds
    )
    question_ids = sorted(q_stats)
    export_feature_matrix(
        stage / "question_features.csv",
        stage / "question_features.schema",
        ["question_id"],
        [(q,) for q in question_ids],
        question_feature_names(vocab),
        np.stack([q_stats[q].to_vector() for q in question_ids]),
    )

    _write_manifest(
        stage,
        "featurize",
        {
            "feature_cutoff_ms": cutoff,
            "math_dimensions": list(vocab.math_dimensions),
            "interactions": len(keys),
            "students": len(student_ids),
            "questions": len(question_ids),
            "stats_records_skipped": {"students": s_skip, "questions": q_skip},
        },
    )
    print(f"featurize: {len(keys)} interactions, cutoff {cutoff}")
    return 0


def cmd_graph(cfg: RunConfig, out: Path, args) -> int:
    graphs, meta = _build_graphs(cfg, out, args.students)
    stage = out / "graph"
    stage.mkdir(parents=True, exist_ok=True)
    summaries = {}
    for sid, g in sorted(graphs.items()):
        g.validate()
        summaries[sid] = {
            "students": len(g.students),
            "questions": len(g.questions),
            "interactions": g.n_interactions,
            "labeled": int(len(g.labeled_nodes())),
            "split": [len(g.train_nodes), len(g.val_nodes), len(g.test_nodes)],
            "t1_ms": g.snapshot.t1_ms,
            "t2_ms": g.snapshot.t2_ms,
        }
        if args.dump:
            dumps = stage / "dumps"
            dumps.mkdir(exist_ok=True)
            dump_graph(g, dumps / f"{sid}.json")
    (stage / "snapshots.json").write_text(
        json.dumps(summaries, indent=2, sort_keys=True), encoding="utf-8"
    )
    _write_manifest(stage, "graph", {"students": sorted(graphs), **meta})
    print(f"graph: built {len(graphs)} snapshots")
    return 0


def _variant_dir(out: Path, stage: str, variant: str) -> Path:
    return out / stage / variant


def cmd_train(cfg: RunConfig, out: Path, args) -> int:
    _require_stage(out, "graph")
    variant = args.variant or cfg.variant
    graphs, _ = _build_graphs(cfg, out, args.students)
    train_cfg = _train_config(cfg)
    if args.label_fraction is not None:
        train_cfg = replace(train_cfg, label_fraction=args.label_fraction)
    workers = args.workers or cfg.workers
    stage = _variant_dir(out, "train", variant)
    stage.mkdir(parents=True, exist_ok=True)

    if variant in BASELINE_VARIANTS:
        results = []
        for sid in sorted(graphs):
            estimator = (
                baselines_mod.LogisticRegressionBaseline()
                if variant == "lr"
                else baselines_mod.MajorityClassBaseline()
            )
            results.append(
                baselines_mod.run_baseline(
                    sid,
                    graphs[sid],
                    estimator,
                    name=variant,
                    label_fraction=train_cfg.label_fraction,
                )
            )
        report = aggregate_results(results, variant, cfg.seed, 1, config_hash(cfg))
    else:
        model_cfg = _model_config(cfg, variant)
        report = run_experiment(
            graphs,
            model_cfg,
            train_cfg,
            workers=workers,
            config_hash=config_hash(cfg),
            keep_params=True,
        )
        ckpt_dir = stage / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        for r in report.per_student:
            if r.params_values is not None:
                save_checkpoint(ckpt_dir / f"{r.student_id}.json", r.params_values)
    write_student_csv(stage / "per_student.csv", report.per_student)
    write_report_json(stage / "report.json", report)
    _write_manifest(
        stage,
        "train",
        {
            "variant": variant,
            "students": sorted(graphs),
            "runs": report.runs,
            "aggregate": report.aggregate,
        },
    )
    agg = report.aggregate
    print(
        f"train[{variant}]: ap_acc {agg['ap_acc']['mean']:.4f} "
        f"o_acc {agg['o_acc']['mean']:.4f} apw_f1 {agg['apw_f1']['mean']:.4f}"
    )
    return 0


def cmd_evaluate(cfg: RunConfig, out: Path, args) -> int:
    variant = args.variant or cfg.variant
    _require_stage(out, "train", subdir=f"train/{variant}")
    if variant in BASELINE_VARIANTS:
        raise StageError(f"variant {variant!r} stores no checkpoints; read train/{variant}/report.json")
    graphs, _ = _build_graphs(cfg, out, args.students)
    model_cfg = _model_config(cfg, variant)
    ckpt_dir = _variant_dir(out, "train", variant) / "checkpoints"
    results = []
    for sid in sorted(graphs):
        path = ckpt_dir / f"{sid}.json"
        if not path.exists():
            raise StageError(f"missing checkpoint {path}: run `r2gcn train` first")
        g = graphs[sid]
        wiring = wiring_for(g, variant)
        params = init_params(wiring, model_cfg, np.random.default_rng(0))
        params.load_values(load_checkpoint(path))
        logits = forward(wiring, params, model_cfg).data
        y_val = logits_to_levels(logits[g.val_nodes])
        y_test = logits_to_levels(logits[g.test_nodes])
        results.append(
            StudentRunResult(
                student_id=sid,
                run_index=0,
                seed=cfg.seed,
                variant=variant,
                n_train=len(g.train_nodes),
                n_val=len(g.val_nodes),
                n_test=len(g.test_nodes),
                best_epoch=0,
                epochs_run=0,
                val_acc=metrics.accuracy(g.labels[g.val_nodes], y_val),
                test_acc=metrics.accuracy(g.labels[g.test_nodes], y_test),
                test_wf1=metrics.weighted_f1(g.labels[g.test_nodes], y_test),
                y_true=g.labels[g.test_nodes],
                y_pred=y_test,
            )
        )
    report = aggregate_results(results, variant, cfg.seed, 1, config_hash(cfg))
    stage = _variant_dir(out, "evaluate", variant)
    stage.mkdir(parents=True, exist_ok=True)
    write_student_csv(stage / "per_student.csv", report.per_student)
    write_report_json(stage / "report.json", report)
    _write_manifest(stage, "evaluate", {"variant": variant, "aggregate": report.aggregate})
    print(f"evaluate[{variant}]: ap_acc {report.aggregate['ap_acc']['mean']:.4f}")
    return 0


def cmd_sweep_labels(cfg: RunConfig, out: Path, args) -> int:
    _require_stage(out, "graph")
    variant = args.variant or cfg.variant
    graphs, _ = _build_graphs(cfg, out, args.students)
    rows = label_size_sweep(
        graphs,
        _model_config(cfg, variant),
        _train_config(cfg),
        fractions=tuple(cfg.sweep_fractions),
        workers=args.workers or cfg.workers,
    )
    stage = out / "sweep"
    stage.mkdir(parents=True, exist_ok=True)
    with open(stage / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("label_fraction,ap_acc,o_acc\n")
        for row in rows:
            fh.write(f"{row['label_fraction']},{row['ap_acc']!r},{row['o_acc']!r}\n")
    _write_manifest(stage, "sweep", {"variant": variant, "rows": rows})
    print("sweep-labels: " + ", ".join(f"{r['label_fraction']}: {r['ap_acc']:.4f}" for r in rows))
    return 0


def cmd_analyze_distance(cfg: RunConfig, out: Path, args) -> int:
    variant = args.variant or cfg.variant
    _require_stage(out, "train", subdir=f"train/{variant}")
    graphs, _ = _build_graphs(cfg, out, args.students)
    per_student_csv = _variant_dir(out, "train", variant) / "per_student.csv"
    accs: dict[str, list[tuple[float, float]]] = {}
    with open(per_student_csv, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            accs.setdefault(row["student_id"], []).append(
                (float(row["test_acc"]), float(row["val_acc"]))
            )
    rows = []
    for sid in sorted(graphs):
        g = graphs[sid]
        entry = {"student_id": sid, **snapshot_distances(g)}
        pairs = accs.get(sid, [])
        entry["test_acc"] = float(np.mean([p[0] for p in pairs])) if pairs else float("nan")
        entry["val_acc"] = float(np.mean([p[1] for p in pairs])) if pairs else float("nan")
        rows.append(entry)
    stage = _variant_dir(out, "distance", variant)
    stage.mkdir(parents=True, exist_ok=True)
    write_distance_report(stage / "distance.csv", rows)
    _write_manifest(stage, "analyze-distance", {"variant": variant, "students": sorted(graphs)})
    print(f"analyze-distance[{variant}]: {len(rows)} students")
    return 0


def cmd_report(cfg: RunConfig, out: Path, args) -> int:
    train_root = out / "train"
    if not train_root.exists():
        raise StageError("missing artifact of stage 'train': run `r2gcn train` first")
    combined: dict[str, dict] = {}
    all_rows: list[str] = []
    header = None
    for variant_dir in sorted(train_root.iterdir()):
        report_path = variant_dir / "report.json"
        csv_path = variant_dir / "per_student.csv"
        if not report_path.exists():
            continue
        body = json.loads(report_path.read_text(encoding="utf-8"))
        combined[variant_dir.name] = body["aggregate"]
        with open(csv_path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        header = lines[0]
        all_rows.extend(lines[1:])
    if not combined:
        raise StageError("missing artifact of stage 'train': run `r2gcn train` first")
    stage = out / "report"
    stage.mkdir(parents=True, exist_ok=True)
    (stage / "aggregate.json").write_text(
        json.dumps({"schema": "r2gcn/aggregate/v1", "variants": combined}, indent=2, sort_keys=True),
        encoding="utf-8",
    )
    with open(stage / "all_students.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        for line in sorted(all_rows):
            fh.write(line + "\n")
    _write_manifest(stage, "report", {"variants": sorted(combined)})
    for name, agg in sorted(combined.items()):
        print(f"report[{name}]: ap_acc {agg['ap_acc']['mean']:.4f}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="r2gcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, students=False, variant=False, workers=False, fraction=False):
        p.add_argument("--config", type=str, default=None, help="path to the run config file")
        p.add_argument("--out", type=str, default=None, help="run directory (overrides out_dir)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        if students:
            p.add_argument("--students", type=lambda s: s.split(","), default=None)
        if variant:
            p.add_argument("--variant", choices=VARIANTS + BASELINE_VARIANTS, default=None)
        if workers:
            p.add_argument("--workers", type=int, default=None)
        if fraction:
            p.add_argument("--label-fraction", dest="label_fraction", type=float, default=None)

    common(sub.add_parser("synth", help="generate a synthetic dataset"))
    common(sub.add_parser("ingest", help="parse and validate the raw files"))
    common(sub.add_parser("featurize", help="extract all three feature families"))
    g = sub.add_parser("graph", help="build per-student SIQ snapshots")
    common(g, students=True)
    g.add_argument("--dump", action="store_true", help="write full graph JSON dumps")
    t = sub.add_parser("train", help="train a model or baseline per student")
    common(t, students=True, variant=True, workers=True, fraction=True)
    common(sub.add_parser("evaluate", help="re-score saved checkpoints"), students=True, variant=True)
    common(
        sub.add_parser("sweep-labels", help="accuracy vs training label fraction"),
        students=True,
        variant=True,
        workers=True,
    )
    common(
        sub.add_parser("analyze-distance", help="topological distance report"),
        students=True,
        variant=True,
    )
    common(sub.add_parser("report", help="merge per-variant reports"))
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "featurize": cmd_featurize,
    "graph": cmd_graph,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep-labels": cmd_sweep_labels,
    "analyze-distance": cmd_analyze_distance,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides={"seed": args.seed, "out_dir": args.out})
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out, args)
    except (StageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
