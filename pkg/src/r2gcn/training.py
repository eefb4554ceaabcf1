"""Per-student semi-supervised training with early stopping, plus the
experiment harness: repeated seeded runs, aggregation, label-size sweeps,
and report files. Baselines are evaluated through the same splits and the
same metrics module so numbers stay comparable.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .autodiff import Tape, backward, cross_entropy, row_gather
from .graph import SIQGraph
from .model import GraphWiring, ModelConfig, forward, init_params, logits_to_levels, wiring_for
from .optim import ParamSet, adam_step

REPORT_SCHEMA = "r2gcn/report/v1"

STUDENT_CSV_COLUMNS = (
    "student_id",
    "run_index",
    "seed",
    "variant",
    "n_train",
    "n_val",
    "n_test",
    "best_epoch",
    "epochs_run",
    "val_acc",
    "test_acc",
    "test_wf1",
)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-2
    max_epochs: int = 400
    patience: int = 100
    runs: int = 10
    seed: int = 0
    label_fraction: float = 1.0

    def __post_init__(self):
        if not 0 < self.label_fraction <= 1:
            raise ValueError("label_fraction must be in (0, 1]")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


class EarlyStopper:
    """Track the best validation accuracy; stop after `patience` stale epochs.

    Ties favor the earlier epoch (strict improvement required).
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best_acc = -np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, acc: float) -> bool:
        """Record one epoch's accuracy; returns True when training should stop."""
        if acc > self.best_acc:
            self.best_acc = acc
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass
class TrainResult:
    params: ParamSet  # loaded with the best-epoch values
    best_epoch: int
    best_val_acc: float
    epochs_run: int
    val_history: list[float] = field(default_factory=list)


def effective_train_nodes(graph: SIQGraph, label_fraction: float) -> np.ndarray:
    """The earliest `fraction` of the (time-ordered) training mask."""
    keep = int(np.floor(label_fraction * len(graph.train_nodes)))
    if keep < 1:
        raise ValueError(
            f"label fraction {label_fraction} empties the training mask "
            f"({len(graph.train_nodes)} nodes)"
        )
    return graph.train_nodes[:keep]


def train_one(
    graph: SIQGraph,
    model_config: ModelConfig,
    train_config: TrainConfig,
    *,
    wiring: GraphWiring | None = None,
) -> TrainResult:
    """Full-graph gradient steps on the training-mask cross entropy.

    After every epoch the validation accuracy is measured; the parameters
    of the best epoch are returned. Fully deterministic given the seed.
    """
    if len(graph.train_nodes) == 0 or len(graph.val_nodes) == 0:
        raise ValueError("graph needs non-empty train and validation masks")
    if wiring is None:
        wiring = wiring_for(graph, model_config.variant)
    train_idx = effective_train_nodes(graph, train_config.label_fraction)
    y_train = graph.labels[train_idx]
    y_val = graph.labels[graph.val_nodes]

    rng = np.random.default_rng(train_config.seed)
    params = init_params(wiring, model_config, rng)
    best_values = params.export_values()
    stopper = EarlyStopper(train_config.patience)
    history: list[float] = []
    epochs_run = 0
    for epoch in range(1, train_config.max_epochs + 1):
        with Tape() as tape:
            logits = forward(wiring, params, model_config)
            loss = cross_entropy(row_gather(logits, train_idx), y_train)
        params.zero_grad()
        backward(loss, tape)
        adam_step(
            params,
            lr=train_config.lr,
            weight_decay=train_config.weight_decay,
        )
        epochs_run = epoch
        val_logits = forward(wiring, params, model_config)
        val_acc = metrics.accuracy(y_val, logits_to_levels(val_logits.data[graph.val_nodes]))
        history.append(val_acc)
        improved = val_acc > stopper.best_acc
        stop = stopper.update(epoch, val_acc)
        if improved:
            best_values = params.export_values()
        if stop:
            break
    params.load_values(best_values)
    best_val = stopper.best_acc if history else float("nan")
    return TrainResult(params, stopper.best_epoch, best_val, epochs_run, history)


@dataclass
class StudentRunResult:
    student_id: str
    run_index: int
    seed: int
    variant: str
    n_train: int
    n_val: int
    n_test: int
    best_epoch: int
    epochs_run: int
    val_acc: float
    test_acc: float
    test_wf1: float
    y_true: np.ndarray
    y_pred: np.ndarray
    params_values: dict[str, np.ndarray] | None = None  # kept only on request

    def csv_row(self) -> list[str]:
        return [
            self.student_id,
            str(self.run_index),
            str(self.seed),
            self.variant,
            str(self.n_train),
            str(self.n_val),
            str(self.n_test),
            str(self.best_epoch),
            str(self.epochs_run),
            repr(self.val_acc),
            repr(self.test_acc),
            repr(self.test_wf1),
        ]


def run_student(
    student_id: str,
    graph: SIQGraph,
    model_config: ModelConfig,
    train_config: TrainConfig,
    run_index: int = 0,
    *,
    wiring: GraphWiring | None = None,
    keep_params: bool = False,
) -> StudentRunResult:
    """Train once (seed = base seed + run index) and score the test mask."""
    cfg = replace(train_config, seed=train_config.seed + run_index)
    if wiring is None:
        wiring = wiring_for(graph, model_config.variant)
    result = train_one(graph, model_config, cfg, wiring=wiring)
    logits = forward(wiring, result.params, model_config)
    y_pred = logits_to_levels(logits.data[graph.test_nodes])
    y_true = graph.labels[graph.test_nodes]
    return StudentRunResult(
        student_id=student_id,
        run_index=run_index,
        seed=cfg.seed,
        variant=model_config.variant,
        n_train=len(effective_train_nodes(graph, cfg.label_fraction)),
        n_val=len(graph.val_nodes),
        n_test=len(graph.test_nodes),
        best_epoch=result.best_epoch,
        epochs_run=result.epochs_run,
        val_acc=result.best_val_acc,
        test_acc=metrics.accuracy(y_true, y_pred),
        test_wf1=metrics.weighted_f1(y_true, y_pred),
        y_true=y_true,
        y_pred=y_pred,
        params_values=result.params.export_values() if keep_params else None,
    )


def _run_all_for_student(args) -> list[StudentRunResult]:
    student_id, graph, model_config, train_config, keep_params = args
    wiring = wiring_for(graph, model_config.variant)
    return [
        # only the first run's parameters are worth keeping for checkpoints
        run_student(
            student_id,
            graph,
            model_config,
            train_config,
            r,
            wiring=wiring,
            keep_params=keep_params and r == 0,
        )
        for r in range(train_config.runs)
    ]


@dataclass
class RunReport:
    variant: str
    base_seed: int
    runs: int
    config_hash: str
    per_student: list[StudentRunResult]
    per_run: list[dict]
    aggregate: dict

    def to_json(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "variant": self.variant,
            "seed": self.base_seed,
            "runs": self.runs,
            "config_hash": self.config_hash,
            "per_run": self.per_run,
            "aggregate": self.aggregate,
        }


def aggregate_results(
    results: list[StudentRunResult],
    variant: str,
    base_seed: int,
    runs: int,
    config_hash: str = "",
) -> RunReport:
    """Per-run metrics over students, then mean/std of each metric across runs."""
    results = sorted(results, key=lambda r: (r.student_id, r.run_index))
    per_run = []
    for run_index in range(runs):
        batch = [r for r in results if r.run_index == run_index]
        if not batch:
            raise ValueError(f"no results for run {run_index}")
        summary = metrics.summarize([(r.y_true, r.y_pred) for r in batch])
        summary["run_index"] = run_index
        summary["val_acc"] = float(np.mean([r.val_acc for r in batch]))
        per_run.append(summary)
    aggregate = {}
    for key in ("ap_acc", "o_acc", "apw_f1", "val_acc"):
        values = [run[key] for run in per_run]
        aggregate[key] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
    return RunReport(variant, base_seed, runs, config_hash, results, per_run, aggregate)


def run_experiment(
    graphs: dict[str, SIQGraph],
    model_config: ModelConfig,
    train_config: TrainConfig,
    *,
    workers: int = 1,
    config_hash: str = "",
    keep_params: bool = False,
) -> RunReport:
    """Train every student for `runs` seeds and aggregate deterministically."""
    jobs = [(sid, graphs[sid], model_config, train_config, keep_params) for sid in sorted(graphs)]
    results: list[StudentRunResult] = []
    if workers <= 1:
        for job in jobs:
            results.extend(_run_all_for_student(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(_run_all_for_student, jobs):
                results.extend(batch)
    return aggregate_results(
        results, model_config.variant, train_config.seed, train_config.runs, config_hash
    )


def label_size_sweep(
    graphs: dict[str, SIQGraph],
    model_config: ModelConfig,
    train_config: TrainConfig,
    fractions: tuple[float, ...] = (0.4, 0.6, 0.8, 1.0),
    *,
    workers: int = 1,
) -> list[dict]:
    """Accuracy per training-label fraction, keeping val/test masks fixed."""
    rows = []
    for fraction in fractions:
        cfg = replace(train_config, label_fraction=fraction)
        report = run_experiment(graphs, model_config, cfg, workers=workers)
        rows.append(
            {
                "label_fraction": fraction,
                "ap_acc": report.aggregate["ap_acc"]["mean"],
                "o_acc": report.aggregate["o_acc"]["mean"],
            }
        )
    return rows


def write_student_csv(path: str | Path, results: list[StudentRunResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(STUDENT_CSV_COLUMNS) + "\n")
        for r in sorted(results, key=lambda r: (r.student_id, r.run_index)):
            fh.write(",".join(r.csv_row()) + "\n")


def write_report_json(path: str | Path, report: RunReport) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True), encoding="utf-8")
