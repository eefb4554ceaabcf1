"""Bipartite problem-solving networks and their student-interaction-question form.

The bipartite network links students to the questions they attempted, one
edge per first trial that has a recorded mouse trajectory, with the 42-dim
interaction features on the edge. Reifying every edge as an interaction
node (with four typed relations: interaction->question, question->interaction,
interaction->student, student->interaction) yields the SIQ graph consumed by
the relational model.

Per-student snapshots freeze that graph at the student's train/validation
boundary time t1 and carry the label masks for semi-supervised training.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from .features import (
    FeatureConfig,
    FeatureVocab,
    MOUSE_FEATURE_DIM,
    MOUSE_FEATURE_SCALE,
    QuestionStats,
    StudentStats,
    compute_question_stats,
    compute_student_stats,
    detect_generalized_clicks,
    extract_mouse_features,
    question_feature_scale,
    student_feature_scale,
)
from .ingest import (
    DEFAULT_LEVEL_THRESHOLDS,
    QuestionMeta,
    ScoreRecord,
    Trajectory,
    first_trials,
    map_score_level,
)

RELATIONS = ("i_to_q", "q_to_i", "i_to_s", "s_to_i")

GRAPH_SCHEMA = "r2gcn/graph/v1"


@dataclass(frozen=True)
class SnapshotSpec:
    """Split times of one student's personalized graph."""

    student_id: str
    t1_ms: int  # train/validation boundary; the graph holds interactions before it
    t2_ms: int  # validation/test boundary
    feature_cutoff_ms: int  # statistical node features use records before this

    def __post_init__(self):
        if self.feature_cutoff_ms > self.t1_ms:
            raise ValueError(
                f"feature cutoff {self.feature_cutoff_ms} is after t1 {self.t1_ms}"
            )


@dataclass
class ProblemSolvingNetwork:
    """Students and questions joined by feature-bearing interaction edges."""

    students: list[str]
    questions: list[str]
    edge_student: np.ndarray  # (E,) index into students
    edge_question: np.ndarray  # (E,) index into questions
    edge_features: np.ndarray  # (E, d_i)
    edge_time: np.ndarray  # (E,) record timestamps, ms
    s_features: np.ndarray | None = None
    q_features: np.ndarray | None = None

    @property
    def n_edges(self) -> int:
        return len(self.edge_student)


def build_problem_solving_network(
    records: list[ScoreRecord],
    trajectories: list[Trajectory],
    until_ms: int | None = None,
    *,
    feature_config: FeatureConfig = FeatureConfig(),
    feature_cache: dict[tuple[str, str], np.ndarray] | None = None,
    include_students: list[str] = (),
    include_questions: list[str] = (),
) -> tuple[ProblemSolvingNetwork, int]:
    """One edge per (student, question) first trial that also has a trajectory.

    Only records with timestamp before ``until_ms`` become edges. A
    trajectory without a matching first-trial record is skipped; the count
    of such trajectories is returned alongside. ``feature_cache`` maps
    (student_id, question_id) to precomputed interaction features and
    avoids re-extracting them for every snapshot.
    """
    firsts = {(r.student_id, r.question_id): r for r in first_trials(records)}
    skipped = 0
    rows: list[tuple[int, str, str, np.ndarray]] = []
    for traj in trajectories:
        key = (traj.student_id, traj.question_id)
        record = firsts.get(key)
        if record is None:
            skipped += 1
            continue
        if until_ms is not None and record.timestamp_ms >= until_ms:
            continue
        if feature_cache is not None and key in feature_cache:
            feats = feature_cache[key]
        else:
            gcs = detect_generalized_clicks(traj, feature_config.drag_threshold_px)
            feats = extract_mouse_features(traj, gcs, feature_config)
            if feature_cache is not None:
                feature_cache[key] = feats
        rows.append((record.timestamp_ms, traj.student_id, traj.question_id, feats))

    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    students = sorted({r[1] for r in rows} | set(include_students))
    questions = sorted({r[2] for r in rows} | set(include_questions))
    s_index = {s: i for i, s in enumerate(students)}
    q_index = {q: i for i, q in enumerate(questions)}
    n = len(rows)
    edge_student = np.fromiter((s_index[r[1]] for r in rows), dtype=np.intp, count=n)
    edge_question = np.fromiter((q_index[r[2]] for r in rows), dtype=np.intp, count=n)
    edge_time = np.fromiter((r[0] for r in rows), dtype=np.int64, count=n)
    if rows:
        edge_features = np.stack([r[3] for r in rows])
    else:
        edge_features = np.zeros((0, MOUSE_FEATURE_DIM))
    return (
        ProblemSolvingNetwork(
            students, questions, edge_student, edge_question, edge_features, edge_time
        ),
        skipped,
    )


@dataclass
class SIQGraph:
    """Typed heterogeneous graph with interaction edges reified as nodes."""

    students: list[str]
    questions: list[str]
    s_features: np.ndarray  # (|S|, d_s)
    q_features: np.ndarray  # (|Q|, d_q)
    i_features: np.ndarray  # (|I|, d_i)
    i_student: np.ndarray  # (|I|,) student index of each interaction
    i_question: np.ndarray  # (|I|,) question index of each interaction
    i_time: np.ndarray  # (|I|,)
    labels: np.ndarray  # (|Q|,) score level, -1 where unlabeled
    train_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    val_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    test_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    snapshot: SnapshotSpec | None = None
    # optional static per-column divisors a model should apply to the
    # feature blocks (features themselves stay in raw units)
    s_scale: np.ndarray | None = None
    i_scale: np.ndarray | None = None
    q_scale: np.ndarray | None = None

    @property
    def n_interactions(self) -> int:
        return len(self.i_student)

    def relation_edges(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """The four typed edge sets as (source, destination) index arrays."""
        i = np.arange(self.n_interactions, dtype=np.intp)
        return {
            "i_to_q": (i, self.i_question),
            "q_to_i": (self.i_question, i),
            "i_to_s": (i, self.i_student),
            "s_to_i": (self.i_student, i),
        }

    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)

    def validate(self) -> None:
        """Raise ValueError on any violated structural invariant."""
        n_i = self.n_interactions
        if not (len(self.i_question) == len(self.i_time) == n_i == len(self.i_features)):
            raise ValueError("interaction arrays disagree in length")
        if len(self.s_features) != len(self.students):
            raise ValueError("student feature rows do not match student count")
        if len(self.q_features) != len(self.questions):
            raise ValueError("question feature rows do not match question count")
        if n_i and (self.i_student.min() < 0 or self.i_student.max() >= len(self.students)):
            raise ValueError("interaction student index out of range")
        if n_i and (self.i_question.min() < 0 or self.i_question.max() >= len(self.questions)):
            raise ValueError("interaction question index out of range")
        edges = self.relation_edges()
        if any(len(src) != n_i or len(dst) != n_i for src, dst in edges.values()):
            raise ValueError("every relation must have exactly one edge per interaction")
        for fwd, rev in (("i_to_q", "q_to_i"), ("i_to_s", "s_to_i")):
            if not (
                np.array_equal(edges[fwd][0], edges[rev][1])
                and np.array_equal(edges[fwd][1], edges[rev][0])
            ):
                raise ValueError(f"{fwd} and {rev} are not mutual reverses")
        if len(self.labels) != len(self.questions):
            raise ValueError("label array does not match question count")
        if self.labels.size and (self.labels.min() < -1 or self.labels.max() > 3):
            raise ValueError("labels must be -1 or a score level 0..3")
        masks = [self.train_nodes, self.val_nodes, self.test_nodes]
        combined = np.concatenate(masks) if masks else np.zeros(0, dtype=np.intp)
        if len(np.unique(combined)) != len(combined):
            raise ValueError("train/val/test masks overlap")
        if not np.array_equal(np.sort(combined), self.labeled_nodes()):
            raise ValueError("masks must partition the labeled question nodes")
        if self.snapshot is not None:
            if n_i and self.i_time.max() >= self.snapshot.t1_ms:
                raise ValueError("interaction at or after t1 leaked into the snapshot")


def edge2node(psn: ProblemSolvingNetwork) -> SIQGraph:
    """Reify each interaction edge as a node wired by the four typed relations."""
    if psn.s_features is None or psn.q_features is None:
        raise ValueError("attach student and question features before edge2node")
    return SIQGraph(
        students=list(psn.students),
        questions=list(psn.questions),
        s_features=psn.s_features,
        q_features=psn.q_features,
        i_features=psn.edge_features,
        i_student=psn.edge_student.copy(),
        i_question=psn.edge_question.copy(),
        i_time=psn.edge_time.copy(),
        labels=np.full(len(psn.questions), -1, dtype=np.int64),
    )


def collapse_interactions(graph: SIQGraph) -> ProblemSolvingNetwork:
    """Inverse of edge2node: interaction nodes become edges again."""
    return ProblemSolvingNetwork(
        students=list(graph.students),
        questions=list(graph.questions),
        edge_student=graph.i_student.copy(),
        edge_question=graph.i_question.copy(),
        edge_features=graph.i_features,
        edge_time=graph.i_time.copy(),
        s_features=graph.s_features,
        q_features=graph.q_features,
    )


def build_personal_snapshot(
    student_id: str,
    records: list[ScoreRecord],
    trajectories: list[Trajectory],
    questions: dict[str, QuestionMeta],
    *,
    vocab: FeatureVocab,
    split_fractions: tuple[float, float] = (0.7, 0.85),
    min_records: int = 20,
    feature_cutoff_ms: int | None = None,
    feature_config: FeatureConfig = FeatureConfig(),
    feature_cache: dict[tuple[str, str], np.ndarray] | None = None,
    stats_cache: tuple[dict[str, StudentStats], dict[str, QuestionStats]] | None = None,
    level_thresholds: tuple[int, ...] = DEFAULT_LEVEL_THRESHOLDS,
) -> SIQGraph:
    """Build one student's personalized SIQ graph.

    The student's first trials that have trajectories are time-ordered and
    split by index at floor(f1*n) and floor(f2*n); t1 is the timestamp of
    the first post-train record. The graph holds every student's
    interaction strictly before t1, so no validation or test interaction
    of the target student can leak in. Statistical node features use only
    records before ``feature_cutoff_ms`` (defaults to t1; passing a shared
    ``stats_cache`` computed at a fixed cutoff avoids recomputation).
    """
    traj_pairs = {(t.student_id, t.question_id) for t in trajectories}
    own = [
        r
        for r in first_trials(records)
        if r.student_id == student_id and (r.student_id, r.question_id) in traj_pairs
    ]
    own.sort(key=lambda r: r.timestamp_ms)  # stable: file order breaks ties
    n = len(own)
    if n < min_records:
        raise ValueError(
            f"student {student_id!r} has {n} usable records, fewer than {min_records}"
        )
    f1, f2 = split_fractions
    cut1 = math.floor(f1 * n)
    cut2 = math.floor(f2 * n)
    train, val, test = own[:cut1], own[cut1:cut2], own[cut2:]
    t1 = own[cut1].timestamp_ms if cut1 < n else own[-1].timestamp_ms + 1
    t2 = own[cut2].timestamp_ms if cut2 < n else own[-1].timestamp_ms + 1
    cutoff = t1 if feature_cutoff_ms is None else feature_cutoff_ms
    spec = SnapshotSpec(student_id, t1, t2, cutoff)

    labeled_questions = [r.question_id for r in own]
    psn, _ = build_problem_solving_network(
        records,
        trajectories,
        until_ms=t1,
        feature_config=feature_config,
        feature_cache=feature_cache,
        include_students=[student_id],
        include_questions=list(questions) + labeled_questions,
    )

    if stats_cache is not None:
        s_stats, q_stats = stats_cache
    else:
        s_stats, _ = compute_student_stats(
            records, questions, cutoff, vocab, level_thresholds=level_thresholds
        )
        q_stats, _ = compute_question_stats(
            records, questions, cutoff, vocab, level_thresholds=level_thresholds
        )
    zero_s = StudentStats(0, 0, np.zeros(vocab.bucket_count), np.zeros(vocab.bucket_count))
    psn.s_features = np.stack([(s_stats.get(s) or zero_s).to_vector() for s in psn.students])
    q_rows = []
    for q in psn.questions:
        stat = q_stats.get(q)
        if stat is None:
            raise ValueError(f"question {q!r} has no metadata")
        q_rows.append(stat.to_vector())
    psn.q_features = np.stack(q_rows)

    graph = edge2node(psn)
    graph.s_scale = student_feature_scale(vocab)
    graph.i_scale = MOUSE_FEATURE_SCALE.copy()
    graph.q_scale = question_feature_scale(vocab)
    q_index = {q: i for i, q in enumerate(graph.questions)}
    for r in own:
        graph.labels[q_index[r.question_id]] = map_score_level(r.raw_score, level_thresholds)
    graph.train_nodes = np.array([q_index[r.question_id] for r in train], dtype=np.intp)
    graph.val_nodes = np.array([q_index[r.question_id] for r in val], dtype=np.intp)
    graph.test_nodes = np.array([q_index[r.question_id] for r in test], dtype=np.intp)
    graph.snapshot = spec
    return graph


def _bipartite_nx(psn: ProblemSolvingNetwork) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(("q", q) for q in psn.questions)
    g.add_nodes_from(("s", s) for s in psn.students)
    g.add_edges_from(
        (("s", psn.students[si]), ("q", psn.questions[qi]))
        for si, qi in zip(psn.edge_student, psn.edge_question)
    )
    return g


def avg_shortest_distance(
    psn: ProblemSolvingNetwork, x_questions: list[str], y_questions: list[str]
) -> tuple[float, int]:
    """Mean unweighted shortest-path distance over the X x Y question pairs.

    Unreachable pairs are excluded from the mean and returned as a count;
    a pair of identical questions contributes distance 0. Returns NaN when
    no pair is reachable.
    """
    if not x_questions or not y_questions:
        raise ValueError("both question sets must be non-empty")
    g = _bipartite_nx(psn)
    total = 0.0
    reachable = 0
    excluded = 0
    for x in x_questions:
        node = ("q", x)
        lengths = nx.single_source_shortest_path_length(g, node) if node in g else {}
        for y in y_questions:
            d = lengths.get(("q", y))
            if d is None:
                excluded += 1
            else:
                total += d
                reachable += 1
    mean = total / reachable if reachable else math.nan
    return mean, excluded


def snapshot_distances(graph: SIQGraph) -> dict[str, float]:
    """d-bar between the snapshot's train/val/test question sets on the collapsed network."""
    psn = collapse_interactions(graph)
    sets = {
        "train": [graph.questions[i] for i in graph.train_nodes],
        "val": [graph.questions[i] for i in graph.val_nodes],
        "test": [graph.questions[i] for i in graph.test_nodes],
    }
    out = {}
    for a, b, key in (
        ("train", "val", "d_train_val"),
        ("train", "test", "d_train_test"),
        ("test", "val", "d_test_val"),
    ):
        if sets[a] and sets[b]:
            out[key], _ = avg_shortest_distance(psn, sets[a], sets[b])
        else:
            out[key] = math.nan
    return out


DISTANCE_COLUMNS = (
    "student_id",
    "d_train_val",
    "d_train_test",
    "d_test_val",
    "test_acc",
    "val_acc",
)


def write_distance_report(path: str | Path, rows: list[dict]) -> None:
    """Per-student distance/accuracy table as CSV; NaN cells are left empty."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(DISTANCE_COLUMNS) + "\n")
        for row in rows:
            cells = [str(row["student_id"])]
            for col in DISTANCE_COLUMNS[1:]:
                v = row[col]
                cells.append("" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v)))
            fh.write(",".join(cells) + "\n")


def dump_graph(graph: SIQGraph, path: str | Path) -> None:
    """Write the graph as JSON: node arrays (id, type, features) and typed edges."""
    nodes = []
    for i, s in enumerate(graph.students):
        nodes.append({"id": f"s/{s}", "type": "student", "features": graph.s_features[i].tolist()})
    for k in range(graph.n_interactions):
        nodes.append(
            {"id": f"i/{k}", "type": "interaction", "features": graph.i_features[k].tolist()}
        )
    for i, q in enumerate(graph.questions):
        nodes.append({"id": f"q/{q}", "type": "question", "features": graph.q_features[i].tolist()})
    edges = []
    for k in range(graph.n_interactions):
        s = f"s/{graph.students[graph.i_student[k]]}"
        q = f"q/{graph.questions[graph.i_question[k]]}"
        i = f"i/{k}"
        edges.append({"src": i, "dst": q, "relation": "i_to_q"})
        edges.append({"src": q, "dst": i, "relation": "q_to_i"})
        edges.append({"src": i, "dst": s, "relation": "i_to_s"})
        edges.append({"src": s, "dst": i, "relation": "s_to_i"})
    payload = {
        "schema": GRAPH_SCHEMA,
        "nodes": nodes,
        "edges": edges,
        "labels": {
            f"q/{graph.questions[i]}": int(graph.labels[i]) for i in graph.labeled_nodes()
        },
        "masks": {
            "train": [f"q/{graph.questions[i]}" for i in graph.train_nodes],
            "val": [f"q/{graph.questions[i]}" for i in graph.val_nodes],
            "test": [f"q/{graph.questions[i]}" for i in graph.test_nodes],
        },
    }
    if graph.snapshot is not None:
        payload["snapshot"] = {
            "student_id": graph.snapshot.student_id,
            "t1_ms": graph.snapshot.t1_ms,
            "t2_ms": graph.snapshot.t2_ms,
            "feature_cutoff_ms": graph.snapshot.feature_cutoff_ms,
        }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")
