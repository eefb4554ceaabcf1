"""Feature families attached to graph nodes.

Three blocks are produced here:
  * per-trajectory mouse interaction features (42 values: 11 numeric,
    24 one-hot hour-of-day, 7 think-time/volume values),
  * per-student statistics over historical score records,
  * per-question statistics plus one-hot label encodings.

A *generalized click* (GC) is one press/release episode of the mouse: a
mousedown paired with the next mouseup, with everything in between
contributing to its path length. Clicks and drags are both GCs; the kind
is informational only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import (
    DEFAULT_LEVEL_THRESHOLDS,
    DIFFICULTIES,
    GRADES,
    QuestionMeta,
    ScoreRecord,
    Trajectory,
    map_score_level,
)

MS_PER_HOUR = 3_600_000


@dataclass(frozen=True)
class GeneralizedClick:
    start_ms: int
    end_ms: int
    start_index: int  # index of the opening mousedown within the trajectory
    end_index: int  # index of the closing mouseup
    path_length: float  # px travelled while the button was down
    kind: str  # "drag" if path_length exceeds the threshold, else "click"


@dataclass(frozen=True)
class FeatureConfig:
    drag_threshold_px: float = 5.0
    attempt_gap_ms: int = 2000  # silence gap ending the first attempt episode
    utc_offset_hours: int = 0  # local-time offset used for the hour-of-day block


def detect_generalized_clicks(
    trajectory: Trajectory, drag_threshold_px: float = 5.0
) -> list[GeneralizedClick]:
    """Pair each mousedown with the next mouseup into one GC.

    Mouseups with no open press and a trailing unmatched mousedown are
    discarded; nested mousedowns while a press is open do not start a new
    GC. Path length is the polyline length over every event position from
    the press to the release.
    """
    gcs: list[GeneralizedClick] = []
    open_index: int | None = None
    open_ms = 0
    last_x = last_y = 0.0
    path = 0.0
    for i, event in enumerate(trajectory.events):
        if event.event_type == "mousedown" and open_index is None:
            open_index = i
            open_ms = event.t_ms
            last_x, last_y = event.x, event.y
            path = 0.0
            continue
        if open_index is None:
            continue
        path += math.hypot(event.x - last_x, event.y - last_y)
        last_x, last_y = event.x, event.y
        if event.event_type == "mouseup":
            kind = "drag" if path > drag_threshold_px else "click"
            gcs.append(GeneralizedClick(open_ms, event.t_ms, open_index, i, path, kind))
            open_index = None
    return gcs


MOUSE_FEATURE_NAMES: tuple[str, ...] = (
    # numeric block
    "first_gc_time_ms",
    "first_gc_duration_pct",
    "first_gc_start_idx",
    "first_gc_event_pct",
    "first_gc_end_idx",
    "gc_count",
    "gc_per_second",
    "avg_gap_between_gc_ms",
    "med_gap_between_gc_ms",
    "std_gap_between_gc_ms",
    "overall_distance_px",
    # hour-of-day block
    *(f"hour_{h:02d}" for h in range(24)),
    # think-time block
    "think_time_ms",
    "think_time_pct",
    "think_event_count",
    "think_event_pct",
    "first_attempt_event_count",
    "total_time_ms",
    "total_event_count",
)

MOUSE_FEATURE_DIM = len(MOUSE_FEATURE_NAMES)  # 42

# Static per-column divisors that bring features to unit-ish scale before
# they enter a model: reaction-time spans to ~seconds, session spans to
# ~tens of seconds, counts to tens; ratios and one-hots stay as they are.
# Being constants (not data statistics), they preserve locality and
# permutation equivariance of anything downstream.
_MS_SPAN, _MS_GAP, _MS_TOTAL, _COUNT, _PX = 3000.0, 1000.0, 10_000.0, 10.0, 1000.0
MOUSE_FEATURE_SCALE = np.array(
    [_MS_SPAN, 1, _COUNT, 1, _COUNT, _COUNT, 1, _MS_GAP, _MS_GAP, _MS_GAP, _PX]
    + [1] * 24
    + [_MS_SPAN, 1, _COUNT, 1, _COUNT, _MS_TOTAL, _COUNT],
    dtype=np.float64,
)


def student_feature_scale(vocab: "FeatureVocab") -> np.ndarray:
    b = vocab.bucket_count
    return np.concatenate([[50.0, 50.0], np.ones(b), np.full(b, 3.0)])


def question_feature_scale(vocab: "FeatureVocab") -> np.ndarray:
    onehots = len(vocab.math_dimensions) + len(vocab.grades) + len(vocab.difficulties)
    return np.concatenate([np.ones(onehots), [50.0, 50.0], np.ones(4)])


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def extract_mouse_features(
    trajectory: Trajectory,
    gcs: list[GeneralizedClick],
    config: FeatureConfig = FeatureConfig(),
) -> np.ndarray:
    """Compute the 42-value interaction feature vector for one trajectory.

    All GC-dependent entries are 0 when the trajectory has no GC, and every
    ratio with a zero denominator is 0. Think time is proxied as the span
    from entering the question to the first GC; the first attempt episode
    runs from the first GC until an inter-event silence longer than
    ``config.attempt_gap_ms``.
    """
    events = trajectory.events
    if not events:
        raise ValueError("cannot featurize an empty trajectory")
    n = len(events)
    start_ms = events[0].t_ms
    total_time = events[-1].t_ms - start_ms

    out = np.zeros(MOUSE_FEATURE_DIM, dtype=np.float64)
    numeric = out[:11]
    hours = out[11:35]
    think = out[35:]

    overall = 0.0
    for prev, cur in zip(events, events[1:]):
        overall += math.hypot(cur.x - prev.x, cur.y - prev.y)
    numeric[10] = overall

    hour = (start_ms // MS_PER_HOUR + config.utc_offset_hours) % 24
    hours[hour] = 1.0

    think[5] = float(total_time)
    think[6] = float(n)

    if gcs:
        first = gcs[0]
        numeric[0] = float(first.start_ms - start_ms)
        numeric[1] = _ratio(first.end_ms - first.start_ms, total_time)
        numeric[2] = float(first.start_index)
        numeric[3] = _ratio(first.start_index, n)
        numeric[4] = float(first.end_index + 1)
        numeric[5] = float(len(gcs))
        numeric[6] = _ratio(len(gcs), total_time / 1000.0)
        gaps = [nxt.start_ms - cur.end_ms for cur, nxt in zip(gcs, gcs[1:])]
        if gaps:
            numeric[7] = float(np.mean(gaps))
            numeric[8] = float(np.median(gaps))
            numeric[9] = float(np.std(gaps))

        think[0] = numeric[0]
        think[1] = _ratio(numeric[0], total_time)
        think[2] = float(first.start_index)
        think[3] = _ratio(first.start_index, n)
        attempt_end = first.start_index
        while (
            attempt_end + 1 < n
            and events[attempt_end + 1].t_ms - events[attempt_end].t_ms <= config.attempt_gap_ms
        ):
            attempt_end += 1
        think[4] = float(attempt_end - first.start_index + 1)
    return out


@dataclass(frozen=True)
class FeatureVocab:
    """Categorical vocabularies shared by the statistical feature blocks."""

    math_dimensions: tuple[str, ...]
    grades: tuple[int, ...] = GRADES
    difficulties: tuple[int, ...] = DIFFICULTIES

    @classmethod
    def from_questions(cls, questions: dict[str, QuestionMeta]) -> "FeatureVocab":
        dims = tuple(sorted({q.math_dimension for q in questions.values()}))
        return cls(math_dimensions=dims)

    @property
    def bucket_count(self) -> int:
        return len(self.math_dimensions) * len(self.grades) * len(self.difficulties)

    def bucket_index(self, meta: QuestionMeta) -> int:
        """Flat index into the (math dimension x grade x difficulty) cross-product."""
        md = self.math_dimensions.index(meta.math_dimension)
        g = self.grades.index(meta.grade)
        d = self.difficulties.index(meta.difficulty)
        return (md * len(self.grades) + g) * len(self.difficulties) + d

    def bucket_labels(self) -> list[str]:
        return [
            f"{md}|g{g}|d{d}"
            for md in self.math_dimensions
            for g in self.grades
            for d in self.difficulties
        ]


@dataclass
class StudentStats:
    total_trials: int
    second_trials: int
    trial_pct: np.ndarray  # fraction of the student's trials per bucket
    mean_first_level: np.ndarray  # mean first-trial score level per bucket

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [[float(self.total_trials), float(self.second_trials)], self.trial_pct, self.mean_first_level]
        )


@dataclass
class QuestionStats:
    math_dimension_onehot: np.ndarray
    grade_onehot: np.ndarray
    difficulty_onehot: np.ndarray
    total_trials: int
    second_trials: int
    score_level_pct: np.ndarray  # distribution of first-trial score levels

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.math_dimension_onehot,
                self.grade_onehot,
                self.difficulty_onehot,
                [float(self.total_trials), float(self.second_trials)],
                self.score_level_pct,
            ]
        )


def student_feature_dim(vocab: FeatureVocab) -> int:
    return 2 + 2 * vocab.bucket_count


def question_feature_dim(vocab: FeatureVocab) -> int:
    return len(vocab.math_dimensions) + len(vocab.grades) + len(vocab.difficulties) + 2 + 4


def student_feature_names(vocab: FeatureVocab) -> list[str]:
    buckets = vocab.bucket_labels()
    return (
        ["total_trials", "second_trials"]
        + [f"trial_pct[{b}]" for b in buckets]
        + [f"mean_first_level[{b}]" for b in buckets]
    )


def question_feature_names(vocab: FeatureVocab) -> list[str]:
    return (
        [f"math_dim[{md}]" for md in vocab.math_dimensions]
        + [f"grade[{g}]" for g in vocab.grades]
        + [f"difficulty[{d}]" for d in vocab.difficulties]
        + ["total_trials", "second_trials"]
        + [f"level_pct[{lvl}]" for lvl in range(4)]
    )


def _filtered(records: list[ScoreRecord], cutoff_ms: int | None) -> list[ScoreRecord]:
    if cutoff_ms is None:
        return records
    return [r for r in records if r.timestamp_ms < cutoff_ms]


def compute_student_stats(
    records: list[ScoreRecord],
    questions: dict[str, QuestionMeta],
    cutoff_ms: int | None,
    vocab: FeatureVocab,
    student_ids: list[str] | None = None,
    level_thresholds: tuple[int, ...] = DEFAULT_LEVEL_THRESHOLDS,
) -> tuple[dict[str, StudentStats], int]:
    """Per-student trial counts and bucketed performance before ``cutoff_ms``.

    Students listed in ``student_ids`` but absent from the records get
    all-zero stats. Records referencing unknown questions are skipped and
    counted in the returned tally.
    """
    B = vocab.bucket_count
    counts: dict[str, np.ndarray] = {}
    first_sums: dict[str, np.ndarray] = {}
    first_counts: dict[str, np.ndarray] = {}
    totals: dict[str, int] = {}
    seconds: dict[str, int] = {}
    skipped = 0
    for r in _filtered(records, cutoff_ms):
        meta = questions.get(r.question_id)
        if meta is None or meta.math_dimension not in vocab.math_dimensions:
            skipped += 1
            continue
        b = vocab.bucket_index(meta)
        if r.student_id not in counts:
            counts[r.student_id] = np.zeros(B)
            first_sums[r.student_id] = np.zeros(B)
            first_counts[r.student_id] = np.zeros(B)
            totals[r.student_id] = 0
            seconds[r.student_id] = 0
        counts[r.student_id][b] += 1
        totals[r.student_id] += 1
        if r.trial_index == 2:
            seconds[r.student_id] += 1
        if r.trial_index == 1:
            first_sums[r.student_id][b] += map_score_level(r.raw_score, level_thresholds)
            first_counts[r.student_id][b] += 1

    wanted = list(counts) if student_ids is None else list(student_ids)
    stats: dict[str, StudentStats] = {}
    for sid in wanted:
        if sid in counts and totals[sid] > 0:
            fc = first_counts[sid]
            mean_first = np.divide(first_sums[sid], fc, out=np.zeros(B), where=fc > 0)
            stats[sid] = StudentStats(
                totals[sid], seconds[sid], counts[sid] / totals[sid], mean_first
            )
        else:
            stats[sid] = StudentStats(0, 0, np.zeros(B), np.zeros(B))
    return stats, skipped


def compute_question_stats(
    records: list[ScoreRecord],
    questions: dict[str, QuestionMeta],
    cutoff_ms: int | None,
    vocab: FeatureVocab,
    question_ids: list[str] | None = None,
    level_thresholds: tuple[int, ...] = DEFAULT_LEVEL_THRESHOLDS,
) -> tuple[dict[str, QuestionStats], int]:
    """Per-question popularity and first-trial level distribution before ``cutoff_ms``.

    One-hot label blocks come from the question metadata, so zero-trial
    questions still get well-formed vectors.
    """
    totals: dict[str, int] = {}
    seconds: dict[str, int] = {}
    level_counts: dict[str, np.ndarray] = {}
    skipped = 0
    for r in _filtered(records, cutoff_ms):
        if r.question_id not in questions:
            skipped += 1
            continue
        totals[r.question_id] = totals.get(r.question_id, 0) + 1
        if r.trial_index == 2:
            seconds[r.question_id] = seconds.get(r.question_id, 0) + 1
        if r.trial_index == 1:
            lc = level_counts.setdefault(r.question_id, np.zeros(4))
            lc[map_score_level(r.raw_score, level_thresholds)] += 1

    wanted = list(questions) if question_ids is None else list(question_ids)
    stats: dict[str, QuestionStats] = {}
    for qid in wanted:
        meta = questions[qid]
        md = np.zeros(len(vocab.math_dimensions))
        md[vocab.math_dimensions.index(meta.math_dimension)] = 1.0
        gr = np.zeros(len(vocab.grades))
        gr[vocab.grades.index(meta.grade)] = 1.0
        df = np.zeros(len(vocab.difficulties))
        df[vocab.difficulties.index(meta.difficulty)] = 1.0
        lc = level_counts.get(qid)
        pct = lc / lc.sum() if lc is not None and lc.sum() > 0 else np.zeros(4)
        stats[qid] = QuestionStats(md, gr, df, totals.get(qid, 0), seconds.get(qid, 0), pct)
    return stats, skipped


def export_feature_matrix(
    csv_path: str | Path,
    schema_path: str | Path,
    key_columns: list[str],
    keys: list[tuple],
    feature_names: list[str],
    matrix: np.ndarray,
) -> None:
    """Write a feature matrix as CSV plus a sidecar schema file of column names."""
    if matrix.shape != (len(keys), len(feature_names)):
        raise ValueError(
            f"matrix shape {matrix.shape} vs {(len(keys), len(feature_names))}"
        )
    columns = list(key_columns) + list(feature_names)
    Path(schema_path).write_text("\n".join(columns) + "\n", encoding="utf-8")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for key, row in zip(keys, matrix):
            cells = [str(k) for k in key] + [repr(float(v)) for v in row]
            fh.write(",".join(cells) + "\n")
