"""Parsing and validation of raw event logs, score records, and question labels.

File formats:
  events     JSON Lines, one object per mouse event with keys
             student_id, question_id, event_type, t_ms, x, y
  scores     CSV with header student_id,question_id,raw_score,timestamp_ms
  questions  CSV with header question_id,grade,difficulty,math_dimension

Malformed lines are skipped and counted, never fatal; an unreadable file is.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

EVENT_TYPES = ("mousedown", "mouseup", "mousemove")

SCORE_LEVELS = (0, 1, 2, 3)
DEFAULT_LEVEL_THRESHOLDS = (25, 50, 75)

GRADES = tuple(range(13))
DIFFICULTIES = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class MouseEvent:
    student_id: str
    question_id: str
    event_type: str  # one of EVENT_TYPES
    t_ms: int
    x: float
    y: float


@dataclass
class Trajectory:
    """All mouse events of one (student, question) session, time-sorted."""

    student_id: str
    question_id: str
    events: list[MouseEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class ScoreRecord:
    student_id: str
    question_id: str
    raw_score: int  # 0..100
    timestamp_ms: int
    trial_index: int  # 1 for the student's first attempt on the question


@dataclass(frozen=True)
class QuestionMeta:
    question_id: str
    grade: int  # 0..12
    difficulty: int  # 1..5
    math_dimension: str


def map_score_level(raw_score: int, thresholds: tuple[int, ...] = DEFAULT_LEVEL_THRESHOLDS) -> int:
    """Map a raw 0..100 score to a discrete level: the count of thresholds reached."""
    if not 0 <= raw_score <= 100:
        raise ValueError(f"raw score {raw_score} outside 0..100")
    return sum(raw_score >= t for t in thresholds)


def _parse_event(line: str) -> MouseEvent | None:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict):
        return None
    try:
        student_id = obj["student_id"]
        question_id = obj["question_id"]
        event_type = obj["event_type"]
        t_ms = obj["t_ms"]
        x = float(obj["x"])
        y = float(obj["y"])
    except (KeyError, TypeError, ValueError):
        return None
    if not isinstance(student_id, str) or not isinstance(question_id, str):
        return None
    if event_type not in EVENT_TYPES:
        return None
    if not isinstance(t_ms, int) or isinstance(t_ms, bool) or t_ms < 0:
        return None
    return MouseEvent(student_id, question_id, event_type, t_ms, x, y)


def load_events(path: str | Path) -> tuple[list[Trajectory], int]:
    """Group events into per-(student, question) trajectories sorted by time.

    Returns the trajectories (ordered by ids) and the number of discarded
    malformed lines. Timestamp ties keep input order.
    """
    groups: dict[tuple[str, str], list[MouseEvent]] = defaultdict(list)
    discarded = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            event = _parse_event(line)
            if event is None:
                discarded += 1
                continue
            groups[(event.student_id, event.question_id)].append(event)
    trajectories = []
    for (student_id, question_id) in sorted(groups):
        events = sorted(groups[(student_id, question_id)], key=lambda e: e.t_ms)
        trajectories.append(Trajectory(student_id, question_id, events))
    return trajectories, discarded


def load_scores(path: str | Path) -> tuple[list[ScoreRecord], int]:
    """Read score records and assign per-(student, question) trial indices.

    Trial indices follow timestamp order, ties broken by file order. Rows
    with raw_score outside 0..100 or otherwise malformed are skipped and
    counted. Records are returned in file order.
    """
    rows: list[tuple[str, str, int, int]] = []
    discarded = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                student_id = row["student_id"]
                question_id = row["question_id"]
                raw_score = int(row["raw_score"])
                timestamp_ms = int(row["timestamp_ms"])
            except (KeyError, TypeError, ValueError):
                discarded += 1
                continue
            if student_id is None or question_id is None or not (0 <= raw_score <= 100):
                discarded += 1
                continue
            if timestamp_ms < 0:
                discarded += 1
                continue
            rows.append((student_id, question_id, raw_score, timestamp_ms))

    by_pair: dict[tuple[str, str], list[int]] = defaultdict(list)
    for i, (student_id, question_id, _, _) in enumerate(rows):
        by_pair[(student_id, question_id)].append(i)
    trial_index = [0] * len(rows)
    for indices in by_pair.values():
        ordered = sorted(indices, key=lambda i: (rows[i][3], i))
        for k, i in enumerate(ordered, start=1):
            trial_index[i] = k
    return [
        ScoreRecord(s, q, score, ts, trial_index[i])
        for i, (s, q, score, ts) in enumerate(rows)
    ], discarded


def load_questions(path: str | Path) -> tuple[dict[str, QuestionMeta], int]:
    """Read question labels; rows with out-of-range labels are skipped and counted."""
    questions: dict[str, QuestionMeta] = {}
    discarded = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                question_id = row["question_id"]
                grade = int(row["grade"])
                difficulty = int(row["difficulty"])
                math_dimension = row["math_dimension"]
            except (KeyError, TypeError, ValueError):
                discarded += 1
                continue
            if question_id is None or math_dimension is None or not math_dimension:
                discarded += 1
                continue
            if grade not in GRADES or difficulty not in DIFFICULTIES:
                discarded += 1
                continue
            questions[question_id] = QuestionMeta(question_id, grade, difficulty, math_dimension)
    return questions, discarded


def first_trials(records: list[ScoreRecord]) -> list[ScoreRecord]:
    """Keep only each student's first attempt on each question."""
    return [r for r in records if r.trial_index == 1]
