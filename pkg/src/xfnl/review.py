"""Human review workflow: task construction and agreement reporting.

Review tasks show annotators a sentence with the target numeral's span
plus the machine's top-k candidates; the gold tag is guaranteed to be
among them (injected in the last slot when the machine missed it) and
the display order is seeded-shuffled so gold position carries no signal.
Gold and the machine's pick stay server-side: client payloads never
include them.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Sequence

from .backends import _derived_seed
from .corpus import Corpus
from .metrics import LabeledPrediction, MetricsError


class ReviewError(ValueError):
    """Invalid review-task construction or agreement request."""


@dataclass(frozen=True, slots=True)
class ReviewTask:
    task_id: str
    sid: str
    mention_index: int
    text: str
    highlight_start: int
    highlight_end: int
    candidates: tuple[tuple[str, str], ...]  # (tag, documentation)
    machine_top1: str
    gold: str

    def candidate_tags(self) -> list[str]:
        return [tag for tag, _ in self.candidates]

    def to_client_dict(self) -> dict:
        """The payload annotators see: no gold, no machine pick."""
        return {
            "task_id": self.task_id,
            "sid": self.sid,
            "mention_index": self.mention_index,
            "text": self.text,
            "highlight": {"start": self.highlight_start, "end": self.highlight_end},
            "candidates": [
                {"tag": tag, "documentation": doc} for tag, doc in self.candidates
            ],
        }

    def to_record(self) -> dict:
        record = self.to_client_dict()
        record["machine_top1"] = self.machine_top1
        record["gold"] = self.gold
        return record


@dataclass(frozen=True, slots=True)
class AnnotationRecord:
    task_id: str
    annotator: str
    chosen: str
    timestamp: str = ""

    @classmethod
    def now(cls, task_id: str, annotator: str, chosen: str) -> "AnnotationRecord":
        return cls(
            task_id=task_id,
            annotator=annotator,
            chosen=chosen,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )


def build_review_tasks(
    preds: Sequence[LabeledPrediction],
    corpus: Corpus,
    k: int = 5,
    seed: int = 0,
) -> list[ReviewTask]:
    """Turn predictions into annotation tasks with gold guaranteed present.

    Candidates are the machine's top-min(k, taxonomy) tags; when gold is
    absent it replaces the weakest (k-th) candidate, preserving the
    machine's strongest picks. Each task's display order is shuffled by a
    per-task RNG derived from (seed, task_id).
    """
    if k < 2:
        raise ReviewError(f"k must be >= 2, got {k}")
    taxonomy = corpus.taxonomy
    n_candidates = min(k, len(taxonomy))
    tasks: list[ReviewTask] = []
    for p in preds:
        ranked_tags = [tag for tag, _ in p.prediction.ranked]
        if len(ranked_tags) < n_candidates:
            raise ReviewError(
                f"prediction for {p.sid}:{p.mention_index} ranks only "
                f"{len(ranked_tags)} tags; rerun the pipeline with k >= {n_candidates}"
            )
        chosen = ranked_tags[:n_candidates]
        if p.gold not in chosen:
            chosen[-1] = p.gold
        task_id = f"{p.sid}:{p.mention_index}"
        rng = random.Random(_derived_seed(seed, "review-shuffle", task_id))
        rng.shuffle(chosen)
        statement = corpus.statement(p.sid)
        mention = statement.mentions[p.mention_index]
        tasks.append(
            ReviewTask(
                task_id=task_id,
                sid=p.sid,
                mention_index=p.mention_index,
                text=statement.text,
                highlight_start=mention.start,
                highlight_end=mention.end,
                candidates=tuple(
                    (tag, taxonomy.documentation_for(tag)) for tag in chosen
                ),
                machine_top1=ranked_tags[0],
                gold=p.gold,
            )
        )
    return tasks


def save_tasks(tasks: Sequence[ReviewTask], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for task in tasks:
            f.write(json.dumps(task.to_record(), ensure_ascii=False) + "\n")


def load_tasks(path) -> list[ReviewTask]:
    tasks: list[ReviewTask] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                tasks.append(
                    ReviewTask(
                        task_id=obj["task_id"],
                        sid=obj["sid"],
                        mention_index=obj["mention_index"],
                        text=obj["text"],
                        highlight_start=obj["highlight"]["start"],
                        highlight_end=obj["highlight"]["end"],
                        candidates=tuple(
                            (c["tag"], c["documentation"]) for c in obj["candidates"]
                        ),
                        machine_top1=obj["machine_top1"],
                        gold=obj["gold"],
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise ReviewError(f"tasks file line {lineno}: {exc}") from None
    return tasks


def save_annotations(annotations: Sequence[AnnotationRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for a in annotations:
            f.write(
                json.dumps(
                    {
                        "task_id": a.task_id,
                        "annotator": a.annotator,
                        "chosen": a.chosen,
                        "timestamp": a.timestamp,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_annotations(path) -> list[AnnotationRecord]:
    records: list[AnnotationRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(
                    AnnotationRecord(
                        task_id=obj["task_id"],
                        annotator=obj["annotator"],
                        chosen=obj["chosen"],
                        timestamp=obj.get("timestamp", ""),
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise ReviewError(f"annotations file line {lineno}: {exc}") from None
    return records


def _split_fractions(entries: list[tuple[bool, bool, int]]) -> dict:
    """entries: (both_gold, same_choice, n_correct_choices) per task."""
    n_tasks = len(entries)
    if n_tasks == 0:
        return {
            "both_correct": None,
            "correct_fraction": None,
            "agreement": None,
            "n_tasks": 0,
        }
    return {
        "both_correct": sum(1 for e in entries if e[0]) / n_tasks,
        "correct_fraction": sum(e[2] for e in entries) / (2 * n_tasks),
        "agreement": sum(1 for e in entries if e[1]) / n_tasks,
        "n_tasks": n_tasks,
    }


def agreement_report(
    annotations: Iterable[AnnotationRecord],
    tasks: Sequence[ReviewTask],
) -> dict:
    """Double-annotation agreement, split by machine correctness.

    Only tasks with exactly two distinct annotators count (a repeat
    submission by the same annotator keeps the latest choice); others
    are reported in "excluded". Per task the report aggregates whether
    both annotators chose gold, the fraction of correct choices, and
    whether both made the same choice.
    """
    by_task: dict[str, dict[str, str]] = {}
    unknown_ids: set[str] = set()
    task_index = {t.task_id: t for t in tasks}
    for a in annotations:
        if a.task_id in task_index:
            by_task.setdefault(a.task_id, {})[a.annotator] = a.chosen
        else:
            unknown_ids.add(a.task_id)

    entries: dict[str, list[tuple[bool, bool, int]]] = {
        "overall": [],
        "machine_correct": [],
        "machine_incorrect": [],
    }
    # Tasks without exactly two annotators (including untouched ones)
    # violate the double-annotation protocol and are excluded.
    excluded = len(unknown_ids) + sum(
        1 for t in tasks if len(by_task.get(t.task_id, {})) != 2
    )
    for task_id, choices in sorted(by_task.items()):
        task = task_index[task_id]
        if len(choices) != 2:
            continue
        picked = list(choices.values())
        entry = (
            all(c == task.gold for c in picked),
            picked[0] == picked[1],
            sum(1 for c in picked if c == task.gold),
        )
        entries["overall"].append(entry)
        split = (
            "machine_correct"
            if task.machine_top1 == task.gold
            else "machine_incorrect"
        )
        entries[split].append(entry)

    if not entries["overall"]:
        raise MetricsError("no tasks with exactly two annotators")
    return {
        "overall": _split_fractions(entries["overall"]),
        "machine_correct": _split_fractions(entries["machine_correct"]),
        "machine_incorrect": _split_fractions(entries["machine_incorrect"]),
        "excluded": excluded,
    }
