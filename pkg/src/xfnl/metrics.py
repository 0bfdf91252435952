"""Evaluation battery: macro P/R/F1, Hits@k, per-tag scores, frequency
bucket and zero-shot breakdowns, and Jaccard-based error analysis.

All metrics follow the single-label multi-class convention over top-1
predictions: per class c, TP = (gold=c, top1=c), FP = (gold!=c, top1=c),
FN = (gold=c, top1!=c), with 0/0 defined as 0. Macro scores are the
unweighted mean over the class set.
"""

from __future__ import annotations

import json
import re
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import (
    Corpus,
    DEFAULT_BUCKET_EDGES,
    OTHERS_TAG,
    Taxonomy,
    bucket_labels,
    frequency_bucket,
    zero_shot_tags,
)
from .matcher import Prediction

DEFAULT_JACCARD_BIN_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


class MetricsError(ValueError):
    """Invalid evaluation request (empty input, inconsistent class set)."""


@dataclass(frozen=True, slots=True)
class LabeledPrediction:
    """One evaluated mention: its gold tag and the matcher's ranking."""

    sid: str
    mention_index: int
    gold: str
    prediction: Prediction

    @property
    def top1(self) -> str:
        return self.prediction.top_tag


@dataclass(frozen=True, slots=True)
class PerTagScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True, slots=True)
class GroupReport:
    """Metrics restricted to one tag group; None marks an empty group."""

    macro_f1: float | None
    hits_at_1: float | None
    tag_count: int
    support: int


@dataclass(slots=True)
class EvalReport:
    macro_p: float
    macro_r: float
    macro_f1: float
    hits_at: dict[int, float]
    per_tag: dict[str, PerTagScore]
    buckets: dict[str, GroupReport]
    zero_shot: GroupReport
    jaccard_histogram: dict[str, int]
    n_examples: int
    n_failures: int = 0
    # Slots for externally measured scores (e.g. a served, trained
    # generator); populated only when the caller supplies them.
    reference_scores: dict | None = None

    def to_dict(self) -> dict:
        return {
            "macro": {
                "precision": self.macro_p,
                "recall": self.macro_r,
                "f1": self.macro_f1,
            },
            "hits": {str(k): v for k, v in sorted(self.hits_at.items())},
            "per_tag": [
                {
                    "tag": tag,
                    "precision": score.precision,
                    "recall": score.recall,
                    "f1": score.f1,
                    "support": score.support,
                }
                for tag, score in sorted(self.per_tag.items())
            ],
            "buckets": [
                {
                    "bucket": label,
                    "macro_f1": group.macro_f1,
                    "hits_at_1": group.hits_at_1,
                    "tag_count": group.tag_count,
                    "support": group.support,
                }
                for label, group in self.buckets.items()
            ],
            "zero_shot": {
                "macro_f1": self.zero_shot.macro_f1,
                "hits_at_1": self.zero_shot.hits_at_1,
                "tag_count": self.zero_shot.tag_count,
                "support": self.zero_shot.support,
            },
            "jaccard_histogram": [
                {"bin": label, "count": count}
                for label, count in self.jaccard_histogram.items()
            ],
            "n_examples": self.n_examples,
            "n_failures": self.n_failures,
            "reference_scores": self.reference_scores,
        }


def macro_metrics(
    preds: Sequence[LabeledPrediction],
    class_set: Iterable[str] | None = None,
) -> tuple[float, float, float, dict[str, PerTagScore]]:
    """Macro precision/recall/F1 plus per-class scores over top-1 picks.

    class_set defaults to the distinct gold tags of preds and must cover
    every gold tag when given explicitly.
    """
    if not preds:
        raise MetricsError("cannot compute metrics over zero predictions")
    golds = {p.gold for p in preds}
    classes = sorted(set(class_set)) if class_set is not None else sorted(golds)
    missing = golds - set(classes)
    if missing:
        raise MetricsError(
            f"class_set is missing gold tags: {sorted(missing)[:5]}"
        )

    tp: dict[str, int] = {c: 0 for c in classes}
    fp: dict[str, int] = {c: 0 for c in classes}
    fn: dict[str, int] = {c: 0 for c in classes}
    support: dict[str, int] = {c: 0 for c in classes}
    for p in preds:
        top1 = p.top1
        support[p.gold] += 1
        if top1 == p.gold:
            tp[p.gold] += 1
        else:
            fn[p.gold] += 1
            if top1 in fp:
                fp[top1] += 1

    per_tag: dict[str, PerTagScore] = {}
    for c in classes:
        precision = _safe_div(tp[c], tp[c] + fp[c])
        recall = _safe_div(tp[c], tp[c] + fn[c])
        f1 = _safe_div(2 * precision * recall, precision + recall)
        per_tag[c] = PerTagScore(precision, recall, f1, support[c])

    n = len(classes)
    macro_p = sum(s.precision for s in per_tag.values()) / n
    macro_r = sum(s.recall for s in per_tag.values()) / n
    macro_f1 = sum(s.f1 for s in per_tag.values()) / n
    return macro_p, macro_r, macro_f1, per_tag


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def hits_at_k(preds: Sequence[LabeledPrediction], k: int) -> float:
    """Fraction of examples whose gold appears in the first k ranked tags."""
    if k < 1:
        raise MetricsError(f"k must be >= 1, got {k}")
    if not preds:
        raise MetricsError("cannot compute hits over zero predictions")
    hits = sum(
        1 for p in preds if p.gold in [t for t, _ in p.prediction.ranked[:k]]
    )
    return hits / len(preds)


_PUNCTUATION = re.compile(r"[^\w\s]")


def _word_set(text: str) -> frozenset[str]:
    return frozenset(_PUNCTUATION.sub(" ", text.lower()).split())


def jaccard(doc_a: str, doc_b: str) -> float:
    """Word-set Jaccard similarity (lowercased, punctuation stripped)."""
    if not doc_a or not doc_b:
        raise MetricsError("jaccard inputs must be nonempty")
    a = _word_set(doc_a)
    b = _word_set(doc_b)
    union = a | b
    if not union:
        # Both degenerate to the empty set; identical sets score 1.
        return 1.0
    return len(a & b) / len(union)


def jaccard_bin_label(edges: Sequence[float], idx: int) -> str:
    closer = "]" if idx == len(edges) - 2 else ")"
    return f"[{edges[idx]:.1f},{edges[idx + 1]:.1f}{closer}"


def error_histogram(
    preds: Sequence[LabeledPrediction],
    taxonomy: Taxonomy,
    bin_edges: Sequence[float] = DEFAULT_JACCARD_BIN_EDGES,
) -> dict[str, int]:
    """Bin gold-vs-predicted documentation Jaccard over top-1 errors.

    Bins partition [0, 1]; the last bin is closed so a score of exactly
    1.0 still lands somewhere.
    """
    edges = list(bin_edges)
    if (
        len(edges) < 2
        or edges[0] != 0.0
        or edges[-1] != 1.0
        or any(b <= a for a, b in zip(edges, edges[1:]))
    ):
        raise MetricsError(f"bin edges must partition [0, 1]: {edges}")
    n_bins = len(edges) - 1
    counts = {jaccard_bin_label(edges, i): 0 for i in range(n_bins)}
    for p in preds:
        if p.top1 == p.gold:
            continue
        score = jaccard(
            taxonomy.documentation_for(p.top1),
            taxonomy.documentation_for(p.gold),
        )
        idx = min(bisect_right(edges, score) - 1, n_bins - 1)
        counts[jaccard_bin_label(edges, idx)] += 1
    return counts


def breakdown_reports(
    preds: Sequence[LabeledPrediction],
    corpus: Corpus,
    edges: tuple[int, ...] = DEFAULT_BUCKET_EDGES,
) -> tuple[dict[str, GroupReport], GroupReport]:
    """Per-frequency-bucket and zero-shot metrics.

    Buckets group examples by their gold tag's train-split frequency;
    the zero-shot group covers gold tags absent from train+validation.
    Empty groups report support 0 with null metrics.
    """
    zero_set = zero_shot_tags(corpus)
    by_bucket: dict[str, list[LabeledPrediction]] = {
        label: [] for label in bucket_labels(edges)
    }
    zero_preds: list[LabeledPrediction] = []
    for p in preds:
        count = corpus.tag_frequency.get(p.gold, 0)
        by_bucket[frequency_bucket(count, edges)].append(p)
        if p.gold in zero_set:
            zero_preds.append(p)

    buckets = {
        label: _group_report(group, tag_count=len({p.gold for p in group}))
        for label, group in by_bucket.items()
    }
    zero_shot = _group_report(zero_preds, tag_count=len(zero_set))
    return buckets, zero_shot


def _group_report(
    group: Sequence[LabeledPrediction], *, tag_count: int
) -> GroupReport:
    if not group:
        return GroupReport(macro_f1=None, hits_at_1=None, tag_count=tag_count, support=0)
    _, _, macro_f1, _ = macro_metrics(group)
    return GroupReport(
        macro_f1=macro_f1,
        hits_at_1=hits_at_k(group, 1),
        tag_count=tag_count,
        support=len(group),
    )


def build_eval_report(
    preds: Sequence[LabeledPrediction],
    corpus: Corpus,
    *,
    ks: Sequence[int] = (1, 5),
    bucket_edges: tuple[int, ...] = DEFAULT_BUCKET_EDGES,
    jaccard_bin_edges: Sequence[float] = DEFAULT_JACCARD_BIN_EDGES,
    include_others: bool = True,
    class_set: Iterable[str] | None = None,
    n_failures: int = 0,
    reference_scores: dict | None = None,
) -> EvalReport:
    """Assemble the full report over a (canonically ordered) prediction set.

    include_others=False removes OTHERS from the macro class set and
    drops OTHERS-gold examples from the Hits@k universe; everything is
    included by default.
    """
    if not preds:
        raise MetricsError("cannot build a report over zero predictions")
    macro_preds = list(preds)
    if class_set is None:
        classes = {p.gold for p in preds}
        if not include_others:
            classes.discard(OTHERS_TAG)
            macro_preds = [p for p in preds if p.gold != OTHERS_TAG]
        class_set = classes
    hits_preds = (
        list(preds)
        if include_others
        else [p for p in preds if p.gold != OTHERS_TAG]
    )
    if not macro_preds or not hits_preds:
        raise MetricsError("no predictions left after excluding OTHERS")

    macro_p, macro_r, macro_f1, per_tag = macro_metrics(macro_preds, class_set)
    hits = {k: hits_at_k(hits_preds, k) for k in sorted(set(ks))}
    buckets, zero_shot = breakdown_reports(preds, corpus, bucket_edges)
    histogram = error_histogram(preds, corpus.taxonomy, jaccard_bin_edges)
    return EvalReport(
        macro_p=macro_p,
        macro_r=macro_r,
        macro_f1=macro_f1,
        hits_at=hits,
        per_tag=per_tag,
        buckets=buckets,
        zero_shot=zero_shot,
        jaccard_histogram=histogram,
        n_examples=len(preds),
        n_failures=n_failures,
        reference_scores=reference_scores,
    )


def report_bytes(report: EvalReport) -> bytes:
    """Canonical JSON rendering; byte-stable for identical reports."""
    return (
        json.dumps(report.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)
        + "\n"
    ).encode("utf-8")


def render_report_table(report: EvalReport) -> str:
    """Human-readable summary printed after a pipeline run."""

    def fmt(value: float | None) -> str:
        return "-" if value is None else f"{value:.4f}"

    lines = [
        f"examples: {report.n_examples}    failures: {report.n_failures}",
        f"macro precision: {fmt(report.macro_p)}    "
        f"macro recall: {fmt(report.macro_r)}    macro f1: {fmt(report.macro_f1)}",
        "    ".join(f"hits@{k}: {fmt(v)}" for k, v in sorted(report.hits_at.items())),
        "",
        f"{'bucket':<12} {'macro_f1':>9} {'hits@1':>8} {'tags':>6} {'support':>8}",
    ]
    for label, group in report.buckets.items():
        lines.append(
            f"{label:<12} {fmt(group.macro_f1):>9} {fmt(group.hits_at_1):>8} "
            f"{group.tag_count:>6} {group.support:>8}"
        )
    z = report.zero_shot
    lines.append(
        f"{'zero-shot*':<12} {fmt(z.macro_f1):>9} {fmt(z.hits_at_1):>8} "
        f"{z.tag_count:>6} {z.support:>8}"
    )
    lines.append("")
    lines.append("jaccard histogram over top-1 errors:")
    for label, count in report.jaccard_histogram.items():
        lines.append(f"  {label:<12} {count}")
    return "\n".join(lines)
