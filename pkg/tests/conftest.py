"""Shared fixtures: synthetic corpora, reference taxonomies, stub backends."""

from __future__ import annotations

import json
import math
import random

import pytest

from xfnl.backends import EmbeddingVector
from xfnl.corpus import parse_corpus

# The two near-miss share tags and their documentations, plus the
# reserved label. Used wherever a tiny realistic taxonomy is needed.
ISSUED_TAG = "common stocks shares issued"
ISSUED_DOC = (
    "Total number of common shares of an entity that have been sold or "
    "granted to shareholders (includes common shares that were issued, "
    "repurchased and remain in the treasury). These shares represent "
    "capital invested by the firm's shareholders and owners, and may be "
    "all or only a portion of the number of shares authorized."
)
AUTHORIZED_TAG = "common stocks shares authorized"
AUTHORIZED_DOC = (
    "The maximum number of common shares permitted to be issued by an "
    "entity's charter and bylaws."
)

_NOUNS = (
    "revenue", "expense", "liability", "asset", "dividend", "provision",
    "receivable", "obligation", "impairment", "allowance", "premium",
    "settlement", "amortization", "reserve", "royalty", "rebate",
)
_TEMPLATES = (
    "The company reported {value} million for the period.",
    "Management disclosed a balance of {value} million at year end.",
    "Cash settlements of {value} million were recorded.",
    "An increase of {value} million was attributed to operations.",
    "The filing lists {value} million under contractual commitments.",
)


def taxonomy_line(tag: str, documentation: str) -> str:
    return json.dumps({"tag": tag, "documentation": documentation})


def make_taxonomy_bytes(n_tags: int, *, include_others: bool = True) -> bytes:
    """n_tags synthetic records; docs share vocabulary but never word sets."""
    lines = []
    for i in range(n_tags):
        noun = _NOUNS[i % len(_NOUNS)]
        tag = f"synthetic {noun} metric {i:03d}"
        doc = (
            f"Amount of {noun} recognized under concept uniq{i:03d} "
            f"reported for the period."
        )
        lines.append(taxonomy_line(tag, doc))
    if include_others:
        lines.append(taxonomy_line("others", "others"))
    return ("\n".join(lines) + "\n").encode("utf-8")


def synthetic_tag(i: int) -> str:
    noun = _NOUNS[i % len(_NOUNS)]
    return f"synthetic {noun} metric {i:03d}"


def make_dataset_bytes(
    n_tags: int,
    n_statements: int,
    *,
    seed: int = 0,
    others_rate: float = 0.15,
    split_weights: tuple[float, float, float] = (0.5, 0.2, 0.3),
    mentions_range: tuple[int, int] = (1, 3),
) -> bytes:
    """Random statements with globally unique numeral surfaces.

    Unique surfaces keep prompts distinct across the corpus, so oracle
    backends never face conflicting targets.
    """
    rng = random.Random(seed)
    value_counter = 1000
    lines = []
    for s in range(n_statements):
        split = rng.choices(
            ["train", "validation", "test"], weights=split_weights
        )[0]
        n_mentions = rng.randint(*mentions_range)
        pieces = []
        numerals = []
        offset = 0
        for _ in range(n_mentions):
            value_counter += 1
            value = f"{value_counter}.{rng.randint(10, 99)}"
            template = rng.choice(_TEMPLATES)
            before, after = template.split("{value}")
            if rng.random() < others_rate:
                tag = "others"
            else:
                tag = synthetic_tag(rng.randrange(n_tags))
            start = offset + len(before)
            fragment = before + value + after + " "
            numerals.append(
                {
                    "surface": value,
                    "start": start,
                    "end": start + len(value),
                    "tag": tag,
                }
            )
            pieces.append(fragment)
            offset += len(fragment)
        text = "".join(pieces).rstrip()
        lines.append(
            json.dumps(
                {
                    "sid": f"s{s:05d}",
                    "split": split,
                    "text": text,
                    "numerals": numerals,
                }
            )
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def make_corpus(n_tags=12, n_statements=40, **kwargs):
    return parse_corpus(
        make_dataset_bytes(n_tags, n_statements, **kwargs),
        make_taxonomy_bytes(n_tags),
    )


@pytest.fixture
def small_corpus():
    return make_corpus(n_tags=10, n_statements=30, seed=7)


@pytest.fixture
def table1_taxonomy_bytes() -> bytes:
    return (
        "\n".join(
            [
                taxonomy_line(ISSUED_TAG, ISSUED_DOC),
                taxonomy_line(AUTHORIZED_TAG, AUTHORIZED_DOC),
                taxonomy_line("others", "others"),
            ]
        )
        + "\n"
    ).encode("utf-8")


class FixedEmbedder:
    """Maps exact texts to preset vectors; unknown text is an error."""

    def __init__(self, table: dict[str, list[float]]):
        self._table = {k: tuple(float(x) for x in v) for k, v in table.items()}

    def embed(self, texts):
        return [EmbeddingVector(self._table[t]) for t in texts]


class StaticGenerationBackend:
    """Ignores the prompt and always emits one fixed text."""

    def __init__(self, text: str):
        self._text = text

    def generate(self, request):
        from xfnl.backends import GeneratedOutput

        return GeneratedOutput(text=self._text)


# ---------------------------------------------------------------------------
# Independent reference implementations (pure Python, no numpy)
# ---------------------------------------------------------------------------


def brute_force_cosine_ranking(tags, raw_rows, raw_query, k):
    """Full sort of clamped cosines with the equal-score tie rule."""

    def norm(v):
        return math.sqrt(sum(x * x for x in v))

    qn = norm(raw_query)
    scored = []
    for tag, row in zip(tags, raw_rows):
        dot = sum(a * b for a, b in zip(row, raw_query))
        score = max(-1.0, min(1.0, dot / (norm(row) * qn)))
        scored.append((tag, score))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def brute_force_macro(pairs, classes):
    """Direct TP/FP/FN counting per class over (gold, top1) pairs."""
    per_class = {}
    for c in classes:
        tp = sum(1 for g, p in pairs if g == c and p == c)
        fp = sum(1 for g, p in pairs if g != c and p == c)
        fn = sum(1 for g, p in pairs if g == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall
            else 0.0
        )
        support = sum(1 for g, _ in pairs if g == c)
        per_class[c] = (precision, recall, f1, support)
    n = len(classes)
    macro_p = sum(v[0] for v in per_class.values()) / n
    macro_r = sum(v[1] for v in per_class.values()) / n
    macro_f1 = sum(v[2] for v in per_class.values()) / n
    return macro_p, macro_r, macro_f1, per_class
