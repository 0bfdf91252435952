"""Dataset and taxonomy parsing for financial numeral labeling.

The dataset is line-delimited JSON: one statement per line with its
annotated numeral mentions and split membership. The taxonomy is
line-delimited JSON: one (tag, documentation) record per line. Offsets
count Unicode code points, never bytes.

Everything here is immutable after construction, so a parsed Corpus can
be shared freely across worker threads.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

OTHERS_TAG = "others"

SPLIT_TRAIN = "train"
SPLIT_VALIDATION = "validation"
SPLIT_TEST = "test"
SPLITS = (SPLIT_TRAIN, SPLIT_VALIDATION, SPLIT_TEST)

# Bucket upper bounds for grouping tags by training-set frequency:
# zero-shot, 1-5, 6-10, 11-50, 51-100, >100.
DEFAULT_BUCKET_EDGES = (5, 10, 50, 100)
ZERO_SHOT_BUCKET = "zero-shot"


class CorpusError(ValueError):
    """Malformed or internally inconsistent dataset/taxonomy input."""


def normalize_tag(tag: str) -> str:
    """Canonical tag form: lowercase, single-spaced words."""
    return " ".join(tag.lower().split())


def normalize_documentation(doc: str) -> str:
    """Canonical documentation key used for the tag <-> doc bijection."""
    return " ".join(doc.lower().split())


@dataclass(frozen=True, slots=True)
class NumeralMention:
    """One annotated numeral: its surface text, character span, and gold tag.

    Offsets are [start, end) in code points. Cross-checks against the
    owning statement text happen in Statement.
    """

    surface: str
    start: int
    end: int
    gold_tag: str

    def __post_init__(self) -> None:
        if self.start < 0 or self.end <= self.start:
            raise CorpusError(
                f"invalid mention span [{self.start}, {self.end})"
            )
        if not self.surface:
            raise CorpusError("mention surface is empty")
        if not any(ch.isdigit() for ch in self.surface):
            raise CorpusError(
                f"mention surface {self.surface!r} contains no digit"
            )
        if not self.gold_tag:
            raise CorpusError("mention gold tag is empty")


@dataclass(frozen=True, slots=True)
class Statement:
    """A sentence with its ordered, non-overlapping numeral mentions."""

    sid: str
    text: str
    mentions: tuple[NumeralMention, ...]
    split: str

    def __post_init__(self) -> None:
        if not self.sid:
            raise CorpusError("statement sid is empty")
        if self.split not in SPLITS:
            raise CorpusError(
                f"statement {self.sid}: unknown split {self.split!r}"
            )
        for m in self.mentions:
            if m.end > len(self.text):
                raise CorpusError(
                    f"statement {self.sid}: span [{m.start}, {m.end}) "
                    f"exceeds text length {len(self.text)}"
                )
            sliced = self.text[m.start:m.end]
            if sliced != m.surface:
                raise CorpusError(
                    f"statement {self.sid}: span-mismatch, surface "
                    f"{m.surface!r} != text slice {sliced!r}"
                )
        ordered = sorted(self.mentions, key=lambda m: m.start)
        for prev, cur in zip(ordered, ordered[1:]):
            if cur.start < prev.end:
                raise CorpusError(
                    f"statement {self.sid}: overlapping mention spans "
                    f"[{prev.start}, {prev.end}) and [{cur.start}, {cur.end})"
                )


@dataclass(frozen=True, slots=True)
class TagRecord:
    """One taxonomy entry: normalized tag name and its documentation text."""

    tag_id: str
    documentation: str

    def __post_init__(self) -> None:
        if not self.tag_id:
            raise CorpusError("tag_id is empty")
        if self.tag_id != normalize_tag(self.tag_id):
            raise CorpusError(
                f"tag_id {self.tag_id!r} is not normalized "
                f"(expected {normalize_tag(self.tag_id)!r})"
            )
        if not self.documentation.strip():
            raise CorpusError(f"tag {self.tag_id!r} has empty documentation")


class Taxonomy:
    """Bijective registry of tags and documentations, including OTHERS.

    Lookup by tag and lookup by (normalized) documentation are mutual
    inverses; the reserved "others" entry carries documentation "others".
    """

    __slots__ = ("_by_tag", "_by_doc")

    def __init__(self, records: list[TagRecord] | tuple[TagRecord, ...]):
        by_tag: dict[str, TagRecord] = {}
        by_doc: dict[str, str] = {}
        for rec in records:
            if rec.tag_id in by_tag:
                raise CorpusError(f"duplicate tag_id {rec.tag_id!r}")
            doc_key = normalize_documentation(rec.documentation)
            if doc_key in by_doc:
                raise CorpusError(
                    f"tags {by_doc[doc_key]!r} and {rec.tag_id!r} share the "
                    f"same documentation; the tag<->doc mapping must be 1:1"
                )
            by_tag[rec.tag_id] = rec
            by_doc[doc_key] = rec.tag_id
        others = by_tag.get(OTHERS_TAG)
        if others is None:
            raise CorpusError('taxonomy is missing the reserved "others" tag')
        if others.documentation != OTHERS_TAG:
            raise CorpusError(
                f'reserved tag "others" must have documentation "others", '
                f"got {others.documentation!r}"
            )
        self._by_tag = by_tag
        self._by_doc = by_doc

    def __len__(self) -> int:
        return len(self._by_tag)

    def __contains__(self, tag_id: str) -> bool:
        return tag_id in self._by_tag

    @property
    def others_id(self) -> str:
        return OTHERS_TAG

    def tags(self) -> list[str]:
        """All tag ids in ascending order (the canonical index order)."""
        return sorted(self._by_tag)

    def records(self) -> list[TagRecord]:
        return [self._by_tag[t] for t in self.tags()]

    def documentation_for(self, tag_id: str) -> str:
        try:
            return self._by_tag[tag_id].documentation
        except KeyError:
            raise CorpusError(f"unknown tag {tag_id!r}") from None

    def tag_for_documentation(self, documentation: str) -> str:
        try:
            return self._by_doc[normalize_documentation(documentation)]
        except KeyError:
            raise CorpusError(
                f"no tag has documentation {documentation!r}"
            ) from None


@dataclass(frozen=True, slots=True)
class Corpus:
    """Parsed dataset: statements, taxonomy, and train-split tag counts."""

    statements: tuple[Statement, ...]
    taxonomy: Taxonomy
    tag_frequency: dict[str, int] = field(default_factory=dict)

    def statement(self, sid: str) -> Statement:
        for s in self.statements:
            if s.sid == sid:
                return s
        raise CorpusError(f"unknown sid {sid!r}")

    def iter_mentions(self, split: str | None = None):
        """Yield (statement, mention_index, mention) in file order."""
        for s in self.statements:
            if split is not None and s.split != split:
                continue
            for i, m in enumerate(s.mentions):
                yield s, i, m

    def split_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in SPLITS}
        for s in self.statements:
            counts[s.split] += 1
        return counts


def _decode_lines(data: bytes, what: str):
    """Yield (line_number, parsed_object) for non-blank JSON lines."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{what} is not valid UTF-8: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(
                f"{what} line {lineno}: malformed JSON ({exc.msg})"
            ) from None
        if not isinstance(obj, dict):
            raise CorpusError(f"{what} line {lineno}: expected an object")
        yield lineno, obj


def _require(obj: dict, key: str, kind, what: str, lineno: int):
    value = obj.get(key)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise CorpusError(
            f"{what} line {lineno}: field {key!r} missing or not "
            f"{kind.__name__}"
        )
    return value


def parse_taxonomy(data: bytes) -> Taxonomy:
    """Parse a line-delimited taxonomy file.

    The reserved "others" entry is appended automatically when the file
    does not carry one, so plain XBRL exports work unchanged.
    """
    records: list[TagRecord] = []
    seen_others = False
    for lineno, obj in _decode_lines(data, "taxonomy"):
        tag = normalize_tag(_require(obj, "tag", str, "taxonomy", lineno))
        doc = _require(obj, "documentation", str, "taxonomy", lineno)
        if tag == OTHERS_TAG:
            seen_others = True
        try:
            records.append(TagRecord(tag_id=tag, documentation=doc))
        except CorpusError as exc:
            raise CorpusError(f"taxonomy line {lineno}: {exc}") from None
    if not seen_others:
        records.append(TagRecord(tag_id=OTHERS_TAG, documentation=OTHERS_TAG))
    return Taxonomy(records)


def parse_dataset(data: bytes, taxonomy: Taxonomy) -> tuple[Statement, ...]:
    """Parse a line-delimited dataset file against a taxonomy."""
    statements: list[Statement] = []
    seen_sids: set[str] = set()
    for lineno, obj in _decode_lines(data, "dataset"):
        sid = _require(obj, "sid", str, "dataset", lineno)
        if sid in seen_sids:
            raise CorpusError(f"dataset line {lineno}: duplicate sid {sid!r}")
        seen_sids.add(sid)
        split = _require(obj, "split", str, "dataset", lineno)
        text = _require(obj, "text", str, "dataset", lineno)
        raw_mentions = _require(obj, "numerals", list, "dataset", lineno)
        mentions: list[NumeralMention] = []
        for raw in raw_mentions:
            if not isinstance(raw, dict):
                raise CorpusError(
                    f"dataset line {lineno}: numeral entries must be objects"
                )
            tag = normalize_tag(_require(raw, "tag", str, "dataset", lineno))
            if tag not in taxonomy:
                raise CorpusError(
                    f"dataset line {lineno}: unknown gold tag {tag!r}"
                )
            try:
                mentions.append(
                    NumeralMention(
                        surface=_require(raw, "surface", str, "dataset", lineno),
                        start=_require(raw, "start", int, "dataset", lineno),
                        end=_require(raw, "end", int, "dataset", lineno),
                        gold_tag=tag,
                    )
                )
            except CorpusError as exc:
                raise CorpusError(f"dataset line {lineno}: {exc}") from None
        try:
            statements.append(
                Statement(sid=sid, text=text, mentions=tuple(mentions), split=split)
            )
        except CorpusError as exc:
            raise CorpusError(f"dataset line {lineno}: {exc}") from None
    return tuple(statements)


def compute_tag_frequency(
    statements: tuple[Statement, ...], *, count_others: bool = True
) -> dict[str, int]:
    """Count gold occurrences over train-split mentions only."""
    counts: Counter[str] = Counter()
    for s in statements:
        if s.split != SPLIT_TRAIN:
            continue
        for m in s.mentions:
            if not count_others and m.gold_tag == OTHERS_TAG:
                continue
            counts[m.gold_tag] += 1
    return dict(sorted(counts.items()))


def parse_corpus(
    dataset_bytes: bytes,
    taxonomy_bytes: bytes,
    *,
    count_others: bool = True,
) -> Corpus:
    """Parse and validate both input files into an immutable Corpus."""
    taxonomy = parse_taxonomy(taxonomy_bytes)
    statements = parse_dataset(dataset_bytes, taxonomy)
    return Corpus(
        statements=statements,
        taxonomy=taxonomy,
        tag_frequency=compute_tag_frequency(statements, count_others=count_others),
    )


def load_corpus(dataset_path, taxonomy_path, *, count_others: bool = True) -> Corpus:
    with open(dataset_path, "rb") as f:
        dataset_bytes = f.read()
    with open(taxonomy_path, "rb") as f:
        taxonomy_bytes = f.read()
    return parse_corpus(dataset_bytes, taxonomy_bytes, count_others=count_others)


def serialize_corpus(corpus: Corpus) -> tuple[bytes, bytes]:
    """Render (dataset_bytes, taxonomy_bytes) in canonical field order.

    parse -> serialize is a fixed point: serializing a corpus parsed from
    canonical-form files reproduces those files byte for byte.
    """
    dataset_lines = []
    for s in corpus.statements:
        record = {
            "sid": s.sid,
            "split": s.split,
            "text": s.text,
            "numerals": [
                {"surface": m.surface, "start": m.start, "end": m.end, "tag": m.gold_tag}
                for m in s.mentions
            ],
        }
        dataset_lines.append(json.dumps(record, ensure_ascii=False))
    taxonomy_lines = [
        json.dumps(
            {"tag": rec.tag_id, "documentation": rec.documentation},
            ensure_ascii=False,
        )
        for rec in corpus.taxonomy.records()
    ]
    dataset_bytes = ("\n".join(dataset_lines) + "\n").encode("utf-8")
    taxonomy_bytes = ("\n".join(taxonomy_lines) + "\n").encode("utf-8")
    return dataset_bytes, taxonomy_bytes


def gold_tags_by_split(corpus: Corpus) -> dict[str, set[str]]:
    golds: dict[str, set[str]] = {name: set() for name in SPLITS}
    for s in corpus.statements:
        for m in s.mentions:
            golds[s.split].add(m.gold_tag)
    return golds


def zero_shot_tags(corpus: Corpus) -> set[str]:
    """Tags appearing as gold in test but in neither train nor validation.

    OTHERS never counts as zero-shot.
    """
    if not any(s.split == SPLIT_TEST for s in corpus.statements):
        raise CorpusError("corpus has no test statements")
    golds = gold_tags_by_split(corpus)
    unseen = golds[SPLIT_TEST] - golds[SPLIT_TRAIN] - golds[SPLIT_VALIDATION]
    unseen.discard(OTHERS_TAG)
    return unseen


def frequency_bucket(
    count: int, edges: tuple[int, ...] = DEFAULT_BUCKET_EDGES
) -> str:
    """Assign a train-frequency count to its bucket label.

    Count 0 is the zero-shot bucket; edges are inclusive upper bounds of
    the remaining buckets, e.g. (5, 10, 50, 100) yields 1-5, 6-10, 11-50,
    51-100 and >100.
    """
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    _validate_edges(edges)
    if count == 0:
        return ZERO_SHOT_BUCKET
    lo = 1
    for edge in edges:
        if count <= edge:
            return f"{lo}–{edge}"
        lo = edge + 1
    return f">{edges[-1]}"


def bucket_labels(edges: tuple[int, ...] = DEFAULT_BUCKET_EDGES) -> list[str]:
    """All bucket labels for the given edges, rarest first."""
    _validate_edges(edges)
    labels = [ZERO_SHOT_BUCKET]
    lo = 1
    for edge in edges:
        labels.append(f"{lo}–{edge}")
        lo = edge + 1
    labels.append(f">{edges[-1]}")
    return labels


def _validate_edges(edges: tuple[int, ...]) -> None:
    if not edges:
        raise ValueError("bucket edges must be nonempty")
    if any(e <= 0 for e in edges) or any(
        b <= a for a, b in zip(edges, edges[1:])
    ):
        raise ValueError(f"bucket edges must be strictly increasing: {edges}")
