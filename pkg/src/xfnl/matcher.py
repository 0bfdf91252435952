"""The Tag Matcher: exact top-k cosine search over tag-text embeddings.

An index holds one unit-normalized embedding row per taxonomy tag, in
ascending tag order. Matching embeds the generated text and returns the
k highest-cosine tags; equal scores break ties by ascending tag id so
results are deterministic. Generated text that normalizes to "others"
short-circuits straight to the reserved tag.

The search is an exact flat scan with a bounded-size heap, never an
approximate index: a few thousand tags make exactness cheap, and it
keeps brute-force oracle tests meaningful.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass

import numpy as np

from .backends import EmbeddingBackend, EmbeddingVector, GeneratedOutput, embed
from .corpus import OTHERS_TAG, Taxonomy, normalize_tag
from .prompting import TARGET_DOCUMENTATION, TARGET_TAG_WORDS

logger = logging.getLogger(__name__)

UNIT_NORM_TOLERANCE = 1e-9

# Generated strings (after lowercase/whitespace collapse) that resolve
# directly to the reserved tag without an embedding lookup.
_OTHERS_LITERALS = frozenset({"other", "others"})


class MatcherError(ValueError):
    """Invalid index construction or match request."""


class TagIndex:
    """Immutable matrix of unit-normalized tag embeddings, sorted by tag."""

    __slots__ = ("tags", "matrix", "dim", "_positions")

    def __init__(self, tags: tuple[str, ...], matrix: np.ndarray):
        if len(tags) == 0:
            raise MatcherError("cannot build an index over zero tags")
        if list(tags) != sorted(tags):
            raise MatcherError("index tags must be in ascending order")
        if len(set(tags)) != len(tags):
            raise MatcherError("index tags must be unique")
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(tags):
            raise MatcherError(
                f"matrix shape {matrix.shape} does not match {len(tags)} tags"
            )
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
            raise MatcherError("index rows must be unit-normalized")
        matrix = matrix.copy()
        matrix.setflags(write=False)
        self.tags = tuple(tags)
        self.matrix = matrix
        self.dim = int(matrix.shape[1])
        self._positions = {tag: i for i, tag in enumerate(tags)}

    def __len__(self) -> int:
        return len(self.tags)

    def position(self, tag: str) -> int | None:
        return self._positions.get(tag)


@dataclass(frozen=True, slots=True)
class Prediction:
    """Ranked (tag, cosine) candidates for one generated text.

    Scores are non-increasing and tags never repeat; the first entry is
    the predicted tag.
    """

    ranked: tuple[tuple[str, float], ...]
    query_text: str

    def __post_init__(self) -> None:
        if not self.ranked:
            raise MatcherError("prediction has no ranked candidates")
        tags = [t for t, _ in self.ranked]
        if len(set(tags)) != len(tags):
            raise MatcherError("prediction contains duplicate tags")
        scores = [s for _, s in self.ranked]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise MatcherError("prediction scores must be non-increasing")

    @property
    def top_tag(self) -> str:
        return self.ranked[0][0]


def _normalize_rows(matrix: np.ndarray, tags: tuple[str, ...]) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise MatcherError(
            f"embedding for tag {tags[bad[0]]!r} has zero norm"
        )
    return matrix / norms[:, np.newaxis]


def build_index(
    taxonomy: Taxonomy,
    embedding_backend: EmbeddingBackend,
    *,
    target_kind: str = TARGET_DOCUMENTATION,
) -> TagIndex:
    """Embed each tag's text once and assemble the normalized index.

    Rows hold documentation embeddings; in tag-words mode (the metadata
    ablation) the tag names are embedded instead.
    """
    records = taxonomy.records()
    if not records:
        raise MatcherError("cannot build an index from an empty taxonomy")
    if target_kind == TARGET_DOCUMENTATION:
        texts = [rec.documentation for rec in records]
    elif target_kind == TARGET_TAG_WORDS:
        texts = [rec.tag_id for rec in records]
    else:
        raise MatcherError(f"unknown target_kind {target_kind!r}")
    vectors = embed(embedding_backend, texts)
    tags = tuple(rec.tag_id for rec in records)
    matrix = np.array([v.values for v in vectors], dtype=np.float64)
    return TagIndex(tags, _normalize_rows(matrix, tags))


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding drift."""
    if a.dim != b.dim:
        raise MatcherError(f"dimension mismatch: {a.dim} vs {b.dim}")
    va = np.asarray(a.values, dtype=np.float64)
    vb = np.asarray(b.values, dtype=np.float64)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na < 1e-12 or nb < 1e-12:
        raise MatcherError("cosine of a zero-norm vector is undefined")
    return float(np.clip(va.dot(vb) / (na * nb), -1.0, 1.0))


def _top_k(scores: np.ndarray, tags: tuple[str, ...], k: int) -> list[tuple[str, float]]:
    """Exact top-k via one scan and a k-bounded heap.

    Heap items are (score, -row); rows ascend with tag order, so the
    heap minimum is always the candidate that loses the tie rule.
    """
    heap: list[tuple[float, int]] = []
    for row, score in enumerate(scores):
        item = (float(score), -row)
        if len(heap) < k:
            heapq.heappush(heap, item)
        elif item > heap[0]:
            heapq.heapreplace(heap, item)
    ordered = sorted(heap, key=lambda item: (-item[0], -item[1]))
    return [(tags[-neg_row], score) for score, neg_row in ordered]


def match(
    index: TagIndex,
    generated: GeneratedOutput,
    embedding_backend: EmbeddingBackend,
    k: int = 5,
) -> Prediction:
    """Resolve generated text to its k best tags; ranked[0] is the answer."""
    if k < 1:
        raise MatcherError(f"k must be >= 1, got {k}")
    if not generated.text:
        raise MatcherError("generated text is empty")
    if k > len(index):
        logger.warning(
            "k=%d exceeds taxonomy size %d; clamping", k, len(index)
        )
        k = len(index)

    normalized = " ".join(generated.text.lower().split())
    others_row = index.position(OTHERS_TAG)
    if normalized in _OTHERS_LITERALS and others_row is not None:
        ranked: list[tuple[str, float]] = [(OTHERS_TAG, 1.0)]
        if k > 1:
            scores = _query_scores(index, generated.text, embedding_backend)
            rest = [
                (tag, score)
                for tag, score in _top_k(scores, index.tags, k)
                if tag != OTHERS_TAG
            ]
            ranked.extend(rest[: k - 1])
        return Prediction(ranked=tuple(ranked), query_text=generated.text)

    scores = _query_scores(index, generated.text, embedding_backend)
    return Prediction(
        ranked=tuple(_top_k(scores, index.tags, k)),
        query_text=generated.text,
    )


def _query_scores(
    index: TagIndex, text: str, embedding_backend: EmbeddingBackend
) -> np.ndarray:
    vector = embed(embedding_backend, [text])[0]
    if vector.dim != index.dim:
        raise MatcherError(
            f"query dimension {vector.dim} does not match index dim {index.dim}"
        )
    query = np.asarray(vector.values, dtype=np.float64)
    norm = np.linalg.norm(query)
    if norm < 1e-12:
        raise MatcherError("query embedded to the zero vector")
    unit = query / norm
    # Row-wise flat scan rather than one blocked matmul: a BLAS gemv can
    # round identical rows differently across SIMD lanes, and the exact
    # tie rule needs duplicate rows to score bitwise-identically.
    scores = np.fromiter(
        (np.dot(row, unit) for row in index.matrix),
        dtype=np.float64,
        count=len(index.matrix),
    )
    return np.clip(scores, -1.0, 1.0)


def resolve_tag(taxonomy: Taxonomy, documentation: str) -> str:
    """Map a predicted documentation back to its unique tag."""
    return taxonomy.tag_for_documentation(documentation)


# ---------------------------------------------------------------------------
# Persistence: index cache and precomputed embeddings
# ---------------------------------------------------------------------------


def save_index(index: TagIndex, path) -> None:
    """Write the cache file: one JSON header line, then <f4 row-major rows."""
    header = json.dumps(
        {"dim": index.dim, "tags": list(index.tags)},
        ensure_ascii=False,
        separators=(",", ":"),
    ).encode("utf-8")
    body = index.matrix.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header + b"\n" + body)


def load_index(path) -> TagIndex:
    """Read an index cache; rows are re-normalized after f32 quantization."""
    with open(path, "rb") as f:
        blob = f.read()
    newline = blob.find(b"\n")
    if newline < 0:
        raise MatcherError(f"index cache {path} has no header line")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
        dim = int(header["dim"])
        tags = tuple(str(t) for t in header["tags"])
    except (ValueError, KeyError, TypeError) as exc:
        raise MatcherError(f"index cache {path} has a malformed header: {exc}")
    body = blob[newline + 1 :]
    expected = len(tags) * dim * 4
    if len(body) != expected:
        raise MatcherError(
            f"index cache {path} body is {len(body)} bytes, expected {expected}"
        )
    matrix = (
        np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(len(tags), dim)
    )
    return TagIndex(tags, _normalize_rows(matrix, tags))


def index_from_precomputed(taxonomy: Taxonomy, data: bytes) -> TagIndex:
    """Build an index from line-delimited {"tag", "vector"} records.

    Every taxonomy tag must appear exactly once; vectors are normalized.
    """
    rows: dict[str, list[float]] = {}
    dim: int | None = None
    for lineno, line in enumerate(data.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            tag = normalize_tag(obj["tag"])
            vector = [float(x) for x in obj["vector"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise MatcherError(
                f"precomputed embeddings line {lineno}: {exc}"
            ) from None
        if tag in rows:
            raise MatcherError(
                f"precomputed embeddings line {lineno}: duplicate tag {tag!r}"
            )
        if dim is None:
            dim = len(vector)
        elif len(vector) != dim:
            raise MatcherError(
                f"precomputed embeddings line {lineno}: vector length "
                f"{len(vector)} != {dim}"
            )
        rows[tag] = vector
    expected_tags = set(taxonomy.tags())
    if set(rows) != expected_tags:
        missing = sorted(expected_tags - set(rows))[:3]
        extra = sorted(set(rows) - expected_tags)[:3]
        raise MatcherError(
            f"precomputed embeddings do not cover the taxonomy exactly "
            f"(missing {missing}, extra {extra})"
        )
    tags = tuple(sorted(rows))
    matrix = np.array([rows[t] for t in tags], dtype=np.float64)
    return TagIndex(tags, _normalize_rows(matrix, tags))
