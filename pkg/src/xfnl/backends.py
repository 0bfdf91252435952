"""Generation and embedding backends.

Two wire protocols (POST /v1/generate and POST /v1/embed) with retrying
HTTP clients, and in-process test backends that are fully deterministic
under a fixed seed: an oracle generator that emits the exact expected
target, a corruptor that deletes/substitutes words at seeded positions,
and a bag-of-words hash embedder.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np
import requests

logger = logging.getLogger(__name__)

DEFAULT_MAX_NEW_TOKENS = 30
DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_BACKOFF_SECONDS = 0.1
DEFAULT_MAX_IN_FLIGHT = 8

# Distractor vocabulary for the corrupting test backend's substitutions.
DEFAULT_DISTRACTORS = (
    "deferred",
    "amortized",
    "accrued",
    "hedging",
    "goodwill",
    "receivable",
    "payable",
    "impairment",
    "leasehold",
    "warranty",
)


class BackendError(Exception):
    """Backend returned an error or an unusable response."""


class TransportError(BackendError):
    """Transport kept failing after all retry attempts."""


@dataclass(frozen=True, slots=True)
class GenerationRequest:
    input_text: str
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS

    def __post_init__(self) -> None:
        if not self.input_text:
            raise ValueError("input_text is empty")
        if self.max_new_tokens < 1:
            raise ValueError(
                f"max_new_tokens must be >= 1, got {self.max_new_tokens}"
            )


@dataclass(frozen=True, slots=True)
class GeneratedOutput:
    text: str
    latency_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.text != self.text.strip():
            raise ValueError("generated text must be whitespace-trimmed")
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be >= 0")


@dataclass(frozen=True, slots=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding vector is empty")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding vector contains non-finite values")

    @property
    def dim(self) -> int:
        return len(self.values)


class GenerationBackend(Protocol):
    def generate(self, request: GenerationRequest) -> GeneratedOutput: ...


class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


def generate(backend: GenerationBackend, request: GenerationRequest) -> GeneratedOutput:
    """Run one generation and enforce the output contract.

    GeneratedOutput construction already guarantees trimmed text; an
    empty generation raises BackendError instead of being returned.
    """
    out = backend.generate(request)
    if not out.text:
        raise BackendError("backend returned empty generation")
    return out


def embed(backend: EmbeddingBackend, texts: Sequence[str]) -> list[EmbeddingVector]:
    """Embed texts, enforcing one vector per text at a uniform dimension."""
    if not texts:
        raise ValueError("texts is empty")
    if any(not t for t in texts):
        raise ValueError("texts contains an empty string")
    vectors = backend.embed(texts)
    if len(vectors) != len(texts):
        raise BackendError(
            f"backend returned {len(vectors)} vectors for {len(texts)} texts"
        )
    dims = {v.dim for v in vectors}
    if len(dims) > 1:
        raise BackendError(f"backend returned mixed dimensions {sorted(dims)}")
    return vectors


# ---------------------------------------------------------------------------
# HTTP clients
# ---------------------------------------------------------------------------


class _HttpClient:
    """Shared POST-with-retry plumbing for both wire protocols.

    Transient transport failures are retried with exponential backoff
    (base * 2^attempt); a non-200 status is a backend error and is not
    retried. In-flight requests are bounded by a semaphore so a shared
    client never floods the backend.
    """

    def __init__(
        self,
        base_url: str,
        *,
        timeout: float = 30.0,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        backoff_seconds: float = DEFAULT_BACKOFF_SECONDS,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        session: requests.Session | None = None,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_seconds = backoff_seconds
        self._session = session or requests.Session()
        self._sem = threading.BoundedSemaphore(max_in_flight)

    def post_json(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        last_exc: Exception | None = None
        with self._sem:
            for attempt in range(self.max_attempts):
                try:
                    response = self._session.post(
                        url, json=payload, timeout=self.timeout
                    )
                except requests.RequestException as exc:
                    last_exc = exc
                    if attempt < self.max_attempts - 1:
                        delay = self.backoff_seconds * (2**attempt)
                        logger.warning(
                            "transport failure on %s (attempt %d/%d): %s; "
                            "retrying in %.3fs",
                            url, attempt + 1, self.max_attempts, exc, delay,
                        )
                        time.sleep(delay)
                    continue
                if response.status_code != 200:
                    raise BackendError(
                        f"{url} returned status {response.status_code}: "
                        f"{response.text[:200]}"
                    )
                try:
                    data = response.json()
                except ValueError as exc:
                    raise BackendError(f"{url} returned non-JSON body: {exc}")
                if not isinstance(data, dict):
                    raise BackendError(f"{url} returned a non-object body")
                return data
        raise TransportError(
            f"{url} unreachable after {self.max_attempts} attempts: {last_exc}"
        )


class HttpGenerationBackend:
    """Client for POST /v1/generate: {"input", "max_new_tokens"} -> {"text"}."""

    def __init__(self, base_url: str, **kwargs):
        self._client = _HttpClient(base_url, **kwargs)

    def generate(self, request: GenerationRequest) -> GeneratedOutput:
        started = time.perf_counter()
        data = self._client.post_json(
            "/v1/generate",
            {"input": request.input_text, "max_new_tokens": request.max_new_tokens},
        )
        text = data.get("text")
        if not isinstance(text, str):
            raise BackendError('generate response is missing a string "text" field')
        return GeneratedOutput(
            text=text.strip(),
            latency_ms=(time.perf_counter() - started) * 1000.0,
        )


class HttpEmbeddingBackend:
    """Client for POST /v1/embed: {"texts"} -> {"vectors", "dim"}.

    Batches transparently; the declared dimension must be identical
    across every batch of the session.
    """

    def __init__(self, base_url: str, *, batch_size: int = 64, **kwargs):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self._client = _HttpClient(base_url, **kwargs)
        self.batch_size = batch_size
        self._dim: int | None = None
        self._dim_lock = threading.Lock()

    def _check_dim(self, dim: int) -> None:
        with self._dim_lock:
            if self._dim is None:
                self._dim = dim
            elif self._dim != dim:
                raise BackendError(
                    f"embedding dimension changed mid-session: "
                    f"{self._dim} -> {dim}"
                )

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        vectors: list[EmbeddingVector] = []
        for i in range(0, len(texts), self.batch_size):
            batch = list(texts[i : i + self.batch_size])
            data = self._client.post_json("/v1/embed", {"texts": batch})
            raw = data.get("vectors")
            dim = data.get("dim")
            if not isinstance(raw, list) or not isinstance(dim, int):
                raise BackendError(
                    'embed response must carry "vectors" and integer "dim"'
                )
            self._check_dim(dim)
            if len(raw) != len(batch):
                raise BackendError(
                    f"embed returned {len(raw)} vectors for {len(batch)} texts"
                )
            for row in raw:
                if not isinstance(row, list) or len(row) != dim:
                    raise BackendError(
                        f"embed vector length does not match declared dim {dim}"
                    )
                vectors.append(EmbeddingVector(tuple(float(x) for x in row)))
        return vectors


# ---------------------------------------------------------------------------
# Deterministic test backends
# ---------------------------------------------------------------------------


def _derived_seed(seed: int, label: str, text: str) -> int:
    """Stable per-request seed so corruption never depends on call order."""
    digest = hashlib.blake2b(
        f"{seed}:{label}:{text}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


class OracleGenerationBackend:
    """Emits the exact expected target for every prompt it was built from."""

    def __init__(self, targets: Mapping[str, str]):
        self._targets = dict(targets)

    @classmethod
    def from_corpus(cls, corpus, mode, instruction_text=None, splits=None):
        """Build the prompt -> target map over the given splits (default all).

        When duplicate surfaces make two mentions share one rendered
        input, the first target wins and the collision is logged.
        """
        from .corpus import SPLITS
        from .prompting import render_prompt, default_instruction

        if mode.with_instruction and instruction_text is None:
            instruction_text = default_instruction()
        targets: dict[str, str] = {}
        collisions = 0
        for split in splits or SPLITS:
            for statement, _, mention in corpus.iter_mentions(split):
                instance = render_prompt(
                    statement, mention, corpus.taxonomy, mode, instruction_text
                )
                existing = targets.get(instance.input_text)
                if existing is None:
                    targets[instance.input_text] = instance.expected_target
                elif existing != instance.expected_target:
                    collisions += 1
        if collisions:
            logger.warning(
                "oracle backend: %d prompts map to conflicting targets "
                "(duplicate surfaces); keeping the first target for each",
                collisions,
            )
        return cls(targets)

    def generate(self, request: GenerationRequest) -> GeneratedOutput:
        try:
            text = self._targets[request.input_text]
        except KeyError:
            raise BackendError(
                "oracle backend has no target for this prompt"
            ) from None
        return GeneratedOutput(text=text.strip())


def delete_word_indices(n_words: int, rate: float, rng: random.Random) -> list[int]:
    """Positions the corruptor removes: floor(rate*n + 0.5) sampled slots."""
    n_delete = int(n_words * rate + 0.5)
    n_delete = min(n_delete, n_words)
    return sorted(rng.sample(range(n_words), n_delete))


class CorruptingGenerationBackend:
    """Wraps a backend and perturbs its output at seeded word positions.

    Word deletion and word substitution (from a fixed distractor list)
    run at independent rates. The perturbation is a pure function of
    (seed, output text), so results are identical across runs, call
    orders, and thread schedules.
    """

    def __init__(
        self,
        inner: GenerationBackend,
        *,
        deletion_rate: float = 0.0,
        substitution_rate: float = 0.0,
        seed: int = 0,
        distractors: Sequence[str] = DEFAULT_DISTRACTORS,
    ):
        for name, rate in (
            ("deletion_rate", deletion_rate),
            ("substitution_rate", substitution_rate),
        ):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {rate}")
        if substitution_rate > 0 and not distractors:
            raise ValueError("substitution requires a nonempty distractor list")
        self.inner = inner
        self.deletion_rate = deletion_rate
        self.substitution_rate = substitution_rate
        self.seed = seed
        self.distractors = tuple(distractors)

    def corrupt(self, text: str) -> str:
        words = text.split()
        rng_del = random.Random(_derived_seed(self.seed, "delete", text))
        dropped = set(delete_word_indices(len(words), self.deletion_rate, rng_del))
        words = [w for i, w in enumerate(words) if i not in dropped]
        if words and self.substitution_rate > 0:
            rng_sub = random.Random(_derived_seed(self.seed, "substitute", text))
            n_sub = min(
                int(len(words) * self.substitution_rate + 0.5), len(words)
            )
            for i in rng_sub.sample(range(len(words)), n_sub):
                words[i] = rng_sub.choice(self.distractors)
        return " ".join(words)

    def generate(self, request: GenerationRequest) -> GeneratedOutput:
        out = self.inner.generate(request)
        return GeneratedOutput(text=self.corrupt(out.text), latency_ms=out.latency_ms)


class HashEmbedder:
    """Bag-of-words test embedder: seeded-hash one-hot slots, L2-normalized.

    Each word hashes to one of dim slots; a text embeds to the normalized
    slot-count vector. Word order never matters, identical word multisets
    embed identically, and with collision-free hashing two distinct-word
    bags of sizes n and n-j (one contained in the other) have cosine
    sqrt((n-j)/n).
    """

    def __init__(self, dim: int, seed: int = 0):
        if dim < 8:
            raise ValueError(f"dim must be >= 8, got {dim}")
        self.dim = dim
        self.seed = seed
        self._key = hashlib.blake2b(
            f"hash-embedder:{seed}".encode("utf-8"), digest_size=16
        ).digest()

    def _slot(self, word: str) -> int:
        digest = hashlib.blake2b(
            word.encode("utf-8"), key=self._key, digest_size=8
        ).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        vectors: list[EmbeddingVector] = []
        for text in texts:
            words = text.lower().split()
            if not words:
                raise BackendError(f"cannot embed tokenless text {text!r}")
            counts = np.zeros(self.dim, dtype=np.float64)
            for word in words:
                counts[self._slot(word)] += 1.0
            counts /= np.linalg.norm(counts)
            vectors.append(EmbeddingVector(tuple(float(x) for x in counts)))
        return vectors


def make_test_embedder(dim: int, seed: int = 0) -> HashEmbedder:
    return HashEmbedder(dim, seed)
