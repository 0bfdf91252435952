"""End-to-end pipeline: render prompts, generate, match, evaluate.

Mentions of the test split fan out to a bounded worker pool; mentions
that share a rendered input (duplicate surfaces in one sentence) are
generated once and the prediction is broadcast. Per-mention backend
failures are recorded and excluded from the report until a configurable
failure-rate threshold aborts the run. With seeded test backends the
report artifact is byte-identical across runs and concurrency settings.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import backends as be
from .corpus import (
    Corpus,
    DEFAULT_BUCKET_EDGES,
    NumeralMention,
    OTHERS_TAG,
    SPLIT_TEST,
    Statement,
    load_corpus,
)
from .matcher import (
    Prediction,
    TagIndex,
    build_index,
    index_from_precomputed,
    load_index,
    match,
    save_index,
)
from .metrics import (
    EvalReport,
    LabeledPrediction,
    build_eval_report,
    report_bytes,
)
from .prompting import (
    PromptMode,
    default_instruction,
    duplicate_surface_sids,
    render_prompt,
)

logger = logging.getLogger(__name__)

GEN_URL_ENV = "XFNL_GEN_URL"
EMBED_URL_ENV = "XFNL_EMBED_URL"

DEFAULT_FAILURE_THRESHOLD = 0.05
DEFAULT_CONCURRENCY = 8
DEFAULT_TEST_EMBED_DIM = 4096


class ConfigError(ValueError):
    """Invalid or incomplete pipeline configuration."""


class FailureThresholdExceeded(RuntimeError):
    """Too many per-mention backend failures; the run must not report."""

    def __init__(self, failures: int, total: int, threshold: float):
        self.failures = failures
        self.total = total
        self.threshold = threshold
        super().__init__(
            f"{failures}/{total} mentions failed "
            f"({failures / total:.1%} > {threshold:.1%} threshold)"
        )


@dataclass(slots=True)
class GenBackendConfig:
    kind: str = "http"  # http | oracle | corrupt
    url: str | None = None
    deletion_rate: float = 0.0
    substitution_rate: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("http", "oracle", "corrupt"):
            raise ConfigError(f"unknown generation backend kind {self.kind!r}")
        if self.kind == "http" and not self.url:
            raise ConfigError(
                f"generation URL required (flag or {GEN_URL_ENV})"
            )


@dataclass(slots=True)
class EmbedBackendConfig:
    kind: str = "http"  # http | test
    url: str | None = None
    dim: int = DEFAULT_TEST_EMBED_DIM
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("http", "test"):
            raise ConfigError(f"unknown embedding backend kind {self.kind!r}")
        if self.kind == "http" and not self.url:
            raise ConfigError(
                f"embedding URL required (flag or {EMBED_URL_ENV})"
            )


@dataclass(slots=True)
class PipelineConfig:
    dataset: Path
    taxonomy: Path
    instruction_file: Path | None = None
    mode: PromptMode = field(default_factory=PromptMode)
    gen: GenBackendConfig = field(default_factory=GenBackendConfig)
    embed: EmbedBackendConfig = field(default_factory=EmbedBackendConfig)
    k: int = 5
    max_new_tokens: int = be.DEFAULT_MAX_NEW_TOKENS
    bucket_edges: tuple[int, ...] = DEFAULT_BUCKET_EDGES
    report_out: Path | None = None
    index_cache: Path | None = None
    precomputed_embeddings: Path | None = None
    journal: Path | None = None
    resume: bool = False
    concurrency: int = DEFAULT_CONCURRENCY
    failure_threshold: float = DEFAULT_FAILURE_THRESHOLD
    include_others: bool = True
    reference_scores: dict | None = None

    def validate(self) -> None:
        for label, path in (("dataset", self.dataset), ("taxonomy", self.taxonomy)):
            if not Path(path).is_file():
                raise ConfigError(f"{label} file not found: {path}")
        if self.instruction_file is not None and not Path(self.instruction_file).is_file():
            raise ConfigError(f"instruction file not found: {self.instruction_file}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.concurrency < 1:
            raise ConfigError(f"concurrency must be >= 1, got {self.concurrency}")
        if not 0.0 <= self.failure_threshold <= 1.0:
            raise ConfigError(
                f"failure threshold must be in [0, 1], got {self.failure_threshold}"
            )
        if self.resume and self.journal is None:
            raise ConfigError("--resume requires a journal path")
        if (
            self.precomputed_embeddings is not None
            and not Path(self.precomputed_embeddings).is_file()
        ):
            raise ConfigError(
                f"precomputed embeddings file not found: {self.precomputed_embeddings}"
            )
        self.gen.validate()
        self.embed.validate()


@dataclass(frozen=True, slots=True)
class MentionFailure:
    sid: str
    mention_index: int
    error: str


@dataclass(slots=True)
class PipelineResult:
    report: EvalReport
    predictions: list[LabeledPrediction]
    failures: list[MentionFailure]
    resumed: int = 0


def resolve_instruction(config: PipelineConfig) -> str | None:
    if not config.mode.with_instruction:
        return None
    if config.instruction_file is not None:
        return Path(config.instruction_file).read_text(encoding="utf-8").rstrip("\n")
    return default_instruction()


def build_embedding_backend(config: EmbedBackendConfig) -> be.EmbeddingBackend:
    if config.kind == "test":
        return be.make_test_embedder(config.dim, config.seed)
    return be.HttpEmbeddingBackend(config.url)


def build_generation_backend(
    config: GenBackendConfig,
    corpus: Corpus,
    mode: PromptMode,
    instruction_text: str | None,
) -> be.GenerationBackend:
    if config.kind == "http":
        return be.HttpGenerationBackend(config.url)
    oracle = be.OracleGenerationBackend.from_corpus(corpus, mode, instruction_text)
    if config.kind == "oracle":
        return oracle
    return be.CorruptingGenerationBackend(
        oracle,
        deletion_rate=config.deletion_rate,
        substitution_rate=config.substitution_rate,
        seed=config.seed,
    )


def obtain_index(
    config: PipelineConfig, corpus: Corpus, embed_backend: be.EmbeddingBackend
) -> TagIndex:
    """Load the index cache when present, otherwise build and cache it.

    A precomputed-embeddings file takes precedence over both paths; the
    embedding backend then serves query-time embeddings only.
    """
    if config.precomputed_embeddings is not None:
        data = Path(config.precomputed_embeddings).read_bytes()
        index = index_from_precomputed(corpus.taxonomy, data)
        logger.info(
            "loaded precomputed tag embeddings from %s (%d tags, dim %d)",
            config.precomputed_embeddings, len(index), index.dim,
        )
        return index
    cache = config.index_cache
    if cache is not None and Path(cache).is_file():
        index = load_index(cache)
        if set(index.tags) == set(corpus.taxonomy.tags()):
            logger.info("loaded index cache %s (%d tags)", cache, len(index))
            return index
        logger.warning("index cache %s does not match taxonomy; rebuilding", cache)
    index = build_index(
        corpus.taxonomy, embed_backend, target_kind=config.mode.target_kind
    )
    if cache is not None:
        save_index(index, cache)
        logger.info("wrote index cache %s", cache)
    return index


def _read_journal(path: Path) -> dict[tuple[str, int], LabeledPrediction]:
    completed: dict[tuple[str, int], LabeledPrediction] = {}
    if not Path(path).is_file():
        return completed
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pred = LabeledPrediction(
                    sid=obj["sid"],
                    mention_index=obj["mention_index"],
                    gold=obj["gold"],
                    prediction=Prediction(
                        ranked=tuple(
                            (tag, float(score)) for tag, score in obj["ranked"]
                        ),
                        query_text=obj["query_text"],
                    ),
                )
            except (ValueError, KeyError, TypeError) as exc:
                logger.warning("skipping malformed journal line: %s", exc)
                continue
            completed[(pred.sid, pred.mention_index)] = pred
    return completed


def _journal_line(pred: LabeledPrediction) -> str:
    return json.dumps(
        {
            "sid": pred.sid,
            "mention_index": pred.mention_index,
            "gold": pred.gold,
            "query_text": pred.prediction.query_text,
            "ranked": [[tag, score] for tag, score in pred.prediction.ranked],
        },
        ensure_ascii=False,
    )


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Label every test-split mention and assemble the evaluation report."""
    config.validate()
    corpus = load_corpus(config.dataset, config.taxonomy)
    instruction = resolve_instruction(config)
    embed_backend = build_embedding_backend(config.embed)
    index = obtain_index(config, corpus, embed_backend)
    gen_backend = build_generation_backend(
        config.gen, corpus, config.mode, instruction
    )

    dup_sids = duplicate_surface_sids(corpus)
    if dup_sids:
        logger.warning(
            "data quality: %d statements repeat a numeral surface; their "
            "mentions share one prompt and predictions are broadcast "
            "(first sids: %s)",
            len(dup_sids), dup_sids[:5],
        )

    completed: dict[tuple[str, int], LabeledPrediction] = {}
    if config.resume and config.journal is not None:
        completed = _read_journal(config.journal)
        logger.info("resume: %d completed mentions from journal", len(completed))

    # Group pending mentions by their rendered input so each unique
    # prompt is generated exactly once.
    groups: dict[str, list[tuple[Statement, int, NumeralMention]]] = {}
    total = 0
    test_keys: set[tuple[str, int]] = set()
    for statement, idx, mention in corpus.iter_mentions(SPLIT_TEST):
        total += 1
        test_keys.add((statement.sid, idx))
        if (statement.sid, idx) in completed:
            continue
        instance = render_prompt(
            statement, mention, corpus.taxonomy, config.mode, instruction
        )
        groups.setdefault(instance.input_text, []).append((statement, idx, mention))
    if total == 0:
        raise ConfigError("dataset has no test-split mentions to label")
    resumed = {
        key: pred for key, pred in completed.items() if key in test_keys
    }

    def process(input_text: str) -> Prediction:
        request = be.GenerationRequest(
            input_text=input_text, max_new_tokens=config.max_new_tokens
        )
        output = be.generate(gen_backend, request)
        return match(index, output, embed_backend, config.k)

    journal_file = None
    if config.journal is not None:
        journal_file = open(
            config.journal, "a" if config.resume else "w", encoding="utf-8"
        )

    predictions: list[LabeledPrediction] = list(resumed.values())
    failures: list[MentionFailure] = []
    ordered_inputs = list(groups)
    processed = len(resumed)
    try:
        # pool.map yields in submission order while workers run ahead, so
        # journal lines land incrementally and deterministically.
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            for input_text, outcome in zip(
                ordered_inputs, pool.map(_guarded(process), ordered_inputs)
            ):
                for statement, idx, mention in groups[input_text]:
                    processed += 1
                    if isinstance(outcome, Exception):
                        failures.append(
                            MentionFailure(statement.sid, idx, str(outcome))
                        )
                        logger.warning(
                            "mention %s:%d failed: %s", statement.sid, idx, outcome
                        )
                        continue
                    pred = LabeledPrediction(
                        sid=statement.sid,
                        mention_index=idx,
                        gold=mention.gold_tag,
                        prediction=outcome,
                    )
                    logger.debug(
                        "mention %s:%d -> %s", statement.sid, idx, pred.top1
                    )
                    predictions.append(pred)
                    if journal_file is not None:
                        journal_file.write(_journal_line(pred) + "\n")
                        journal_file.flush()
                if processed % 100 == 0 or processed == total:
                    logger.info(
                        "progress: %d/%d mentions (%d failed)",
                        processed, total, len(failures),
                    )
    finally:
        if journal_file is not None:
            journal_file.close()

    if failures and len(failures) / total > config.failure_threshold:
        raise FailureThresholdExceeded(len(failures), total, config.failure_threshold)

    predictions.sort(key=lambda p: (p.sid, p.mention_index))
    ks = sorted({1, config.k})
    report = build_eval_report(
        predictions,
        corpus,
        ks=ks,
        bucket_edges=config.bucket_edges,
        include_others=config.include_others,
        n_failures=len(failures),
        reference_scores=config.reference_scores,
    )
    if config.report_out is not None:
        with open(config.report_out, "wb") as f:
            f.write(report_bytes(report))
        logger.info("wrote report %s", config.report_out)
    return PipelineResult(
        report=report,
        predictions=predictions,
        failures=failures,
        resumed=len(resumed),
    )


def _guarded(fn):
    """Map worker exceptions to values so pool.map never short-circuits."""

    def wrapper(arg):
        try:
            return fn(arg)
        except Exception as exc:  # noqa: BLE001 - failures are per-mention data
            return exc

    return wrapper


def tag_sentence(
    text: str,
    numeral: str,
    *,
    corpus: Corpus,
    index: TagIndex,
    gen_backend: be.GenerationBackend,
    embed_backend: be.EmbeddingBackend,
    mode: PromptMode,
    instruction_text: str | None,
    k: int = 5,
    max_new_tokens: int = be.DEFAULT_MAX_NEW_TOKENS,
) -> Prediction:
    """Single-sentence tagging used by the HTTP service."""
    position = text.find(numeral)
    if position < 0:
        raise ValueError(f"numeral {numeral!r} does not occur in the sentence")
    mention = NumeralMention(
        surface=numeral,
        start=position,
        end=position + len(numeral),
        gold_tag=OTHERS_TAG,  # placeholder; gold is unknown when serving
    )
    statement = Statement(
        sid="adhoc", text=text, mentions=(mention,), split=SPLIT_TEST
    )
    instance = render_prompt(statement, mention, corpus.taxonomy, mode, instruction_text)
    request = be.GenerationRequest(
        input_text=instance.input_text, max_new_tokens=max_new_tokens
    )
    output = be.generate(gen_backend, request)
    return match(index, output, embed_backend, k)


def env_default(env_name: str) -> str | None:
    value = os.environ.get(env_name, "").strip()
    return value or None
