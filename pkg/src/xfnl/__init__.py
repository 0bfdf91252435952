"""Extreme financial numeral labeling: prompt rendering, pluggable
generation/embedding backends, cosine tag matching, evaluation reports,
and a human review workflow."""

from .corpus import (
    Corpus,
    CorpusError,
    NumeralMention,
    OTHERS_TAG,
    Statement,
    TagRecord,
    Taxonomy,
    frequency_bucket,
    load_corpus,
    parse_corpus,
    serialize_corpus,
    zero_shot_tags,
)
from .prompting import (
    PromptInstance,
    PromptMode,
    default_instruction,
    render_prompt,
)
from .backends import (
    BackendError,
    CorruptingGenerationBackend,
    EmbeddingVector,
    GeneratedOutput,
    GenerationRequest,
    HashEmbedder,
    HttpEmbeddingBackend,
    HttpGenerationBackend,
    OracleGenerationBackend,
    embed,
    generate,
    make_test_embedder,
)
from .matcher import (
    MatcherError,
    Prediction,
    TagIndex,
    build_index,
    cosine,
    match,
    resolve_tag,
)
from .metrics import (
    EvalReport,
    LabeledPrediction,
    build_eval_report,
    error_histogram,
    hits_at_k,
    jaccard,
    macro_metrics,
)
from .pipeline import PipelineConfig, run_pipeline
from .review import AnnotationRecord, ReviewTask, agreement_report, build_review_tasks

__version__ = "0.1.0"
