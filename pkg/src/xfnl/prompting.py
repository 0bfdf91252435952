"""Model-input rendering for numeral tagging prompts.

Each numeral mention becomes one instance: an optional fixed instruction
preamble, the statement text, and a per-numeral question, concatenated
with single spaces. The training/eval target is either the gold tag's
documentation or the gold tag's words, with the reserved "others" label
passing through unchanged in both modes.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from .corpus import Corpus, NumeralMention, OTHERS_TAG, Statement, Taxonomy

TARGET_DOCUMENTATION = "documentation"
TARGET_TAG_WORDS = "tag_words"
_TARGET_KINDS = (TARGET_DOCUMENTATION, TARGET_TAG_WORDS)

QUESTION_TEMPLATE = "What is the tag associated with the numeral {surface}?"


class PromptingError(ValueError):
    """Invalid rendering request (mention/statement/taxonomy mismatch)."""


@dataclass(frozen=True, slots=True)
class PromptMode:
    """Which prompt variant to render and which target to train against."""

    with_instruction: bool = True
    target_kind: str = TARGET_DOCUMENTATION

    def __post_init__(self) -> None:
        if self.target_kind not in _TARGET_KINDS:
            raise PromptingError(
                f"target_kind must be one of {_TARGET_KINDS}, "
                f"got {self.target_kind!r}"
            )


@dataclass(frozen=True, slots=True)
class PromptInstance:
    """One rendered model input and its expected target."""

    sid: str
    mention_index: int
    input_text: str
    expected_target: str
    mode: PromptMode


def default_instruction() -> str:
    """The bundled instruction preamble (frozen resource, stable bytes)."""
    text = (
        resources.files("xfnl.resources")
        .joinpath("instruction.txt")
        .read_text(encoding="utf-8")
    )
    return text.rstrip("\n")


def render_question(surface: str) -> str:
    return QUESTION_TEMPLATE.format(surface=surface)


def render_prompt(
    statement: Statement,
    mention: NumeralMention,
    taxonomy: Taxonomy,
    mode: PromptMode,
    instruction_text: str | None = None,
) -> PromptInstance:
    """Render the model input and expected target for one mention.

    With instruction enabled, input is ``instruction + " " + statement +
    " " + question``; without, the preamble is dropped. Passing
    instruction_text=None uses the bundled default.
    """
    try:
        mention_index = statement.mentions.index(mention)
    except ValueError:
        raise PromptingError(
            f"mention {mention.surface!r}@{mention.start} is not part of "
            f"statement {statement.sid!r}"
        ) from None

    question = render_question(mention.surface)
    if mode.with_instruction:
        if instruction_text is None:
            instruction_text = default_instruction()
        if not instruction_text.strip():
            raise PromptingError("instruction text is empty")
        input_text = f"{instruction_text} {statement.text} {question}"
    else:
        input_text = f"{statement.text} {question}"

    if mention.gold_tag == OTHERS_TAG:
        expected_target = OTHERS_TAG
    elif mode.target_kind == TARGET_DOCUMENTATION:
        expected_target = taxonomy.documentation_for(mention.gold_tag)
    else:
        expected_target = mention.gold_tag

    return PromptInstance(
        sid=statement.sid,
        mention_index=mention_index,
        input_text=input_text,
        expected_target=expected_target,
        mode=mode,
    )


def render_split(
    corpus: Corpus,
    split: str | None,
    mode: PromptMode,
    instruction_text: str | None = None,
) -> list[PromptInstance]:
    """Render every mention of a split (or the whole corpus) in file order."""
    if mode.with_instruction and instruction_text is None:
        instruction_text = default_instruction()
    return [
        render_prompt(statement, mention, corpus.taxonomy, mode, instruction_text)
        for statement, _, mention in corpus.iter_mentions(split)
    ]


def duplicate_surface_sids(corpus: Corpus) -> list[str]:
    """Statements where one surface string annotates several mentions.

    Those mentions share a single rendered input, so downstream
    predictions are broadcast to all of them; callers should surface this
    as a data-quality warning.
    """
    sids = []
    for s in corpus.statements:
        surfaces = [m.surface for m in s.mentions]
        if len(surfaces) != len(set(surfaces)):
            sids.append(s.sid)
    return sids
