"""Command line entry points.

  xfnl run           end-to-end labeling over a dataset -> evaluation report
  xfnl serve         HTTP service for tagging and the review workflow
  xfnl review build  turn a run journal into annotation tasks
  xfnl review report agreement report from tasks + annotations

Exit codes: 0 success, 2 configuration/input error, 3 backend failure
threshold exceeded (or backend unreachable).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .backends import BackendError, DEFAULT_MAX_NEW_TOKENS
from .corpus import CorpusError, DEFAULT_BUCKET_EDGES, load_corpus
from .matcher import MatcherError
from .metrics import render_report_table
from .pipeline import (
    ConfigError,
    DEFAULT_CONCURRENCY,
    DEFAULT_FAILURE_THRESHOLD,
    DEFAULT_TEST_EMBED_DIM,
    EMBED_URL_ENV,
    EmbedBackendConfig,
    FailureThresholdExceeded,
    GEN_URL_ENV,
    GenBackendConfig,
    PipelineConfig,
    env_default,
    run_pipeline,
    _read_journal,
)
from .prompting import PromptMode, TARGET_DOCUMENTATION, TARGET_TAG_WORDS
from .review import (
    ReviewError,
    agreement_report,
    build_review_tasks,
    load_annotations,
    load_tasks,
    save_tasks,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3


def _add_run_parser(subparsers) -> None:
    p = subparsers.add_parser("run", help="run the labeling pipeline over a dataset")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--taxonomy", required=True, type=Path)
    p.add_argument("--instruction-file", type=Path, default=None)
    p.add_argument(
        "--mode",
        choices=["instruct", "plain"],
        default="instruct",
        help="instruct prepends the instruction preamble; plain omits it",
    )
    p.add_argument(
        "--target",
        choices=["doc", "tagwords"],
        default="doc",
        help="generation target: tag documentation or the tag words",
    )
    gen = p.add_mutually_exclusive_group()
    gen.add_argument("--gen-url", default=None, help=f"defaults to ${GEN_URL_ENV}")
    gen.add_argument(
        "--gen-test",
        choices=["oracle", "corrupt"],
        default=None,
        help="use an in-process test generation backend",
    )
    p.add_argument("--corrupt-rate", type=float, default=0.0, help="word deletion rate")
    p.add_argument(
        "--corrupt-sub-rate", type=float, default=0.0, help="word substitution rate"
    )
    p.add_argument("--seed", type=int, default=0, help="corrupting backend seed")
    embed = p.add_mutually_exclusive_group()
    embed.add_argument(
        "--embed-url", default=None, help=f"defaults to ${EMBED_URL_ENV}"
    )
    embed.add_argument(
        "--embed-test",
        action="store_true",
        help="use the in-process bag-of-words test embedder",
    )
    p.add_argument("--dim", type=int, default=DEFAULT_TEST_EMBED_DIM)
    p.add_argument("--embed-seed", type=int, default=0)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--max-new-tokens", type=int, default=DEFAULT_MAX_NEW_TOKENS)
    p.add_argument("--report-out", type=Path, default=None)
    p.add_argument("--index-cache", type=Path, default=None)
    p.add_argument(
        "--precomputed-embeddings",
        type=Path,
        default=None,
        help='line-delimited {"tag", "vector"} records used as the tag '
        "index instead of embedding documentations through the backend",
    )
    p.add_argument("--journal", type=Path, default=None)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--concurrency", type=int, default=DEFAULT_CONCURRENCY)
    p.add_argument(
        "--fail-threshold", type=float, default=DEFAULT_FAILURE_THRESHOLD
    )
    p.add_argument(
        "--exclude-others",
        action="store_true",
        help="drop OTHERS from macro averaging and Hits@k",
    )
    p.add_argument(
        "--bucket-edges",
        default=",".join(str(e) for e in DEFAULT_BUCKET_EDGES),
        help="comma-separated frequency bucket upper bounds",
    )


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    if args.gen_test is not None:
        gen = GenBackendConfig(
            kind="oracle" if args.gen_test == "oracle" else "corrupt",
            deletion_rate=args.corrupt_rate,
            substitution_rate=args.corrupt_sub_rate,
            seed=args.seed,
        )
    else:
        gen = GenBackendConfig(kind="http", url=args.gen_url or env_default(GEN_URL_ENV))
    if args.embed_test:
        embed = EmbedBackendConfig(kind="test", dim=args.dim, seed=args.embed_seed)
    else:
        embed = EmbedBackendConfig(
            kind="http", url=args.embed_url or env_default(EMBED_URL_ENV)
        )
    try:
        edges = tuple(int(e) for e in str(args.bucket_edges).split(",") if e.strip())
    except ValueError:
        raise ConfigError(f"invalid bucket edges {args.bucket_edges!r}") from None
    return PipelineConfig(
        dataset=args.dataset,
        taxonomy=args.taxonomy,
        instruction_file=args.instruction_file,
        mode=PromptMode(
            with_instruction=args.mode == "instruct",
            target_kind=(
                TARGET_DOCUMENTATION if args.target == "doc" else TARGET_TAG_WORDS
            ),
        ),
        gen=gen,
        embed=embed,
        k=args.k,
        max_new_tokens=args.max_new_tokens,
        bucket_edges=edges,
        report_out=args.report_out,
        index_cache=args.index_cache,
        precomputed_embeddings=args.precomputed_embeddings,
        journal=args.journal,
        resume=args.resume,
        concurrency=args.concurrency,
        failure_threshold=args.fail_threshold,
        include_others=not args.exclude_others,
    )


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    result = run_pipeline(config)
    print(render_report_table(result.report))
    if result.failures:
        print(
            f"note: {len(result.failures)} mentions failed and were excluded",
            file=sys.stderr,
        )
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    serve(args.config, host=args.host, port=args.port)
    return EXIT_OK


def _cmd_review_build(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.dataset, args.taxonomy)
    journal = _read_journal(args.journal)
    if not journal:
        raise ConfigError(f"journal {args.journal} holds no predictions")
    preds = sorted(journal.values(), key=lambda p: (p.sid, p.mention_index))
    tasks = build_review_tasks(preds, corpus, k=args.k, seed=args.seed)
    save_tasks(tasks, args.tasks_out)
    print(f"wrote {len(tasks)} review tasks to {args.tasks_out}")
    return EXIT_OK


def _cmd_review_report(args: argparse.Namespace) -> int:
    import json

    tasks = load_tasks(args.tasks)
    annotations = load_annotations(args.annotations)
    report = agreement_report(annotations, tasks)
    rendered = json.dumps(report, indent=2, sort_keys=True)
    if args.out is not None:
        Path(args.out).write_text(rendered + "\n", encoding="utf-8")
    print(rendered)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xfnl",
        description="Extreme financial numeral labeling pipeline",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    subparsers = parser.add_subparsers(dest="command", required=True)

    _add_run_parser(subparsers)

    p_serve = subparsers.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--config", required=True, type=Path)
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--host", default="127.0.0.1")

    p_review = subparsers.add_parser("review", help="review workflow tooling")
    review_sub = p_review.add_subparsers(dest="review_command", required=True)

    p_build = review_sub.add_parser("build", help="build annotation tasks")
    p_build.add_argument("--dataset", required=True, type=Path)
    p_build.add_argument("--taxonomy", required=True, type=Path)
    p_build.add_argument("--journal", required=True, type=Path)
    p_build.add_argument("--k", type=int, default=5)
    p_build.add_argument("--seed", type=int, default=0)
    p_build.add_argument("--tasks-out", required=True, type=Path)

    p_report = review_sub.add_parser("report", help="compute agreement")
    p_report.add_argument("--tasks", required=True, type=Path)
    p_report.add_argument("--annotations", required=True, type=Path)
    p_report.add_argument("--out", type=Path, default=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "serve":
            return _cmd_serve(args)
        if args.command == "review":
            if args.review_command == "build":
                return _cmd_review_build(args)
            return _cmd_review_report(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, CorpusError, ReviewError, MatcherError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FailureThresholdExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
