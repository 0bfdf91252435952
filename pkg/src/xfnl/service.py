"""HTTP service: single-sentence tagging plus the review workflow.

Endpoints:
  POST /tag               -> ranked candidates for one numeral
  GET  /tasks/next        -> next review task for an annotator (204 when done)
  POST /annotations       -> record an annotator's choice
  GET  /reports/agreement -> double-annotation agreement report

The index is built at startup so an unreachable embedding backend fails
fast. Review state lives in an in-process store backed by append-only
files; annotation writes are serialized.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Query, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import backends as be
from .corpus import Corpus, load_corpus
from .matcher import TagIndex
from .metrics import MetricsError
from .pipeline import (
    ConfigError,
    EmbedBackendConfig,
    GenBackendConfig,
    PipelineConfig,
    build_embedding_backend,
    build_generation_backend,
    obtain_index,
    resolve_instruction,
    tag_sentence,
)
from .prompting import PromptMode, TARGET_DOCUMENTATION, TARGET_TAG_WORDS
from .review import (
    AnnotationRecord,
    ReviewTask,
    agreement_report,
    load_annotations,
    load_tasks,
)

logger = logging.getLogger(__name__)


class ReviewStore:
    """Review tasks plus annotations, with serialized writes.

    Annotations are appended to a journal file as they arrive; on
    startup an existing journal is replayed so the store survives
    restarts. One choice is kept per (task, annotator) - a resubmission
    replaces the earlier one.
    """

    def __init__(
        self,
        tasks: list[ReviewTask],
        annotations_path: Path | None = None,
    ):
        self._tasks: dict[str, ReviewTask] = {t.task_id: t for t in tasks}
        self._order = [t.task_id for t in tasks]
        self._choices: dict[tuple[str, str], AnnotationRecord] = {}
        self._lock = threading.Lock()
        self._annotations_path = annotations_path
        if annotations_path is not None and Path(annotations_path).is_file():
            for record in load_annotations(annotations_path):
                if record.task_id in self._tasks:
                    self._choices[(record.task_id, record.annotator)] = record

    def __len__(self) -> int:
        return len(self._tasks)

    def task(self, task_id: str) -> ReviewTask | None:
        return self._tasks.get(task_id)

    def tasks(self) -> list[ReviewTask]:
        return [self._tasks[tid] for tid in self._order]

    def next_task(self, annotator: str) -> ReviewTask | None:
        with self._lock:
            for tid in self._order:
                if (tid, annotator) not in self._choices:
                    return self._tasks[tid]
        return None

    def progress(self, annotator: str) -> dict[str, int]:
        with self._lock:
            done = sum(1 for (_, a) in self._choices if a == annotator)
        return {"done": done, "total": len(self._order)}

    def record(self, task_id: str, annotator: str, chosen: str) -> AnnotationRecord:
        task = self._tasks.get(task_id)
        if task is None:
            raise KeyError(task_id)
        if chosen not in task.candidate_tags():
            raise ValueError(
                f"chosen tag {chosen!r} is not among the task's candidates"
            )
        record = AnnotationRecord.now(task_id, annotator, chosen)
        with self._lock:
            self._choices[(task_id, annotator)] = record
            if self._annotations_path is not None:
                with open(self._annotations_path, "a", encoding="utf-8") as f:
                    f.write(
                        json.dumps(
                            {
                                "task_id": record.task_id,
                                "annotator": record.annotator,
                                "chosen": record.chosen,
                                "timestamp": record.timestamp,
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )
        return record

    def annotations(self) -> list[AnnotationRecord]:
        with self._lock:
            return list(self._choices.values())


@dataclass(slots=True)
class ServiceContext:
    corpus: Corpus
    index: TagIndex
    gen_backend: be.GenerationBackend
    embed_backend: be.EmbeddingBackend
    mode: PromptMode
    instruction_text: str | None
    k: int
    max_new_tokens: int
    store: ReviewStore = field(default_factory=lambda: ReviewStore([]))


class TagRequest(BaseModel):
    text: str
    numeral: str


class AnnotationIn(BaseModel):
    task_id: str
    annotator: str
    chosen: str


def create_app(ctx: ServiceContext, *, ui_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="xfnl", docs_url=None, redoc_url=None)
    # The review UI may be statically hosted on another origin; the API
    # carries no credentials, so a permissive CORS policy is fine.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    @app.post("/tag")
    def tag(body: TagRequest):
        if not body.text.strip() or not body.numeral.strip():
            return JSONResponse(
                status_code=422, content={"detail": "text and numeral are required"}
            )
        try:
            prediction = tag_sentence(
                body.text,
                body.numeral,
                corpus=ctx.corpus,
                index=ctx.index,
                gen_backend=ctx.gen_backend,
                embed_backend=ctx.embed_backend,
                mode=ctx.mode,
                instruction_text=ctx.instruction_text,
                k=ctx.k,
                max_new_tokens=ctx.max_new_tokens,
            )
        except ValueError as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        except be.BackendError as exc:
            return JSONResponse(status_code=502, content={"detail": str(exc)})
        taxonomy = ctx.corpus.taxonomy
        return {
            "candidates": [
                {
                    "tag": tag_id,
                    "documentation": taxonomy.documentation_for(tag_id),
                    "score": score,
                }
                for tag_id, score in prediction.ranked
            ]
        }

    @app.get("/tasks/next")
    def next_task(annotator: str = Query(min_length=1)):
        task = ctx.store.next_task(annotator)
        if task is None:
            return Response(status_code=204)
        payload = task.to_client_dict()
        payload["progress"] = ctx.store.progress(annotator)
        return payload

    @app.post("/annotations")
    def annotate(body: AnnotationIn):
        try:
            record = ctx.store.record(body.task_id, body.annotator, body.chosen)
        except KeyError:
            return JSONResponse(
                status_code=404, content={"detail": f"unknown task {body.task_id!r}"}
            )
        except ValueError as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        return {
            "task_id": record.task_id,
            "annotator": record.annotator,
            "chosen": record.chosen,
            "timestamp": record.timestamp,
        }

    @app.get("/reports/agreement")
    def agreement():
        try:
            return agreement_report(ctx.store.annotations(), ctx.store.tasks())
        except MetricsError:
            return {
                "overall": None,
                "machine_correct": None,
                "machine_incorrect": None,
                "excluded": len(ctx.store),
            }

    return app


def load_service_config(path: Path) -> tuple[PipelineConfig, dict]:
    """Parse the serve config file into pipeline + service settings."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read service config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"service config {path} must be a JSON object")
    for key in ("dataset", "taxonomy"):
        if key not in raw:
            raise ConfigError(f"service config is missing {key!r}")
    mode = PromptMode(
        with_instruction=bool(raw.get("with_instruction", True)),
        target_kind=(
            TARGET_TAG_WORDS
            if raw.get("target") == "tagwords"
            else TARGET_DOCUMENTATION
        ),
    )
    gen_raw = raw.get("gen", {})
    embed_raw = raw.get("embed", {})
    config = PipelineConfig(
        dataset=Path(raw["dataset"]),
        taxonomy=Path(raw["taxonomy"]),
        instruction_file=(
            Path(raw["instruction_file"]) if raw.get("instruction_file") else None
        ),
        mode=mode,
        gen=GenBackendConfig(
            kind=gen_raw.get("kind", "http"),
            url=gen_raw.get("url"),
            deletion_rate=float(gen_raw.get("deletion_rate", 0.0)),
            substitution_rate=float(gen_raw.get("substitution_rate", 0.0)),
            seed=int(gen_raw.get("seed", 0)),
        ),
        embed=EmbedBackendConfig(
            kind=embed_raw.get("kind", "http"),
            url=embed_raw.get("url"),
            dim=int(embed_raw.get("dim", 4096)),
            seed=int(embed_raw.get("seed", 0)),
        ),
        k=int(raw.get("k", 5)),
        max_new_tokens=int(raw.get("max_new_tokens", be.DEFAULT_MAX_NEW_TOKENS)),
        index_cache=Path(raw["index_cache"]) if raw.get("index_cache") else None,
    )
    service_extras = {
        "tasks_file": raw.get("tasks_file"),
        "annotations_file": raw.get("annotations_file"),
        "ui_dir": raw.get("ui_dir"),
    }
    return config, service_extras


def build_context(config: PipelineConfig, extras: dict) -> ServiceContext:
    """Assemble service state; raises if a startup dependency is down."""
    config.validate()
    corpus = load_corpus(config.dataset, config.taxonomy)
    instruction = resolve_instruction(config)
    embed_backend = build_embedding_backend(config.embed)
    index = obtain_index(config, corpus, embed_backend)  # fail fast on embed
    gen_backend = build_generation_backend(config.gen, corpus, config.mode, instruction)

    tasks: list[ReviewTask] = []
    tasks_file = extras.get("tasks_file")
    if tasks_file:
        if not Path(tasks_file).is_file():
            raise ConfigError(f"tasks file not found: {tasks_file}")
        tasks = load_tasks(tasks_file)
    annotations_file = extras.get("annotations_file")
    store = ReviewStore(
        tasks,
        annotations_path=Path(annotations_file) if annotations_file else None,
    )
    return ServiceContext(
        corpus=corpus,
        index=index,
        gen_backend=gen_backend,
        embed_backend=embed_backend,
        mode=config.mode,
        instruction_text=instruction,
        k=config.k,
        max_new_tokens=config.max_new_tokens,
        store=store,
    )


def serve(config_path: Path, *, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Build the app and run it under uvicorn (drains on shutdown)."""
    import uvicorn

    config, extras = load_service_config(config_path)
    ctx = build_context(config, extras)
    ui_dir = extras.get("ui_dir")
    if ui_dir and not Path(ui_dir).is_dir():
        raise ConfigError(f"ui_dir not found: {ui_dir}")
    app = create_app(ctx, ui_dir=Path(ui_dir) if ui_dir else None)
    logger.info(
        "serving %d taxonomy tags, %d review tasks on %s:%d",
        len(ctx.corpus.taxonomy), len(ctx.store), host, port,
    )
    uvicorn.run(app, host=host, port=port, log_level="info")
