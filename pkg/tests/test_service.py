"""HTTP surface: /tag, /tasks/next, /annotations, /reports/agreement."""

from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from xfnl.backends import OracleGenerationBackend, make_test_embedder
from xfnl.corpus import parse_corpus
from xfnl.matcher import build_index
from xfnl.prompting import PromptMode, default_instruction
from xfnl.review import build_review_tasks
from xfnl.service import ReviewStore, ServiceContext, create_app

from conftest import make_dataset_bytes, make_taxonomy_bytes
from test_review import _machine_preds


@pytest.fixture
def corpus():
    return parse_corpus(
        make_dataset_bytes(10, 40, seed=71), make_taxonomy_bytes(10)
    )


@pytest.fixture
def client(corpus, tmp_path):
    mode = PromptMode()
    instruction = default_instruction()
    embedder = make_test_embedder(2048, seed=0)
    index = build_index(corpus.taxonomy, embedder)
    gen = OracleGenerationBackend.from_corpus(corpus, mode, instruction)
    preds = _machine_preds(corpus, seed=3, rank_of_gold=1)[:6]
    tasks = build_review_tasks(preds, corpus, k=5, seed=9)
    store = ReviewStore(tasks, annotations_path=tmp_path / "annotations.jsonl")
    ctx = ServiceContext(
        corpus=corpus,
        index=index,
        gen_backend=gen,
        embed_backend=embedder,
        mode=mode,
        instruction_text=instruction,
        k=5,
        max_new_tokens=30,
        store=store,
    )
    return TestClient(create_app(ctx))


class TestTagEndpoint:
    def test_known_sentence_ranks_gold_first(self, corpus, client):
        statement, _, mention = next(corpus.iter_mentions("test"))
        response = client.post(
            "/tag", json={"text": statement.text, "numeral": mention.surface}
        )
        assert response.status_code == 200
        candidates = response.json()["candidates"]
        assert len(candidates) == 5
        assert candidates[0]["tag"] == mention.gold_tag
        assert candidates[0]["score"] == pytest.approx(1.0, abs=1e-9)
        assert all(
            set(c) == {"tag", "documentation", "score"} for c in candidates
        )

    def test_numeral_absent_from_text_is_422(self, client):
        response = client.post(
            "/tag", json={"text": "No such number here.", "numeral": "7.5"}
        )
        assert response.status_code == 422

    def test_unseen_sentence_is_502_with_oracle(self, client):
        response = client.post(
            "/tag", json={"text": "Brand new sentence with 77 cases.", "numeral": "77"}
        )
        assert response.status_code == 502


class TestTaskFlow:
    def test_next_task_payload_shape(self, client):
        response = client.get("/tasks/next", params={"annotator": "a1"})
        assert response.status_code == 200
        body = response.json()
        assert set(body) == {
            "task_id", "sid", "mention_index", "text", "highlight",
            "candidates", "progress",
        }
        assert body["progress"] == {"done": 0, "total": 6}
        assert len(body["candidates"]) == 5

    def test_payload_never_leaks_gold(self, client):
        captured = []
        while True:
            response = client.get("/tasks/next", params={"annotator": "leakcheck"})
            if response.status_code == 204:
                break
            body = response.json()
            captured.append(body)
            client.post(
                "/annotations",
                json={
                    "task_id": body["task_id"],
                    "annotator": "leakcheck",
                    "chosen": body["candidates"][0]["tag"],
                },
            )
        assert len(captured) == 6
        blob = json.dumps(captured)
        assert "gold" not in blob
        assert "machine_top1" not in blob

    def test_annotating_advances_to_next_task(self, client):
        first = client.get("/tasks/next", params={"annotator": "a2"}).json()
        client.post(
            "/annotations",
            json={
                "task_id": first["task_id"],
                "annotator": "a2",
                "chosen": first["candidates"][1]["tag"],
            },
        )
        second = client.get("/tasks/next", params={"annotator": "a2"}).json()
        assert second["task_id"] != first["task_id"]
        assert second["progress"]["done"] == 1

    def test_exhausted_queue_returns_204(self, client):
        for _ in range(6):
            body = client.get("/tasks/next", params={"annotator": "a3"}).json()
            client.post(
                "/annotations",
                json={
                    "task_id": body["task_id"],
                    "annotator": "a3",
                    "chosen": body["candidates"][0]["tag"],
                },
            )
        response = client.get("/tasks/next", params={"annotator": "a3"})
        assert response.status_code == 204

    def test_chosen_outside_candidates_is_422(self, client):
        body = client.get("/tasks/next", params={"annotator": "a4"}).json()
        response = client.post(
            "/annotations",
            json={
                "task_id": body["task_id"],
                "annotator": "a4",
                "chosen": "definitely not a candidate",
            },
        )
        assert response.status_code == 422

    def test_unknown_task_is_404(self, client):
        response = client.post(
            "/annotations",
            json={"task_id": "ghost:0", "annotator": "a5", "chosen": "x"},
        )
        assert response.status_code == 404

    def test_annotations_persisted_to_journal(self, client, tmp_path):
        body = client.get("/tasks/next", params={"annotator": "a6"}).json()
        client.post(
            "/annotations",
            json={
                "task_id": body["task_id"],
                "annotator": "a6",
                "chosen": body["candidates"][0]["tag"],
            },
        )
        lines = (tmp_path / "annotations.jsonl").read_text().splitlines()
        assert any(json.loads(l)["annotator"] == "a6" for l in lines if l.strip())


class TestCrossOriginAndStaticUi:
    def test_cors_headers_allow_any_origin(self, client):
        response = client.get(
            "/reports/agreement", headers={"Origin": "http://ui.example"}
        )
        assert response.headers.get("access-control-allow-origin") == "*"

    def test_static_ui_mount_serves_index(self, corpus, tmp_path):
        from xfnl.backends import OracleGenerationBackend, make_test_embedder
        from xfnl.matcher import build_index
        from xfnl.prompting import PromptMode, default_instruction
        from xfnl.service import ServiceContext, create_app

        ui_dir = tmp_path / "dist"
        ui_dir.mkdir()
        (ui_dir / "index.html").write_text("<!doctype html><title>review</title>")
        mode = PromptMode()
        embedder = make_test_embedder(512, seed=0)
        ctx = ServiceContext(
            corpus=corpus,
            index=build_index(corpus.taxonomy, embedder),
            gen_backend=OracleGenerationBackend.from_corpus(corpus, mode),
            embed_backend=embedder,
            mode=mode,
            instruction_text=default_instruction(),
            k=5,
            max_new_tokens=30,
        )
        ui_client = TestClient(create_app(ctx, ui_dir=ui_dir))
        response = ui_client.get("/ui/")
        assert response.status_code == 200
        assert "review" in response.text


class TestAgreementEndpoint:
    def test_empty_store_returns_placeholder(self, client):
        response = client.get("/reports/agreement")
        assert response.status_code == 200
        assert response.json()["overall"] is None

    def test_double_annotation_produces_report(self, client):
        for annotator in ("r1", "r2"):
            while True:
                response = client.get(
                    "/tasks/next", params={"annotator": annotator}
                )
                if response.status_code == 204:
                    break
                body = response.json()
                client.post(
                    "/annotations",
                    json={
                        "task_id": body["task_id"],
                        "annotator": annotator,
                        "chosen": body["candidates"][0]["tag"],
                    },
                )
        report = client.get("/reports/agreement").json()
        assert report["overall"]["n_tasks"] == 6
        assert report["overall"]["agreement"] == 1.0
        assert report["excluded"] == 0
