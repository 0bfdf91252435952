"""Tag matcher: cosine, exact top-k with tie rule, index persistence."""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from xfnl.backends import EmbeddingVector, GeneratedOutput, make_test_embedder
from xfnl.corpus import OTHERS_TAG, TagRecord, Taxonomy, parse_taxonomy
from xfnl.matcher import (
    MatcherError,
    Prediction,
    TagIndex,
    build_index,
    cosine,
    index_from_precomputed,
    load_index,
    match,
    resolve_tag,
    save_index,
)

from conftest import (
    AUTHORIZED_DOC,
    AUTHORIZED_TAG,
    FixedEmbedder,
    ISSUED_DOC,
    ISSUED_TAG,
    brute_force_cosine_ranking,
)


@pytest.fixture
def table1_taxonomy(table1_taxonomy_bytes):
    return parse_taxonomy(table1_taxonomy_bytes)


def _random_taxonomy_and_vectors(rng, n_tags, dim):
    """Synthetic taxonomy plus raw (unnormalized) embedding fixtures."""
    records = [TagRecord("others", "others")]
    table = {"others": [rng.gauss(0, 1) for _ in range(dim)]}
    for i in range(n_tags - 1):
        tag = f"tag {i:03d}"
        doc = f"Documentation body number {i:03d}."
        records.append(TagRecord(tag, doc))
        if rng.random() < 0.12 and len(table) > 1:
            # Engineered exact tie: duplicate an existing row.
            source = rng.choice([v for k, v in table.items() if k != "others"])
            table[doc] = list(source)
        else:
            table[doc] = [rng.gauss(0, 1) for _ in range(dim)]
    taxonomy = Taxonomy(records)
    # Keyed by text build_index will embed (docs, and "others" for the
    # reserved tag whose documentation is the literal).
    return taxonomy, table


class TestCosine:
    def test_identical_vectors(self):
        v = EmbeddingVector((0.3, 0.4, 0.5))
        assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)
        assert cosine(v, v) <= 1.0

    def test_orthogonal_vectors(self):
        a = EmbeddingVector((1.0, 0.0))
        b = EmbeddingVector((0.0, 1.0))
        assert cosine(a, b) == 0.0

    def test_analytic_value(self):
        a = EmbeddingVector((1.0, 0.0))
        b = EmbeddingVector((1.0, 1.0))
        assert abs(cosine(a, b) - 1 / math.sqrt(2)) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(MatcherError, match="dimension"):
            cosine(EmbeddingVector((1.0,)), EmbeddingVector((1.0, 2.0)))

    def test_zero_norm_rejected(self):
        with pytest.raises(MatcherError, match="zero-norm"):
            cosine(EmbeddingVector((0.0, 0.0)), EmbeddingVector((1.0, 0.0)))

    def test_clamped_against_rounding(self):
        v = EmbeddingVector(tuple([1e-8] * 7))
        assert -1.0 <= cosine(v, v) <= 1.0


class TestBuildIndex:
    def test_table1_rows_are_unit_norm(self, table1_taxonomy):
        index = build_index(table1_taxonomy, make_test_embedder(256, seed=1))
        assert len(index) == 3
        norms = np.linalg.norm(index.matrix, axis=1)
        assert np.all(np.abs(norms - 1.0) <= 1e-9)
        assert list(index.tags) == sorted(index.tags)

    def test_empty_taxonomy_guarded(self):
        class EmptyTaxonomy:
            def records(self):
                return []

        with pytest.raises(MatcherError, match="empty taxonomy"):
            build_index(EmptyTaxonomy(), make_test_embedder(64))

    def test_rebuild_is_bit_identical(self, table1_taxonomy):
        a = build_index(table1_taxonomy, make_test_embedder(512, seed=9))
        b = build_index(table1_taxonomy, make_test_embedder(512, seed=9))
        assert a.tags == b.tags
        assert a.matrix.tobytes() == b.matrix.tobytes()

    def test_tag_words_mode_embeds_names(self, table1_taxonomy):
        embedder = make_test_embedder(512, seed=9)
        docs = build_index(table1_taxonomy, embedder)
        names = build_index(table1_taxonomy, embedder, target_kind="tag_words")
        assert docs.tags == names.tags
        assert docs.matrix.tobytes() != names.matrix.tobytes()

    def test_zero_norm_documentation_rejected(self):
        taxonomy = Taxonomy(
            [TagRecord("others", "others"), TagRecord("alpha", "Alpha doc.")]
        )
        table = {"others": [1.0, 0.0], "Alpha doc.": [0.0, 0.0]}
        with pytest.raises(MatcherError, match="zero norm"):
            build_index(taxonomy, FixedEmbedder(table))


class TestMatch:
    def test_exact_documentation_scores_one(self, table1_taxonomy):
        embedder = make_test_embedder(1024, seed=4)
        index = build_index(table1_taxonomy, embedder)
        prediction = match(index, GeneratedOutput(text=AUTHORIZED_DOC), embedder, k=3)
        assert prediction.top_tag == AUTHORIZED_TAG
        assert prediction.ranked[0][1] == pytest.approx(1.0, abs=1e-12)
        assert len(prediction.ranked) == 3

    def test_others_literal_short_circuits(self, table1_taxonomy):
        embedder = make_test_embedder(1024, seed=4)
        index = build_index(table1_taxonomy, embedder)
        for literal in ("others", "Others", "  OTHER  "):
            prediction = match(index, GeneratedOutput(text=literal.strip()), embedder, k=2)
            assert prediction.ranked[0] == (OTHERS_TAG, 1.0)
            assert len(prediction.ranked) == 2
            assert prediction.ranked[1][0] != OTHERS_TAG

    def test_one_word_deletion_still_recovers_gold(self, table1_taxonomy):
        embedder = make_test_embedder(2048, seed=6)
        index = build_index(table1_taxonomy, embedder)
        words = AUTHORIZED_DOC.split()
        corrupted = " ".join(words[:4] + words[5:])
        prediction = match(index, GeneratedOutput(text=corrupted), embedder, k=2)
        assert prediction.top_tag == AUTHORIZED_TAG
        # Brute force over both real rows confirms the ordering.
        raw = {
            tag: embedder.embed([doc])[0].values
            for tag, doc in (
                (ISSUED_TAG, ISSUED_DOC),
                (AUTHORIZED_TAG, AUTHORIZED_DOC),
            )
        }
        query = embedder.embed([corrupted])[0].values
        ranked = brute_force_cosine_ranking(
            list(raw), list(raw.values()), query, 2
        )
        assert ranked[0][0] == AUTHORIZED_TAG

    def test_k_larger_than_taxonomy_clamps(self, table1_taxonomy, caplog):
        embedder = make_test_embedder(256, seed=2)
        index = build_index(table1_taxonomy, embedder)
        prediction = match(index, GeneratedOutput(text="some words"), embedder, k=50)
        assert len(prediction.ranked) == 3

    def test_others_literal_without_others_row_falls_back_to_search(self):
        # An index built outside a corpus may lack the reserved tag; the
        # literal then goes through the normal cosine ranking.
        embedder = make_test_embedder(256, seed=2)
        vectors = embedder.embed(["alpha words", "beta words"])
        index = TagIndex(
            ("tag alpha", "tag beta"),
            np.array([v.values for v in vectors]),
        )
        prediction = match(index, GeneratedOutput(text="others"), embedder, k=2)
        assert len(prediction.ranked) == 2
        assert prediction.top_tag in ("tag alpha", "tag beta")

    def test_k_must_be_positive(self, table1_taxonomy):
        embedder = make_test_embedder(256, seed=2)
        index = build_index(table1_taxonomy, embedder)
        with pytest.raises(MatcherError):
            match(index, GeneratedOutput(text="x1"), embedder, k=0)

    def test_scale_invariance_of_ranking(self):
        rng = random.Random(5)
        taxonomy, table = _random_taxonomy_and_vectors(rng, 12, 16)
        query = [rng.gauss(0, 1) for _ in range(16)]
        rankings = []
        for scale in (1.0, 0.001, 700.0):
            embedder = FixedEmbedder({**table, "q": [scale * x for x in query]})
            index = build_index(taxonomy, embedder)
            prediction = match(index, GeneratedOutput(text="q"), embedder, k=5)
            rankings.append([t for t, _ in prediction.ranked])
        assert rankings[0] == rankings[1] == rankings[2]

    def test_match_is_thread_safe_and_deterministic(self, table1_taxonomy):
        embedder = make_test_embedder(512, seed=8)
        index = build_index(table1_taxonomy, embedder)
        out = GeneratedOutput(text="maximum number of shares authorized")
        baseline = match(index, out, embedder, k=3)
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(
                pool.map(lambda _: match(index, out, embedder, k=3), range(64))
            )
        assert all(r == baseline for r in results)

    def test_randomized_oracle_equivalence_with_ties(self):
        rng = random.Random(99)
        for trial in range(40):
            n_tags = rng.randint(2, 24)
            dim = rng.randint(2, 24)
            taxonomy, table = _random_taxonomy_and_vectors(rng, n_tags, dim)
            query = [rng.gauss(0, 1) for _ in range(dim)]
            embedder = FixedEmbedder({**table, "query text": query})
            index = build_index(taxonomy, embedder)
            k = rng.randint(1, len(index))
            prediction = match(index, GeneratedOutput(text="query text"), embedder, k)
            raw_rows = [
                table[taxonomy.documentation_for(tag)] for tag in index.tags
            ]
            expected = brute_force_cosine_ranking(index.tags, raw_rows, query, k)
            assert [t for t, _ in prediction.ranked] == [t for t, _ in expected]
            for (_, got), (_, want) in zip(prediction.ranked, expected):
                assert abs(got - want) < 1e-12


class TestPrediction:
    def test_scores_must_be_non_increasing(self):
        with pytest.raises(MatcherError):
            Prediction(ranked=(("a", 0.5), ("b", 0.9)), query_text="q")

    def test_duplicate_tags_rejected(self):
        with pytest.raises(MatcherError):
            Prediction(ranked=(("a", 0.9), ("a", 0.5)), query_text="q")


class TestResolveTag:
    def test_table1_documentation_resolves(self, table1_taxonomy):
        assert resolve_tag(table1_taxonomy, AUTHORIZED_DOC) == AUTHORIZED_TAG

    def test_others_resolves(self, table1_taxonomy):
        assert resolve_tag(table1_taxonomy, "others") == OTHERS_TAG

    def test_unknown_documentation_is_an_error(self, table1_taxonomy):
        with pytest.raises(Exception, match="no tag"):
            resolve_tag(table1_taxonomy, "text nobody documented")


class TestPersistence:
    def test_cache_round_trip(self, tmp_path, table1_taxonomy):
        embedder = make_test_embedder(640, seed=3)
        index = build_index(table1_taxonomy, embedder)
        path = tmp_path / "index.bin"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.tags == index.tags
        assert loaded.dim == index.dim
        # f32 quantization allows tiny drift; rows stay unit-normalized.
        assert np.allclose(loaded.matrix, index.matrix, atol=1e-6)
        assert np.all(np.abs(np.linalg.norm(loaded.matrix, axis=1) - 1.0) <= 1e-9)

    def test_cache_header_is_json_line(self, tmp_path, table1_taxonomy):
        import json

        index = build_index(table1_taxonomy, make_test_embedder(64, seed=3))
        path = tmp_path / "index.bin"
        save_index(index, path)
        header_line = path.read_bytes().split(b"\n", 1)[0]
        header = json.loads(header_line)
        assert header["dim"] == 64
        assert header["tags"] == list(index.tags)

    def test_truncated_cache_rejected(self, tmp_path, table1_taxonomy):
        index = build_index(table1_taxonomy, make_test_embedder(64, seed=3))
        path = tmp_path / "index.bin"
        save_index(index, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(MatcherError, match="body"):
            load_index(path)

    def test_precomputed_embeddings_input(self, table1_taxonomy):
        import json

        rng = random.Random(1)
        lines = []
        for tag in table1_taxonomy.tags():
            vector = [rng.gauss(0, 1) for _ in range(12)]
            lines.append(json.dumps({"tag": tag, "vector": vector}))
        index = index_from_precomputed(
            table1_taxonomy, ("\n".join(lines) + "\n").encode()
        )
        assert list(index.tags) == table1_taxonomy.tags()
        assert index.dim == 12

    def test_precomputed_must_cover_taxonomy(self, table1_taxonomy):
        import json

        line = json.dumps({"tag": ISSUED_TAG, "vector": [1.0, 2.0]})
        with pytest.raises(MatcherError, match="cover"):
            index_from_precomputed(table1_taxonomy, (line + "\n").encode())
