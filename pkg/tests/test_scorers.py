"""Scoring engines: structural input-size property, purity, rerank laws."""

import numpy as np
import pytest

from rrk.bm25 import build_inverted_index
from rrk.compressor import build_index, pretrain_compressor
from rrk.corpus import Vocabulary, make_document, make_query
from rrk.index import build_embedding_index
from rrk.model import ModelConfig
from rrk.scorers import (
    CompressedScorer,
    TeacherOracle,
    TextualScorer,
    compressed_input_length,
    rerank,
    score_compressed,
    score_textual,
)
from rrk.synthetic import generate_synthetic_corpus
from rrk.training import init_student_from_compressor

CFG = ModelConfig(n_layers=2, d_model=24, n_heads=4, d_ff=48, max_seq_len=600,
                  vocab_size=267, l_memory=8, query_budget=23, seed=9)
VOCAB = Vocabulary(l_memory=8)


@pytest.fixture(scope="module")
def setup():
    docs = [
        make_document(f"d{i:02d}", f"subject {i} body " + "word fill " * (4 + i % 7))
        for i in range(30)
    ]
    compressor, _ = pretrain_compressor(docs, CFG, steps=0, vocab=VOCAB)
    index = build_index(docs, compressor, VOCAB)
    student = init_student_from_compressor(compressor, "rrk-full")
    # give the head signal so scores are not degenerate zeros
    rng = np.random.default_rng(1)
    student.params["head.w"] = rng.standard_normal((1, CFG.d_model)) * 0.2
    student.params["head.b"] = rng.standard_normal(1) * 0.1
    return docs, compressor, index, student


class TestCompressedScorer:
    def test_input_length_structural(self):
        assert compressed_input_length(23, 23, 8) == 32
        assert compressed_input_length(5, 23, 8) == 14
        assert compressed_input_length(400, 23, 8) == 32

    def test_full_budget_query_builds_32_positions(self, setup):
        docs, _, index, student = setup
        scorer = CompressedScorer(student, index, VOCAB)
        query = make_query("q", "x" * 23)
        x = scorer.build_inputs(query, index.lookup(docs[0].doc_id)[None].astype(np.float64))
        assert x.shape[1] == 32

    def test_short_query_builds_14_positions_finite_score(self, setup):
        docs, _, index, student = setup
        scorer = CompressedScorer(student, index, VOCAB)
        query = make_query("q", "abcde")
        x = scorer.build_inputs(query, index.lookup(docs[0].doc_id)[None].astype(np.float64))
        assert x.shape[1] == 5 + 8 + 1
        assert np.isfinite(scorer.score_batch(query, [docs[0].doc_id])).all()

    def test_input_length_independent_of_doc_length(self, setup):
        """The decoder input stays at min(|q|,23)+8+1 for any document size."""
        _, compressor, _, student = setup
        query = make_query("q", "qq qq qq qq qq qq qq qq")  # 23 tokens
        for doc_len in (64, 128, 512, 1024):
            doc = make_document("big", "z" * doc_len)
            index = build_index([doc], compressor, VOCAB)
            scorer = CompressedScorer(student, index, VOCAB)
            x = scorer.build_inputs(query, index.lookup("big")[None].astype(np.float64))
            assert x.shape[1] == compressed_input_length(23, 23, 8) == 32

    def test_missing_doc_id_raises(self, setup):
        _, _, index, student = setup
        scorer = CompressedScorer(student, index, VOCAB)
        with pytest.raises(KeyError, match="ghost"):
            scorer.score_batch(make_query("q", "hello"), ["ghost"])

    def test_over_budget_query_truncated_not_error(self, setup, caplog):
        docs, _, index, student = setup
        scorer = CompressedScorer(student, index, VOCAB)
        long_query = make_query("q", "w" * 80)
        with caplog.at_level("WARNING"):
            scores = scorer.score_batch(long_query, [docs[0].doc_id])
        assert np.isfinite(scores).all()
        assert any("truncated" in r.message for r in caplog.records)

    def test_score_depends_on_doc_only_through_embeddings(self, setup):
        """Equal embeddings under a different doc_id give an equal score."""
        docs, _, index, student = setup
        rows = index.lookup(docs[3].doc_id)
        clone = build_embedding_index(
            [(docs[3].doc_id, rows), ("someone-else", rows.copy())]
        )
        scorer = CompressedScorer(student, clone, VOCAB)
        query = make_query("q", "probe request")
        a, b = scorer.score_batch(query, [docs[3].doc_id, "someone-else"])
        assert a == b

    def test_doc_padding_beyond_ceiling_leaves_score_identical(self, setup):
        _, compressor, _, student = setup
        base = "y" * 60 + "k" * 68  # exactly 128 tokens
        short = make_document("pad", base)
        padded = make_document("pad", base + " irrelevant trailing content" * 3)
        query = make_query("q", "some query")
        score_short = score_compressed(
            query, "pad", student, build_index([short], compressor, VOCAB), VOCAB)
        score_padded = score_compressed(
            query, "pad", student, build_index([padded], compressor, VOCAB), VOCAB)
        assert score_short == score_padded


class TestTextualScorer:
    def test_deterministic(self, setup):
        docs, _, _, student = setup
        corpus = {d.doc_id: d for d in docs}
        scorer = TextualScorer(student, corpus, VOCAB)
        q = make_query("q", "repeat me")
        a = scorer.score_batch(q, [docs[0].doc_id, docs[5].doc_id])
        b = scorer.score_batch(q, [docs[0].doc_id, docs[5].doc_id])
        np.testing.assert_array_equal(a, b)

    def test_truncation_limits_are_both_valid_configs(self, setup):
        docs, _, _, student = setup
        doc = make_document("long", "t" * 400)
        q = make_query("q", "query words")
        s256 = score_textual(q, doc, student, VOCAB, max_doc_tokens=256)
        s512 = score_textual(q, doc, student, VOCAB, max_doc_tokens=512)
        assert np.isfinite([s256, s512]).all()

    def test_overflow_after_truncation_rejected(self, setup):
        docs, _, _, student = setup
        doc = make_document("huge", "h" * 800)
        scorer = TextualScorer(student, {"huge": doc}, VOCAB, max_doc_tokens=799)
        with pytest.raises(ValueError, match="max_seq_len"):
            scorer.score_batch(make_query("q", "x"), ["huge"])


class TestTeacher:
    @pytest.fixture(scope="class")
    def teacher_setup(self):
        docs, queries, qrels = generate_synthetic_corpus(7, 120, 20)
        index = build_inverted_index(docs)
        return docs, queries, qrels, TeacherOracle(index, qrels)

    def test_no_overlap_no_signal_scores_zero(self, teacher_setup):
        docs, queries, qrels, teacher = teacher_setup
        query = queries[0]
        unplanted = next(
            d.doc_id for d in docs
            if (query.query_id, d.doc_id) not in qrels
            and not set(query.text.split()) & set(d.text.split())
        )
        assert teacher.score(query, unplanted) == 0.0

    def test_scores_in_unit_interval(self, teacher_setup):
        docs, queries, _, teacher = teacher_setup
        for query in queries[:5]:
            scores = teacher.score_batch(query, [d.doc_id for d in docs[:50]])
            assert ((scores >= 0) & (scores < 1)).all()

    def test_scale_stable_across_calls(self, teacher_setup):
        docs, queries, _, teacher = teacher_setup
        q = queries[1]
        a = teacher.score_batch(q, [d.doc_id for d in docs])
        b = teacher.score_batch(q, [d.doc_id for d in docs])
        np.testing.assert_array_equal(a, b)

    def test_grade_dominates_ordering(self, teacher_setup):
        _, queries, qrels, teacher = teacher_setup
        for query in queries[:5]:
            graded = [(doc_id, g) for (qid, doc_id), g in qrels.items()
                      if qid == query.query_id]
            scores = {doc_id: teacher.score(query, doc_id) for doc_id, _ in graded}
            for doc_a, ga in graded:
                for doc_b, gb in graded:
                    if ga > gb:
                        assert scores[doc_a] > scores[doc_b]


class _LookupScorer:
    variant = "lookup"
    lookup_seconds = 0.0

    def __init__(self, table):
        self.table = table

    def score_batch(self, query, doc_ids):
        return np.array([self.table[d] for d in doc_ids])


class TestRerank:
    def test_single_candidate_unchanged(self):
        scorer = _LookupScorer({"a": 0.5})
        out = rerank(make_query("q", "x"), [("a", 9.0)], scorer)
        assert out == [("a", 0.5)]

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError, match="no candidates"):
            rerank(make_query("q", "x"), [], _LookupScorer({}))

    def test_first_stage_scores_reproduce_input_order(self):
        candidates = [("a", 3.0), ("b", 2.0), ("c", 1.0)]
        scorer = _LookupScorer(dict(candidates))
        out = rerank(make_query("q", "x"), candidates, scorer)
        assert out == candidates

    def test_batch_sizes_give_identical_runs(self, setup):
        docs, _, index, student = setup
        scorer = CompressedScorer(student, index, VOCAB)
        query = make_query("q", "some request terms")
        candidates = [(d.doc_id, 0.0) for d in docs]
        outputs = [rerank(query, candidates, scorer, batch_size=bs) for bs in (1, 8, 256)]
        assert outputs[0] == outputs[1] == outputs[2]

    def test_candidate_order_does_not_matter(self, setup):
        docs, _, index, student = setup
        scorer = CompressedScorer(student, index, VOCAB)
        query = make_query("q", "ordering probe")
        candidates = [(d.doc_id, float(i)) for i, d in enumerate(reversed(docs))]
        a = rerank(query, sorted(candidates, key=lambda p: -p[1]), scorer)
        b = rerank(query, sorted(candidates, key=lambda p: p[0]), scorer)
        assert a == b

    def test_scorer_failure_aborts_whole_query(self, setup):
        docs, _, index, student = setup
        scorer = CompressedScorer(student, index, VOCAB)
        query = make_query("q", "fail probe")
        with pytest.raises(KeyError):
            rerank(query, [(docs[0].doc_id, 1.0), ("missing", 0.5)], scorer)

    def test_ties_broken_by_doc_id(self):
        scorer = _LookupScorer({"b": 1.0, "a": 1.0, "c": 2.0})
        out = rerank(make_query("q", "x"), [("b", 3.0), ("a", 2.0), ("c", 1.0)], scorer)
        assert [d for d, _ in out] == ["c", "a", "b"]
