"""Synthetic corpus generation: determinism and planted relevance."""

import numpy as np
import pytest

from rrk.bm25 import build_inverted_index, retrieve_topk
from rrk.synthetic import generate_synthetic_corpus


@pytest.fixture(scope="module")
def suite():
    return generate_synthetic_corpus(7, 500, 100)


def test_deterministic_given_seed(suite):
    again = generate_synthetic_corpus(7, 500, 100)
    assert suite == again


def test_different_seed_differs():
    a = generate_synthetic_corpus(7, 50, 10)
    b = generate_synthetic_corpus(8, 50, 10)
    assert a != b


def test_every_query_has_a_relevant_doc(suite):
    _, queries, qrels = suite
    positives = {qid for (qid, _), grade in qrels.items() if grade >= 1}
    assert positives == {q.query_id for q in queries}


def test_grades_span_0_to_3(suite):
    _, _, qrels = suite
    assert set(qrels.values()) == {0, 1, 2, 3}


def test_doc_ids_unique_and_lengths_in_range(suite):
    docs, _, _ = suite
    assert len({d.doc_id for d in docs}) == len(docs)
    assert all(100 <= len(d.tokens) <= 150 for d in docs)


def test_queries_fit_budget(suite):
    _, queries, _ = suite
    assert all(len(q.tokens) <= 23 for q in queries)


def test_plants_inside_compressor_ceiling(suite):
    """All of a query's planted terms must appear in the first 128 bytes."""
    docs, queries, qrels = suite
    terms = {q.query_id: q.text.split() for q in queries}
    by_doc = {d.doc_id: d.text for d in docs}
    for (qid, doc_id), grade in qrels.items():
        if grade >= 1:
            prefix = by_doc[doc_id][:128]
            present = sum(t in prefix.split() for t in terms[qid])
            assert present >= grade, (qid, doc_id, grade)


def test_invalid_arguments():
    with pytest.raises(ValueError, match="n_docs >= n_queries"):
        generate_synthetic_corpus(1, 5, 10)
    with pytest.raises(ValueError, match="doc_len_range"):
        generate_synthetic_corpus(1, 10, 5, (100, 50))


def test_bm25_ranks_grade3_above_judged_zero(suite):
    """Planted relevance must be visible to a lexical retriever."""
    docs, queries, qrels = suite
    index = build_inverted_index(docs)
    rank3, rank0 = [], []
    for query in queries:
        ranked = [d for d, _ in retrieve_topk(query, index, 1000)]
        pos = {d: i for i, d in enumerate(ranked)}
        for (qid, doc_id), grade in qrels.items():
            if qid != query.query_id or doc_id not in pos:
                continue
            if grade == 3:
                rank3.append(pos[doc_id])
            elif grade == 0:
                rank0.append(pos[doc_id])
    assert np.mean(rank3) < np.mean(rank0)
