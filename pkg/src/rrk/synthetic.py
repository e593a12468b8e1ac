"""Deterministic synthetic corpus with planted graded relevance.

Each query is three distinct "topic terms"; relevance is planted by term
overlap: a grade-g document (g in 1..3) contains g of the query's topic
terms, each twice, and judged grade-0 documents contain one topic term
once. Plants are placed near the start of the document so they fall inside
the compressor's 128-token ceiling; every document opens with a unique
marker word so no two documents share a prefix. Filler words are drawn
from a pool disjoint from all topic terms, which keeps BM25 candidates
exactly the judged documents.

Everything is a pure function of the arguments (PCG64 seeded rng).
"""

from __future__ import annotations

import numpy as np

from .corpus import Document, Query, make_document, make_query
from .trec import Qrels

# per query: planted grades, best first, then judged zeros
PLANT_GRADES = (3, 3, 2, 2, 1, 1, 1, 1, 0, 0)
PLANT_REPEATS = 2  # occurrences of each planted term for grades >= 1

_LETTERS = np.array(list("abcdefghijklmnopqrstuvwxyz"))


def _random_words(rng: np.random.Generator, count: int) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        length = int(rng.integers(4, 7))
        word = "".join(_LETTERS[rng.integers(0, 26, size=length)])
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def generate_synthetic_corpus(
    seed: int,
    n_docs: int,
    n_queries: int,
    doc_len_range: tuple[int, int] = (100, 150),
) -> tuple[list[Document], list[Query], Qrels]:
    if n_queries < 1 or n_docs < n_queries:
        raise ValueError(f"need n_docs >= n_queries >= 1, got {n_docs}, {n_queries}")
    lo, hi = doc_len_range
    if lo > hi or lo < 16:
        raise ValueError(f"invalid doc_len_range {doc_len_range!r}")

    rng = np.random.default_rng(seed)
    n_filler = 200
    pool = _random_words(rng, 3 * n_queries + n_filler)
    topic_terms = [tuple(pool[3 * i : 3 * i + 3]) for i in range(n_queries)]
    filler = pool[3 * n_queries :]

    queries = [
        make_query(f"Q{i:04d}", " ".join(topic_terms[i])) for i in range(n_queries)
    ]

    # Assign judged docs round-robin over a shuffled doc order so plants
    # spread evenly; a doc may serve several queries when docs are scarce.
    judged_per_query = min(len(PLANT_GRADES), n_docs)
    doc_order = rng.permutation(n_docs)
    plants: dict[int, list[tuple[int, int]]] = {}  # doc -> [(query, grade)]
    qrels: Qrels = {}
    cursor = 0
    for qi in range(n_queries):
        for grade in PLANT_GRADES[:judged_per_query]:
            di = int(doc_order[cursor % n_docs])
            cursor += 1
            plants.setdefault(di, []).append((qi, grade))
            qrels[(f"Q{qi:04d}", f"D{di:04d}")] = grade

    docs: list[Document] = []
    for di in range(n_docs):
        words = [f"d{di:04d}"]
        plant_words: list[str] = []
        for qi, grade in plants.get(di, []):
            terms = topic_terms[qi]
            if grade == 0:
                plant_words.append(terms[0])
            else:
                for term in terms[:grade]:
                    plant_words.extend([term] * PLANT_REPEATS)
        order = rng.permutation(len(plant_words))
        words.extend(plant_words[i] for i in order)

        target = int(rng.integers(lo, hi + 1))
        text = " ".join(words)
        while len(text) < lo or len(text) + 7 <= target:
            text += " " + filler[int(rng.integers(0, len(filler)))]
        docs.append(make_document(f"D{di:04d}", text))

    return docs, queries, qrels
