"""BM25 first-stage retrieval over an in-memory inverted index.

Terms are lowercased alphanumeric runs. Scoring uses the non-negative idf
variant idf(t) = ln((N - df + 0.5)/(df + 0.5) + 1) and the saturation
score(q, d) = sum_t idf(t) * tf / (tf + k1 * (1 - b + b * |d|/avgdl))
over the query's unique terms. Ties are broken by ascending doc_id.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

from .corpus import Document, Query

_TERM_RE = re.compile(r"[a-z0-9]+")


def split_terms(text: str) -> list[str]:
    return _TERM_RE.findall(text.lower())


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[str, int]]]  # term -> [(doc_id, tf)], sorted
    doc_lengths: dict[str, int]
    avgdl: float
    k1: float
    b: float

    @property
    def n_docs(self) -> int:
        return len(self.doc_lengths)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)

    def _norm(self, doc_id: str) -> float:
        return self.k1 * (1.0 - self.b + self.b * self.doc_lengths[doc_id] / self.avgdl)

    def score(self, query_terms: list[str], doc_id: str) -> float:
        """Direct single-document score (used by the teacher oracle)."""
        if doc_id not in self.doc_lengths:
            return 0.0
        total = 0.0
        for term in sorted(set(query_terms)):
            tf = next((f for d, f in self.postings.get(term, ()) if d == doc_id), 0)
            if tf:
                total += self.idf(term) * tf / (tf + self._norm(doc_id))
        return total


def build_inverted_index(corpus: list[Document], k1: float = 0.9, b: float = 0.4) -> InvertedIndex:
    if not corpus:
        raise ValueError("cannot index an empty corpus")
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for doc in sorted(corpus, key=lambda d: d.doc_id):
        terms = split_terms(doc.text)
        doc_lengths[doc.doc_id] = len(terms)
        for term, tf in Counter(terms).items():
            postings.setdefault(term, []).append((doc.doc_id, tf))
    for plist in postings.values():
        plist.sort(key=lambda p: p[0])
    avgdl = sum(doc_lengths.values()) / len(doc_lengths)
    return InvertedIndex(postings, doc_lengths, avgdl, k1, b)


def retrieve_topk(query: Query, index: InvertedIndex, k: int = 50) -> list[tuple[str, float]]:
    """Top-k (doc_id, score), descending, ties by doc_id; only matching docs."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    accum: dict[str, float] = {}
    for term in sorted(set(split_terms(query.text))):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for doc_id, tf in plist:
            accum[doc_id] = accum.get(doc_id, 0.0) + idf * tf / (tf + index._norm(doc_id))
    ranked = sorted(accum.items(), key=lambda p: (-p[1], p[0]))
    return ranked[:k]
