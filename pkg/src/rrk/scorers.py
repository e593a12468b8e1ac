"""Scoring engines and the rerank procedure.

Variants:
- rrk-full / rrk-half: score from the query tokens plus the document's 8
  stored memory embeddings and an EOS readout position, so the decoder
  input never exceeds query_budget + 8 + 1 positions regardless of
  document length.
- textual: query ++ SEP ++ document tokens ++ EOS through the same decoder
  family (input grows with the document).
- teacher: deterministic lexical oracle, (bm25/(1+bm25) + grade)/4 in
  [0, 1), where grade is the synthetic generator's planted relevance. It
  stands in for a strong pretrained reranker so distillation runs are
  reproducible offline.

Scorers are pure: one (query, document) request always yields the same
score, and rerank output does not depend on batch size.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from .bm25 import InvertedIndex, split_terms
from .corpus import Document, Query, Vocabulary, truncate_query
from .index import EmbeddingIndex
from .model import Checkpoint, FastModel
from .trec import Qrels, rank_candidates

log = logging.getLogger(__name__)


def compressed_input_length(n_query_tokens: int, query_budget: int, l_memory: int) -> int:
    """Decoder input length for the compressed path: min(|q|, budget) + l + 1."""
    return min(n_query_tokens, query_budget) + l_memory + 1


class CompressedScorer:
    """Scores candidates from index embeddings alone (fixed-size input)."""

    def __init__(self, checkpoint: Checkpoint, index: EmbeddingIndex, vocab: Vocabulary,
                 dtype=np.float64, variant: str | None = None):
        self.variant = variant or checkpoint.meta.get("variant", "rrk-full")
        self.model = FastModel(checkpoint, dtype=dtype)
        self.index = index
        self.vocab = vocab
        self.lookup_seconds = 0.0  # cumulative, read by the latency harness
        if index.d_model != checkpoint.config.d_model or index.l_memory != checkpoint.config.l_memory:
            raise ValueError(
                f"index geometry ({index.l_memory}x{index.d_model}) does not match "
                f"model ({checkpoint.config.l_memory}x{checkpoint.config.d_model})"
            )

    def _query_tokens(self, query: Query) -> tuple[int, ...]:
        budget = self.model.config.query_budget
        if len(query.tokens) > budget:
            log.warning("query %s truncated from %d to %d tokens",
                        query.query_id, len(query.tokens), budget)
        return truncate_query(query, budget).tokens

    def build_inputs(self, query: Query, memories: np.ndarray) -> np.ndarray:
        """(N, S, D) decoder inputs: query embeds ++ memory rows ++ EOS embed."""
        fm = self.model
        qtok = np.array(self._query_tokens(query), dtype=np.int64)
        n, l = memories.shape[0], fm.config.l_memory
        S = len(qtok) + l + 1
        x = np.empty((n, S, fm.config.d_model), dtype=fm.dtype)
        x[:, : len(qtok)] = fm.tok[qtok]
        x[:, len(qtok) : len(qtok) + l] = memories
        x[:, S - 1] = fm.tok[self.vocab.eos_id]
        x += fm.pos[:S]
        return x

    def score_batch(self, query: Query, doc_ids: list[str]) -> np.ndarray:
        t0 = time.perf_counter()
        memories = np.stack([self.index.lookup(d) for d in doc_ids]).astype(self.model.dtype)
        self.lookup_seconds += time.perf_counter() - t0
        x = self.build_inputs(query, memories)
        return self.model.scores(x).astype(np.float64)


class TextualScorer:
    """Cross-encoder-style baseline reading the full document text."""

    def __init__(self, checkpoint: Checkpoint, corpus: dict[str, Document], vocab: Vocabulary,
                 max_doc_tokens: int = 256, dtype=np.float64, variant: str = "textual"):
        self.variant = variant
        self.model = FastModel(checkpoint, dtype=dtype)
        self.corpus = corpus
        self.vocab = vocab
        self.max_doc_tokens = max_doc_tokens
        self.lookup_seconds = 0.0

    def _input_ids(self, query: Query, doc: Document) -> np.ndarray:
        qtok = truncate_query(query, self.model.config.query_budget).tokens
        ids = (list(qtok) + [self.vocab.sep_id]
               + list(doc.tokens[: self.max_doc_tokens]) + [self.vocab.eos_id])
        if len(ids) > self.model.config.max_seq_len:
            raise ValueError(
                f"textual input for doc {doc.doc_id!r} is {len(ids)} tokens, "
                f"over max_seq_len {self.model.config.max_seq_len}"
            )
        return np.array(ids, dtype=np.int64)

    def score_batch(self, query: Query, doc_ids: list[str]) -> np.ndarray:
        # group equal-length inputs so uniform batches share one forward
        rows = [self._input_ids(query, self.corpus[d]) for d in doc_ids]
        scores = np.empty(len(rows))
        by_len: dict[int, list[int]] = {}
        for i, row in enumerate(rows):
            by_len.setdefault(len(row), []).append(i)
        for _, idxs in sorted(by_len.items()):
            ids = np.stack([rows[i] for i in idxs])
            scores[idxs] = self.model.scores(self.model.embed(ids)).astype(np.float64)
        return scores


class TeacherOracle:
    """Deterministic graded lexical teacher in [0, 1)."""

    variant = "teacher"

    def __init__(self, index: InvertedIndex, qrels: Qrels):
        self.index = index
        self.qrels = qrels
        self.lookup_seconds = 0.0

    def score(self, query: Query, doc_id: str) -> float:
        bm25 = self.index.score(split_terms(query.text), doc_id)
        grade = self.qrels.get((query.query_id, doc_id), 0)
        return (bm25 / (1.0 + bm25) + grade) / 4.0

    def score_batch(self, query: Query, doc_ids: list[str]) -> np.ndarray:
        return np.array([self.score(query, d) for d in doc_ids])


def score_compressed(query: Query, doc_id: str, checkpoint: Checkpoint,
                     index: EmbeddingIndex, vocab: Vocabulary) -> float:
    return float(CompressedScorer(checkpoint, index, vocab).score_batch(query, [doc_id])[0])


def score_textual(query: Query, doc: Document, checkpoint: Checkpoint, vocab: Vocabulary,
                  max_doc_tokens: int = 256) -> float:
    scorer = TextualScorer(checkpoint, {doc.doc_id: doc}, vocab, max_doc_tokens)
    return float(scorer.score_batch(query, [doc.doc_id])[0])


def teacher_score(query: Query, doc_id: str, index: InvertedIndex, qrels: Qrels) -> float:
    return TeacherOracle(index, qrels).score(query, doc_id)


def rerank(
    query: Query,
    candidates: list[tuple[str, float]],
    scorer,
    batch_size: int = 256,
) -> list[tuple[str, float]]:
    """Rescore candidates and sort descending (ties by doc_id).

    Scoring failures abort the whole query; batch size never changes the
    output. The candidate set is preserved exactly.
    """
    if not candidates:
        raise ValueError(f"query {query.query_id}: no candidates to rerank")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    doc_ids = [doc_id for doc_id, _ in candidates]
    scores = np.empty(len(doc_ids))
    for start in range(0, len(doc_ids), batch_size):
        chunk = doc_ids[start : start + batch_size]
        scores[start : start + len(chunk)] = scorer.score_batch(query, chunk)
    return rank_candidates([(d, float(s)) for d, s in zip(doc_ids, scores)])
