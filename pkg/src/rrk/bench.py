"""Latency harness: reranking time versus raw document length.

Workload shape: n_queries queries, docs_per_query candidates each, over a
grid of exact document token lengths. One repetition = one query's full
rerank; medians and p95s are taken over the timed repetitions after a
warmup. Compressed-path timings include index lookup, whose share is
also recorded separately. Offline compression (index building) is not
part of the timed region.

If the timer is too coarse (median under 1 ms) the harness re-times with
an inner repeat loop automatically.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compressor import build_index
from .corpus import Document, Query, Vocabulary, make_document, make_query
from .index import EmbeddingIndex
from .model import Checkpoint, truncate_layers
from .scorers import CompressedScorer, TextualScorer, rerank

log = logging.getLogger(__name__)

DEFAULT_LENGTHS = (128, 256, 512, 768, 1024)
MIN_TIMED_REPETITIONS = 20
WARMUP_REPETITIONS = 3
_WORD_CHARS = "abcdefghijklmnopqrstuvwxyz"


@dataclass
class LatencyRow:
    model: str
    input_length: int
    batch: int
    median_ms: float
    p95_ms: float
    lookup_ms: float
    repetitions: int


@dataclass
class LatencyReport:
    rows: list[LatencyRow] = field(default_factory=list)
    n_queries: int = 0
    docs_per_query: int = 0

    def median(self, model: str, length: int) -> float:
        for row in self.rows:
            if row.model == model and row.input_length == length:
                return row.median_ms
        raise KeyError(f"no row for ({model}, {length})")


def exact_length_text(n_tokens: int, rng: np.random.Generator) -> str:
    """Random word-like ASCII text of exactly n_tokens bytes."""
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    parts: list[str] = []
    remaining = n_tokens
    while remaining > 8:
        width = int(rng.integers(4, 8))
        parts.append("".join(_WORD_CHARS[i] for i in rng.integers(0, 26, size=width)))
        remaining -= width + 1
    tail = "".join(_WORD_CHARS[i] for i in rng.integers(0, 26, size=remaining))
    text = " ".join(parts + [tail]) if parts else tail
    assert len(text) == n_tokens
    return text


def make_workload(
    length: int,
    n_queries: int,
    docs_per_query: int,
    vocab: Vocabulary,
    query_budget: int,
    pool_size: int,
    seed: int,
) -> tuple[list[Document], list[tuple[Query, list[str]]]]:
    """Doc pool of exact-length docs plus (query, candidate ids) assignments."""
    rng = np.random.default_rng(seed + length)
    pool_size = max(pool_size, docs_per_query)
    docs = [
        make_document(f"B{length}_{i:04d}", exact_length_text(length, rng))
        for i in range(pool_size)
    ]
    assignments = []
    for qi in range(n_queries + WARMUP_REPETITIONS):
        query = make_query(f"BQ{qi:04d}", exact_length_text(query_budget, rng))
        chosen = rng.choice(pool_size, size=docs_per_query, replace=False)
        assignments.append((query, [docs[int(i)].doc_id for i in sorted(chosen)]))
    return docs, assignments


def _time_queries(scorer, assignments, batch: int, inner: int = 1):
    times_ms: list[float] = []
    lookup_ms: list[float] = []
    for qi, (query, doc_ids) in enumerate(assignments):
        candidates = [(d, 0.0) for d in doc_ids]
        lookup_before = scorer.lookup_seconds
        t0 = time.perf_counter()
        for _ in range(inner):
            rerank(query, candidates, scorer, batch_size=batch)
        elapsed = (time.perf_counter() - t0) / inner
        if qi < WARMUP_REPETITIONS:
            continue
        times_ms.append(elapsed * 1000.0)
        lookup_ms.append((scorer.lookup_seconds - lookup_before) / inner * 1000.0)
    return times_ms, lookup_ms


def _measure(scorer, assignments, batch: int) -> tuple[list[float], list[float], int]:
    times_ms, lookup_ms = _time_queries(scorer, assignments, batch)
    median = float(np.median(times_ms))
    inner = 1
    if median < 1.0:
        inner = int(np.ceil(2.0 / max(median, 1e-4)))
        log.info("median %.3f ms too coarse; re-timing with inner repeat %d", median, inner)
        times_ms, lookup_ms = _time_queries(scorer, assignments, batch, inner=inner)
    return times_ms, lookup_ms, inner


def latency_bench(
    variants: list[str],
    compressor: Checkpoint,
    rrk_checkpoint: Checkpoint,
    textual_checkpoint: Checkpoint,
    vocab: Vocabulary,
    doc_lengths: tuple[int, ...] = DEFAULT_LENGTHS,
    n_queries: int = 50,
    docs_per_query: int = 50,
    batch: int = 256,
    dtype=np.float32,
    pool_size: int = 200,
    seed: int = 7,
    max_doc_tokens: int | None = None,
) -> LatencyReport:
    """Time each requested scorer over the length grid."""
    if n_queries < MIN_TIMED_REPETITIONS:
        raise ValueError(f"need at least {MIN_TIMED_REPETITIONS} timed queries, got {n_queries}")
    unknown = set(variants) - {"rrk-full", "rrk-half", "textual"}
    if unknown:
        raise ValueError(f"unknown bench variants: {sorted(unknown)}")

    cfg = rrk_checkpoint.config
    half = truncate_layers(rrk_checkpoint, max(1, cfg.n_layers // 2))
    report = LatencyReport(n_queries=n_queries, docs_per_query=docs_per_query)

    for length in doc_lengths:
        docs, assignments = make_workload(
            length, n_queries, docs_per_query, vocab, cfg.query_budget, pool_size, seed
        )
        doc_map = {d.doc_id: d for d in docs}
        index: EmbeddingIndex | None = None
        if "rrk-full" in variants or "rrk-half" in variants:
            index = build_index(docs, compressor, vocab)  # offline, untimed

        scorers: list[tuple[str, object]] = []
        if "rrk-full" in variants:
            scorers.append(("rrk-full", CompressedScorer(rrk_checkpoint, index, vocab,
                                                         dtype=dtype, variant="rrk-full")))
        if "rrk-half" in variants:
            scorers.append(("rrk-half", CompressedScorer(half, index, vocab,
                                                         dtype=dtype, variant="rrk-half")))
        if "textual" in variants:
            limit = length if max_doc_tokens is None else max_doc_tokens
            scorers.append(("textual", TextualScorer(textual_checkpoint, doc_map, vocab,
                                                     max_doc_tokens=limit, dtype=dtype)))

        for name, scorer in scorers:
            times_ms, lookup_ms, _ = _measure(scorer, assignments, batch)
            report.rows.append(LatencyRow(
                model=name,
                input_length=length,
                batch=batch,
                median_ms=float(np.median(times_ms)),
                p95_ms=float(np.percentile(times_ms, 95)),
                lookup_ms=float(np.median(lookup_ms)),
                repetitions=len(times_ms),
            ))
            log.info("bench %s len=%d median=%.2f ms p95=%.2f ms lookup=%.3f ms",
                     name, length, report.rows[-1].median_ms,
                     report.rows[-1].p95_ms, report.rows[-1].lookup_ms)
    return report


def query_budget_latency(
    compressor: Checkpoint,
    rrk_checkpoint: Checkpoint,
    vocab: Vocabulary,
    budgets: tuple[int, int] = (23, 47),
    doc_length: int = 256,
    n_queries: int = 30,
    docs_per_query: int = 50,
    seed: int = 11,
    dtype=np.float32,
) -> dict[int, float]:
    """Median rerank latency per query budget (probes the long-query cost).

    Measurements for the two budgets are interleaved per repetition so a
    load shift cannot favor one side.
    """
    from dataclasses import replace as dc_replace

    docs, assignments = make_workload(
        doc_length, n_queries, docs_per_query, vocab, max(budgets), 100, seed
    )
    index = build_index(docs, compressor, vocab)
    samples: dict[int, list[float]] = {b: [] for b in budgets}
    scorers = {}
    for budget in budgets:
        ckpt = Checkpoint(dc_replace(rrk_checkpoint.config, query_budget=budget),
                          rrk_checkpoint.params, dict(rrk_checkpoint.meta))
        scorers[budget] = CompressedScorer(ckpt, index, vocab, dtype=dtype)

    for qi, (query, doc_ids) in enumerate(assignments):
        candidates = [(d, 0.0) for d in doc_ids]
        for budget in budgets:
            t0 = time.perf_counter()
            rerank(query, candidates, scorers[budget], batch_size=256)
            elapsed = (time.perf_counter() - t0) * 1000.0
            if qi >= WARMUP_REPETITIONS:
                samples[budget].append(elapsed)
    return {b: float(np.median(v)) for b, v in samples.items()}


CSV_COLUMNS = ("model", "input_length", "batch", "median_ms", "p95_ms", "lookup_ms")


def emit_curves(report: LatencyReport, path: str | Path) -> None:
    """CSV with stable column order and row order (model, then length)."""
    if not report.rows:
        raise ValueError("latency report is empty")
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(CSV_COLUMNS) + "\n")
        for row in sorted(report.rows, key=lambda r: (r.model, r.input_length)):
            f.write(f"{row.model},{row.input_length},{row.batch},"
                    f"{row.median_ms:.3f},{row.p95_ms:.3f},{row.lookup_ms:.3f}\n")


def load_curves(path: str | Path) -> LatencyReport:
    report = LatencyReport()
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != ",".join(CSV_COLUMNS):
            raise ValueError(f"{path}: unexpected CSV header {header!r}")
        for line in f:
            model, length, batch, med, p95, lookup = line.strip().split(",")
            report.rows.append(LatencyRow(model, int(length), int(batch),
                                          float(med), float(p95), float(lookup), 0))
    return report
