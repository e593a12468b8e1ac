"""TREC-format run and qrels files.

qrels lines: "qid 0 docid grade" (whitespace separated, grade >= 0).
run lines:   "qid Q0 docid rank score tag" with ranks 1..n per query,
scores non-increasing, and ties ordered by ascending doc_id.

Scores are written with repr(), which round-trips float64 exactly (well
beyond the required six significant digits).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


Qrels = dict[tuple[str, str], int]


@dataclass
class Run:
    """Per-query ranked candidate lists, best first."""

    entries: dict[str, list[tuple[str, float]]] = field(default_factory=dict)
    tag: str = "rrk"

    def add_query(self, query_id: str, ranked: list[tuple[str, float]]) -> None:
        _check_order(query_id, ranked)
        self.entries[query_id] = list(ranked)


def _check_order(query_id: str, ranked: list[tuple[str, float]]) -> None:
    seen: set[str] = set()
    for i, (doc_id, score) in enumerate(ranked):
        if doc_id in seen:
            raise ValueError(f"query {query_id}: duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        if i == 0:
            continue
        prev_id, prev_score = ranked[i - 1]
        if score > prev_score:
            raise ValueError(
                f"query {query_id}: scores increase at rank {i + 1} "
                f"({prev_score!r} -> {score!r})"
            )
        if score == prev_score and doc_id < prev_id:
            raise ValueError(
                f"query {query_id}: tie at rank {i + 1} not ordered by doc_id"
            )


def rank_candidates(scored: list[tuple[str, float]]) -> list[tuple[str, float]]:
    """Sort by score descending, ties by doc_id ascending."""
    return sorted(scored, key=lambda p: (-p[1], p[0]))


def load_qrels(path: str | Path) -> Qrels:
    qrels: Qrels = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{line_no}: expected 'qid 0 docid grade'")
            qid, _, doc_id, grade_str = parts
            try:
                grade = int(grade_str)
            except ValueError as e:
                raise ValueError(f"{path}:{line_no}: bad grade {grade_str!r}") from e
            if grade < 0:
                raise ValueError(f"{path}:{line_no}: negative grade {grade}")
            qrels[(qid, doc_id)] = grade
    return qrels


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for (qid, doc_id), grade in sorted(qrels.items()):
            f.write(f"{qid} 0 {doc_id} {grade}\n")


def load_run(path: str | Path) -> Run:
    by_query: dict[str, list[tuple[int, str, float]]] = {}
    tag = "rrk"
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}:{line_no}: expected 'qid Q0 docid rank score tag'")
            qid, _, doc_id, rank_str, score_str, tag = parts
            try:
                rank, score = int(rank_str), float(score_str)
            except ValueError as e:
                raise ValueError(f"{path}:{line_no}: bad rank/score") from e
            by_query.setdefault(qid, []).append((rank, doc_id, score))

    run = Run(tag=tag)
    for qid, rows in by_query.items():
        rows.sort(key=lambda r: r[0])
        ranks = [r[0] for r in rows]
        if ranks != list(range(1, len(rows) + 1)):
            raise ValueError(f"query {qid}: ranks are not 1..{len(rows)}")
        run.add_query(qid, [(doc_id, score) for _, doc_id, score in rows])
    return run


def write_run(run: Run, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid in sorted(run.entries):
            ranked = run.entries[qid]
            _check_order(qid, ranked)
            for rank, (doc_id, score) in enumerate(ranked, start=1):
                f.write(f"{qid} Q0 {doc_id} {rank} {score!r} {run.tag}\n")
