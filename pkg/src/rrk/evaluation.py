"""Ranking-quality metrics: nDCG@k and tie-aware Kendall tau.

nDCG uses exponential gains (2^rel - 1) with a log2(i+1) discount; the
ideal ordering comes from all judged documents of the query, and queries
whose ideal DCG is zero are excluded from the mean (their count is
reported). Kendall tau is the tau-b statistic; a ranking with no
information (all scores tied) correlates at 0 by convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .trec import Qrels, Run


@dataclass
class MetricReport:
    metric: str
    k: int
    per_query: dict[str, float]
    n_excluded: int

    @property
    def mean(self) -> float:
        if not self.per_query:
            return 0.0
        return float(np.mean(list(self.per_query.values())))


def _dcg(grades: list[int], k: int) -> float:
    return sum((2.0**g - 1.0) / np.log2(i + 2.0) for i, g in enumerate(grades[:k]))


def ndcg_at_k(run: Run, qrels: Qrels, k: int = 10) -> MetricReport:
    """Mean nDCG@k over the run's queries; unjudged documents count as 0."""
    if k < 1:
        raise ValueError(f"cutoff k must be >= 1, got {k}")
    judged: dict[str, list[int]] = {}
    for (qid, _), grade in qrels.items():
        judged.setdefault(qid, []).append(grade)

    per_query: dict[str, float] = {}
    excluded = 0
    for qid, ranked in run.entries.items():
        ideal = sorted(judged.get(qid, []), reverse=True)
        idcg = _dcg(ideal, k)
        if idcg == 0.0:
            excluded += 1
            continue
        gains = [qrels.get((qid, doc_id), 0) for doc_id, _ in ranked]
        per_query[qid] = _dcg(gains, k) / idcg
    return MetricReport("ndcg", k, per_query, excluded)


def write_metric_report(report: MetricReport, path: str | Path) -> None:
    """TSV of (query_id, value) rows plus a trailing summary line."""
    with open(path, "w", encoding="utf-8") as f:
        for qid in sorted(report.per_query):
            f.write(f"{qid}\t{report.per_query[qid]:.6f}\n")
        f.write(f"mean_{report.metric}@{report.k}\t{report.mean:.6f}\n")


def kendall_tau(scores_a: dict[str, float], scores_b: dict[str, float]) -> float:
    """Tie-aware tau-b between two scorings of the same item set."""
    if set(scores_a) != set(scores_b):
        raise ValueError("kendall_tau: item sets differ")
    items = sorted(scores_a)
    if len(items) < 2:
        return 0.0
    a = np.array([scores_a[i] for i in items])
    b = np.array([scores_b[i] for i in items])
    if np.all(a == a[0]) or np.all(b == b[0]):
        return 0.0
    tau = stats.kendalltau(a, b, variant="b").statistic
    return float(tau)
