"""Figure rendering for reports (written next to the delimited output)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import LatencyReport
from .evaluation import MetricReport

_STYLE = {"rrk-full": "tab:blue", "rrk-half": "tab:cyan", "textual": "tab:red",
          "teacher": "tab:green"}


def plot_latency_curves(report: LatencyReport, path: str | Path) -> None:
    """Median rerank latency per query versus raw document length."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    models = sorted({row.model for row in report.rows})
    for model in models:
        rows = sorted((r for r in report.rows if r.model == model),
                      key=lambda r: r.input_length)
        ax.plot([r.input_length for r in rows], [r.median_ms for r in rows],
                marker="o", label=model, color=_STYLE.get(model))
        ax.fill_between([r.input_length for r in rows],
                        [r.median_ms for r in rows],
                        [r.p95_ms for r in rows],
                        alpha=0.15, color=_STYLE.get(model))
    ax.set_xlabel("document length (tokens)")
    ax.set_ylabel("rerank latency per query (ms, median; band to p95)")
    ax.set_title(f"{report.docs_per_query} docs/query, {report.n_queries} queries")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metric_report(report: MetricReport, path: str | Path) -> None:
    """Per-query metric values, sorted, with the mean marked."""
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    values = [report.per_query[q] for q in sorted(report.per_query)]
    ax.bar(range(len(values)), sorted(values), color="tab:blue", width=0.9)
    ax.axhline(report.mean, color="tab:red", linestyle="--",
               label=f"mean {report.mean:.4f}")
    ax.set_xlabel("query (sorted by value)")
    ax.set_ylabel(f"{report.metric}@{report.k}")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
