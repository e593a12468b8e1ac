"""Command-line pipeline: gen-data, pretrain-compressor, build-index,
retrieve, make-pairs, train, rerank, eval, bench.

Every subcommand reads an optional key=value config file plus flag
overrides (flags win). Validation failures exit 1 with one
machine-parseable "error:" line listing every violation; usage errors
exit 2. Logs go to stderr, data to files/stdout.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import latency_bench, emit_curves
from .bm25 import build_inverted_index, retrieve_topk
from .checkpoint import load_checkpoint, save_checkpoint
from .compressor import build_index, pretrain_compressor
from .config import ConfigError, ExperimentConfig, build_config, parse_config_file, write_config
from .corpus import (
    Vocabulary,
    load_corpus,
    load_queries,
    write_corpus_jsonl,
    write_queries_jsonl,
)
from .evaluation import ndcg_at_k, write_metric_report
from .index import load_index, save_index
from .model import truncate_layers
from .scorers import CompressedScorer, TeacherOracle, TextualScorer, rerank
from .synthetic import generate_synthetic_corpus
from .training import (
    TrainingDiverged,
    TrainingPair,
    init_student_from_compressor,
    make_training_pairs,
    split_queries,
    train,
)
from .trec import Run, load_qrels, load_run, write_qrels, write_run

log = logging.getLogger("rrk")


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _load_config(args, overrides: dict[str, str | None]) -> ExperimentConfig:
    kv = parse_config_file(args.config) if getattr(args, "config", None) else {}
    kv.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(kv)


def _require(cfg: ExperimentConfig, keys: list[str], existing: list[str]) -> None:
    violations = []
    for key in keys:
        if key not in cfg.paths:
            violations.append(f"missing required path key paths.{key}")
    for key in existing:
        path = cfg.paths.get(key)
        if path and not Path(path).exists():
            violations.append(f"paths.{key}: file not found: {path}")
    if violations:
        raise ConfigError(violations)


def _vocab(cfg: ExperimentConfig) -> Vocabulary:
    return Vocabulary(l_memory=cfg.model.l_memory)


def _run_tag(base: str, cfg: ExperimentConfig) -> str:
    return f"{base}-{cfg.config_hash()[:8]}-s{cfg.seed}"


def _write_trace(trace: list[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,loss\n")
        for step, loss in trace:
            f.write(f"{step},{loss!r}\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    cfg = _load_config(args, {
        "seed": args.seed,
        "data.n_docs": args.docs,
        "data.n_queries": args.queries,
        "paths.output_dir": args.out,
    })
    _require(cfg, ["output_dir"], [])
    out = Path(cfg.paths["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    docs, queries, qrels = generate_synthetic_corpus(
        cfg.seed, cfg.data.n_docs, cfg.data.n_queries,
        (cfg.data.doc_len_lo, cfg.data.doc_len_hi),
    )
    write_corpus_jsonl(docs, out / "corpus.jsonl")
    write_queries_jsonl(queries, out / "queries.jsonl")
    write_qrels(qrels, out / "qrels.txt")
    write_config(cfg, out / "experiment.cfg")
    log.info("wrote %d docs, %d queries, %d judgments to %s",
             len(docs), len(queries), len(qrels), out)
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_config(args, {
        "seed": args.seed,
        "pretrain.steps": args.steps,
        "paths.corpus": args.corpus,
        "paths.compressor": args.out,
    })
    _require(cfg, ["corpus", "compressor"], ["corpus"])
    corpus = load_corpus(cfg.paths["corpus"])
    try:
        checkpoint, trace = pretrain_compressor(
            corpus, cfg.model, cfg.pretrain.steps, _vocab(cfg),
            batch_size=cfg.pretrain.batch_size,
            learning_rate=cfg.pretrain.learning_rate,
            seed=cfg.seed, config_hash=cfg.config_hash(),
        )
    except TrainingDiverged as e:
        return _fail(f"pretraining diverged: {e}")
    save_checkpoint(checkpoint, cfg.paths["compressor"])
    _write_trace(trace, str(cfg.paths["compressor"]) + ".trace.csv")
    if trace:
        log.info("pretrained %d steps: loss %.4f -> %.4f",
                 len(trace), trace[0][1], trace[-1][1])
    return 0


def cmd_build_index(args) -> int:
    cfg = _load_config(args, {
        "paths.corpus": args.corpus,
        "paths.compressor": args.compressor,
        "paths.index": args.out,
    })
    _require(cfg, ["corpus", "compressor", "index"], ["corpus", "compressor"])
    corpus = load_corpus(cfg.paths["corpus"])
    compressor = load_checkpoint(cfg.paths["compressor"])
    index = build_index(corpus, compressor, _vocab(cfg))
    save_index(index, cfg.paths["index"])
    log.info("indexed %d docs (l=%d, d=%d) -> %s",
             index.n_docs, index.l_memory, index.d_model, cfg.paths["index"])
    return 0


def cmd_retrieve(args) -> int:
    cfg = _load_config(args, {
        "paths.corpus": args.corpus,
        "paths.queries": args.queries,
        "paths.first_stage_run": args.out,
        "retriever.top_k": args.k,
    })
    _require(cfg, ["corpus", "queries", "first_stage_run"], ["corpus", "queries"])
    corpus = load_corpus(cfg.paths["corpus"])
    queries = load_queries(cfg.paths["queries"])
    inverted = build_inverted_index(corpus, cfg.retriever.k1, cfg.retriever.b)
    run = Run(tag=_run_tag("first-stage", cfg))
    for query in queries:
        ranked = retrieve_topk(query, inverted, cfg.retriever.top_k)
        if ranked:
            run.add_query(query.query_id, ranked)
    write_run(run, cfg.paths["first_stage_run"])
    log.info("retrieved top-%d for %d queries -> %s",
             cfg.retriever.top_k, len(run.entries), cfg.paths["first_stage_run"])
    return 0


def cmd_make_pairs(args) -> int:
    cfg = _load_config(args, {
        "seed": args.seed,
        "paths.corpus": args.corpus,
        "paths.queries": args.queries,
        "paths.qrels": args.qrels,
        "paths.pairs": args.out,
    })
    _require(cfg, ["corpus", "queries", "qrels", "pairs"], ["corpus", "queries", "qrels"])
    corpus = load_corpus(cfg.paths["corpus"])
    queries = load_queries(cfg.paths["queries"])
    qrels = load_qrels(cfg.paths["qrels"])
    train_queries, held = split_queries(queries, cfg.data.holdout_fraction, cfg.seed)
    inverted = build_inverted_index(corpus, cfg.retriever.k1, cfg.retriever.b)
    teacher = TeacherOracle(inverted, qrels)
    pairs = make_training_pairs(train_queries, inverted, teacher, cfg.seed,
                                top_k=cfg.retriever.top_k)
    with open(cfg.paths["pairs"], "w", encoding="utf-8") as f:
        f.write(f"# config_hash={cfg.config_hash()} seed={cfg.seed}\n")
        for pair in pairs:
            f.write(f"{pair.query_id}\t{pair.doc_id}\t{pair.teacher_score!r}\n")
    log.info("wrote %d pairs from %d train queries (%d held out) -> %s",
             len(pairs), len(train_queries), len(held), cfg.paths["pairs"])
    return 0


def load_pairs(path: str | Path) -> list[TrainingPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            qid, doc_id, score = line.rstrip("\n").split("\t")
            pairs.append(TrainingPair(qid, doc_id, float(score)))
    return pairs


def cmd_train(args) -> int:
    cfg = _load_config(args, {
        "seed": args.seed,
        "train.trainable": args.trainable,
        "paths.corpus": args.corpus,
        "paths.queries": args.queries,
        "paths.pairs": args.pairs,
        "paths.compressor": args.compressor,
        "paths.index": args.index,
        "paths.reranker": args.out,
    })
    variant = args.variant
    needed = ["corpus", "queries", "pairs", "compressor", "reranker"]
    existing = ["corpus", "queries", "pairs", "compressor"]
    if variant.startswith("rrk"):
        needed.append("index")
        existing.append("index")
    _require(cfg, needed, existing)

    corpus = load_corpus(cfg.paths["corpus"])
    queries = {q.query_id: q for q in load_queries(cfg.paths["queries"])}
    pairs = load_pairs(cfg.paths["pairs"])
    compressor = load_checkpoint(cfg.paths["compressor"])
    student = init_student_from_compressor(compressor, variant, cfg.seed)
    student.meta["config_hash"] = cfg.config_hash()
    index = load_index(cfg.paths["index"]) if variant.startswith("rrk") else None
    try:
        trained, trace = train(
            pairs, student, cfg.train, queries, _vocab(cfg),
            index=index, corpus={d.doc_id: d for d in corpus},
            max_doc_tokens=cfg.textual.max_doc_tokens,
        )
    except TrainingDiverged as e:
        if e.last_good is not None:
            save_checkpoint(e.last_good, str(cfg.paths["reranker"]) + ".last-good")
        return _fail(f"training diverged: {e}")
    save_checkpoint(trained, cfg.paths["reranker"])
    _write_trace(trace, str(cfg.paths["reranker"]) + ".trace.csv")
    log.info("trained %s for %d steps -> %s", variant, len(trace), cfg.paths["reranker"])
    return 0


def _hash_check(index, checkpoint, allow_mismatch: bool) -> None:
    ih, ch = index.config_hash, checkpoint.meta.get("config_hash", "")
    if ih != ch and not allow_mismatch:
        raise ConfigError([
            f"index/checkpoint config hashes differ ({ih[:8]} vs {ch[:8]}); "
            "pass --allow-mismatch to override"
        ])


def cmd_rerank(args) -> int:
    cfg = _load_config(args, {
        "paths.corpus": args.corpus,
        "paths.queries": args.queries,
        "paths.qrels": args.qrels,
        "paths.index": args.index,
        "paths.reranker": args.checkpoint,
        "paths.first_stage_run": args.run,
        "paths.reranked_run": args.out,
    })
    scorer_name = args.scorer
    needed = ["queries", "first_stage_run", "reranked_run"]
    existing = ["queries", "first_stage_run"]
    if scorer_name in ("rrk-full", "rrk-half"):
        needed += ["index", "reranker"]
        existing += ["index", "reranker"]
    elif scorer_name == "textual":
        needed += ["corpus", "reranker"]
        existing += ["corpus", "reranker"]
    else:  # teacher
        needed += ["corpus", "qrels"]
        existing += ["corpus", "qrels"]
    _require(cfg, needed, existing)

    queries = {q.query_id: q for q in load_queries(cfg.paths["queries"])}
    first_stage = load_run(cfg.paths["first_stage_run"])
    vocab = _vocab(cfg)

    if scorer_name in ("rrk-full", "rrk-half"):
        index = load_index(cfg.paths["index"])
        checkpoint = load_checkpoint(cfg.paths["reranker"])
        _hash_check(index, checkpoint, args.allow_mismatch)
        if scorer_name == "rrk-half":
            checkpoint = truncate_layers(checkpoint, max(1, checkpoint.config.n_layers // 2))
        scorer = CompressedScorer(checkpoint, index, vocab, variant=scorer_name)
    elif scorer_name == "textual":
        corpus = {d.doc_id: d for d in load_corpus(cfg.paths["corpus"])}
        checkpoint = load_checkpoint(cfg.paths["reranker"])
        scorer = TextualScorer(checkpoint, corpus, vocab,
                               max_doc_tokens=cfg.textual.max_doc_tokens)
    else:
        corpus = load_corpus(cfg.paths["corpus"])
        inverted = build_inverted_index(corpus, cfg.retriever.k1, cfg.retriever.b)
        scorer = TeacherOracle(inverted, load_qrels(cfg.paths["qrels"]))

    out = Run(tag=_run_tag(scorer_name, cfg))
    for qid in sorted(first_stage.entries):
        query = queries.get(qid)
        if query is None:
            return _fail(f"run query {qid} not present in the query file")
        out.add_query(qid, rerank(query, first_stage.entries[qid], scorer, args.batch))
    write_run(out, cfg.paths["reranked_run"])
    log.info("reranked %d queries with %s -> %s",
             len(out.entries), scorer_name, cfg.paths["reranked_run"])
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args, {
        "paths.reranked_run": args.run,
        "paths.qrels": args.qrels,
    })
    _require(cfg, ["reranked_run", "qrels"], ["reranked_run", "qrels"])
    metric = args.metric
    if not metric.startswith("ndcg@"):
        return _fail(f"unsupported metric {metric!r} (expected ndcg@K)")
    try:
        k = int(metric.split("@", 1)[1])
    except ValueError:
        return _fail(f"bad metric cutoff in {metric!r}")
    run = load_run(cfg.paths["reranked_run"])
    qrels = load_qrels(cfg.paths["qrels"])
    report = ndcg_at_k(run, qrels, k)
    if args.out:
        write_metric_report(report, args.out)
        if args.plot:
            from .plots import plot_metric_report

            plot_metric_report(report, str(Path(args.out).with_suffix(".png")))
    print(f"ndcg@{k} {report.mean:.6f}")
    if report.n_excluded:
        log.info("%d queries had zero ideal DCG and were excluded", report.n_excluded)
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args, {
        "seed": args.seed,
        "bench.lengths": args.lengths,
        "bench.n_queries": args.queries,
        "bench.docs_per_query": args.docs,
        "bench.batch": args.batch,
        "paths.compressor": args.compressor,
        "paths.reranker": args.checkpoint,
        "paths.output_dir": args.out,
    })
    _require(cfg, ["output_dir"], [])
    out = Path(cfg.paths["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    variants = [v.strip() for v in args.models.split(",") if v.strip()]
    vocab = _vocab(cfg)

    compressor_path = cfg.paths.get("compressor")
    if compressor_path and Path(compressor_path).exists():
        compressor = load_checkpoint(compressor_path)
    else:
        log.info("no compressor checkpoint; benching with a frozen seeded init")
        compressor, _ = pretrain_compressor([_bench_seed_doc()], cfg.model, 0, vocab,
                                            seed=cfg.seed, config_hash=cfg.config_hash())
    reranker_path = cfg.paths.get("reranker")
    if reranker_path and Path(reranker_path).exists():
        rrk_checkpoint = load_checkpoint(reranker_path)
        _hash_allowed = rrk_checkpoint.meta.get("config_hash", "")
        if _hash_allowed != compressor.meta.get("config_hash", "") and not args.allow_mismatch:
            return _fail("compressor/reranker config hashes differ; pass --allow-mismatch")
    else:
        log.info("no reranker checkpoint; benching an untrained student")
        rrk_checkpoint = init_student_from_compressor(compressor, "rrk-full", cfg.seed)
    textual_checkpoint = init_student_from_compressor(compressor, "textual", cfg.seed)

    dtype = np.float32 if cfg.bench.dtype == "float32" else np.float64
    report = latency_bench(
        variants, compressor, rrk_checkpoint, textual_checkpoint, vocab,
        doc_lengths=cfg.bench.lengths, n_queries=cfg.bench.n_queries,
        docs_per_query=cfg.bench.docs_per_query, batch=cfg.bench.batch,
        dtype=dtype, pool_size=cfg.bench.pool_size, seed=cfg.seed,
    )
    csv_path = out / "latency.csv"
    emit_curves(report, csv_path)
    if args.plot:
        from .plots import plot_latency_curves

        plot_latency_curves(report, out / "latency.png")
    for row in report.rows:
        print(f"{row.model} len={row.input_length} median={row.median_ms:.2f}ms "
              f"p95={row.p95_ms:.2f}ms lookup={row.lookup_ms:.3f}ms")
    log.info("wrote %s", csv_path)
    return 0


def _bench_seed_doc():
    from .corpus import make_document

    return make_document("seed", "placeholder corpus for seeded-init benching")


def cmd_validate_config(args) -> int:
    from .config import validate_config

    cfg = validate_config(args.config_path)
    print(f"ok: config hash {cfg.config_hash()}, "
          f"effective rerank input length {cfg.effective_input_length}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rrk",
        description="Reranking over compressed document embeddings (desk scale).",
    )
    parser.add_argument("--version", action="version", version=f"rrk {__version__}")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value experiment config file")
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "write a deterministic synthetic corpus")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed")
    p.add_argument("--docs")
    p.add_argument("--queries")

    p = add("pretrain-compressor", cmd_pretrain, "autoencoding pretraining of the compressor")
    p.add_argument("--corpus")
    p.add_argument("--out", help="compressor checkpoint path")
    p.add_argument("--steps")
    p.add_argument("--seed")

    p = add("build-index", cmd_build_index, "compress every document into the index")
    p.add_argument("--corpus")
    p.add_argument("--compressor")
    p.add_argument("--out", help="index path")

    p = add("retrieve", cmd_retrieve, "BM25 first-stage candidates as a TREC run")
    p.add_argument("--corpus")
    p.add_argument("--queries")
    p.add_argument("--out", help="run file path")
    p.add_argument("--k")

    p = add("make-pairs", cmd_make_pairs, "teacher-scored training pairs")
    p.add_argument("--corpus")
    p.add_argument("--queries")
    p.add_argument("--qrels")
    p.add_argument("--out", help="pairs TSV path")
    p.add_argument("--seed")

    p = add("train", cmd_train, "MSE distillation into the student scorer")
    p.add_argument("--corpus")
    p.add_argument("--queries")
    p.add_argument("--pairs")
    p.add_argument("--compressor")
    p.add_argument("--index")
    p.add_argument("--out", help="trained checkpoint path")
    p.add_argument("--variant", default="rrk-full", choices=["rrk-full", "textual"])
    p.add_argument("--trainable", choices=["lora+head", "all"])
    p.add_argument("--seed")

    p = add("rerank", cmd_rerank, "rescore a first-stage run")
    p.add_argument("--queries")
    p.add_argument("--corpus")
    p.add_argument("--qrels")
    p.add_argument("--index")
    p.add_argument("--checkpoint")
    p.add_argument("--run", help="input first-stage run")
    p.add_argument("--out", help="output run file")
    p.add_argument("--scorer", default="rrk-full",
                   choices=["rrk-full", "rrk-half", "textual", "teacher"])
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--allow-mismatch", action="store_true")

    p = add("eval", cmd_eval, "score a run against qrels")
    p.add_argument("--run")
    p.add_argument("--qrels")
    p.add_argument("--metric", default="ndcg@10")
    p.add_argument("--out", help="metric report TSV path")
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)

    p = add("bench", cmd_bench, "latency versus document length")
    p.add_argument("--compressor")
    p.add_argument("--checkpoint")
    p.add_argument("--out", help="output directory")
    p.add_argument("--models", default="rrk-full,rrk-half,textual")
    p.add_argument("--lengths")
    p.add_argument("--queries")
    p.add_argument("--docs")
    p.add_argument("--batch")
    p.add_argument("--seed")
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--allow-mismatch", action="store_true")

    p = sub.add_parser("validate-config", help="check a config file and print its hash")
    p.add_argument("config_path")
    p.set_defaults(func=cmd_validate_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as e:
        return _fail("; ".join(e.violations))
    except (OSError, ValueError, KeyError) as e:
        return _fail(str(e))


if __name__ == "__main__":
    sys.exit(main())
