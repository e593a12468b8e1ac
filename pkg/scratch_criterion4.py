"""Scratch: criterion-4 feasibility probe at acceptance scale."""
import sys
import time

import numpy as np

from rrk.bm25 import build_inverted_index, retrieve_topk
from rrk.compressor import build_index, pretrain_compressor
from rrk.corpus import Vocabulary
from rrk.evaluation import kendall_tau, ndcg_at_k
from rrk.model import ModelConfig
from rrk.scorers import CompressedScorer, TeacherOracle, rerank
from rrk.synthetic import generate_synthetic_corpus
from rrk.training import (
    TrainConfig, epoch_means, init_student_from_compressor,
    make_training_pairs, split_queries, train,
)
from rrk.trec import Run

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600
pre_lr = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-3
seed = 7

t0 = time.time()
cfg = ModelConfig(seed=seed)
vocab = Vocabulary(l_memory=cfg.l_memory)
docs, queries, qrels = generate_synthetic_corpus(seed, 500, 100)
inverted = build_inverted_index(docs)
teacher = TeacherOracle(inverted, qrels)

print(f"[{time.time()-t0:6.1f}s] pretraining compressor ({steps} steps, lr {pre_lr})...")
compressor, pre_trace = pretrain_compressor(docs, cfg, steps, vocab,
                                            batch_size=8, learning_rate=pre_lr, seed=seed)
if pre_trace:
    w = 10
    smooth = [np.mean([l for _, l in pre_trace[i:i+w]]) for i in range(0, len(pre_trace)-w+1, w)]
    print(f"  pretrain loss: start {smooth[0]:.4f} win10@100 {smooth[9] if len(smooth)>9 else float('nan'):.4f} end {smooth[-1]:.4f}")
print(f"[{time.time()-t0:6.1f}s] building index...")
index = build_index(docs, compressor, vocab)

train_qs, held_qs = split_queries(queries, 0.1, seed)
pairs = make_training_pairs(train_qs, inverted, teacher, seed)
print(f"[{time.time()-t0:6.1f}s] {len(pairs)} pairs, {len(held_qs)} held-out queries")

student0 = init_student_from_compressor(compressor, "rrk-full", seed)
tcfg = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-4, seed=seed)
student, trace = train(pairs, student0, tcfg, {q.query_id: q for q in queries}, vocab,
                       index=index)
means = epoch_means(trace, 2)
print(f"[{time.time()-t0:6.1f}s] trained. epoch means: {means[0]:.5f} -> {means[1]:.5f} "
      f"(ratio {means[1]/means[0]:.3f})")

def held_metrics(ckpt, tag):
    scorer = CompressedScorer(ckpt, index, vocab)
    run = Run(tag=tag)
    taus = []
    for q in held_qs:
        cands = retrieve_topk(q, inverted, 50)
        student_ranked = rerank(q, cands, scorer)
        run.add_query(q.query_id, student_ranked)
        t_scores = {d: teacher.score(q, d) for d, _ in cands}
        s_scores = dict(student_ranked)
        taus.append(kendall_tau(s_scores, t_scores))
    report = ndcg_at_k(run, qrels, 10)
    return report.mean, float(np.mean(taus))

teacher_run = Run(tag="teacher")
for q in held_qs:
    cands = retrieve_topk(q, inverted, 50)
    ranked = rerank(q, cands, teacher)
    teacher_run.add_query(q.query_id, ranked)
teacher_ndcg = ndcg_at_k(teacher_run, qrels, 10).mean

ndcg0, tau0 = held_metrics(student0, "untrained")
ndcg1, tau1 = held_metrics(student, "trained")
print(f"[{time.time()-t0:6.1f}s] teacher ndcg {teacher_ndcg:.4f}")
print(f"untrained: ndcg {ndcg0:.4f} tau {tau0:.4f}")
print(f"trained:   ndcg {ndcg1:.4f} tau {tau1:.4f}")
print(f"criterion: mse ratio {means[1]/means[0]:.3f} (<0.5?) | tau improve {tau1 > tau0} | "
      f"ndcg ratio {ndcg1/teacher_ndcg:.4f} (>=0.95?)")
