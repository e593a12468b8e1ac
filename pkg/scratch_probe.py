"""Scratch: do EOS features linearly encode the teacher score at all?"""
import sys
import time

import numpy as np

from rrk.autodiff import k_layernorm
from rrk.bm25 import build_inverted_index, retrieve_topk
from rrk.compressor import build_index, pretrain_compressor
from rrk.corpus import Vocabulary
from rrk.model import FastModel, ModelConfig
from rrk.scorers import CompressedScorer, TeacherOracle
from rrk.synthetic import generate_synthetic_corpus
from rrk.training import init_student_from_compressor, split_queries
from scipy import stats

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600
seed = 7
cfg = ModelConfig(seed=seed)
vocab = Vocabulary(l_memory=cfg.l_memory)
docs, queries, qrels = generate_synthetic_corpus(seed, 500, 100)
inverted = build_inverted_index(docs)
teacher = TeacherOracle(inverted, qrels)
print("pretraining...", flush=True)
compressor, _ = pretrain_compressor(docs, cfg, steps, vocab, batch_size=8,
                                    learning_rate=1e-3, seed=seed)
index = build_index(docs, compressor, vocab)
student = init_student_from_compressor(compressor, "rrk-full", seed)
scorer = CompressedScorer(student, index, vocab)
fm = scorer.model

train_qs, held_qs = split_queries(queries, 0.1, seed)

def feature_rows(qs):
    feats, targets, qids = [], [], []
    for q in qs:
        cands = retrieve_topk(q, inverted, 50)
        doc_ids = [d for d, _ in cands]
        mems = np.stack([index.lookup(d) for d in doc_ids]).astype(np.float64)
        x = scorer.build_inputs(q, mems)
        h = fm.last_hidden(x, rows=1)[:, 0]
        normed, _, _ = k_layernorm(h, fm.final_g, fm.final_b)
        feats.append(normed)
        targets.extend(teacher.score(q, d) for d in doc_ids)
        qids.extend([q.query_id] * len(doc_ids))
    return np.concatenate(feats), np.array(targets), qids

X, y, _ = feature_rows(train_qs)
Xh, yh, qh = feature_rows(held_qs)
print("train features", X.shape, "held", Xh.shape)

for lam in (1e-3, 1e-1, 1.0):
    A = X.T @ X + lam * np.eye(X.shape[1])
    w = np.linalg.solve(A, X.T @ (y - y.mean()))
    pred = Xh @ w + y.mean()
    tau = stats.kendalltau(pred, yh).statistic
    per_q_tau = []
    for qid in set(qh):
        m = [i for i, t in enumerate(qh) if t == qid]
        t = stats.kendalltau(pred[m], yh[m]).statistic
        if not np.isnan(t):
            per_q_tau.append(t)
    print(f"ridge lam={lam:g}: held global tau {tau:.3f}, per-query tau {np.mean(per_q_tau):.3f}, "
          f"R2 {1 - np.mean((pred-yh)**2)/np.var(yh):.3f}")

# upper-bound probe: raw memory features (mean + max pooling) with query-term overlap
def raw_features(qs):
    feats, targets = [], []
    for q in qs:
        cands = retrieve_topk(q, inverted, 50)
        for d, _ in cands:
            m = index.lookup(d).astype(np.float64)
            feats.append(np.concatenate([m.mean(0), m.max(0)]))
            targets.append(teacher.score(q, d))
    return np.stack(feats), np.array(targets)

Xr, yr = raw_features(train_qs)
Xrh, yrh = raw_features(held_qs)
A = Xr.T @ Xr + 0.1 * np.eye(Xr.shape[1])
w = np.linalg.solve(A, Xr.T @ (yr - yr.mean()))
pred = Xrh @ w + yr.mean()
print(f"raw-memory probe (query-blind): held tau {stats.kendalltau(pred, yrh).statistic:.3f}")
