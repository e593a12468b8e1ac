"""MSE distillation of teacher scores into the compressed-input scorer.

Pairs come from the first stage: per query, the top-50 candidates are
ranked by the teacher and 8 of them are sampled without replacement with
a seeded RNG. Training updates exactly the declared trainable set (LoRA
adapters plus the score head for the compressed variants; everything for
the textual baseline) and records a per-step loss trace.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bm25 import InvertedIndex, retrieve_topk
from .corpus import Document, Query, truncate_query
from .index import EmbeddingIndex
from .model import (
    Checkpoint,
    ModelConfig,
    init_params,
    mask_to_bias,
    padded_causal_mask,
    params_to_tensors,
    tape_forward,
    tape_readout_scores,
)

log = logging.getLogger(__name__)

mse_loss = ad.mse_loss

TRAINABLE_SETS = ("lora+head", "all")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last finite-loss checkpoint."""

    def __init__(self, message: str, last_good: Checkpoint | None = None):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class TrainingPair:
    query_id: str
    doc_id: str
    teacher_score: float


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2
    batch_size: int = 8
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 7
    trainable: str = "lora+head"

    def validate(self) -> list[str]:
        problems = []
        if self.epochs < 0:
            problems.append(f"train.epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            problems.append(f"train.batch_size must be >= 1, got {self.batch_size}")
        for name in ("learning_rate", "beta1", "beta2", "eps"):
            if getattr(self, name) <= 0:
                problems.append(f"train.{name} must be positive, got {getattr(self, name)}")
        if self.trainable not in TRAINABLE_SETS:
            problems.append(f"train.trainable must be one of {TRAINABLE_SETS}")
        return problems


class Adam:
    """Adam with bias correction; state keyed by parameter name."""

    def __init__(self, trainable: set[str], learning_rate: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.trainable = trainable
        self.lr, self.b1, self.b2, self.eps = learning_rate, beta1, beta2, eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], pt: dict[str, Tensor]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name in self.trainable:
            g = pt[name].grad
            if g is None:
                g = np.zeros_like(params[name])
            m = self._m.setdefault(name, np.zeros_like(params[name]))
            v = self._v.setdefault(name, np.zeros_like(params[name]))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def split_queries(queries: list[Query], holdout_fraction: float = 0.1,
                  seed: int = 7) -> tuple[list[Query], list[Query]]:
    """Deterministic train/held-out split; held-out queries are never sampled."""
    n_held = int(round(len(queries) * holdout_fraction))
    order = np.random.default_rng(seed).permutation(len(queries))
    held_idx = set(int(i) for i in order[:n_held])
    train = [q for i, q in enumerate(queries) if i not in held_idx]
    held = [q for i, q in enumerate(queries) if i in held_idx]
    return train, held


def make_training_pairs(
    queries: list[Query],
    index: InvertedIndex,
    teacher,
    seed: int,
    top_k: int = 50,
    per_query: int = 8,
) -> list[TrainingPair]:
    """Teacher-ranked top-k candidates, 8 sampled per query without replacement."""
    rng = np.random.default_rng(seed)
    pairs: list[TrainingPair] = []
    for query in queries:
        candidates = retrieve_topk(query, index, k=top_k)
        if not candidates:
            log.warning("query %s has no first-stage candidates; skipped", query.query_id)
            continue
        doc_ids = [doc_id for doc_id, _ in candidates]
        scores = teacher.score_batch(query, doc_ids)
        ranked = sorted(zip(doc_ids, scores), key=lambda p: (-p[1], p[0]))
        take = min(per_query, len(ranked))
        if take < per_query:
            log.warning(
                "query %s has only %d candidates (< %d); using all",
                query.query_id, len(ranked), per_query,
            )
        chosen = rng.choice(len(ranked), size=take, replace=False)
        for i in sorted(int(c) for c in chosen):
            doc_id, score = ranked[i]
            pairs.append(TrainingPair(query.query_id, doc_id, float(score)))
    return pairs


def init_student_from_compressor(
    compressor: Checkpoint,
    variant: str,
    seed: int | None = None,
) -> Checkpoint:
    """Reranker decoder initialized from the embedding-consumer stack.

    The pretraining checkpoint holds two stacks: the compressor (writes
    memory embeddings) and the reconstruction decoder (reads them). The
    reranker inherits the reader, which is the half that has learned to
    attend into memory embeddings. Adds a zero-initialized score head;
    compressed variants also get LoRA adapters (random A, zero B) so the
    initial forward equals the base.
    """
    cfg = compressor.config
    seed = cfg.seed if seed is None else seed
    params: dict[str, np.ndarray] = {}
    for name, value in compressor.params.items():
        if name.startswith("embed."):
            params[name] = value.copy()
        elif name.startswith("recon."):
            params[name.removeprefix("recon.")] = value.copy()
    rng = np.random.default_rng(seed + 1)
    if variant.startswith("rrk"):
        fresh = init_params(cfg, rng, with_lora=True, with_head=True)
        for name, value in fresh.items():
            if ".lora_" in name or name.startswith("head."):
                params[name] = value
    else:
        params["head.w"] = np.zeros((1, cfg.d_model))
        params["head.b"] = np.zeros(1)
    meta = {"variant": variant, "step": 0, "seed": seed,
            "config_hash": compressor.meta.get("config_hash", "0" * 32), "frozen": False}
    return Checkpoint(cfg, params, meta)


def trainable_names(params: dict[str, np.ndarray], trainable_set: str) -> set[str]:
    if trainable_set == "all":
        return set(params)
    if trainable_set == "lora+head":
        return {n for n in params if ".lora_" in n or n.startswith("head.")}
    raise ValueError(f"unknown trainable set {trainable_set!r}")


@dataclass
class _RrkBatcher:
    """Builds padded tape inputs for (query tokens, memory rows) samples."""

    config: ModelConfig
    pad_id: int
    eos_id: int

    def build(self, pt, samples: list[tuple[tuple[int, ...], np.ndarray]]):
        cfg = self.config
        B, l = len(samples), cfg.l_memory
        lengths = np.array([len(q) + l + 1 for q, _ in samples], dtype=np.int64)
        S = int(lengths.max())
        ids = np.full((B, S), self.pad_id, dtype=np.int64)
        text_sel = np.zeros((B, S, 1))
        payload = np.zeros((B, S, cfg.d_model))
        for i, (q, mem) in enumerate(samples):
            nq = len(q)
            ids[i, :nq] = q
            ids[i, nq + l] = self.eos_id
            text_sel[i, :nq] = 1.0
            text_sel[i, nq + l] = 1.0
            payload[i, nq : nq + l] = mem
        pos_ids = np.where(np.arange(S)[None] < lengths[:, None], np.arange(S)[None], 0)
        valid = (np.arange(S)[None] < lengths[:, None]).astype(np.float64)[:, :, None]
        tok = ad.mul(ad.gather(pt["embed.tok"], ids), text_sel)
        x = ad.add(ad.mul(ad.add(tok, ad.gather(pt["embed.pos"], pos_ids)), valid),
                   Tensor(payload))
        bias = mask_to_bias(padded_causal_mask(lengths, S))[:, None, :, :]
        return x, bias, lengths - 1


@dataclass
class _TextualBatcher:
    """Builds padded tape inputs for (query ++ SEP ++ doc ++ EOS) samples."""

    config: ModelConfig
    pad_id: int
    eos_id: int
    sep_id: int
    max_doc_tokens: int = 256

    def build(self, pt, samples: list[tuple[tuple[int, ...], tuple[int, ...]]]):
        cfg = self.config
        rows = []
        for q, doc in samples:
            row = list(q) + [self.sep_id] + list(doc[: self.max_doc_tokens]) + [self.eos_id]
            if len(row) > cfg.max_seq_len:
                raise ValueError(
                    f"textual input length {len(row)} exceeds max_seq_len {cfg.max_seq_len}"
                )
            rows.append(row)
        lengths = np.array([len(r) for r in rows], dtype=np.int64)
        S = int(lengths.max())
        ids = np.full((len(rows), S), self.pad_id, dtype=np.int64)
        for i, row in enumerate(rows):
            ids[i, : len(row)] = row
        pos_ids = np.where(np.arange(S)[None] < lengths[:, None], np.arange(S)[None], 0)
        valid = (np.arange(S)[None] < lengths[:, None]).astype(np.float64)[:, :, None]
        x = ad.mul(ad.add(ad.gather(pt["embed.tok"], ids), ad.gather(pt["embed.pos"], pos_ids)),
                   valid)
        bias = mask_to_bias(padded_causal_mask(lengths, S))[:, None, :, :]
        return x, bias, lengths - 1


def train(
    pairs: list[TrainingPair],
    checkpoint: Checkpoint,
    cfg: TrainConfig,
    queries: dict[str, Query],
    vocab,
    *,
    index: EmbeddingIndex | None = None,
    corpus: dict[str, Document] | None = None,
    max_doc_tokens: int = 256,
) -> tuple[Checkpoint, list[tuple[int, float]]]:
    """Distill teacher scores into the student; returns (checkpoint, trace).

    The input checkpoint is never mutated. Raises TrainingDiverged (with the
    last finite-loss checkpoint attached) if the loss goes non-finite.
    """
    problems = cfg.validate()
    if problems:
        raise ValueError("; ".join(problems))
    if not pairs:
        raise ValueError("no training pairs")
    variant = checkpoint.meta.get("variant", "rrk-full")
    if variant.startswith("rrk") and index is None:
        raise ValueError("compressed-variant training needs an embedding index")
    if variant == "textual" and corpus is None:
        raise ValueError("textual training needs the document corpus")

    work = checkpoint.clone()
    params = work.params
    trainable = trainable_names(params, cfg.trainable)
    optim = Adam(trainable, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    model_cfg = work.config

    qtokens = {
        qid: truncate_query(q, model_cfg.query_budget).tokens for qid, q in queries.items()
    }
    if variant.startswith("rrk"):
        batcher = _RrkBatcher(model_cfg, vocab.pad_id, vocab.eos_id)

        def sample_of(pair: TrainingPair):
            return qtokens[pair.query_id], index.lookup(pair.doc_id).astype(np.float64)
    else:
        batcher = _TextualBatcher(model_cfg, vocab.pad_id, vocab.eos_id, vocab.sep_id,
                                  max_doc_tokens)

        def sample_of(pair: TrainingPair):
            return qtokens[pair.query_id], corpus[pair.doc_id].tokens

    trace: list[tuple[int, float]] = []
    last_good = {k: v.copy() for k, v in params.items()}
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), cfg.batch_size):
            batch = [pairs[int(i)] for i in order[start : start + cfg.batch_size]]
            targets = np.array([p.teacher_score for p in batch])
            pt = params_to_tensors(params, trainable)
            x, bias, eos_pos = batcher.build(pt, [sample_of(p) for p in batch])
            hidden = tape_forward(pt, model_cfg, x, bias)
            scores = tape_readout_scores(pt, model_cfg, hidden, eos_pos)
            loss = mse_loss(scores, Tensor(targets))
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingDiverged(
                    f"training loss became non-finite at step {step}",
                    last_good=Checkpoint(model_cfg, last_good, dict(work.meta)),
                )
            for k in trainable:
                np.copyto(last_good[k], params[k])
            loss.backward()
            optim.step(params, pt)
            trace.append((step, loss_val))
            step += 1

    work.meta["step"] = step
    work.meta["trainable"] = cfg.trainable
    work.meta["train_seed"] = cfg.seed
    return work, trace


def epoch_means(trace: list[tuple[int, float]], epochs: int) -> list[float]:
    """Mean per-step loss of each epoch (trace split evenly by epoch)."""
    steps = len(trace)
    per_epoch = steps // epochs
    return [
        float(np.mean([loss for _, loss in trace[e * per_epoch : (e + 1) * per_epoch]]))
        for e in range(epochs)
    ]


def smoothed_trace(trace: list[tuple[int, float]], window: int = 10) -> list[float]:
    """Non-overlapping window means over the per-step losses."""
    losses = [loss for _, loss in trace]
    return [
        float(np.mean(losses[i : i + window])) for i in range(0, len(losses) - window + 1, window)
    ]
