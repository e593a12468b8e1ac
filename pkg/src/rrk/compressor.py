"""Offline document compression into l memory-token embeddings.

A document's tokens (truncated to the 128-token ceiling) are followed by
the reserved memory tokens; the compressor decoder's final-layer hidden
states at the memory positions are the document's embedding matrix.

Pretraining is an autoencoding stand-in: a reconstruction decoder must
re-emit the document's tokens conditioned only on the l embeddings
(teacher-forced next-token prediction), which forces the embeddings to
carry document content. The reconstruction stack is kept at full decoder
depth and trained with random position offsets because it doubles as the
initialization for the reranking decoder: it is the half of the model
that has learned to read memory embeddings. After pretraining the
compressor is frozen; reranker training never touches it.
"""

from __future__ import annotations

import logging

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Document, Vocabulary
from .index import EmbeddingIndex, build_embedding_index
from .model import (
    Checkpoint,
    FastModel,
    ModelConfig,
    init_params,
    padded_causal_mask,
    mask_to_bias,
    params_to_tensors,
    tape_forward,
)
from .training import Adam, TrainingDiverged

log = logging.getLogger(__name__)

# reconstruction runs in the reranker's layout: [pseudo-query][memories]
# [EOS][document], where the pseudo-query is up to this many words sampled
# from the document itself (zero words = pure reconstruction-from-embeddings)
MAX_PREFIX_WORDS = 4
PREFIX_TOKEN_BUDGET = 24


class CompressedDoc:
    """Per-document embedding matrix (l rows of d_model)."""

    __slots__ = ("doc_id", "embeddings")

    def __init__(self, doc_id: str, embeddings: np.ndarray):
        self.doc_id = doc_id
        self.embeddings = embeddings


def init_compressor(config: ModelConfig, seed: int | None = None) -> Checkpoint:
    """Fresh compressor + reconstruction stack (not yet frozen)."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = init_params(config, rng)
    params.update(
        init_params(config, rng, prefix="recon.", with_embeddings=False)
    )
    meta = {"variant": "compressor", "step": 0, "seed": config.seed if seed is None else seed,
            "frozen": False, "config_hash": "0" * 32}
    return Checkpoint(config, params, meta)


def compress(doc: Document, compressor: Checkpoint | FastModel, vocab: Vocabulary) -> CompressedDoc:
    """Embed one document; depends only on its first `doc_token_ceiling` tokens."""
    fm = compressor if isinstance(compressor, FastModel) else FastModel(compressor)
    cfg = fm.config
    tokens = doc.tokens[: cfg.doc_token_ceiling]
    if not tokens:
        raise ValueError(f"document {doc.doc_id!r} is empty; nothing to compress")
    ids = np.array(list(tokens) + vocab.memory_token_ids[: cfg.l_memory], dtype=np.int64)
    x = fm.embed(ids)[None]
    hidden = fm.last_hidden(x, rows=cfg.l_memory)[0]
    return CompressedDoc(doc.doc_id, np.asarray(hidden, dtype=np.float64))


def build_index(
    corpus: list[Document],
    compressor: Checkpoint,
    vocab: Vocabulary,
    config_hash: str | None = None,
    seed: int | None = None,
) -> EmbeddingIndex:
    """Compress every document (single precision storage, sorted doc ids)."""
    if not compressor.meta.get("frozen"):
        raise ValueError("refusing to build an index from an unfrozen compressor")
    fm = FastModel(compressor)
    items = [(d.doc_id, compress(d, fm, vocab).embeddings) for d in corpus]
    return build_embedding_index(
        items,
        config_hash=config_hash or compressor.meta.get("config_hash", "0" * 32),
        seed=compressor.meta.get("seed", 0) if seed is None else seed,
    )


def _batch_ids(token_lists: list[list[int]], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(t) for t in token_lists], dtype=np.int64)
    width = int(lengths.max())
    ids = np.full((len(token_lists), width), pad_id, dtype=np.int64)
    for i, toks in enumerate(token_lists):
        ids[i, : len(toks)] = toks
    return ids, lengths


def pretrain_compressor(
    corpus: list[Document],
    config: ModelConfig,
    steps: int,
    vocab: Vocabulary,
    *,
    batch_size: int = 8,
    learning_rate: float = 1e-3,
    seed: int | None = None,
    config_hash: str = "0" * 32,
) -> tuple[Checkpoint, list[tuple[int, float]]]:
    """Train embeddings by token reconstruction; returns a frozen checkpoint.

    steps=0 freezes the seeded initialization unchanged.
    """
    if not corpus:
        raise ValueError("cannot pretrain on an empty corpus")
    seed = config.seed if seed is None else seed
    checkpoint = init_compressor(config, seed)
    checkpoint.meta["config_hash"] = config_hash
    params = checkpoint.params
    trainable = set(params)
    optim = Adam(trainable, learning_rate=learning_rate)
    rng = np.random.default_rng(seed)
    l_mem = config.l_memory
    mem_ids = np.array(vocab.memory_token_ids[:l_mem], dtype=np.int64)

    doc_tokens = [list(d.tokens[: config.doc_token_ceiling]) for d in corpus]
    doc_tokens = [t for t in doc_tokens if t]
    if not doc_tokens:
        raise ValueError("corpus has no non-empty documents")
    doc_words = [bytes(t).decode("utf-8", errors="ignore").split() for t in doc_tokens]

    trace: list[tuple[int, float]] = []
    order: np.ndarray = rng.permutation(len(doc_tokens))
    cursor = 0
    last_good = {k: v.copy() for k, v in params.items()}

    def pseudo_query(i: int) -> list[int]:
        words = doc_words[i]
        n = int(rng.integers(0, MAX_PREFIX_WORDS + 1))
        if not words or n == 0:
            return []
        chosen = rng.choice(len(words), size=min(n, len(words)), replace=False)
        text = " ".join(words[int(c)] for c in sorted(chosen))
        return list(text.encode("utf-8"))[:PREFIX_TOKEN_BUDGET]

    for step in range(steps):
        if cursor + batch_size > len(order):
            order = rng.permutation(len(doc_tokens))
            cursor = 0
        chosen_docs = order[cursor : cursor + batch_size]
        cursor += batch_size
        batch = [doc_tokens[i] for i in chosen_docs]
        prefixes = [pseudo_query(int(i)) for i in chosen_docs]

        pt = params_to_tensors(params, trainable)
        loss = _reconstruction_loss(pt, config, batch, mem_ids, vocab.pad_id,
                                    vocab.eos_id, prefixes)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise TrainingDiverged(
                f"pretraining loss became non-finite at step {step}",
                last_good=Checkpoint(config, last_good, dict(checkpoint.meta)),
            )
        for k, v in params.items():
            np.copyto(last_good[k], v)
        loss.backward()
        optim.step(params, pt)
        trace.append((step, loss_val))

    checkpoint.meta["frozen"] = True
    checkpoint.meta["step"] = steps
    return checkpoint, trace


def _reconstruction_loss(
    pt: dict[str, Tensor],
    config: ModelConfig,
    batch: list[list[int]],
    mem_ids: np.ndarray,
    pad_id: int,
    eos_id: int,
    prefixes: list[list[int]] | None = None,
) -> Tensor:
    """Cross-entropy of reconstructing doc tokens from their embeddings.

    The reconstruction sequence mirrors the scorer's input layout:
    [pseudo-query][memory embeddings][EOS][teacher-forced document]. The
    EOS position predicts the first document token, so it learns exactly
    the role the score head later reads: attend the prefix and memories,
    report what the memories say.
    """
    B = len(batch)
    l_mem = config.l_memory
    if prefixes is None:
        prefixes = [[] for _ in range(B)]

    # compressor pass: doc tokens ++ memory tokens, per-sample positions
    comp_tokens = [toks + list(mem_ids) for toks in batch]
    ids, lengths = _batch_ids(comp_tokens, pad_id)
    S = ids.shape[1]
    pos_ids = np.where(np.arange(S)[None] < lengths[:, None], np.arange(S)[None], 0)
    valid = (np.arange(S)[None] < lengths[:, None]).astype(np.float64)
    x = ad.mul(
        ad.add(ad.gather(pt["embed.tok"], ids), ad.gather(pt["embed.pos"], pos_ids)),
        valid[:, :, None],
    )
    bias = mask_to_bias(padded_causal_mask(lengths, S))[:, None, :, :]
    hidden = tape_forward(pt, config, x, bias)
    mem_pos = (lengths - l_mem)[:, None] + np.arange(l_mem)[None]
    embeddings = ad.take_positions(hidden, mem_pos)  # (B, l, D) raw final states

    # reconstruction pass in the reranker layout
    rows, target_rows, weight_rows, mem_starts = [], [], [], []
    for toks, j in zip(batch, prefix_lens):
        j = int(j)
        tail = toks[j:]
        rows.append(toks[:j] + [pad_id] * l_mem + [eos_id] + tail[:-1])
        target_rows.append([pad_id] * (j + l_mem) + tail)
        weight_rows.append([0.0] * (j + l_mem) + [1.0] * len(tail))
        mem_starts.append(j)
    ids_r, lengths_r = _batch_ids(rows, pad_id)
    T = ids_r.shape[1]
    targets, _ = _batch_ids(target_rows, pad_id)
    weights = np.zeros((B, T))
    for i, w in enumerate(weight_rows):
        weights[i, : len(w)] = w

    pos_r = np.where(np.arange(T)[None] < lengths_r[:, None], np.arange(T)[None], 0)
    valid_r = (np.arange(T)[None] < lengths_r[:, None]).astype(np.float64)
    mem_pos_r = np.asarray(mem_starts)[:, None] + np.arange(l_mem)[None]
    text_sel = valid_r.copy()
    batch_idx = np.arange(B)[:, None]
    text_sel[batch_idx, mem_pos_r] = 0.0

    x_text = ad.mul(
        ad.add(ad.gather(pt["embed.tok"], ids_r), ad.gather(pt["embed.pos"], pos_r)),
        text_sel[:, :, None],
    )
    x_mem = ad.scatter_positions(
        ad.add(embeddings, ad.gather(pt["embed.pos"], mem_pos_r)), mem_pos_r, T
    )
    xr = ad.add(x_text, x_mem)
    bias_r = mask_to_bias(padded_causal_mask(lengths_r, T))[:, None, :, :]
    hidden_r = tape_forward(pt, config, xr, bias_r, prefix="recon.")

    # tied-embedding logits; only suffix positions carry loss
    normed = ad.layer_norm(hidden_r, pt["recon.final_ln.gain"], pt["recon.final_ln.bias"])
    logits = ad.matmul(normed, ad.swap_last(pt["embed.tok"]))
    return ad.cross_entropy_logits(
        ad.reshape(logits, (B * T, config.vocab_size)),
        targets.reshape(-1),
        weights.reshape(-1),
    )
