"""Decoder-style transformer: config, parameters, forward passes, LoRA.

Two forward implementations share the same kernels and produce the same
math:

- a tape forward over autodiff Tensors, used for training (float64,
  keeps activations for backward, supports padded batches);
- a tape-free inference path used for scoring and the latency bench
  (configurable dtype, block-causal attention so masked columns are never
  materialized, and an optional last-layer shortcut that computes only the
  rows a readout needs).

Weights are stored (d_out, d_in); the forward multiplies by the
transpose. LoRA adapters live beside their base weight as `<name>.lora_a`
(r x d_in) and `<name>.lora_b` (d_out x r); the effective weight is
W + (alpha/r) * B @ A.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, k_gelu, k_layernorm, k_softmax

MASK_BIAS = -1e30  # additive bias for forbidden attention logits
LORA_TARGETS = ("wq", "wv")
_BLOCK_ROWS = 128
_BLOCK_THRESHOLD = 256


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 1056
    vocab_size: int = 267
    l_memory: int = 8
    query_budget: int = 23
    doc_token_ceiling: int = 128
    lora_rank: int = 8
    lora_alpha: float = 16.0
    seed: int = 0

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def rerank_input_len(self) -> int:
        # query + memory embeddings + EOS
        return self.query_budget + self.l_memory + 1

    def validate(self) -> list[str]:
        problems = []
        if self.n_layers < 1:
            problems.append(f"n_layers must be >= 1, got {self.n_layers}")
        if self.n_heads < 1 or self.d_model % max(self.n_heads, 1) != 0:
            problems.append(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.l_memory < 1:
            problems.append(f"l_memory must be >= 1, got {self.l_memory}")
        if self.query_budget < 1:
            problems.append(f"query_budget must be >= 1, got {self.query_budget}")
        if self.lora_rank < 1:
            problems.append(f"lora_rank must be >= 1, got {self.lora_rank}")
        if self.rerank_input_len > self.max_seq_len:
            problems.append("rerank input length exceeds max_seq_len")
        if self.doc_token_ceiling + self.l_memory > self.max_seq_len:
            problems.append("compressor input length exceeds max_seq_len")
        return problems


@dataclass
class Checkpoint:
    """Model parameters plus provenance metadata.

    Treated as immutable during inference; training owns one instance.
    meta keys in use: variant, step, seed, config_hash, frozen.
    """

    config: ModelConfig
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def clone(self) -> "Checkpoint":
        return Checkpoint(self.config, {k: v.copy() for k, v in self.params.items()},
                          dict(self.meta))


# ---------------------------------------------------------------------------
# parameter initialization


def init_params(
    config: ModelConfig,
    rng: np.random.Generator,
    *,
    with_lora: bool = False,
    with_head: bool = False,
    with_embeddings: bool = True,
    prefix: str = "",
    n_layers: int | None = None,
) -> dict[str, np.ndarray]:
    """Seeded parameter tensors in a fixed draw order (float64)."""
    d, ff = config.d_model, config.d_ff
    n_layers = config.n_layers if n_layers is None else n_layers
    resid_scale = 1.0 / np.sqrt(2.0 * n_layers)

    def linear(d_out, d_in, scale=1.0):
        std = np.sqrt(2.0 / (d_in + d_out))
        return rng.normal(0.0, std, size=(d_out, d_in)) * scale

    params: dict[str, np.ndarray] = {}
    if with_embeddings:
        params["embed.tok"] = rng.normal(0.0, 0.02, size=(config.vocab_size, d))
        params["embed.pos"] = rng.normal(0.0, 0.02, size=(config.max_seq_len, d))
    for i in range(n_layers):
        base = f"{prefix}layers.{i}."
        params[base + "ln1.gain"] = np.ones(d)
        params[base + "ln1.bias"] = np.zeros(d)
        for w in ("wq", "wk", "wv"):
            params[base + f"attn.{w}"] = linear(d, d)
        params[base + "attn.wo"] = linear(d, d, resid_scale)
        params[base + "ln2.gain"] = np.ones(d)
        params[base + "ln2.bias"] = np.zeros(d)
        params[base + "ffn.w1"] = linear(ff, d)
        params[base + "ffn.b1"] = np.zeros(ff)
        params[base + "ffn.w2"] = linear(d, ff, resid_scale)
        params[base + "ffn.b2"] = np.zeros(d)
        if with_lora:
            r = config.lora_rank
            bound = 1.0 / np.sqrt(d)
            for w in LORA_TARGETS:
                params[base + f"attn.{w}.lora_a"] = rng.uniform(-bound, bound, size=(r, d))
                params[base + f"attn.{w}.lora_b"] = np.zeros((d, r))
    params[f"{prefix}final_ln.gain"] = np.ones(d)
    params[f"{prefix}final_ln.bias"] = np.zeros(d)
    if with_head:
        params["head.w"] = np.zeros((1, d))
        params["head.b"] = np.zeros(1)
    return params


def apply_lora(w: np.ndarray, a: np.ndarray, b: np.ndarray, alpha: float, r: int) -> np.ndarray:
    """Effective weight W + (alpha/r) * B @ A."""
    if a.shape[0] != r or b.shape[1] != r:
        raise ValueError(f"adapter rank mismatch: A {a.shape}, B {b.shape}, r={r}")
    if b.shape[0] != w.shape[0] or a.shape[1] != w.shape[1]:
        raise ValueError(f"adapter shapes {b.shape}x{a.shape} do not fit weight {w.shape}")
    return w + (alpha / r) * (b @ a)


def truncate_layers(checkpoint: Checkpoint, k: int) -> Checkpoint:
    """Keep layers 0..k-1 plus the original final norm and head."""
    n = checkpoint.config.n_layers
    if not 1 <= k <= n:
        raise ValueError(f"cannot truncate to {k} layers, model has {n}")
    keep: dict[str, np.ndarray] = {}
    for name, value in checkpoint.params.items():
        if name.startswith("layers."):
            layer = int(name.split(".")[1])
            if layer >= k:
                continue
        keep[name] = value
    meta = dict(checkpoint.meta)
    meta["truncated_from"] = n
    return Checkpoint(replace(checkpoint.config, n_layers=k), keep, meta)


# ---------------------------------------------------------------------------
# masks


def causal_mask(seq: int) -> np.ndarray:
    """Boolean (seq, seq), True where position i may attend to j (j <= i)."""
    return np.tril(np.ones((seq, seq), dtype=bool))


def padded_causal_mask(lengths: np.ndarray, seq: int) -> np.ndarray:
    """(B, seq, seq) causal mask where padding attends nowhere and is unattended."""
    lengths = np.asarray(lengths)
    valid = np.arange(seq)[None, :] < lengths[:, None]  # (B, S)
    mask = causal_mask(seq)[None] & valid[:, None, :] & valid[:, :, None]
    return mask


def mask_to_bias(mask: np.ndarray, dtype=np.float64) -> np.ndarray:
    scalar = np.dtype(dtype).type
    return np.where(mask, scalar(0.0), scalar(MASK_BIAS))


_causal_bias_cache: dict[tuple[int, str], np.ndarray] = {}


def _cached_causal_bias(seq: int, dtype) -> np.ndarray:
    key = (seq, np.dtype(dtype).name)
    bias = _causal_bias_cache.get(key)
    if bias is None:
        bias = mask_to_bias(causal_mask(seq), dtype)
        if len(_causal_bias_cache) > 16:
            _causal_bias_cache.clear()
        _causal_bias_cache[key] = bias
    return bias


# ---------------------------------------------------------------------------
# spec-level attention op (reference implementation, used directly in tests)


def attend(q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention over (heads, seq, d_head) arrays."""
    if q.shape != k.shape or q.shape != v.shape:
        raise ValueError(f"attend shape mismatch: {q.shape}, {k.shape}, {v.shape}")
    d_head = q.shape[-1]
    logits = q @ np.swapaxes(k, -1, -2) / np.sqrt(d_head)
    logits = logits + mask_to_bias(mask, logits.dtype)
    return k_softmax(logits) @ v


# ---------------------------------------------------------------------------
# tape forward (training)


def params_to_tensors(params: dict[str, np.ndarray], trainable: set[str]) -> dict[str, Tensor]:
    return {
        name: Tensor(value, requires_grad=name in trainable)
        for name, value in params.items()
    }


def _effective_weight_t(pt: dict[str, Tensor], name: str, config: ModelConfig) -> Tensor:
    w = pt[name]
    a, b = pt.get(name + ".lora_a"), pt.get(name + ".lora_b")
    if a is None:
        return w
    return ad.add(w, ad.scale(ad.matmul(b, a), config.lora_alpha / config.lora_rank))


def tape_embed(
    pt: dict[str, Tensor],
    ids: np.ndarray,
    pos_ids: np.ndarray,
    valid: np.ndarray,
) -> Tensor:
    """Token + position embeddings for (B, S) id matrices, zeroed at padding."""
    x = ad.add(ad.gather(pt["embed.tok"], ids), ad.gather(pt["embed.pos"], pos_ids))
    return ad.mul(x, valid[:, :, None].astype(np.float64))


def tape_forward(
    pt: dict[str, Tensor],
    config: ModelConfig,
    x: Tensor,
    bias: np.ndarray,
    prefix: str = "",
    n_layers: int | None = None,
) -> Tensor:
    """Run the layer stack on (B, S, D); returns the pre-final-norm states."""
    B, S, D = x.shape
    H, dh = config.n_heads, config.d_head
    n_layers = config.n_layers if n_layers is None else n_layers
    bias_t = Tensor(bias)
    inv_sqrt_dh = 1.0 / np.sqrt(dh)

    for i in range(n_layers):
        base = f"{prefix}layers.{i}."
        h = ad.layer_norm(x, pt[base + "ln1.gain"], pt[base + "ln1.bias"])
        wq = _effective_weight_t(pt, base + "attn.wq", config)
        wv = _effective_weight_t(pt, base + "attn.wv", config)

        def heads(t: Tensor) -> Tensor:
            return ad.transpose(ad.reshape(t, (B, S, H, dh)), (0, 2, 1, 3))

        q = heads(ad.matmul(h, ad.swap_last(wq)))
        k = heads(ad.matmul(h, ad.swap_last(pt[base + "attn.wk"])))
        v = heads(ad.matmul(h, ad.swap_last(wv)))
        logits = ad.add(ad.scale(ad.matmul(q, ad.swap_last(k)), inv_sqrt_dh), bias_t)
        weights = ad.row_softmax(logits)
        o = ad.reshape(ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3)), (B, S, D))
        x = ad.add(x, ad.matmul(o, ad.swap_last(pt[base + "attn.wo"])))

        h2 = ad.layer_norm(x, pt[base + "ln2.gain"], pt[base + "ln2.bias"])
        f = ad.gelu(ad.add(ad.matmul(h2, ad.swap_last(pt[base + "ffn.w1"])), pt[base + "ffn.b1"]))
        x = ad.add(x, ad.add(ad.matmul(f, ad.swap_last(pt[base + "ffn.w2"])), pt[base + "ffn.b2"]))
    return x


def tape_readout_scores(pt: dict[str, Tensor], config: ModelConfig, hidden: Tensor,
                        eos_pos: np.ndarray) -> Tensor:
    """Scalar score per sample: linear head on the final-norm EOS state."""
    eos = ad.take_positions(hidden, eos_pos[:, None])  # (B, 1, D)
    normed = ad.layer_norm(eos, pt["final_ln.gain"], pt["final_ln.bias"])
    scores = ad.add(ad.matmul(normed, ad.swap_last(pt["head.w"])), pt["head.b"])
    return ad.reshape(scores, (hidden.shape[0],))


# ---------------------------------------------------------------------------
# inference fast path


class FastLayer:
    __slots__ = ("g1", "b1", "wq", "wk", "wv", "wo", "g2", "b2", "w1", "bf1", "w2", "bf2")

    def __init__(self, params, base, config, dtype):
        def eff(name):
            w = params[base + f"attn.{name}"]
            a, b = params.get(base + f"attn.{name}.lora_a"), params.get(base + f"attn.{name}.lora_b")
            if a is not None:
                w = apply_lora(w, a, b, config.lora_alpha, config.lora_rank)
            return np.ascontiguousarray(w.T, dtype=dtype)

        self.g1 = params[base + "ln1.gain"].astype(dtype)
        self.b1 = params[base + "ln1.bias"].astype(dtype)
        self.wq, self.wk, self.wv = eff("wq"), eff("wk"), eff("wv")
        self.wo = np.ascontiguousarray(params[base + "attn.wo"].T, dtype=dtype)
        self.g2 = params[base + "ln2.gain"].astype(dtype)
        self.b2 = params[base + "ln2.bias"].astype(dtype)
        self.w1 = np.ascontiguousarray(params[base + "ffn.w1"].T, dtype=dtype)
        self.bf1 = params[base + "ffn.b1"].astype(dtype)
        self.w2 = np.ascontiguousarray(params[base + "ffn.w2"].T, dtype=dtype)
        self.bf2 = params[base + "ffn.b2"].astype(dtype)


class FastModel:
    """Merged-weight, tape-free evaluator for a checkpoint."""

    def __init__(self, checkpoint: Checkpoint, dtype=np.float64, prefix: str = ""):
        cfg = checkpoint.config
        self.config = cfg
        self.dtype = np.dtype(dtype).type
        p = checkpoint.params
        self.tok = p["embed.tok"].astype(dtype)
        self.pos = p["embed.pos"].astype(dtype)
        self.layers = [FastLayer(p, f"{prefix}layers.{i}.", cfg, dtype) for i in range(cfg.n_layers)]
        self.final_g = p[f"{prefix}final_ln.gain"].astype(dtype)
        self.final_b = p[f"{prefix}final_ln.bias"].astype(dtype)
        self.head_w = p["head.w"].astype(dtype) if "head.w" in p else None
        self.head_b = p["head.b"].astype(dtype) if "head.b" in p else None

    # -- building blocks ---------------------------------------------------

    def embed(self, ids: np.ndarray) -> np.ndarray:
        """Token + position embeddings for unpadded (B, S) or (S,) ids."""
        ids = np.asarray(ids)
        seq = ids.shape[-1]
        if seq > self.config.max_seq_len:
            raise ValueError(f"sequence length {seq} exceeds max_seq_len {self.config.max_seq_len}")
        return self.tok[ids] + self.pos[:seq]

    def _mlp(self, x, layer):
        h, _, _ = k_layernorm(x, layer.g2, layer.b2)
        f = k_gelu(h @ layer.w1 + layer.bf1)
        y = f @ layer.w2
        y += layer.bf2
        return x + y

    def _attn_full(self, x, layer, bias):
        B_lead = x.shape[:-2]
        S, D = x.shape[-2], x.shape[-1]
        H, dh = self.config.n_heads, self.config.d_head
        h, _, _ = k_layernorm(x, layer.g1, layer.b1)
        q = (h @ layer.wq).reshape(*B_lead, S, H, dh).swapaxes(-2, -3)
        k = (h @ layer.wk).reshape(*B_lead, S, H, dh).swapaxes(-2, -3)
        v = (h @ layer.wv).reshape(*B_lead, S, H, dh).swapaxes(-2, -3)
        logits = q @ k.swapaxes(-1, -2)
        logits *= self.dtype(1.0 / np.sqrt(dh))
        logits += bias
        w = k_softmax(logits)
        o = (w @ v).swapaxes(-2, -3).reshape(*B_lead, S, D)
        return x + o @ layer.wo

    def _attn_blocked(self, x, layer, bias):
        """Causal attention materializing only visible key columns per row block."""
        B, S, D = x.shape
        H, dh = self.config.n_heads, self.config.d_head
        h, _, _ = k_layernorm(x, layer.g1, layer.b1)
        q = (h @ layer.wq).reshape(B, S, H, dh).swapaxes(1, 2)
        k = (h @ layer.wk).reshape(B, S, H, dh).swapaxes(1, 2)
        v = (h @ layer.wv).reshape(B, S, H, dh).swapaxes(1, 2)
        scale = self.dtype(1.0 / np.sqrt(dh))
        o = np.empty_like(q)
        for r0 in range(0, S, _BLOCK_ROWS):
            r1 = min(r0 + _BLOCK_ROWS, S)
            logits = q[:, :, r0:r1] @ k[:, :, :r1].swapaxes(-1, -2)
            logits *= scale
            logits += bias[r0:r1, :r1]
            w = k_softmax(logits)
            o[:, :, r0:r1] = w @ v[:, :, :r1]
        return x + o.swapaxes(1, 2).reshape(B, S, D) @ layer.wo

    @staticmethod
    def _rowmm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """(B, D) @ (D, E) via multiply-reduce.

        BLAS picks bitwise-different kernels for M == 1 and N == 1 GEMMs, so
        single-row projections and the scalar head go through this reduction
        to keep scores independent of batch size.
        """
        return (x[:, :, None] * w[None]).sum(axis=1)

    def _attn_last_row(self, x, layer):
        """Attention output for the final row only (it sees every position)."""
        B, S, D = x.shape
        H, dh = self.config.n_heads, self.config.d_head
        h, _, _ = k_layernorm(x, layer.g1, layer.b1)
        q = self._rowmm(h[:, -1], layer.wq).reshape(B, 1, H, dh).swapaxes(1, 2)
        k = (h @ layer.wk).reshape(B, S, H, dh).swapaxes(1, 2)
        v = (h @ layer.wv).reshape(B, S, H, dh).swapaxes(1, 2)
        logits = q @ k.swapaxes(-1, -2)
        logits *= self.dtype(1.0 / np.sqrt(dh))
        w = k_softmax(logits)
        o = (w @ v).swapaxes(1, 2).reshape(B, D)
        return x[:, -1] + self._rowmm(o, layer.wo)

    def _mlp_row(self, x_row, layer):
        h, _, _ = k_layernorm(x_row, layer.g2, layer.b2)
        f = k_gelu(self._rowmm(h, layer.w1) + layer.bf1)
        return x_row + self._rowmm(f, layer.w2) + layer.bf2

    # -- entry points --------------------------------------------------------

    def last_hidden(self, x: np.ndarray, rows: int | None = None) -> np.ndarray:
        """Final-layer hidden states for unpadded causal (B, S, D) inputs.

        rows=None returns all positions; rows=k returns only the last k rows
        (valid because causal attention makes trailing rows depend on the
        whole prefix, which is still computed through layer n-1).
        """
        x = np.ascontiguousarray(x, dtype=self.dtype)
        B, S, D = x.shape
        bias = _cached_causal_bias(S, self.dtype)
        layers = self.layers
        last_full = len(layers) if rows is None else len(layers) - 1
        for layer in layers[:last_full]:
            if S > _BLOCK_THRESHOLD:
                x = self._attn_blocked(x, layer, bias)
            else:
                x = self._attn_full(x, layer, bias)
            x = self._mlp(x, layer)
        if rows is not None:
            layer = layers[-1]
            if rows == 1:
                row = self._attn_last_row(x, layer)
                return self._mlp_row(row, layer)[:, None]
            if S > _BLOCK_THRESHOLD:
                x = self._attn_blocked(x, layer, bias)
            else:
                x = self._attn_full(x, layer, bias)
            x = self._mlp(x, layer)[:, -rows:]
        return x

    def scores(self, x: np.ndarray) -> np.ndarray:
        """Head score at the last position of each unpadded (B, S, D) input."""
        if self.head_w is None:
            raise ValueError("checkpoint has no score head")
        h = self.last_hidden(x, rows=1)[:, 0]
        normed, _, _ = k_layernorm(h, self.final_g, self.final_b)
        return (normed * self.head_w[0]).sum(axis=-1) + self.head_b[0]

    def hidden_states(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """All layer activations for one (S, D) input under an explicit mask.

        Layer 0 is the input after positional addition (the caller passes
        raw input embeddings without positions).
        """
        S, D = x.shape
        if S > self.config.max_seq_len:
            raise ValueError(f"sequence length {S} exceeds max_seq_len {self.config.max_seq_len}")
        if mask.shape != (S, S):
            raise ValueError(f"mask shape {mask.shape} does not match sequence {S}")
        bias = mask_to_bias(mask, self.dtype)
        x = (x.astype(self.dtype) + self.pos[:S])[None]
        states = [x[0].copy()]
        for layer in self.layers:
            x = self._attn_full(x, layer, bias)
            x = self._mlp(x, layer)
            states.append(x[0].copy())
        return np.stack(states)


def decoder_forward(
    config: ModelConfig,
    checkpoint: Checkpoint,
    input_embeddings: np.ndarray,
    mask: np.ndarray,
) -> np.ndarray:
    """All layer activations (n_layers+1, seq, d_model) for one sequence."""
    del config  # carried by the checkpoint
    return FastModel(checkpoint).hidden_states(np.asarray(input_embeddings, dtype=np.float64), mask)
