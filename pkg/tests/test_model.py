"""Transformer core: masking, causality, LoRA, depth truncation."""

import numpy as np
import pytest

from gradcheck import assert_matches_fd
from rrk import autodiff as ad
from rrk.autodiff import Tensor, k_softmax
from rrk.model import (
    Checkpoint,
    FastModel,
    ModelConfig,
    apply_lora,
    attend,
    causal_mask,
    decoder_forward,
    init_params,
    mask_to_bias,
    padded_causal_mask,
    params_to_tensors,
    tape_forward,
    tape_readout_scores,
    truncate_layers,
)

TINY = ModelConfig(n_layers=3, d_model=16, n_heads=4, d_ff=32, max_seq_len=48,
                   vocab_size=32, l_memory=4, query_budget=7, lora_rank=4, seed=5)


def make_checkpoint(config=TINY, with_lora=False, with_head=True, seed=None) -> Checkpoint:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = init_params(config, rng, with_lora=with_lora, with_head=with_head)
    return Checkpoint(config, params, {"variant": "test"})


def random_inputs(seq, config=TINY, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((seq, config.d_model)) * 0.1


class TestAttend:
    def test_single_position_returns_v(self):
        rng = np.random.default_rng(1)
        q, k, v = (rng.standard_normal((2, 1, 4)) for _ in range(3))
        out = attend(q, k, v, causal_mask(1))
        np.testing.assert_array_equal(out, v)

    def test_identical_keys_average_visible_values(self):
        rng = np.random.default_rng(2)
        q = rng.standard_normal((1, 3, 4))
        k = np.repeat(rng.standard_normal((1, 1, 4)), 3, axis=1)
        v = rng.standard_normal((1, 3, 4))
        out = attend(q, k, v, causal_mask(3))
        np.testing.assert_allclose(out[0, 2], v[0].mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(out[0, 1], v[0, :2].mean(axis=0), rtol=1e-12)

    def test_against_per_position_loop_oracle(self):
        rng = np.random.default_rng(3)
        H, S, dh = 2, 9, 4
        q, k, v = (rng.standard_normal((H, S, dh)) for _ in range(3))
        mask = causal_mask(S)
        out = attend(q, k, v, mask)
        for h in range(H):
            for i in range(S):
                logits = np.array([q[h, i] @ k[h, j] / np.sqrt(dh) for j in range(i + 1)])
                w = np.exp(logits - logits.max())
                w /= w.sum()
                oracle = sum(w[j] * v[h, j] for j in range(i + 1))
                np.testing.assert_allclose(out[h, i], oracle, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            attend(np.zeros((1, 2, 3)), np.zeros((1, 2, 3)), np.zeros((1, 3, 3)),
                   causal_mask(2))


class TestDecoderForward:
    def test_returns_all_layer_activations(self):
        ckpt = make_checkpoint()
        x = random_inputs(6)
        states = decoder_forward(TINY, ckpt, x, causal_mask(6))
        assert states.shape == (TINY.n_layers + 1, 6, TINY.d_model)
        np.testing.assert_array_equal(states[0], x + ckpt.params["embed.pos"][:6])

    def test_seq_one_no_nan(self):
        ckpt = make_checkpoint()
        states = decoder_forward(TINY, ckpt, random_inputs(1), causal_mask(1))
        assert np.isfinite(states).all()

    def test_seq_overflow_rejected(self):
        ckpt = make_checkpoint()
        with pytest.raises(ValueError, match="max_seq_len"):
            decoder_forward(TINY, ckpt, random_inputs(TINY.max_seq_len + 1),
                            causal_mask(TINY.max_seq_len + 1))

    def test_padded_position_cannot_influence_unmasked_outputs(self):
        """Bit-identical outputs when only a fully masked position changes."""
        ckpt = make_checkpoint()
        seq, pad_pos = 7, 6
        mask = padded_causal_mask(np.array([pad_pos]), seq)[0]
        x = random_inputs(seq)
        perturbed = x.copy()
        perturbed[pad_pos] += 13.7
        a = decoder_forward(TINY, ckpt, x, mask)
        b = decoder_forward(TINY, ckpt, perturbed, mask)
        np.testing.assert_array_equal(a[:, :pad_pos, :], b[:, :pad_pos, :])

    def test_causality_exact_under_perturbation(self):
        """Perturbing position j leaves every earlier position bit-identical."""
        ckpt = make_checkpoint()
        seq = 10
        x = random_inputs(seq)
        base = decoder_forward(TINY, ckpt, x, causal_mask(seq))
        rng = np.random.default_rng(8)
        for j in (3, 7, 9):
            perturbed = x.copy()
            perturbed[j] += rng.standard_normal(TINY.d_model)
            out = decoder_forward(TINY, ckpt, perturbed, causal_mask(seq))
            np.testing.assert_array_equal(base[:, :j, :], out[:, :j, :])
            assert not np.array_equal(base[-1, j], out[-1, j])

    def test_no_nan_inf_on_finite_input(self):
        ckpt = make_checkpoint()
        x = random_inputs(12) * 50
        states = decoder_forward(TINY, ckpt, x, causal_mask(12))
        assert np.isfinite(states).all()


class TestLoRA:
    def test_zero_b_is_identity(self):
        rng = np.random.default_rng(9)
        w = rng.standard_normal((6, 6))
        a = rng.standard_normal((2, 6))
        out = apply_lora(w, a, np.zeros((6, 2)), alpha=16, r=2)
        np.testing.assert_array_equal(out, w)

    def test_full_rank_matches_dense_delta_oracle(self):
        rng = np.random.default_rng(10)
        d = 5
        w = rng.standard_normal((d, d))
        a, b = rng.standard_normal((d, d)), rng.standard_normal((d, d))
        out = apply_lora(w, a, b, alpha=float(d), r=d)
        np.testing.assert_allclose(out, w + b @ a, rtol=1e-12)

    def test_rank_mismatch_rejected(self):
        with pytest.raises(ValueError, match="rank"):
            apply_lora(np.zeros((4, 4)), np.zeros((2, 4)), np.zeros((4, 3)), 16, 2)

    def test_forward_bit_identical_with_untrained_adapters(self):
        cfg = TINY
        base = make_checkpoint(cfg, with_lora=False)
        adapted = Checkpoint(cfg, dict(base.params), dict(base.meta))
        rng = np.random.default_rng(11)
        extra = init_params(cfg, rng, with_lora=True)
        adapted.params = {**base.params,
                          **{k: v for k, v in extra.items() if ".lora_" in k}}
        x = random_inputs(8)[None]
        fa = FastModel(base).last_hidden(x)
        fb = FastModel(adapted).last_hidden(x)
        np.testing.assert_array_equal(fa, fb)

    def test_frozen_base_gets_no_gradient(self):
        cfg = TINY
        ckpt = make_checkpoint(cfg, with_lora=True)
        rng = np.random.default_rng(12)
        for name in ckpt.params:
            # zero-init B and head would zero every upstream gradient
            if name.endswith(".lora_b") or name.startswith("head."):
                ckpt.params[name] = rng.standard_normal(ckpt.params[name].shape) * 0.1
        trainable = {n for n in ckpt.params if ".lora_" in n or n.startswith("head.")}
        pt = params_to_tensors(ckpt.params, trainable)
        x = Tensor(random_inputs(6)[None])
        bias = mask_to_bias(causal_mask(6))[None, None]
        hidden = tape_forward(pt, cfg, x, bias)
        scores = tape_readout_scores(pt, cfg, hidden, np.array([5]))
        ad.mse_loss(scores, Tensor(np.array([1.0]))).backward()
        assert pt["layers.0.attn.wq"].grad is None  # frozen base: identically zero
        assert pt["layers.0.attn.wq.lora_a"].grad is not None
        assert np.abs(pt["layers.0.attn.wq.lora_a"].grad).max() > 0


class TestTruncateLayers:
    def test_identity_at_full_depth(self):
        ckpt = make_checkpoint()
        x = random_inputs(9)[None]
        full = FastModel(ckpt).last_hidden(x)
        same = FastModel(truncate_layers(ckpt, TINY.n_layers)).last_hidden(x)
        np.testing.assert_array_equal(full, same)

    def test_keeps_final_norm_and_head(self):
        ckpt = make_checkpoint()
        half = truncate_layers(ckpt, 1)
        assert half.config.n_layers == 1
        assert "final_ln.gain" in half.params and "head.w" in half.params
        assert "layers.1.attn.wq" not in half.params
        np.testing.assert_array_equal(half.params["final_ln.gain"],
                                      ckpt.params["final_ln.gain"])

    def test_out_of_range_rejected(self):
        ckpt = make_checkpoint()
        for bad in (0, TINY.n_layers + 1):
            with pytest.raises(ValueError, match="truncate"):
                truncate_layers(ckpt, bad)


class TestFastPathAgreesWithTape:
    def test_hidden_states_match(self):
        cfg = TINY
        ckpt = make_checkpoint(cfg, with_lora=True)
        rng = np.random.default_rng(13)
        for name in ckpt.params:
            if name.endswith(".lora_b"):
                ckpt.params[name] = rng.standard_normal(ckpt.params[name].shape) * 0.05
        x = random_inputs(14, cfg, seed=3)
        pt = params_to_tensors(ckpt.params, set())
        bias = mask_to_bias(causal_mask(14))[None, None]
        taped = tape_forward(pt, cfg, Tensor(x[None]), bias).data[0]
        fast = FastModel(ckpt).last_hidden(x[None].astype(np.float64))[0]
        np.testing.assert_allclose(taped, fast, atol=1e-12)

    def test_blocked_attention_matches_full(self):
        """Above the block threshold the chunked path must agree with naive."""
        cfg = ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, max_seq_len=600,
                          vocab_size=32, seed=1)
        rng = np.random.default_rng(14)
        ckpt = Checkpoint(cfg, init_params(cfg, rng, with_head=True), {})
        fm = FastModel(ckpt)
        x = rng.standard_normal((2, 300, 16)) * 0.1  # > block threshold of 256
        blocked = fm.last_hidden(x)
        layer = fm.layers[0]
        naive = x.copy()
        for lay in fm.layers:
            naive = fm._attn_full(naive, lay, mask_to_bias(causal_mask(300)))
            naive = fm._mlp(naive, lay)
        del layer
        np.testing.assert_allclose(blocked, naive, atol=1e-12)

    def test_last_row_shortcut_matches_full(self):
        ckpt = make_checkpoint()
        fm = FastModel(ckpt)
        x = random_inputs(11)[None]
        full = fm.last_hidden(x)[:, -1]
        short = fm.last_hidden(x, rows=1)[:, 0]
        np.testing.assert_allclose(short, full, atol=1e-12)

    def test_scores_batch_invariant_bitwise(self):
        ckpt = make_checkpoint()
        fm = FastModel(ckpt)
        rng = np.random.default_rng(15)
        x = rng.standard_normal((8, 10, TINY.d_model)) * 0.1
        all_at_once = fm.scores(x)
        one_by_one = np.concatenate([fm.scores(x[i : i + 1]) for i in range(8)])
        np.testing.assert_array_equal(all_at_once, one_by_one)


class TestFullModelGradient:
    def test_every_parameter_matches_finite_differences(self):
        """End-to-end tape gradients vs central differences, LoRA active."""
        cfg = ModelConfig(n_layers=2, d_model=8, n_heads=2, d_ff=12, max_seq_len=12,
                          vocab_size=16, l_memory=2, query_budget=3, lora_rank=2, seed=21)
        rng = np.random.default_rng(21)
        params = init_params(cfg, rng, with_lora=True, with_head=True)
        for name in params:
            if name.endswith(".lora_b") or name.startswith("head."):
                params[name] = rng.standard_normal(params[name].shape) * 0.3
            # O(1)-variance embeddings keep layer-norm curvature low enough
            # for the h^2 truncation error of central differences
            if name.startswith("embed."):
                params[name] = rng.normal(0.0, 0.4, params[name].shape)

        ids = rng.integers(0, cfg.vocab_size, size=(2, 6))
        pos_ids = np.tile(np.arange(6), (2, 1))
        lengths = np.array([6, 5])
        valid = (np.arange(6)[None] < lengths[:, None]).astype(np.float64)
        bias = mask_to_bias(padded_causal_mask(lengths, 6))[:, None]
        targets = rng.standard_normal(2)

        def forward(pt):
            x = ad.mul(
                ad.add(ad.gather(pt["embed.tok"], ids), ad.gather(pt["embed.pos"], pos_ids)),
                valid[:, :, None],
            )
            hidden = tape_forward(pt, cfg, x, bias)
            scores = tape_readout_scores(pt, cfg, hidden, lengths - 1)
            return ad.mse_loss(scores, Tensor(targets))

        def loss_fn():
            return float(forward(params_to_tensors(params, set())).data)

        pt = params_to_tensors(params, set(params))
        forward(pt).backward()
        worst = {}
        for name in params:
            grad = pt[name].grad
            if grad is None:
                grad = np.zeros_like(params[name])
            worst[name] = assert_matches_fd(params, name, grad, loss_fn)
        assert max(worst.values()) < 1e-5
