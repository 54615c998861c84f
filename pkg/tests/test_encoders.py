"""Video/text encoders, the shared multimodal decoder, similarity head
pooling, caption generation, and the clip-to-feature bridge."""

import numpy as np
import pytest

from conftest import TINY_TEXTS, make_tiny_model, tiny_clips
from surgflow.autodiff import Tensor
from surgflow.errors import ConfigError, InputError
from surgflow.models import (CAPTION_PROMPT, MGA_PROMPT, Bridge, ModelConfig,
                             uniform_sample_indices)
from surgflow.nn import causal_mask
from surgflow.rng import SessionRng


class TestFrameSampling:
    def test_40_to_8(self):
        idx = uniform_sample_indices(40, 8)
        assert idx.tolist() == [0, 5, 11, 16, 22, 27, 33, 39]

    def test_single_frame_repeats(self):
        assert uniform_sample_indices(1, 4).tolist() == [0, 0, 0, 0]

    def test_endpoints_inclusive(self):
        rng = SessionRng(0)
        for _ in range(50):
            n = int(rng.integers(1, 100))
            k = int(rng.integers(2, 16))
            idx = uniform_sample_indices(n, k)
            assert idx[0] == 0 and idx[-1] == n - 1
            assert np.all(np.diff(idx) >= 0)
            assert np.all((idx >= 0) & (idx < n))

    def test_empty_clip_rejected(self):
        with pytest.raises(InputError):
            uniform_sample_indices(0, 4)


class TestModelConfig:
    def test_head_divisibility(self):
        with pytest.raises(ConfigError):
            ModelConfig(dim=10, n_heads=4)

    def test_patch_divisibility(self):
        with pytest.raises(ConfigError):
            ModelConfig(frame_size=30, patch_size=8)

    def test_token_counts(self):
        cfg = ModelConfig(frame_size=32, patch_size=8)
        assert cfg.grid == 4 and cfg.spatial_tokens == 16


class TestVideoEncoder:
    def test_token_shape(self, tiny_model):
        video = tiny_model.encode_video_batch(tiny_clips(SessionRng(1), 2))
        cfg = tiny_model.cfg
        assert video.tokens.shape == (2, cfg.n_frames, cfg.spatial_tokens, cfg.dim)
        assert video.flat.shape == (2, cfg.n_frames * cfg.spatial_tokens, cfg.dim)

    def test_patch_extraction_partitions_pixels(self, tiny_model):
        frames = SessionRng(2).uniform(0, 1, (1, 2, 8, 8, 3))
        patches = tiny_model.video_encoder.patches(frames)
        assert patches.shape == (1, 2 * 4, 4 * 4 * 3)
        # first patch is the top-left 4x4 block of frame 0, row-major
        expect = frames[0, 0, :4, :4, :].reshape(-1)
        np.testing.assert_allclose(patches[0, 0], expect)

    def test_batch_order_independence(self, tiny_model):
        clips = tiny_clips(SessionRng(3), 2)
        fwd = tiny_model.encode_video_batch(clips).tokens.data
        rev = tiny_model.encode_video_batch(clips[::-1]).tokens.data
        np.testing.assert_allclose(fwd[0], rev[1], atol=1e-5)

    def test_bad_clip_shape(self, tiny_model):
        with pytest.raises(InputError):
            tiny_model.sample_clip(np.zeros((8, 8, 3), np.float32))


class TestTextEncoder:
    def test_length_limit(self, tiny_model):
        too_long = np.zeros((1, tiny_model.cfg.max_text_len + 1), np.int64)
        with pytest.raises(InputError):
            tiny_model.text_encoder.embed(too_long)

    def test_id_range_checked(self, tiny_model):
        bad = np.array([[len(tiny_model.vocab)]], np.int64)
        with pytest.raises(InputError):
            tiny_model.text_encoder.embed(bad)

    def test_maskable_excludes_prompt_and_reserved(self, tiny_model):
        vocab = tiny_model.vocab
        prompt = tiny_model.prompt_ids(CAPTION_PROMPT)
        ids = vocab.encode(TINY_TEXTS[0]) + [vocab.eos_id]
        text = tiny_model.encode_text_batch([prompt + ids], len(prompt))
        flags = text.mask_flags[0]
        assert not flags[:len(prompt)].any()
        eos_pos = len(prompt) + len(ids) - 1
        assert not flags[eos_pos]
        assert flags[len(prompt):eos_pos].all()

    def test_padding_isolated(self, tiny_model):
        # a sample's encoding must not depend on how much its batch is padded
        a = tiny_model.prompt_ids(MGA_PROMPT)[:4]
        alone = tiny_model.encode_text_batch([a], 0).tokens.data[0]
        padded = tiny_model.encode_text_batch([a, a + a], 0).tokens.data[0]
        np.testing.assert_allclose(alone, padded[:4], atol=1e-5)


class TestDecoder:
    def setup_inputs(self, model, seed=4):
        video = model.encode_video_batch(tiny_clips(SessionRng(seed), 1))
        ids = np.array([model.prompt_ids(CAPTION_PROMPT)[:6]], np.int64)
        pad = np.zeros_like(ids, bool)
        return ids, pad, video

    def test_causal_future_perturbation_is_invisible(self, tiny_model):
        ids, pad, video = self.setup_inputs(tiny_model)
        _, logits = tiny_model.decode_multimodal(ids, pad, video, causal=True)
        changed = ids.copy()
        changed[0, -1] = tiny_model.vocab.mask_id
        _, logits2 = tiny_model.decode_multimodal(changed, pad, video, causal=True)
        np.testing.assert_allclose(logits.data[0, :-1], logits2.data[0, :-1],
                                   atol=1e-6)
        assert not np.allclose(logits.data[0, -1], logits2.data[0, -1])

    def test_bidirectional_sees_future(self, tiny_model):
        ids, pad, video = self.setup_inputs(tiny_model)
        _, logits = tiny_model.decode_multimodal(ids, pad, video, causal=False)
        changed = ids.copy()
        changed[0, -1] = tiny_model.vocab.mask_id
        _, logits2 = tiny_model.decode_multimodal(changed, pad, video, causal=False)
        assert not np.allclose(logits.data[0, 0], logits2.data[0, 0])

    def test_video_conditioning_matters(self, tiny_model):
        ids, pad, video = self.setup_inputs(tiny_model)
        other = tiny_model.encode_video_batch(tiny_clips(SessionRng(5), 1))
        _, a = tiny_model.decode_multimodal(ids, pad, video, causal=True)
        _, b = tiny_model.decode_multimodal(ids, pad, other, causal=True)
        assert not np.allclose(a.data, b.data)

    def test_weight_sharing_with_text_encoder(self, tiny_model):
        # the decoder's self-attention blocks ARE the text encoder's blocks
        assert tiny_model.decoder._text_encoder is tiny_model.text_encoder
        names = tiny_model.parameters()
        assert not any(n.startswith("decoder.blocks") for n in names)
        ids, pad, video = self.setup_inputs(tiny_model)
        _, before = tiny_model.decode_multimodal(ids, pad, video, causal=True)
        block = tiny_model.text_encoder.blocks[0]
        block.attn.w_q.weight.data = block.attn.w_q.weight.data + 0.5
        _, after = tiny_model.decode_multimodal(ids, pad, video, causal=True)
        assert not np.allclose(before.data, after.data)

    def test_causal_mask_layout(self):
        mask = causal_mask(3)
        assert np.all(mask[np.tril_indices(3)] == 0)
        assert np.all(mask[np.triu_indices(3, k=1)] == -1e9)


class TestSimilarityHead:
    def test_unit_norm_embeddings_and_normalized_weights(self, tiny_model):
        video = tiny_model.encode_video_batch(tiny_clips(SessionRng(6), 2))
        e_v, w_v = tiny_model.head.pool_video(video)
        np.testing.assert_allclose(np.linalg.norm(e_v.data, axis=-1), 1.0,
                                   atol=1e-4)
        np.testing.assert_allclose(w_v.data.sum(axis=-1), 1.0, atol=1e-5)

    def test_padded_text_tokens_get_zero_weight(self, tiny_model):
        short = tiny_model.prompt_ids(MGA_PROMPT)[:3]
        long = tiny_model.prompt_ids(MGA_PROMPT)
        text = tiny_model.encode_text_batch([short, long], 0)
        _, w_t = tiny_model.head.pool_text(text)
        assert np.all(w_t.data[0, 3:] < 1e-6)
        np.testing.assert_allclose(w_t.data.sum(axis=-1), 1.0, atol=1e-5)

    def test_temperature_positive(self, tiny_model):
        assert tiny_model.head.tau.data[0] > 0


class TestGeneration:
    def test_greedy_is_deterministic(self, tiny_model):
        video = tiny_model.encode_video_batch(tiny_clips(SessionRng(7), 1))
        prompt = tiny_model.prompt_ids(CAPTION_PROMPT)
        a = tiny_model.generate_caption(video, prompt, max_len=5)
        b = tiny_model.generate_caption(video, prompt, max_len=5)
        assert a == b
        assert len(a) <= 5
        assert tiny_model.vocab.eos_id not in a

    def test_budget_respects_context_window(self, tiny_model):
        video = tiny_model.encode_video_batch(tiny_clips(SessionRng(8), 1))
        prompt = tiny_model.prompt_ids(CAPTION_PROMPT)
        out = tiny_model.generate_caption(video, prompt, max_len=100)
        assert len(out) <= tiny_model.cfg.max_text_len - len(prompt) - 1

    def test_sampling_requires_rng(self, tiny_model):
        video = tiny_model.encode_video_batch(tiny_clips(SessionRng(9), 1))
        with pytest.raises(ConfigError):
            tiny_model.generate_caption(video, [7], mode="sample")
        with pytest.raises(ConfigError):
            tiny_model.generate_caption(video, [7], mode="beam")

    def test_sampling_deterministic_under_seed(self, tiny_model):
        video = tiny_model.encode_video_batch(tiny_clips(SessionRng(10), 1))
        prompt = tiny_model.prompt_ids(CAPTION_PROMPT)
        a = tiny_model.generate_caption(video, prompt, max_len=4,
                                        mode="sample", rng=SessionRng(3))
        b = tiny_model.generate_caption(video, prompt, max_len=4,
                                        mode="sample", rng=SessionRng(3))
        assert a == b


class TestBridge:
    def test_output_shape(self, tiny_model):
        tokens = Tensor(SessionRng(11).normal(1.0, (2, 10, 8)))
        assert tiny_model.bridge(tokens).shape == (2, 4)

    def test_constant_input_invariant_to_token_count(self):
        bridge = Bridge(8, 4, SessionRng(12))
        row = SessionRng(13).normal(1.0, (8,))
        outs = []
        for n in (1, 3, 7, 16):
            tokens = Tensor(np.tile(row, (1, n, 1)))
            outs.append(bridge(tokens).data)
        for other in outs[1:]:
            np.testing.assert_allclose(outs[0], other, atol=1e-5)

    def test_nonnegative_output(self, tiny_model):
        tokens = Tensor(SessionRng(14).normal(1.0, (3, 6, 8)))
        assert np.all(tiny_model.bridge(tokens).data >= 0)
