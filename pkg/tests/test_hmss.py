import numpy as np
import pytest

from conftest import selective_oracle
from remora import hmss
from remora.bench import doubling_ratios, sweep_pipeline
from remora.codec import CodecConfig, Gop, GopStream, StreamHeader, compress_clip
from remora.config import load
from remora.errors import InvalidInputError
from remora.hmss import (BidirectionalParams, HmssConfig, IFrameTokens, accounting, aggregate,
                         assemble_gop_tokens, global_mix, local_scan, patch_embed, project_to_prompt,
                         token_length)
from remora.rmr import RefinerConfig, RefinerParams
from remora.ssm import SelectiveParams
from remora.synthflow import MotionSpec, render_cut_clip


def sequence(rng, n_p, n_m, T_g, d, real=None):
    real = T_g - 1 if real is None else real
    E_I = rng.standard_normal((n_p, d))
    motion = [rng.standard_normal((n_m, d)) if t < real else np.zeros((n_m, d)) for t in range(T_g - 1)]
    mask = np.arange(T_g - 1) < real
    return assemble_gop_tokens(E_I, motion, mask)


class TestPatchEmbed:
    @pytest.mark.parametrize("H,p,n_p", [(64, 8, 64), (384, 16, 576)])
    def test_patch_count(self, H, p, n_p):
        tok = patch_embed(np.zeros((H, H, 3), np.uint8), p, 4, 0)
        assert tok.matrix.shape == (n_p, 4) and tok.n_p == n_p

    def test_black_frame(self):
        assert not patch_embed(np.zeros((16, 16, 3), np.uint8), 8, 5, 3).matrix.any()

    def test_indivisible(self):
        with pytest.raises(InvalidInputError):
            patch_embed(np.zeros((20, 16, 3), np.uint8), 8, 4, 0)

    def test_deterministic_and_seeded(self, rng):
        f = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        a, b, c = (patch_embed(f, 8, 6, s).matrix for s in (1, 1, 2))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_patch_layout(self, rng):
        # each token depends only on its own patch, in row-major patch order
        f = rng.integers(0, 256, (16, 24, 3), dtype=np.uint8)
        tok = patch_embed(f, 8, 5, 0).matrix
        g = f.copy()
        g[8:16, 16:24] = 0
        changed = np.flatnonzero((patch_embed(g, 8, 5, 0).matrix != tok).any(axis=1))
        assert changed.tolist() == [5]


class TestAssemble:
    @pytest.mark.parametrize("n_p,T_g,n_m,L_g", [(64, 8, 16, 176), (576, 32, 32, 1568)])
    def test_length_law(self, n_p, T_g, n_m, L_g):
        assert token_length(n_p, T_g, n_m) == L_g
        seq = assemble_gop_tokens(np.zeros((n_p, 2)), [np.zeros((n_m, 2))] * (T_g - 1))
        assert seq.L_g == L_g

    def test_flat_total_full_scale(self):
        assert 64 * token_length(576, 32, 32) == 100_352

    def test_single_frame_gop(self, rng):
        E = rng.standard_normal((4, 3))
        seq = assemble_gop_tokens(IFrameTokens(E, 8, 16, 16), [])
        np.testing.assert_array_equal(seq.tokens, E)
        assert seq.L_g == 4

    def test_order(self, rng):
        seq = sequence(rng, 3, 2, 4, 2)
        assert seq.motion_span(1) == (3, 5) and seq.motion_span(3) == (7, 9)

    def test_mask_count_mismatch(self):
        with pytest.raises(InvalidInputError):
            assemble_gop_tokens(np.zeros((2, 2)), [np.zeros((1, 2))] * 2, np.ones(3, bool))

    def test_block_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            assemble_gop_tokens(np.zeros((2, 2)), [np.zeros((1, 2)), np.zeros((2, 2))])


class TestLocalScan:
    def test_zero(self):
        seq = assemble_gop_tokens(np.zeros((4, 3)), [np.zeros((2, 3))] * 2)
        assert not local_scan(seq, BidirectionalParams.random(3, 2, 0)).any()

    def test_selection_law(self, rng, backend):
        seq = sequence(rng, 64, 16, 8, 32)
        out = local_scan(seq, BidirectionalParams.feedthrough(32, 4), backend=backend)
        assert out.tobytes() == seq.tokens[:64].tobytes()

    def test_tiny_oracle(self, rng, backend):
        seq = sequence(rng, 4, 2, 3, 2)
        params = BidirectionalParams.random(2, 2, 5)
        X = seq.tokens
        expected = (selective_oracle(params.forward, X)
                    + selective_oracle(params.backward, X[::-1])[::-1])[:4]
        np.testing.assert_allclose(local_scan(seq, params, backend=backend), expected, rtol=1e-12, atol=1e-13)

    def test_padded_rows_zeroed(self, rng):
        seq = sequence(rng, 4, 2, 4, 3, real=1)
        noisy = seq.tokens.copy()
        noisy[6:] = rng.standard_normal((4, 3))
        dirty = hmss.GopTokenSequence(noisy, 4, 2, 3, seq.pad_mask)
        params = BidirectionalParams.random(3, 2, 1)
        np.testing.assert_array_equal(local_scan(dirty, params), local_scan(seq, params))

    def test_padding_neutrality(self, rng, backend):
        base = sequence(rng, 64, 16, 5, 32, real=3)
        params = BidirectionalParams.random(32, 4, 2)
        ref = local_scan(base, params, backend=backend)
        for extra in (1, 4, 27):
            motion = [base.tokens[s:e] for s, e in map(base.motion_span, range(1, base.slots + 1))]
            motion += [np.zeros((16, 32))] * extra
            mask = np.concatenate([base.pad_mask, np.zeros(extra, bool)])
            longer = assemble_gop_tokens(base.tokens[:64], motion, mask)
            out = local_scan(longer, params, backend=backend)
            assert np.abs(out - ref).max() <= 1e-12 * np.abs(ref).max()


class TestGlobalMix:
    def test_single_feedthrough(self, rng):
        Z = rng.standard_normal((6, 4))
        out = global_mix([Z], [BidirectionalParams.feedthrough(4, 2)] * 2)
        np.testing.assert_array_equal(out.matrix, Z)
        assert out.K == 1

    def test_stack_matches_sequential_layers(self, rng):
        Zs = [rng.standard_normal((3, 4)) for _ in range(3)]
        layers = [BidirectionalParams.random(4, 2, s) for s in (1, 2)]
        X = np.concatenate(Zs)
        for layer in layers:
            X = selective_oracle(layer.forward, X) + selective_oracle(layer.backward, X[::-1])[::-1]
        np.testing.assert_allclose(global_mix(Zs, layers).matrix, X, rtol=1e-11, atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            global_mix([np.zeros((3, 4)), np.zeros((2, 4))], BidirectionalParams.random(4, 2, 0))

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            global_mix([], BidirectionalParams.random(4, 2, 0))

    @pytest.mark.parametrize("n_p,n_m,T_g,ratio", [(576, 32, 32, 1568 / 576), (64, 16, 8, 2.75)])
    def test_compression(self, n_p, n_m, T_g, ratio):
        acc = accounting(n_p, n_m, T_g, 64)
        assert acc["compression"] == ratio
        assert acc["flat_tokens"] / acc["global_tokens"] == ratio


def small_config():
    return HmssConfig(p=8, d_s=8, Q=2, global_depth=2, embed_seed=1, ssm_seed=2)


def three_gop_stream(size=32):
    clip, _ = render_cut_clip([(MotionSpec("translate", tx=1), 5, 1), (MotionSpec("rotate", theta=0.05), 4, 2),
                               (MotionSpec("zoom", scale=1.05), 6, 3)], size, size)
    return compress_clip(clip, CodecConfig())


class TestAggregate:
    def test_static_gop_zero_refiner(self, rng):
        frame = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        gop = Gop(frame, np.zeros((3, 4, 4, 2), np.int16), np.zeros((3, 16, 16, 3), np.int16),
                  np.array([True, True, False]), 4, 4)
        stream = GopStream([gop], StreamHeader(16, 16, 4, 4, 4, 16))
        cfg = small_config()
        refiner = RefinerParams.zeros(RefinerConfig(hidden=4, n_tokens=2, d_s=8))
        local, stack = hmss.default_params(cfg)
        E_I = patch_embed(frame, 8, 8, cfg.embed_seed).matrix
        X = np.concatenate([E_I, np.zeros((6, 8))])
        summary = (selective_oracle(local.forward, X) + selective_oracle(local.backward, X[::-1])[::-1])[:4]
        expected = global_mix([summary], stack).matrix
        out = aggregate(stream, refiner, cfg, (local, stack))
        np.testing.assert_allclose(out.matrix, expected, rtol=1e-11, atol=1e-12)

    def test_desk_shape(self):
        cfg = load("desk")
        stream = three_gop_stream(64)
        assert stream.K == 3
        out = aggregate(stream, RefinerParams.init(cfg.refiner(), 0), cfg.hmss())
        assert out.matrix.shape == (192, 32)
        assert np.isfinite(out.matrix).all()

    def test_determinism_and_threads(self, monkeypatch):
        stream = three_gop_stream()
        cfg = small_config()
        refiner = RefinerParams.init(RefinerConfig(hidden=4, n_tokens=2, d_s=8), 3)
        a = aggregate(stream, refiner, cfg).matrix
        b = aggregate(stream, refiner, cfg).matrix
        monkeypatch.setenv("REMORA_THREADS", "3")
        c = aggregate(stream, refiner, cfg).matrix
        assert a.tobytes() == b.tobytes() == c.tobytes()

    def test_d_s_mismatch(self):
        with pytest.raises(InvalidInputError):
            aggregate(three_gop_stream(), RefinerParams.zeros(RefinerConfig(d_s=4)), small_config())

    def test_pipeline_scaling(self):
        records = sweep_pipeline([8, 16, 32, 64], load("desk"), repeats=5)
        assert max(doubling_ratios(records)) <= 2.6


class TestProjectToPrompt:
    def test_identity(self, rng):
        H = rng.standard_normal((5, 4))
        np.testing.assert_array_equal(project_to_prompt(H, 4, weight=np.eye(4)), H)

    def test_zero(self):
        assert not project_to_prompt(np.zeros((3, 4)), 7, seed=1).any()

    def test_matrix_product_oracle(self, rng):
        H = rng.standard_normal((3, 4))
        out = project_to_prompt(H, 5, seed=9)
        W = np.random.default_rng(9).standard_normal((4, 5)) / 2.0
        expected = [[sum(H[i, k] * W[k, j] for k in range(4)) for j in range(5)] for i in range(3)]
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_bad_weight(self):
        with pytest.raises(InvalidInputError):
            project_to_prompt(np.zeros((3, 4)), 5, weight=np.zeros((5, 4)))
