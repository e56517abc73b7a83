import numpy as np
import pytest

import mtsmae.autodiff as ad
import mtsmae.embedding as emb
from mtsmae import masking, model
from mtsmae.autodiff import Tensor
from mtsmae.exceptions import ConfigError, DimensionError
from mtsmae.params import named_parameters


def small_cfg(**kw):
    base = dict(d_x=3, d_y=3, L_x=48, L_y=8, L_label=16, d_model=32,
                n_heads=2, d_ff=64, enc_layers=1, pretrain_dec_layers=1,
                finetune_dec_layers=1, p=2, dropout=0.0)
    base.update(kw)
    return model.ModelConfig(**base)


def hourly_marks(n, start_hour=0):
    hours = (start_hour + np.arange(n)) % 24
    return emb.TimeMarks(month=np.zeros(n, dtype=np.int64),
                         day=np.zeros(n, dtype=np.int64),
                         hour=hours.astype(np.int64),
                         minute=np.zeros(n, dtype=np.int64),
                         minute_granular=False)


def identity_attention(d_model):
    """Q/K zero (uniform weights), V and output projections identity."""
    eye = np.eye(d_model)
    return model.AttentionParams(
        wq=Tensor(np.zeros((d_model, d_model))), bq=Tensor(np.zeros(d_model)),
        wk=Tensor(np.zeros((d_model, d_model))), bk=Tensor(np.zeros(d_model)),
        wv=Tensor(eye.copy()), bv=Tensor(np.zeros(d_model)),
        wo=Tensor(eye.copy()), bo=Tensor(np.zeros(d_model)))


class TestModelConfig:
    def test_defaults(self):
        cfg = model.ModelConfig(d_x=7, d_y=7)
        assert cfg.L_label == 48
        assert cfg.patch_total == 4
        assert cfg.n_patches == 196

    def test_bad_heads(self):
        with pytest.raises(ConfigError):
            model.ModelConfig(d_x=3, d_y=3, d_model=30, n_heads=8)

    def test_bad_length(self):
        with pytest.raises(ConfigError):
            model.ModelConfig(d_x=3, d_y=3, L_x=50, p=2)


class TestAttention:
    def test_single_token_attends_to_itself(self, rng):
        # one query, one key: weight is necessarily 1, output = x Wv Wo
        d = 8
        p = model.AttentionParams(
            **{f"w{n}": Tensor(rng.normal(size=(d, d))) for n in "qkvo"},
            **{f"b{n}": Tensor(np.zeros(d)) for n in "qkvo"})
        x = Tensor(rng.normal(size=(1, d)))
        out = model.multi_head_attention(x, x, p, n_heads=2)
        want = x.data @ p.wv.data @ p.wo.data
        np.testing.assert_allclose(out.data, want, atol=1e-12)

    def test_uniform_weights_average_values(self, rng):
        # zero Wq/Wk => uniform softmax => every row is the mean value vector
        d, L = 6, 5
        p = identity_attention(d)
        x = Tensor(rng.normal(size=(L, d)))
        out = model.multi_head_attention(x, x, p, n_heads=3)
        want = np.tile(x.data.mean(axis=0), (L, 1))
        np.testing.assert_allclose(out.data, want, atol=1e-12)

    def test_causal_first_position_fixed(self, rng):
        # with the causal bias, row 0 only sees itself: perturbing later
        # tokens leaves row 0 bitwise unchanged
        d, L = 8, 6
        p = model.AttentionParams(
            **{f"w{n}": Tensor(rng.normal(size=(d, d))) for n in "qkvo"},
            **{f"b{n}": Tensor(rng.normal(size=d)) for n in "qkvo"})
        x = rng.normal(size=(L, d))
        base = model.multi_head_attention(Tensor(x), Tensor(x), p,
                                          n_heads=2, causal=True)
        bumped = x.copy()
        bumped[3:] += 10.0
        pert = model.multi_head_attention(Tensor(bumped), Tensor(bumped), p,
                                          n_heads=2, causal=True)
        assert np.array_equal(base.data[0], pert.data[0])
        assert not np.allclose(base.data[-1], pert.data[-1])

    def test_causal_full_lower_triangle_dependence(self, rng):
        d, L = 4, 5
        p = model.AttentionParams(
            **{f"w{n}": Tensor(rng.normal(size=(d, d))) for n in "qkvo"},
            **{f"b{n}": Tensor(np.zeros(d)) for n in "qkvo"})
        x = rng.normal(size=(L, d))
        base = model.multi_head_attention(Tensor(x), Tensor(x), p,
                                          n_heads=1, causal=True).data
        for j in range(L):
            bumped = x.copy()
            bumped[j] += 5.0
            out = model.multi_head_attention(Tensor(bumped), Tensor(bumped), p,
                                             n_heads=1, causal=True).data
            # rows before j unchanged, rows at/after j affected
            assert np.array_equal(base[:j], out[:j])
            assert not np.allclose(base[j], out[j])

    def test_head_count_must_divide(self, rng):
        p = identity_attention(6)
        with pytest.raises(ConfigError):
            model.multi_head_attention(Tensor(np.zeros((2, 6))),
                                       Tensor(np.zeros((2, 6))), p, n_heads=4)


class TestMlp:
    def test_zero_w1_gives_b2(self, rng):
        d, ff = 4, 7
        p = model.MlpParams(w1=Tensor(np.zeros((d, ff))), b1=Tensor(np.zeros(ff)),
                            w2=Tensor(rng.normal(size=(ff, d))),
                            b2=Tensor(rng.normal(size=d)))
        out = model.mlp(Tensor(rng.normal(size=(3, d))), p)
        np.testing.assert_allclose(out.data, np.tile(p.b2.data, (3, 1)))

    def test_positive_regime_is_affine(self):
        # identity weights, large positive bias keeps relu inactive
        d = 3
        p = model.MlpParams(w1=Tensor(np.eye(d)), b1=Tensor(np.full(d, 100.0)),
                            w2=Tensor(np.eye(d)), b2=Tensor(np.zeros(d)))
        x = np.array([[1.0, -2.0, 3.0]])
        out = model.mlp(Tensor(x), p)
        np.testing.assert_allclose(out.data, x + 100.0)

    def test_hand_example(self):
        p = model.MlpParams(w1=Tensor(np.array([[1.0, -1.0]])),
                            b1=Tensor(np.zeros(2)),
                            w2=Tensor(np.array([[1.0], [1.0]])),
                            b2=Tensor(np.array([0.5])))
        # x=2: relu([2,-2]) = [2,0] -> 2 + 0.5; x=-3: relu([-3,3]) -> 3.5
        out = model.mlp(Tensor(np.array([[2.0], [-3.0]])), p)
        np.testing.assert_allclose(out.data, [[2.5], [3.5]])


class TestBlocks:
    def test_encoder_block_shape_and_norm(self, rng):
        cfg = small_cfg()
        blk = model._init_encoder_block(cfg, rng)
        out = model.encoder_block(Tensor(rng.normal(size=(12, cfg.d_model))), blk, cfg)
        assert out.data.shape == (12, cfg.d_model)
        # final layer norm with unit gamma: each row has mean 0, var 1
        np.testing.assert_allclose(out.data.mean(axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.data.var(axis=1), 1.0, rtol=1e-4)

    def test_encoder_block_permutation_equivariance(self, rng):
        # no positional information inside the block itself
        cfg = small_cfg()
        blk = model._init_encoder_block(cfg, rng)
        x = rng.normal(size=(10, cfg.d_model))
        perm = rng.permutation(10)
        out = model.encoder_block(Tensor(x), blk, cfg).data
        out_p = model.encoder_block(Tensor(x[perm]), blk, cfg).data
        np.testing.assert_allclose(out_p, out[perm], atol=1e-10)

    def test_encoder_block_gradient_reaches_all_params(self, rng):
        cfg = small_cfg(d_model=8, d_ff=16)
        blk = model._init_encoder_block(cfg, rng)
        x = Tensor(rng.normal(size=(5, 8)), requires_grad=True)
        ad.sum_all(ad.square(model.encoder_block(x, blk, cfg))).backward()
        for name, t in named_parameters(blk).items():
            assert t.grad is not None and np.any(t.grad != 0), name
        assert np.any(x.grad != 0)

    def test_decoder_block_causality(self, rng):
        cfg = small_cfg(d_model=8, d_ff=16)
        blk = model._init_decoder_block(cfg, rng)
        enc = rng.normal(size=(6, 8))
        z = rng.normal(size=(9, 8))
        base = model.decoder_block(Tensor(z), Tensor(enc), blk, cfg).data
        bumped = z.copy()
        bumped[5:] += 3.0
        out = model.decoder_block(Tensor(bumped), Tensor(enc), blk, cfg).data
        assert np.array_equal(base[:5], out[:5])
        assert not np.allclose(base[5:], out[5:])

    def test_decoder_block_uses_encoder_output(self, rng):
        cfg = small_cfg(d_model=8, d_ff=16)
        blk = model._init_decoder_block(cfg, rng)
        z = rng.normal(size=(4, 8))
        a = model.decoder_block(Tensor(z), Tensor(rng.normal(size=(6, 8))), blk, cfg).data
        b = model.decoder_block(Tensor(z), Tensor(rng.normal(size=(6, 8))), blk, cfg).data
        assert not np.allclose(a, b)

    def test_decoder_block_zero_cross_value_ignores_encoder(self, rng):
        # zeroing the cross-attention value projection makes the block
        # independent of the encoder output
        cfg = small_cfg(d_model=8, d_ff=16)
        blk = model._init_decoder_block(cfg, rng)
        blk.cross_attn.wv.data[:] = 0.0
        blk.cross_attn.bv.data[:] = 0.0
        z = rng.normal(size=(4, 8))
        a = model.decoder_block(Tensor(z), Tensor(rng.normal(size=(6, 8))), blk, cfg).data
        b = model.decoder_block(Tensor(z), Tensor(rng.normal(size=(6, 8))), blk, cfg).data
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestPretrainForward:
    def test_output_shape(self, rng):
        cfg = small_cfg()
        params = model.init_pretrain_params(cfg, rng)
        plan = masking.sample_mask(cfg.n_patches, 0.85, rng)
        x = rng.normal(size=(cfg.L_x, cfg.d_x))
        recon = model.pretrain_forward(x, hourly_marks(cfg.L_x), plan, params, cfg)
        assert recon.data.shape == (cfg.n_patches, cfg.patch_total * cfg.d_x)

    def test_encoder_sees_only_visible(self, rng):
        cfg = small_cfg()
        params = model.init_pretrain_params(cfg, rng)
        plan = masking.sample_mask(cfg.n_patches, 0.85, rng)
        x = rng.normal(size=(cfg.L_x, cfg.d_x))
        _, inter = model.pretrain_forward(x, hourly_marks(cfg.L_x), plan,
                                          params, cfg, return_intermediates=True)
        assert inter["visible"].data.shape[0] == plan.n_visible
        assert inter["enc_out"].data.shape == (plan.n_visible, cfg.d_model)

    def test_zero_head_gives_zero_output(self, rng):
        cfg = small_cfg()
        params = model.init_pretrain_params(cfg, rng)
        params.head_w.data[:] = 0.0
        params.head_b.data[:] = 0.0
        plan = masking.sample_mask(cfg.n_patches, 0.5, rng)
        x = rng.normal(size=(cfg.L_x, cfg.d_x))
        recon = model.pretrain_forward(x, hourly_marks(cfg.L_x), plan, params, cfg)
        assert np.all(recon.data == 0.0)

    def test_plan_length_mismatch(self, rng):
        cfg = small_cfg()
        params = model.init_pretrain_params(cfg, rng)
        plan = masking.sample_mask(5, 0.5, rng)
        with pytest.raises(DimensionError):
            model.pretrain_forward(rng.normal(size=(cfg.L_x, cfg.d_x)),
                                   hourly_marks(cfg.L_x), plan, params, cfg)


class TestReconstructionTargets:
    def test_hand_indexed(self):
        # L=8, d=1, p=2 -> 2 patches of 4 steps; masking patch 1 picks rows 4..7
        x = np.arange(8.0).reshape(8, 1)
        plan = masking.MaskPlan(L=2, visible_ids=np.array([0]),
                                masked_ids=np.array([1]), ratio=0.5)
        out = model.reconstruction_targets(x, plan, p=2)
        np.testing.assert_array_equal(out, [[4.0, 5.0, 6.0, 7.0]])

    def test_round_trip_reshape(self, rng):
        x = rng.normal(size=(16, 3))
        plan = masking.MaskPlan(L=4, visible_ids=np.array([], dtype=int),
                                masked_ids=np.arange(4), ratio=1.0)
        out = model.reconstruction_targets(x, plan, p=2)
        np.testing.assert_array_equal(out.reshape(16, 3), x)

    def test_bad_length(self):
        plan = masking.MaskPlan(L=2, visible_ids=np.array([0]),
                                masked_ids=np.array([1]), ratio=0.5)
        with pytest.raises(ConfigError):
            model.reconstruction_targets(np.zeros((10, 1)), plan, p=2)


class TestFinetuneForward:
    def test_output_shape(self, rng):
        cfg = small_cfg()
        params = model.init_finetune_params(cfg, rng)
        pred = model.finetune_forward(
            rng.normal(size=(cfg.L_x, cfg.d_x)), hourly_marks(cfg.L_x),
            rng.normal(size=(cfg.L_label, cfg.d_x)), hourly_marks(cfg.L_label),
            hourly_marks(cfg.L_y), params, cfg)
        assert pred.data.shape == (cfg.L_y, cfg.d_y)

    def test_decoder_token_count(self, rng):
        cfg = small_cfg()
        params = model.init_finetune_params(cfg, rng)
        _, inter = model.finetune_forward(
            rng.normal(size=(cfg.L_x, cfg.d_x)), hourly_marks(cfg.L_x),
            rng.normal(size=(cfg.L_label, cfg.d_x)), hourly_marks(cfg.L_label),
            hourly_marks(cfg.L_y), params, cfg, return_intermediates=True)
        assert inter["dec_tokens"].data.shape == (
            cfg.L_label // cfg.patch_total + cfg.L_y, cfg.d_model)
        assert inter["enc_out"].data.shape == (cfg.n_patches, cfg.d_model)

    def test_label_length_checked(self, rng):
        cfg = small_cfg()
        params = model.init_finetune_params(cfg, rng)
        with pytest.raises(DimensionError):
            model.finetune_forward(
                rng.normal(size=(cfg.L_x, cfg.d_x)), hourly_marks(cfg.L_x),
                rng.normal(size=(cfg.L_label + 4, cfg.d_x)),
                hourly_marks(cfg.L_label + 4),
                hourly_marks(cfg.L_y), params, cfg)

    def test_gradient_reaches_all_params(self, rng):
        cfg = small_cfg(d_model=8, d_ff=16, L_x=16, L_y=4, L_label=8)
        params = model.init_finetune_params(cfg, rng)
        pred = model.finetune_forward(
            rng.normal(size=(cfg.L_x, cfg.d_x)), hourly_marks(cfg.L_x),
            rng.normal(size=(cfg.L_label, cfg.d_x)), hourly_marks(cfg.L_label),
            hourly_marks(cfg.L_y), params, cfg)
        ad.sum_all(ad.square(pred)).backward()
        skip = ("stamp_month", "stamp_day", "stamp_minute")
        for name, t in named_parameters(params).items():
            if any(s in name for s in skip):
                continue  # hourly marks only exercise a few stamp rows
            assert t.grad is not None, name


class TestTransfer:
    def test_encoder_tensors_copied_bitwise(self, rng):
        cfg = small_cfg()
        pre = model.init_pretrain_params(cfg, rng)
        fin = model.init_finetune_params(cfg, np.random.default_rng(999))
        source = {n: t.data for n, t in named_parameters(pre).items()}
        model.transfer_encoder(fin, source)
        fin_named = named_parameters(fin)
        for name, t in named_parameters(pre).items():
            if name.startswith("embed.") or name.startswith("enc."):
                assert np.array_equal(fin_named[name].data, t.data), name
        # the decoder side keeps its own initialization
        assert not np.array_equal(fin.head_w.data, pre.head_w.data[:, :cfg.d_y])

    def test_shape_mismatch_rejected(self, rng):
        cfg = small_cfg()
        fin = model.init_finetune_params(cfg, rng)
        pre = model.init_pretrain_params(small_cfg(d_model=16, n_heads=2), rng)
        source = {n: t.data for n, t in named_parameters(pre).items()}
        with pytest.raises(DimensionError):
            model.transfer_encoder(fin, source)


class TestParamCount:
    def test_matches_actual_tensors_pretrain(self, rng):
        cfg = small_cfg()
        total = sum(t.data.size
                    for t in named_parameters(model.init_pretrain_params(cfg, rng)).values())
        assert model.param_count(cfg, "pretrain") == total

    def test_matches_actual_tensors_finetune(self, rng):
        cfg = small_cfg()
        total = sum(t.data.size
                    for t in named_parameters(model.init_finetune_params(cfg, rng)).values())
        assert model.param_count(cfg, "finetune") == total

    def test_frozen_values_small(self):
        cfg = small_cfg()
        assert model.param_count(cfg, "pretrain") == 25964
        assert model.param_count(cfg, "finetune") == 38371

    def test_frozen_values_full(self):
        cfg = model.ModelConfig(d_x=7, d_y=7)
        assert model.param_count(cfg, "pretrain") == 13748764
        assert model.param_count(cfg, "finetune") == 15913479

    def test_unknown_phase(self):
        with pytest.raises(ConfigError):
            model.param_count(small_cfg(), "warmup")
