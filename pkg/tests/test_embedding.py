import numpy as np
import pytest

from mtsmae import autodiff as ad
from mtsmae import embedding as emb
from mtsmae.autodiff import Tensor
from mtsmae.exceptions import ConfigError, DimensionError
from mtsmae.params import iter_params


def make_params(d_x=2, d_model=8, p=2, seed=0):
    return emb.init_embedding_params(d_x, d_model, p, np.random.default_rng(seed))


def make_marks(L, hour_offset=0, minute_granular=True):
    hours = (np.arange(L) + hour_offset) % 24
    return emb.TimeMarks(month=np.full(L, 5), day=np.full(L, 10), hour=hours,
                         minute=np.zeros(L, dtype=np.int64),
                         minute_granular=minute_granular)


class TestPositionalEncoding:
    def test_row_zero(self):
        pe = emb.positional_encoding(4, 6)
        assert np.allclose(pe[0, 0::2], 0.0)
        assert np.allclose(pe[0, 1::2], 1.0)

    def test_first_position_first_pair(self):
        pe = emb.positional_encoding(2, 8)
        assert pe[1, 0] == pytest.approx(np.sin(1.0), abs=1e-5)
        assert pe[1, 1] == pytest.approx(np.cos(1.0), abs=1e-5)

    def test_last_pair_argument_is_i_over_10000(self):
        # pair j with 2j/d_model = 1 would use i/10000; check the actual last
        # pair's exponent directly
        d_model = 8
        pe = emb.positional_encoding(50, d_model)
        j = d_model // 2 - 1
        denom = 10000.0 ** (2 * j / d_model)
        assert pe[17, 2 * j] == pytest.approx(np.sin(17 / denom), abs=1e-5)

    def test_entries_bounded(self):
        pe = emb.positional_encoding(300, 16)
        assert np.all(pe >= -1.0) and np.all(pe <= 1.0)

    def test_odd_d_model_rejected(self):
        with pytest.raises(ConfigError):
            emb.positional_encoding(4, 7)


class TestScalarProjection:
    def test_zero_input_zero_output(self):
        params = make_params()
        out = emb.scalar_projection(Tensor(np.zeros((10, 2))), params)
        assert np.allclose(out.data, 0.0)

    def test_full_scale_shape(self):
        params = make_params(d_x=7, d_model=16)
        out = emb.scalar_projection(Tensor(np.zeros((784, 7))), params)
        assert out.data.shape == (784, 16)

    def test_identity_kernel_replicates_input(self, rng):
        params = make_params(d_x=1, d_model=3)
        k = np.zeros((3, 1, 3))
        k[1, 0, :] = 1.0  # center tap only
        params.sp_kernel = Tensor(k, requires_grad=True)
        x = rng.normal(size=(6, 1))
        out = emb.scalar_projection(Tensor(x), params)
        assert np.allclose(out.data, np.repeat(x, 3, axis=1))

    def test_channel_mismatch(self):
        params = make_params(d_x=2)
        with pytest.raises(DimensionError):
            emb.scalar_projection(Tensor(np.zeros((10, 3))), params)


class TestStampEmbedding:
    def test_zero_tables_zero_output(self):
        params = make_params()
        for name in ("stamp_month", "stamp_day", "stamp_hour", "stamp_minute"):
            t = getattr(params, name)
            t.data = np.zeros_like(t.data)
        out = emb.stamp_embedding(make_marks(5), params)
        assert np.allclose(out.data, 0.0)

    def test_identical_marks_identical_rows(self):
        params = make_params()
        marks = emb.TimeMarks(month=np.array([3, 3]), day=np.array([7, 7]),
                              hour=np.array([12, 12]), minute=np.array([30, 30]))
        out = emb.stamp_embedding(marks, params)
        assert np.array_equal(out.data[0], out.data[1])

    def test_hourly_series_uses_minute_row_zero(self):
        params = make_params()
        marks = emb.TimeMarks(month=np.array([0, 0]), day=np.array([0, 0]),
                              hour=np.array([1, 2]), minute=np.array([15, 45]),
                              minute_granular=False)
        out = emb.stamp_embedding(marks, params)
        expected = (params.stamp_month.data[0] + params.stamp_day.data[0]
                    + params.stamp_hour.data[1] + params.stamp_minute.data[0])
        assert np.allclose(out.data[0], expected)

    def test_out_of_range_mark(self):
        params = make_params()
        marks = emb.TimeMarks(month=np.array([12]), day=np.array([0]),
                              hour=np.array([0]), minute=np.array([0]))
        with pytest.raises(IndexError):
            emb.stamp_embedding(marks, params)


class TestEmbed:
    def test_zero_sp_and_se_leaves_pe(self):
        params = make_params()
        for name in ("sp_kernel", "stamp_month", "stamp_day", "stamp_hour",
                     "stamp_minute"):
            t = getattr(params, name)
            t.data = np.zeros_like(t.data)
        L = 12
        out = emb.embed(np.ones((L, 2)), make_marks(L), params)
        assert np.allclose(out.data, emb.positional_encoding(L, params.d_model))

    def test_additivity_in_sp(self, rng):
        params = make_params()
        x = rng.normal(size=(12, 2))
        marks = make_marks(12)
        base = emb.embed(x, marks, params).data
        sp = emb.scalar_projection(Tensor(x), params).data
        params2 = make_params()
        params2.sp_kernel.data = 2.0 * params.sp_kernel.data
        doubled = emb.embed(x, marks, params2).data
        assert np.allclose(doubled, base + sp, atol=1e-10)

    def test_default_shape(self):
        params = make_params(d_x=7, d_model=16)
        out = emb.embed(np.zeros((784, 7)), make_marks(784), params)
        assert out.data.shape == (784, 16)

    def test_length_mismatch(self):
        params = make_params()
        with pytest.raises(DimensionError):
            emb.embed(np.zeros((10, 2)), make_marks(9), params)


class TestPatchEmbed:
    def test_downsampling_factor(self):
        params = make_params(d_x=7, d_model=8, p=2)
        tokens = emb.embed(np.zeros((784, 7)), make_marks(784), make_params(7, 8, 2))
        out = emb.patch_embed(tokens, params)
        assert out.data.shape == (196, 8)

    def test_p1_preserves_length(self, rng):
        params = make_params(p=1)
        tokens = Tensor(rng.normal(size=(10, 8)))
        assert emb.patch_embed(tokens, params).data.shape == (10, 8)

    def test_non_divisible_length_names_values(self):
        params = make_params(p=2)
        with pytest.raises(ConfigError, match="10.*4"):
            emb.patch_embed(Tensor(np.zeros((10, 8))), params)

    def test_locality(self, rng):
        # token t must only see raw rows [t*p*p, (t+1)*p*p)
        params = make_params(d_x=8, d_model=8, p=2)
        tokens = rng.normal(size=(16, 8))
        base = emb.patch_embed(Tensor(tokens), params).data
        perturbed = tokens.copy()
        perturbed[4:8] += 10.0  # inside token 1's window only
        out = emb.patch_embed(Tensor(perturbed), params).data
        assert np.array_equal(out[0], base[0])
        assert np.array_equal(out[2:], base[2:])
        assert not np.allclose(out[1], base[1])


class TestNonPatchEmbed:
    def test_one_token_per_step(self):
        params = make_params()
        out = emb.nonpatch_embed(np.zeros((20, 2)), make_marks(20), params)
        assert out.data.shape == (20, 8)

    def test_zero_placeholder_is_pe_plus_se(self):
        params = make_params()
        L = 8
        marks = make_marks(L)
        out = emb.nonpatch_embed(np.zeros((L, 2)), marks, params)
        se = emb.stamp_embedding(marks, params).data
        pe = emb.positional_encoding(L, params.d_model)
        assert np.allclose(out.data, pe + se, atol=1e-10)

    def test_matches_embed(self, rng):
        params = make_params()
        x = rng.normal(size=(12, 2))
        marks = make_marks(12)
        assert np.array_equal(emb.nonpatch_embed(x, marks, params).data,
                              emb.embed(x, marks, params).data)


def test_stamp_vocab_sizes():
    params = make_params(d_model=4)
    assert params.stamp_month.data.shape[0] == 12
    assert params.stamp_day.data.shape[0] == 31
    assert params.stamp_hour.data.shape[0] == 24
    assert params.stamp_minute.data.shape[0] == 60
    assert max(t.data.shape[0] for n, t in iter_params(params)
               if n.startswith("stamp_")) <= 60
