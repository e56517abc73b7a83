import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtsmae import masking
from mtsmae.autodiff import Tensor
from mtsmae.exceptions import ConfigError, DimensionError


class TestSampleMask:
    def test_default_config_counts(self, rng):
        plan = masking.sample_mask(196, 0.85, rng)
        assert plan.n_visible == 29
        assert len(plan.masked_ids) == 167

    def test_ratio_zero_keeps_all(self, rng):
        plan = masking.sample_mask(196, 0.0, rng)
        assert plan.n_visible == 196
        assert len(plan.masked_ids) == 0

    def test_small_l(self, rng):
        assert masking.sample_mask(20, 0.85, rng).n_visible == 3

    def test_partition(self, rng):
        plan = masking.sample_mask(50, 0.6, rng)
        union = np.union1d(plan.visible_ids, plan.masked_ids)
        assert np.array_equal(union, np.arange(50))
        assert len(np.intersect1d(plan.visible_ids, plan.masked_ids)) == 0

    def test_minimum_one_visible(self, rng):
        assert masking.sample_mask(3, 0.99, rng).n_visible == 1

    @pytest.mark.parametrize("ratio", [-0.1, 1.0, 1.5])
    def test_ratio_out_of_range(self, ratio, rng):
        with pytest.raises(ConfigError):
            masking.sample_mask(10, ratio, rng)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_determinism(self, seed):
        a = masking.sample_mask(60, 0.7, np.random.default_rng(seed))
        b = masking.sample_mask(60, 0.7, np.random.default_rng(seed))
        assert np.array_equal(a.visible_ids, b.visible_ids)
        assert np.array_equal(a.masked_ids, b.masked_ids)

    def test_visible_frequency_uniform(self):
        # 10k draws at L=196, ratio .85: every index visible 10%-20% of the time
        rng = np.random.default_rng(77)
        counts = np.zeros(196)
        n_draws = 10_000
        for _ in range(n_draws):
            counts[masking.sample_mask(196, 0.85, rng).visible_ids] += 1
        freq = counts / n_draws
        assert freq.min() >= 0.10 and freq.max() <= 0.20


class TestSelectScatter:
    def test_select_identity_at_ratio_zero(self, rng):
        tokens = Tensor(rng.normal(size=(8, 4)))
        plan = masking.sample_mask(8, 0.0, rng)
        assert np.array_equal(masking.select_visible(tokens, plan).data, tokens.data)

    def test_select_gathers_in_order(self, rng):
        tokens = Tensor(rng.normal(size=(3, 2)))
        plan = masking.MaskPlan(L=3, visible_ids=np.array([0, 2]),
                                masked_ids=np.array([1]), ratio=1 / 3)
        out = masking.select_visible(tokens, plan)
        assert np.array_equal(out.data, tokens.data[[0, 2]])

    def test_select_length_mismatch(self, rng):
        plan = masking.sample_mask(8, 0.5, rng)
        with pytest.raises(DimensionError):
            masking.select_visible(Tensor(np.zeros((9, 4))), plan)

    def test_scatter_all_but_one_masked(self, rng):
        plan = masking.sample_mask(10, 0.99, rng)
        mask_token = Tensor(rng.normal(size=4))
        out = masking.scatter_with_mask_tokens(Tensor(rng.normal(size=(1, 4))),
                                               plan, mask_token)
        assert np.sum([np.array_equal(row, mask_token.data) for row in out.data]) == 9

    def test_scatter_masked_rows_equal_mask_token(self, rng):
        plan = masking.sample_mask(12, 0.5, rng)
        mask_token = Tensor(rng.normal(size=5))
        enc = Tensor(rng.normal(size=(plan.n_visible, 5)))
        out = masking.scatter_with_mask_tokens(enc, plan, mask_token)
        for j in plan.masked_ids:
            assert np.array_equal(out.data[j], mask_token.data)

    def test_scatter_count_mismatch(self, rng):
        plan = masking.sample_mask(12, 0.5, rng)
        with pytest.raises(DimensionError):
            masking.scatter_with_mask_tokens(Tensor(np.zeros((1, 5))), plan,
                                             Tensor(np.zeros(5)))

    def test_round_trip_differs_only_at_masked(self, rng):
        tokens = Tensor(rng.normal(size=(16, 3)))
        plan = masking.sample_mask(16, 0.6, rng)
        mask_token = Tensor(np.full(3, 99.0))
        out = masking.scatter_with_mask_tokens(
            masking.select_visible(tokens, plan), plan, mask_token)
        assert np.array_equal(out.data[plan.visible_ids],
                              tokens.data[plan.visible_ids])
        assert np.all(out.data[plan.masked_ids] == 99.0)

    def test_scatter_gradients_route_correctly(self, rng):
        plan = masking.sample_mask(6, 0.5, rng)
        enc = Tensor(rng.normal(size=(plan.n_visible, 2)), requires_grad=True)
        mask_token = Tensor(rng.normal(size=2), requires_grad=True)
        out = masking.scatter_with_mask_tokens(enc, plan, mask_token)
        import mtsmae.autodiff as ad
        ad.sum_all(ad.square(out)).backward()
        assert enc.grad.shape == enc.data.shape and np.any(enc.grad != 0)
        assert mask_token.grad.shape == (2,) and np.any(mask_token.grad != 0)
