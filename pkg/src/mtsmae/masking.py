"""Uniform random patch masking for the pretraining autoencoder.

Visible indices are sampled without replacement; the encoder sees only the
visible rows, and a single learnable mask token is scattered back into the
masked slots (original order restored) before the reconstruction decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError, DimensionError


@dataclass(frozen=True)
class MaskPlan:
    L: int
    visible_ids: np.ndarray = field(repr=False)   # sorted
    masked_ids: np.ndarray = field(repr=False)    # sorted
    ratio: float = 0.0
    seed: int | None = None

    @property
    def n_visible(self) -> int:
        return len(self.visible_ids)


def sample_mask(L: int, ratio: float, rng: np.random.Generator,
                seed: int | None = None) -> MaskPlan:
    """Keep round(L*(1-ratio)) uniformly random tokens visible, at least 1."""
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"masking ratio must be in [0, 1), got {ratio}")
    if L < 1:
        raise ConfigError(f"token count must be >= 1, got {L}")
    n_visible = max(1, round(L * (1.0 - ratio)))
    perm = rng.permutation(L)
    visible = np.sort(perm[:n_visible])
    masked = np.sort(perm[n_visible:])
    return MaskPlan(L=L, visible_ids=visible, masked_ids=masked,
                    ratio=ratio, seed=seed)


def select_visible(tokens: Tensor, plan: MaskPlan) -> Tensor:
    tokens = ad.as_tensor(tokens)
    if tokens.data.shape[0] != plan.L:
        raise DimensionError(
            f"token count {tokens.data.shape[0]} != mask plan length {plan.L}")
    return ad.gather_rows(tokens, plan.visible_ids)


def scatter_with_mask_tokens(encoded: Tensor, plan: MaskPlan,
                             mask_token: Tensor) -> Tensor:
    """Full-length sequence in original order; masked rows hold mask_token."""
    encoded = ad.as_tensor(encoded)
    mask_token = ad.as_tensor(mask_token)
    if encoded.data.shape[0] != plan.n_visible:
        raise DimensionError(
            f"encoded row count {encoded.data.shape[0]} != visible count {plan.n_visible}")
    d = encoded.data.shape[1]
    visible_ids, masked_ids = plan.visible_ids, plan.masked_ids

    out_data = np.empty((plan.L, d), dtype=encoded.data.dtype)
    out_data[visible_ids] = encoded.data
    out_data[masked_ids] = mask_token.data

    def backward(g):
        if encoded.requires_grad:
            encoded._accum(g[visible_ids])
        if mask_token.requires_grad and len(masked_ids):
            mask_token._accum(g[masked_ids].sum(axis=0))

    return Tensor(out_data, parents=(encoded, mask_token), backward=backward)
