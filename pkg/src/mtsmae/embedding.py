"""Token construction from raw series.

Input embedding = scalar projection (width-3 conv, stride 1, zero pad 1)
+ sinusoidal position encoding + learned calendar-stamp embedding, summed
per time step. Patch embedding then downsamples in time with two strided
convolutions whose kernel width equals the stride, so each token owns one
disjoint window of p**2 consecutive steps. The non-patch variant keeps one
token per time step (used on the forecasting decoder side).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError, DimensionError
from .params import trunc_normal

STAMP_VOCABS = {"month": 12, "day": 31, "hour": 24, "minute": 60}


@dataclass
class TimeMarks:
    """Per-step integer calendar features, zero-based month and day."""

    month: np.ndarray
    day: np.ndarray
    hour: np.ndarray
    minute: np.ndarray
    minute_granular: bool = True  # False for hourly-or-coarser series

    def __len__(self):
        return len(self.month)

    def validate(self) -> None:
        for name, vocab in STAMP_VOCABS.items():
            v = getattr(self, name)
            if len(v) != len(self.month):
                raise DimensionError(f"time-mark component {name} has length "
                                     f"{len(v)} != {len(self.month)}")
            if v.size and (v.min() < 0 or v.max() >= vocab):
                raise IndexError(f"time-mark {name} outside [0, {vocab})")

    def slice(self, start: int, stop: int) -> "TimeMarks":
        return TimeMarks(self.month[start:stop], self.day[start:stop],
                         self.hour[start:stop], self.minute[start:stop],
                         self.minute_granular)


@dataclass
class EmbeddingParams:
    sp_kernel: Tensor       # (3, d_x, d_model)
    stamp_month: Tensor     # (12, d_model)
    stamp_day: Tensor       # (31, d_model)
    stamp_hour: Tensor      # (24, d_model)
    stamp_minute: Tensor    # (60, d_model)
    patch_k1: Tensor        # (p, d_model, d_model)
    patch_k2: Tensor        # (p, d_model, d_model)
    d_model: int
    p: int


def init_embedding_params(d_x: int, d_model: int, p: int,
                          rng: np.random.Generator) -> EmbeddingParams:
    return EmbeddingParams(
        sp_kernel=trunc_normal(rng, (3, d_x, d_model)),
        stamp_month=trunc_normal(rng, (12, d_model)),
        stamp_day=trunc_normal(rng, (31, d_model)),
        stamp_hour=trunc_normal(rng, (24, d_model)),
        stamp_minute=trunc_normal(rng, (60, d_model)),
        patch_k1=trunc_normal(rng, (p, d_model, d_model)),
        patch_k2=trunc_normal(rng, (p, d_model, d_model)),
        d_model=d_model,
        p=p,
    )


def scalar_projection(x, params: EmbeddingParams) -> Tensor:
    # K=3, stride 1, pad 1 keeps the length; no bias so zero input maps to zero
    x = ad.as_tensor(x)
    if x.data.shape[0] < 3:
        raise DimensionError(f"scalar projection needs length >= 3, got {x.data.shape[0]}")
    return ad.conv1d(x, params.sp_kernel, stride=1, zero_pad=1)


def positional_encoding(L: int, d_model: int, dtype=None) -> np.ndarray:
    """Sinusoidal table, zero-based position i and pair index j:
    PE[i, 2j] = sin(i / 10000**(2j/d_model)), PE[i, 2j+1] = cos(same)."""
    if d_model % 2 != 0:
        raise ConfigError(f"positional encoding needs even d_model, got {d_model}")
    dtype = dtype or ad.get_default_dtype()
    pos = np.arange(L, dtype=np.float64)[:, None]
    j = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * j / d_model)
    pe = np.empty((L, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


def stamp_embedding(marks: TimeMarks, params: EmbeddingParams) -> Tensor:
    marks.validate()
    minute_ids = marks.minute if marks.minute_granular else np.zeros_like(marks.minute)
    return ad.add(
        ad.add(ad.embedding_lookup(params.stamp_month, marks.month),
               ad.embedding_lookup(params.stamp_day, marks.day)),
        ad.add(ad.embedding_lookup(params.stamp_hour, marks.hour),
               ad.embedding_lookup(params.stamp_minute, minute_ids)))


def embed(x, marks: TimeMarks, params: EmbeddingParams) -> Tensor:
    x = ad.as_tensor(x)
    L = x.data.shape[0]
    if len(marks) != L:
        raise DimensionError(f"series length {L} != time-mark length {len(marks)}")
    sp = scalar_projection(x, params)
    pe = positional_encoding(L, params.d_model, dtype=x.data.dtype)
    se = stamp_embedding(marks, params)
    return ad.add(ad.add(sp, se), pe)


def patch_embed(tokens: Tensor, params: EmbeddingParams) -> Tensor:
    """Two K=stride=p conv stages; output length L / p**2."""
    p = params.p
    L = tokens.data.shape[0]
    if L % (p * p) != 0:
        raise ConfigError(f"length {L} not divisible by patch factor {p * p} (p={p})")
    h = ad.conv1d(tokens, params.patch_k1, stride=p, zero_pad=0)
    return ad.conv1d(h, params.patch_k2, stride=p, zero_pad=0)


def nonpatch_embed(x, marks: TimeMarks, params: EmbeddingParams) -> Tensor:
    """One token per time step; same SP + PE + SE sum, no patch convs."""
    return embed(x, marks, params)
