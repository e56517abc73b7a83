"""Transformer encoder, reconstruction decoder and forecasting decoder.

Blocks are post-LN: every residual sum is followed by layer norm. The
forecasting decoder adds a causal self-attention sub-block and cross
attention over the encoder output. During pretraining the decoder is
encoder-style; its input is the scattered full token set (visible encodings
plus mask tokens) with sinusoidal positions re-added at patch granularity.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import embedding as emb
from . import masking
from .autodiff import Tensor
from .exceptions import ConfigError, DimensionError
from .params import trunc_normal, zeros, ones, named_parameters


@dataclass
class ModelConfig:
    d_x: int
    d_y: int
    L_x: int = 784
    L_y: int = 24
    L_label: int | None = None      # defaults to 2 * L_y
    d_model: int = 512
    n_heads: int = 8
    d_ff: int = 2048
    enc_layers: int = 3
    pretrain_dec_layers: int = 1
    finetune_dec_layers: int = 1
    p: int = 2                      # per-stage patch stride; patch size = p**2
    dropout: float = 0.05

    def __post_init__(self):
        if self.L_label is None:
            self.L_label = 2 * self.L_y
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.enc_layers < 1:
            raise ConfigError("need at least one encoder layer")
        if self.L_x % self.patch_total != 0:
            raise ConfigError(
                f"input length {self.L_x} not divisible by patch size {self.patch_total} (p={self.p})")
        if self.L_label % self.patch_total != 0:
            raise ConfigError(
                f"label length {self.L_label} not divisible by patch size {self.patch_total} (p={self.p})")

    @property
    def patch_total(self) -> int:
        return self.p * self.p

    @property
    def n_patches(self) -> int:
        return self.L_x // self.patch_total


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class MlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class EncoderBlockParams:
    attn: AttentionParams
    ln1_g: Tensor
    ln1_b: Tensor
    mlp: MlpParams
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class DecoderBlockParams:
    self_attn: AttentionParams
    ln1_g: Tensor
    ln1_b: Tensor
    cross_attn: AttentionParams
    ln2_g: Tensor
    ln2_b: Tensor
    mlp: MlpParams
    ln3_g: Tensor
    ln3_b: Tensor


@dataclass
class PretrainParams:
    embed: emb.EmbeddingParams
    enc: list[EncoderBlockParams]
    mask_token: Tensor
    dec: list[EncoderBlockParams]
    head_w: Tensor   # (d_model, p**2 * d_x)
    head_b: Tensor


@dataclass
class FinetuneParams:
    embed: emb.EmbeddingParams
    enc: list[EncoderBlockParams]
    dec_embed: emb.EmbeddingParams
    dec: list[DecoderBlockParams]
    head_w: Tensor   # (d_model, d_y)
    head_b: Tensor


def _init_attention(d_model: int, rng) -> AttentionParams:
    return AttentionParams(
        wq=trunc_normal(rng, (d_model, d_model)), bq=zeros(d_model),
        wk=trunc_normal(rng, (d_model, d_model)), bk=zeros(d_model),
        wv=trunc_normal(rng, (d_model, d_model)), bv=zeros(d_model),
        wo=trunc_normal(rng, (d_model, d_model)), bo=zeros(d_model))


def _init_mlp(d_model: int, d_ff: int, rng) -> MlpParams:
    return MlpParams(w1=trunc_normal(rng, (d_model, d_ff)), b1=zeros(d_ff),
                     w2=trunc_normal(rng, (d_ff, d_model)), b2=zeros(d_model))


def _init_encoder_block(cfg: ModelConfig, rng) -> EncoderBlockParams:
    return EncoderBlockParams(
        attn=_init_attention(cfg.d_model, rng),
        ln1_g=ones(cfg.d_model), ln1_b=zeros(cfg.d_model),
        mlp=_init_mlp(cfg.d_model, cfg.d_ff, rng),
        ln2_g=ones(cfg.d_model), ln2_b=zeros(cfg.d_model))


def _init_decoder_block(cfg: ModelConfig, rng) -> DecoderBlockParams:
    return DecoderBlockParams(
        self_attn=_init_attention(cfg.d_model, rng),
        ln1_g=ones(cfg.d_model), ln1_b=zeros(cfg.d_model),
        cross_attn=_init_attention(cfg.d_model, rng),
        ln2_g=ones(cfg.d_model), ln2_b=zeros(cfg.d_model),
        mlp=_init_mlp(cfg.d_model, cfg.d_ff, rng),
        ln3_g=ones(cfg.d_model), ln3_b=zeros(cfg.d_model))


def init_pretrain_params(cfg: ModelConfig, rng: np.random.Generator) -> PretrainParams:
    return PretrainParams(
        embed=emb.init_embedding_params(cfg.d_x, cfg.d_model, cfg.p, rng),
        enc=[_init_encoder_block(cfg, rng) for _ in range(cfg.enc_layers)],
        mask_token=trunc_normal(rng, (cfg.d_model,)),
        dec=[_init_encoder_block(cfg, rng) for _ in range(cfg.pretrain_dec_layers)],
        head_w=trunc_normal(rng, (cfg.d_model, cfg.patch_total * cfg.d_x)),
        head_b=zeros(cfg.patch_total * cfg.d_x))


def init_finetune_params(cfg: ModelConfig, rng: np.random.Generator) -> FinetuneParams:
    return FinetuneParams(
        embed=emb.init_embedding_params(cfg.d_x, cfg.d_model, cfg.p, rng),
        enc=[_init_encoder_block(cfg, rng) for _ in range(cfg.enc_layers)],
        dec_embed=emb.init_embedding_params(cfg.d_x, cfg.d_model, cfg.p, rng),
        dec=[_init_decoder_block(cfg, rng) for _ in range(cfg.finetune_dec_layers)],
        head_w=trunc_normal(rng, (cfg.d_model, cfg.d_y)),
        head_b=zeros(cfg.d_y))


def transfer_encoder(target: FinetuneParams, source: dict[str, np.ndarray]) -> None:
    """Copy pretrained embedding + encoder tensors into a finetune model."""
    own = named_parameters(target)
    for name, t in own.items():
        if not (name.startswith("embed.") or name.startswith("enc.")):
            continue
        if name not in source:
            raise DimensionError(f"pretrain checkpoint missing tensor {name}")
        src = source[name]
        if tuple(src.shape) != tuple(t.data.shape):
            raise DimensionError(
                f"transfer shape mismatch for {name}: "
                f"checkpoint {tuple(src.shape)} vs model {tuple(t.data.shape)}")
        t.data = src.astype(t.data.dtype, copy=True)


def dropout(x: Tensor, p: float, train: bool, rng) -> Tensor:
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return ad.mul(x, keep)


def _causal_bias(L: int, dtype) -> np.ndarray:
    # -1e9 underflows to an exactly-zero attention weight after softmax
    return np.triu(np.full((L, L), -1e9, dtype=dtype), k=1)


def multi_head_attention(q_src: Tensor, kv_src: Tensor, p: AttentionParams,
                         n_heads: int, causal: bool = False) -> Tensor:
    d_model = q_src.data.shape[1]
    if d_model % n_heads != 0:
        raise ConfigError(f"d_model {d_model} not divisible by n_heads {n_heads}")
    dh = d_model // n_heads
    scale = 1.0 / np.sqrt(dh)

    q = ad.add(ad.matmul(q_src, p.wq), p.bq)
    k = ad.add(ad.matmul(kv_src, p.wk), p.bk)
    v = ad.add(ad.matmul(kv_src, p.wv), p.bv)

    bias = _causal_bias(q_src.data.shape[0], q_src.data.dtype) if causal else None
    heads = []
    for h in range(n_heads):
        qh = ad.slice_cols(q, h * dh, (h + 1) * dh)
        kh = ad.slice_cols(k, h * dh, (h + 1) * dh)
        vh = ad.slice_cols(v, h * dh, (h + 1) * dh)
        scores = ad.mul(ad.matmul(qh, ad.transpose(kh)), scale)
        if bias is not None:
            scores = ad.add(scores, bias)
        weights = ad.softmax(scores)
        heads.append(ad.matmul(weights, vh))
    merged = ad.concat(heads, axis=1) if n_heads > 1 else heads[0]
    return ad.add(ad.matmul(merged, p.wo), p.bo)


def mlp(x: Tensor, p: MlpParams) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(x, p.w1), p.b1))
    return ad.add(ad.matmul(h, p.w2), p.b2)


def encoder_block(z: Tensor, p: EncoderBlockParams, cfg: ModelConfig,
                  train: bool = False, rng=None) -> Tensor:
    a = dropout(multi_head_attention(z, z, p.attn, cfg.n_heads), cfg.dropout, train, rng)
    z1 = ad.layer_norm(ad.add(z, a), p.ln1_g, p.ln1_b)
    m = dropout(mlp(z1, p.mlp), cfg.dropout, train, rng)
    return ad.layer_norm(ad.add(z1, m), p.ln2_g, p.ln2_b)


def decoder_block(z: Tensor, enc_out: Tensor, p: DecoderBlockParams,
                  cfg: ModelConfig, train: bool = False, rng=None) -> Tensor:
    a = dropout(multi_head_attention(z, z, p.self_attn, cfg.n_heads, causal=True),
                cfg.dropout, train, rng)
    z1 = ad.layer_norm(ad.add(z, a), p.ln1_g, p.ln1_b)
    c = dropout(multi_head_attention(z1, enc_out, p.cross_attn, cfg.n_heads),
                cfg.dropout, train, rng)
    z2 = ad.layer_norm(ad.add(z1, c), p.ln2_g, p.ln2_b)
    m = dropout(mlp(z2, p.mlp), cfg.dropout, train, rng)
    return ad.layer_norm(ad.add(z2, m), p.ln3_g, p.ln3_b)


def run_encoder(tokens: Tensor, blocks, cfg: ModelConfig,
                train: bool = False, rng=None) -> Tensor:
    z = tokens
    for blk in blocks:
        z = encoder_block(z, blk, cfg, train, rng)
    return z


def run_decoder(tokens: Tensor, enc_out: Tensor, blocks, cfg: ModelConfig,
                train: bool = False, rng=None) -> Tensor:
    z = tokens
    for blk in blocks:
        z = decoder_block(z, enc_out, blk, cfg, train, rng)
    return z


def pretrain_forward(x, marks: emb.TimeMarks, plan: masking.MaskPlan,
                     params: PretrainParams, cfg: ModelConfig,
                     train: bool = False, rng=None,
                     return_intermediates: bool = False):
    """Embed, patch, encode only the visible tokens, scatter mask tokens,
    decode, and project each token to its patch of p**2 * d_x raw values."""
    if plan.L != cfg.n_patches:
        raise DimensionError(
            f"mask plan length {plan.L} != patch count {cfg.n_patches}")
    tokens = emb.patch_embed(emb.embed(x, marks, params.embed), params.embed)
    visible = masking.select_visible(tokens, plan)
    enc_out = run_encoder(visible, params.enc, cfg, train, rng)
    full = masking.scatter_with_mask_tokens(enc_out, plan, params.mask_token)
    dec_pe = emb.positional_encoding(plan.L, cfg.d_model, dtype=full.data.dtype)
    z = run_encoder(ad.add(full, dec_pe), params.dec, cfg, train, rng)
    recon = ad.add(ad.matmul(z, params.head_w), params.head_b)
    if return_intermediates:
        return recon, {"tokens": tokens, "visible": visible, "enc_out": enc_out}
    return recon


def reconstruction_targets(x_raw, plan: masking.MaskPlan, p: int) -> np.ndarray:
    """Raw values of each masked patch: p**2 consecutive steps flattened
    time-major, gathered at the masked indices."""
    x_raw = np.asarray(x_raw)
    L_x, d_x = x_raw.shape
    total = p * p
    if L_x % total != 0:
        raise ConfigError(f"length {L_x} not divisible by patch size {total} (p={p})")
    windows = x_raw.reshape(L_x // total, total * d_x)
    return windows[plan.masked_ids]


def build_finetune_decoder_tokens(x_label, label_marks: emb.TimeMarks,
                                  y_marks: emb.TimeMarks,
                                  params: FinetuneParams, cfg: ModelConfig) -> Tensor:
    """Patch-embedded label tokens followed by non-patched zero placeholders."""
    x_label = ad.as_tensor(x_label)
    if x_label.data.shape[0] != cfg.L_label:
        raise DimensionError(
            f"label segment length {x_label.data.shape[0]} != configured {cfg.L_label}")
    if len(y_marks) != cfg.L_y:
        raise DimensionError(
            f"forecast marks length {len(y_marks)} != configured {cfg.L_y}")
    label_tokens = emb.patch_embed(
        emb.embed(x_label, label_marks, params.dec_embed), params.dec_embed)
    placeholder = np.zeros((cfg.L_y, cfg.d_x), dtype=x_label.data.dtype)
    future_tokens = emb.nonpatch_embed(placeholder, y_marks, params.dec_embed)
    return ad.concat([label_tokens, future_tokens], axis=0)


def finetune_forward(x, marks: emb.TimeMarks, x_label, label_marks: emb.TimeMarks,
                     y_marks: emb.TimeMarks, params: FinetuneParams,
                     cfg: ModelConfig, train: bool = False, rng=None,
                     return_intermediates: bool = False):
    """Encoder over all patches; decoder over label + placeholder tokens with
    cross attention; forecast head reads the last L_y positions."""
    x = ad.as_tensor(x)
    if x.data.shape[0] != cfg.L_x:
        raise DimensionError(
            f"encoder input length {x.data.shape[0]} != configured {cfg.L_x}")
    enc_tokens = emb.patch_embed(emb.embed(x, marks, params.embed), params.embed)
    enc_out = run_encoder(enc_tokens, params.enc, cfg, train, rng)

    dec_tokens = build_finetune_decoder_tokens(x_label, label_marks, y_marks, params, cfg)
    z = run_decoder(dec_tokens, enc_out, params.dec, cfg, train, rng)
    tail = ad.slice_rows(z, z.data.shape[0] - cfg.L_y, z.data.shape[0])
    pred = ad.add(ad.matmul(tail, params.head_w), params.head_b)
    if return_intermediates:
        return pred, {"enc_out": enc_out, "dec_tokens": dec_tokens}
    return pred


def decode_from_tokens(dec_tokens: Tensor, enc_out: Tensor,
                       params: FinetuneParams, cfg: ModelConfig) -> Tensor:
    """Forecast from prebuilt decoder tokens (causality tests perturb these)."""
    z = run_decoder(dec_tokens, enc_out, params.dec, cfg)
    tail = ad.slice_rows(z, z.data.shape[0] - cfg.L_y, z.data.shape[0])
    return ad.add(ad.matmul(tail, params.head_w), params.head_b)


def param_count(cfg: ModelConfig, phase: str) -> int:
    """Total trainable scalars for a config; locked by a regression test."""
    d, ff, dx = cfg.d_model, cfg.d_ff, cfg.d_x
    embed_n = 3 * dx * d + (12 + 31 + 24 + 60) * d + 2 * cfg.p * d * d
    attn_n = 4 * (d * d + d)
    mlp_n = d * ff + ff + ff * d + d
    enc_block = attn_n + mlp_n + 4 * d
    dec_block = 2 * attn_n + mlp_n + 6 * d
    if phase == "pretrain":
        head = d * cfg.patch_total * dx + cfg.patch_total * dx
        return (embed_n + cfg.enc_layers * enc_block + d
                + cfg.pretrain_dec_layers * enc_block + head)
    if phase == "finetune":
        head = d * cfg.d_y + cfg.d_y
        return (2 * embed_n + cfg.enc_layers * enc_block
                + cfg.finetune_dec_layers * dec_block + head)
    raise ConfigError(f"unknown phase {phase!r}")


def clone_params(params):
    """Deep copy of a parameter container (tensors detached from any graph)."""
    flat = named_parameters(params)
    out = copy.deepcopy(params)
    for name, t in named_parameters(out).items():
        t.data = flat[name].data.copy()
        t.grad = None
    return out
