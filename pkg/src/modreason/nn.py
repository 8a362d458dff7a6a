"""Transformer building blocks: embeddings, multi-head attention, FFN,
pre-norm layers, and the bottleneck reasoning adapter.

All blocks operate on batched (B, T, d) tensors. Layers are pre-norm
(x + sublayer(norm(x))); when adapters are attached they sit inside the
residual branch, wrapping each sublayer output. Adapter up-projections are
zero-initialized so an adapter-equipped layer is bit-identical to its plain
counterpart at init.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import Tensor
from .errors import ConfigError, TokenizationError


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


@dataclass
class FFNParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class TransformerLayerParams:
    attn: AttentionParams
    ffn: FFNParams
    norm1: LayerNormParams
    norm2: LayerNormParams


@dataclass
class AdapterParams:
    """Residual bottleneck: h + up(relu(down(h))). up starts at zero."""
    down: Tensor
    down_b: Tensor
    up: Tensor
    up_b: Tensor


@dataclass
class DecoderLayerParams:
    self_attn: AttentionParams
    cross_attn: AttentionParams
    ffn: FFNParams
    norm1: LayerNormParams
    norm2: LayerNormParams
    norm3: LayerNormParams


@dataclass
class EmbeddingParams:
    table: Tensor              # (vocab, d_model); also the tied output projection
    positions: np.ndarray      # sinusoidal cache (max_positions, d_model), constant
    use_positions: bool = True


# ---------------------------------------------------------------------------
# initialization helpers


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def init_layer_norm(d: int) -> LayerNormParams:
    return LayerNormParams(Tensor(np.ones(d), requires_grad=True),
                           Tensor(np.zeros(d), requires_grad=True))


def init_attention(rng, d: int) -> AttentionParams:
    return AttentionParams(*(Tensor(glorot(rng, d, d), requires_grad=True)
                             for _ in range(4)))


def init_ffn(rng, d: int, d_ff: int) -> FFNParams:
    return FFNParams(
        Tensor(glorot(rng, d, d_ff), requires_grad=True),
        Tensor(np.zeros(d_ff), requires_grad=True),
        Tensor(glorot(rng, d_ff, d), requires_grad=True),
        Tensor(np.zeros(d), requires_grad=True),
    )


def init_transformer_layer(rng, d: int, d_ff: int) -> TransformerLayerParams:
    return TransformerLayerParams(
        attn=init_attention(rng, d),
        ffn=init_ffn(rng, d, d_ff),
        norm1=init_layer_norm(d),
        norm2=init_layer_norm(d),
    )


def init_adapter(rng, d: int, d_bottleneck: int) -> AdapterParams:
    if d_bottleneck >= d:
        raise ConfigError(f"adapter bottleneck ({d_bottleneck}) must be < d_model ({d})")
    return AdapterParams(
        down=Tensor(glorot(rng, d, d_bottleneck), requires_grad=True),
        down_b=Tensor(np.zeros(d_bottleneck), requires_grad=True),
        up=Tensor(np.zeros((d_bottleneck, d)), requires_grad=True),  # identity at init
        up_b=Tensor(np.zeros(d), requires_grad=True),
    )


def init_decoder_layer(rng, d: int, d_ff: int) -> DecoderLayerParams:
    return DecoderLayerParams(
        self_attn=init_attention(rng, d),
        cross_attn=init_attention(rng, d),
        ffn=init_ffn(rng, d, d_ff),
        norm1=init_layer_norm(d),
        norm2=init_layer_norm(d),
        norm3=init_layer_norm(d),
    )


def sinusoidal_positions(max_positions: int, d: int) -> np.ndarray:
    pos = np.arange(max_positions)[:, None].astype(np.float64)
    i = np.arange(d // 2)[None, :].astype(np.float64)
    angles = pos / np.power(10000.0, 2.0 * i / d)
    enc = np.zeros((max_positions, d))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


def init_embedding(rng, vocab: int, d: int, max_positions: int,
                   use_positions: bool = True) -> EmbeddingParams:
    return EmbeddingParams(
        table=Tensor(rng.normal(0.0, 0.02, size=(vocab, d)), requires_grad=True),
        positions=sinusoidal_positions(max_positions, d),
        use_positions=use_positions,
    )


# ---------------------------------------------------------------------------
# forward blocks


def attention(x: Tensor, params: AttentionParams, n_heads: int,
              key_mask: np.ndarray | None = None, causal: bool = False,
              memory: Tensor | None = None) -> Tensor:
    """Multi-head scaled dot-product attention with output projection.

    x: (B, Tq, d). memory supplies keys/values for cross-attention; when
    absent this is self-attention. key_mask (B, Tk) marks real key positions;
    masked positions receive -1e30 pre-softmax.
    """
    b, tq, d = x.shape
    if d % n_heads != 0:
        raise ConfigError(f"d_model ({d}) not divisible by n_heads ({n_heads})")
    dh = d // n_heads
    src = memory if memory is not None else x
    tk = src.shape[1]

    def split(t: Tensor, tlen: int) -> Tensor:
        return T.transpose(T.reshape(t, (b, tlen, n_heads, dh)), (0, 2, 1, 3))

    q = split(T.matmul(x, params.wq), tq)
    k = split(T.matmul(src, params.wk), tk)
    v = split(T.matmul(src, params.wv), tk)

    scores = T.mul_scalar(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if key_mask is not None or causal:
        scores = T.apply_attention_mask(scores, key_mask=key_mask, causal=causal)
    weights = T.softmax(scores, axis=-1)
    ctx = T.matmul(weights, v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, tq, d))
    return T.matmul(ctx, params.wo)


def ffn(x: Tensor, params: FFNParams) -> Tensor:
    h = T.relu(T.add_bias(T.matmul(x, params.w1), params.b1))
    return T.add_bias(T.matmul(h, params.w2), params.b2)


def adapter_apply(h: Tensor, params: AdapterParams) -> Tensor:
    """h + up(relu(down(h))): exact identity while up stays zero."""
    z = T.relu(T.add_bias(T.matmul(h, params.down), params.down_b))
    return T.add(h, T.add_bias(T.matmul(z, params.up), params.up_b))


def layer_norm(x: Tensor, params: LayerNormParams, eps: float) -> Tensor:
    return T.layer_norm(x, params.gamma, params.beta, eps)


def transformer_layer(x: Tensor, params: TransformerLayerParams, n_heads: int,
                      adapters: tuple[AdapterParams, AdapterParams] | None = None,
                      key_mask: np.ndarray | None = None,
                      eps: float = 1e-6) -> Tensor:
    """Pre-norm residual layer, optionally with an adapter after each sublayer."""
    a = attention(layer_norm(x, params.norm1, eps), params.attn, n_heads,
                  key_mask=key_mask)
    if adapters is not None:
        a = adapter_apply(a, adapters[0])
    x = T.add(x, a)
    f = ffn(layer_norm(x, params.norm2, eps), params.ffn)
    if adapters is not None:
        f = adapter_apply(f, adapters[1])
    return T.add(x, f)


def decoder_layer(x: Tensor, params: DecoderLayerParams, n_heads: int,
                  memory: Tensor, mem_mask: np.ndarray | None = None,
                  eps: float = 1e-6) -> Tensor:
    """Causal self-attention, cross-attention over memory, then FFN."""
    a = attention(layer_norm(x, params.norm1, eps), params.self_attn, n_heads,
                  causal=True)
    x = T.add(x, a)
    c = attention(layer_norm(x, params.norm2, eps), params.cross_attn, n_heads,
                  key_mask=mem_mask, memory=memory)
    x = T.add(x, c)
    f = ffn(layer_norm(x, params.norm3, eps), params.ffn)
    return T.add(x, f)


def embed_ids(params: EmbeddingParams, ids: np.ndarray) -> Tensor:
    """Embed an int id array (B, T): table lookup plus position encodings."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = params.table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids.max() if ids.max() >= vocab else ids.min())
        raise TokenizationError(f"token id {bad} outside vocabulary of size {vocab}")
    out = T.embedding(params.table, ids)
    if params.use_positions:
        out = T.add_const(out, params.positions[: ids.shape[-1]])
    return out
