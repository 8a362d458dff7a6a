"""Decoder-side task interface: teacher-forcing loss, greedy generation,
and multi-choice scoring by option log-likelihood.

The decoder is a standard causal transformer with cross-attention over the
encoder's final gated state; the output projection is tied to the token
embedding table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import Tensor
from .encoder import EncoderState, encode
from .errors import ValidationError
from .model import Model
from .nn import decoder_layer, embed_ids, layer_norm

__all__ = ["ScoredOption", "decode_logits", "teacher_forcing_loss", "generate",
           "generate_batch", "score_options"]


@dataclass
class ScoredOption:
    text: str
    token_ids: list[int]
    total_loglik: float       # sum of per-token log-probs under teacher forcing
    normalized_loglik: float  # mean per predicted token


def decode_logits(model: Model, dec_ids: np.ndarray, memory: Tensor,
                  mem_mask: np.ndarray | None = None) -> Tensor:
    """Next-token logits (B, T, V) for decoder input ids (B, T)."""
    c = model.config
    x = embed_ids(model.embed, dec_ids)
    for layer in model.dec_layers:
        x = decoder_layer(x, layer, c.n_heads, memory, mem_mask=mem_mask,
                          eps=c.layer_norm_eps)
    x = layer_norm(x, model.dec_norm, c.layer_norm_eps)
    return T.matmul(x, T.transpose(model.embed.table, (1, 0)))


def _full_targets(target_ids: list[list[int]], bos: int, eos: int) -> list[list[int]]:
    full = []
    for t in target_ids:
        if len(t) == 0:
            raise ValidationError("empty target sequence")
        seq = list(t)
        if seq[0] != bos:
            seq = [bos] + seq
        if seq[-1] != eos:
            seq = seq + [eos]
        full.append(seq)
    return full


def teacher_forcing_loss(model: Model, state: EncoderState,
                         target_ids: list[list[int]], bos: int, eos: int,
                         pad: int = 0) -> Tensor:
    """Mean next-token cross-entropy over all real target positions.

    Targets are content token ids; start/end markers are added if missing.
    """
    full = _full_targets(target_ids, bos, eos)
    b = len(full)
    tmax = max(len(s) for s in full) - 1  # predict positions 1..len-1
    dec_in = np.full((b, tmax), pad, dtype=np.int64)
    labels = np.full((b, tmax), -1, dtype=np.int64)
    for i, seq in enumerate(full):
        n = len(seq) - 1
        dec_in[i, :n] = seq[:-1]
        labels[i, :n] = seq[1:]

    logits = decode_logits(model, dec_in, state.final, state.key_mask)
    v = logits.shape[-1]
    flat = T.reshape(logits, (b * tmax, v))
    real = np.nonzero(labels.ravel() >= 0)[0]
    picked = T.index_rows(flat, real, unique=True)
    onehot = np.zeros((real.size, v))
    onehot[np.arange(real.size), labels.ravel()[real]] = 1.0
    return T.cross_entropy(picked, Tensor(onehot))


def generate_batch(model: Model, ids: np.ndarray, key_mask: np.ndarray | None,
                   bos: int, eos: int, max_len: int,
                   mode: str = "route_learned") -> list[list[int]]:
    """Greedy decoding for a batch; returns content ids (no bos/eos)."""
    if max_len < 1:
        raise ValidationError(f"max_len must be >= 1, got {max_len}")
    with T.no_grad():
        state = encode(model, ids, key_mask, mode=mode)
        b = ids.shape[0]
        prefix = np.full((b, 1), bos, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        outs: list[list[int]] = [[] for _ in range(b)]
        for _ in range(max_len):
            logits = decode_logits(model, prefix, state.final, state.key_mask)
            nxt = np.argmax(logits.data[:, -1, :], axis=-1).astype(np.int64)
            for i in range(b):
                if done[i]:
                    continue
                if int(nxt[i]) == eos:
                    done[i] = True
                else:
                    outs[i].append(int(nxt[i]))
            if done.all():
                break
            prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
    return outs


def generate(model: Model, token_ids: np.ndarray, bos: int, eos: int,
             max_len: int) -> list[int]:
    """Greedy decoding for a single input id sequence (1D)."""
    ids = np.asarray(token_ids, dtype=np.int64)[None, :]
    return generate_batch(model, ids, None, bos, eos, max_len)[0]


def score_options(model: Model, ids: np.ndarray, options: list[str],
                  tokenize, bos: int, eos: int,
                  key_mask: np.ndarray | None = None,
                  mode: str = "route_learned") -> tuple[int, list[ScoredOption]]:
    """Pick the option with the highest log-likelihood; ties go to the lowest
    index. ``tokenize`` maps option text to content ids. The input is encoded
    once and the memory reused across options.
    """
    if len(options) < 2:
        raise ValidationError(f"need at least 2 options, got {len(options)}")
    for o in options:
        if not o.strip():
            raise ValidationError("empty option text")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    with T.no_grad():
        state = encode(model, ids, key_mask, mode=mode)
        scored = []
        for text in options:
            content = tokenize(text)
            seq = [bos] + list(content) + [eos]
            dec_in = np.asarray(seq[:-1], dtype=np.int64)[None, :]
            labels = np.asarray(seq[1:], dtype=np.int64)
            logits = decode_logits(model, dec_in, state.final, state.key_mask)
            ls = T.log_softmax(logits, axis=-1).data[0]
            toklp = ls[np.arange(labels.size), labels]
            total = float(toklp.sum())
            scored.append(ScoredOption(text, list(content), total,
                                       total / labels.size))
    key = ("normalized_loglik" if model.config.length_normalized_scoring
           else "total_loglik")
    best = 0
    for i in range(1, len(scored)):
        if getattr(scored[i], key) > getattr(scored[best], key):
            best = i
    return best, scored
