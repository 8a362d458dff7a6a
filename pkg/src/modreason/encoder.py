"""Cascaded reasoning encoder.

The representation stack produces H0. Each reasoning step then: routes the
instance (softmax over skills from the [CLS] state of a projection layer),
sparsely activates the top-k reasoning modules, mixes their outputs convexly
with renormalized weights, and applies a residual stop gate:

    step i:  mix_i   = sum_j w_ij * RM_j(gated_{i-1})
             gated_i = mix_{i-1} + gate_i(mix_i)      (gated_0 := mix_0 := H0)

Routing is instance-level: one decision per sequence, applied to all
positions. Only the activated modules are executed — the batch is regrouped
per skill, so non-active modules receive no gradient from an instance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import Tensor
from .config import SKILL_NAMES
from .errors import ContractError
from .model import Model
from .nn import embed_ids, layer_norm, transformer_layer

log = logging.getLogger(__name__)

MODE_LEARNED = "route_learned"
MODE_FORCED = "route_forced"
MODE_FULL = "full_activation"


@dataclass(frozen=True)
class SkillId:
    index: int
    name: str


def skill_ids() -> tuple[SkillId, ...]:
    return tuple(SkillId(i, n) for i, n in enumerate(SKILL_NAMES))


def skill_by_name(name: str) -> SkillId:
    try:
        return SkillId(SKILL_NAMES.index(name), name)
    except ValueError:
        raise ContractError(f"unknown skill {name!r}; expected one of {SKILL_NAMES}") from None


@dataclass
class RoutingDecision:
    """One instance-level routing outcome at one step."""
    step: int
    weights: np.ndarray              # full softmax over all n skills
    active: tuple[int, ...]          # top-k indices, ascending
    renormalized: np.ndarray         # softmax over the active logits, same order

    def validate(self):
        assert abs(self.weights.sum() - 1.0) < 1e-9
        assert abs(self.renormalized.sum() - 1.0) < 1e-9


@dataclass
class StepState:
    mixture: Tensor                  # pre-gate mixture at this step
    gated: Tensor                    # post-gate output at this step
    decisions: list[RoutingDecision]
    router_logits: Tensor | None     # (B, n); None in forced mode


@dataclass
class EncoderState:
    """Everything the cascade produced, threaded to the decoder and analysis."""
    h0: Tensor
    steps: list[StepState] = field(default_factory=list)
    key_mask: np.ndarray | None = None

    @property
    def final(self) -> Tensor:
        return self.steps[-1].gated if self.steps else self.h0

    @property
    def depth(self) -> int:
        return len(self.steps)


def top_k_indices(logits_row: np.ndarray, k: int) -> tuple[int, ...]:
    """Indices of the k largest entries; exact ties go to the lowest index."""
    order = np.lexsort((np.arange(logits_row.size), -logits_row))
    return tuple(sorted(int(i) for i in order[:k]))


# ---------------------------------------------------------------------------
# forward pieces (batched)


def represent(model: Model, ids: np.ndarray, key_mask: np.ndarray | None = None) -> Tensor:
    """Initial contextual states H0: embeddings through the representation
    stack (plain layers, no adapters, no routing), final layer norm."""
    c = model.config
    if ids.shape[-1] > c.max_len:
        log.warning("input length %d exceeds max_len %d; truncating",
                    ids.shape[-1], c.max_len)
        ids = ids[..., : c.max_len]
        if key_mask is not None:
            key_mask = key_mask[..., : c.max_len]
    h = embed_ids(model.embed, ids)
    for layer in model.rep_layers:
        h = transformer_layer(h, layer, c.n_heads, key_mask=key_mask,
                              eps=c.layer_norm_eps)
    return layer_norm(h, model.rep_norm, c.layer_norm_eps)


def rm_forward_batch(model: Model, h: Tensor, skill_index: int, step: int,
                     key_mask: np.ndarray | None = None) -> Tensor:
    """Run one skill's shared layers with that step's adapter set."""
    c = model.config
    name = SKILL_NAMES[skill_index]
    layers = model.rms[name]
    for i, layer in enumerate(layers):
        adapters = None
        if c.adapters_enabled:
            adapters = model.adapters[name][step][i]
        h = transformer_layer(h, layer, c.n_heads, adapters=adapters,
                              key_mask=key_mask, eps=c.layer_norm_eps)
    return h


def route_batch(model: Model, h_tilde: Tensor, step: int,
                key_mask: np.ndarray | None = None,
                mode: str = MODE_LEARNED,
                forced_skill: int | None = None):
    """Instance-level routing for a batch.

    Returns (decisions, active (B,k) int array, renorm weights (B,k) Tensor,
    router logits (B,n) Tensor or None). The renormalized weights stay in the
    graph so the task loss reaches the router through the mixture.
    """
    c = model.config
    b = h_tilde.shape[0]

    if mode == MODE_FORCED:
        if forced_skill is None:
            raise ContractError("route_forced mode requires a skill index")
        active = np.full((b, 1), forced_skill, dtype=np.int64)
        renorm = Tensor(np.ones((b, 1)))
        onehot = np.zeros(c.n_skills)
        onehot[forced_skill] = 1.0
        decisions = [RoutingDecision(step, onehot.copy(), (forced_skill,),
                                     np.ones(1)) for _ in range(b)]
        return decisions, active, renorm, None

    router = model.routers[step]
    proj = transformer_layer(h_tilde, router.proj, c.n_heads, key_mask=key_mask,
                             eps=c.layer_norm_eps)
    cls = T.take_position(proj, 0)
    hidden = T.relu(T.add_bias(T.matmul(cls, router.head.w1), router.head.b1))
    logits = T.add_bias(T.matmul(hidden, router.head.w2), router.head.b2)
    weights = T.softmax(logits, axis=-1)

    k = c.n_skills if mode == MODE_FULL else c.k
    active = np.empty((b, k), dtype=np.int64)
    for i in range(b):
        active[i] = top_k_indices(logits.data[i], k)

    # softmax over the selected logits; with k == n this equals the full weights
    flat_idx = (np.arange(b)[:, None] * c.n_skills + active).ravel()
    sel = T.reshape(T.index_rows(T.reshape(logits, (b * c.n_skills,)), flat_idx, unique=True), (b, k))
    renorm = T.softmax(sel, axis=-1)

    decisions = [
        RoutingDecision(step, weights.data[i].copy(), tuple(int(j) for j in active[i]),
                        renorm.data[i].copy())
        for i in range(b)
    ]
    return decisions, active, renorm, logits


def combine_batch(model: Model, h_tilde: Tensor, active: np.ndarray,
                  renorm: Tensor, step: int,
                  key_mask: np.ndarray | None = None) -> Tensor:
    """Router-weighted mixture over the activated modules.

    Instances are regrouped per skill so each activated module runs once on
    the sub-batch that selected it; summation order is fixed (ascending skill
    index) for determinism.
    """
    b, k = active.shape
    mixture = None
    for j in range(model.config.n_skills):
        rows = np.nonzero((active == j).any(axis=1))[0]
        if rows.size == 0:
            continue
        sub = T.index_rows(h_tilde, rows, unique=True)
        sub_mask = key_mask[rows] if key_mask is not None else None
        out = rm_forward_batch(model, sub, j, step, key_mask=sub_mask)
        cols = np.argmax(active[rows] == j, axis=1)
        w = T.index_rows(T.reshape(renorm, (b * k,)), rows * k + cols, unique=True)
        contrib = T.scatter_rows(T.scale_rows(out, w), rows, b)
        mixture = contrib if mixture is None else T.add(mixture, contrib)
    return mixture


def stop_gate_batch(model: Model, base: Tensor, h_mix: Tensor, step: int) -> Tensor:
    """Residual stop gate: base + FFN(h_mix); the FFN output projection is
    zero-initialized so the cascade starts as the identity above H0."""
    gate = model.gates[step]
    z = T.relu(T.add_bias(T.matmul(h_mix, gate.w1), gate.b1))
    return T.add(base, T.add_bias(T.matmul(z, gate.w2), gate.b2))


def encode(model: Model, ids: np.ndarray, key_mask: np.ndarray | None = None,
           mode: str = MODE_LEARNED, forced_skill: int | None = None) -> EncoderState:
    """Run the full cascade; the returned state keeps every routing decision."""
    c = model.config
    h0 = represent(model, ids, key_mask)
    state = EncoderState(h0=h0, key_mask=key_mask)
    h_tilde = h0
    prev_mix = h0
    for step in range(c.depth):
        decisions, active, renorm, logits = route_batch(
            model, h_tilde, step, key_mask, mode=mode, forced_skill=forced_skill)
        h_mix = combine_batch(model, h_tilde, active, renorm, step, key_mask)
        base = prev_mix if c.stop_residual == "pre_gate" else h_tilde
        h_tilde = stop_gate_batch(model, base, h_mix, step)
        state.steps.append(StepState(mixture=h_mix, gated=h_tilde,
                                     decisions=decisions, router_logits=logits))
        prev_mix = h_mix
    return state


# ---------------------------------------------------------------------------
# single-instance views (contract-level API; tests exercise these directly)


def _expand(h: Tensor) -> Tensor:
    return T.reshape(h, (1,) + h.shape)


def _squeeze(h: Tensor) -> Tensor:
    return T.reshape(h, h.shape[1:])


def route(model: Model, h_tilde: Tensor, step: int) -> RoutingDecision:
    decisions, _, _, _ = route_batch(model, _expand(h_tilde), step)
    return decisions[0]


def rm_forward(model: Model, h: Tensor, skill: SkillId, step: int) -> Tensor:
    return _squeeze(rm_forward_batch(model, _expand(h), skill.index, step))


def combine(model: Model, h_tilde: Tensor, decision: RoutingDecision, step: int) -> Tensor:
    active = np.asarray([decision.active], dtype=np.int64)
    renorm = Tensor(decision.renormalized[None, :])
    return _squeeze(combine_batch(model, _expand(h_tilde), active, renorm, step))


def stop_gate(model: Model, h_prev_mixture: Tensor, h_mixture: Tensor, step: int) -> Tensor:
    return _squeeze(stop_gate_batch(model, _expand(h_prev_mixture),
                                    _expand(h_mixture), step))
