"""Full model assembly and the named-parameter registry.

The registry fixes a deterministic parameter order (construction order) used
by the optimizer, the checkpoint format, and the freeze masks. Reasoning
module layers are stored once per skill and referenced at every reasoning
step — the cross-depth weight sharing is literal object sharing, so gradient
accumulation over steps lands in a single storage. Adapters, routers and stop
gates are distinct objects per step.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .autodiff.tensor import Tensor
from .config import SKILL_NAMES, ModelConfig
from .errors import ConfigError
from .nn import (
    AdapterParams,
    DecoderLayerParams,
    EmbeddingParams,
    FFNParams,
    LayerNormParams,
    TransformerLayerParams,
    glorot,
    init_adapter,
    init_decoder_layer,
    init_embedding,
    init_layer_norm,
    init_transformer_layer,
)

PARAM_GROUPS = (
    "representation", "reasoning_modules", "adapters", "routers",
    "stop_gates", "decoder", "embeddings",
)

_PREFIX_TO_GROUP = {
    "embed": "embeddings",
    "rep": "representation",
    "rm": "reasoning_modules",
    "adapter": "adapters",
    "router": "routers",
    "gate": "stop_gates",
    "dec": "decoder",
}


def init_mlp(rng, d_in: int, d_hidden: int, d_out: int,
             zero_out: bool = False, out_scale: float | None = None) -> FFNParams:
    """Two-layer MLP params; the output projection can start at zero (stop
    gates) or small-random (router heads)."""
    if zero_out:
        w2 = np.zeros((d_hidden, d_out))
    elif out_scale is not None:
        w2 = rng.normal(0.0, out_scale, size=(d_hidden, d_out))
    else:
        w2 = glorot(rng, d_hidden, d_out)
    return FFNParams(
        Tensor(glorot(rng, d_in, d_hidden), requires_grad=True),
        Tensor(np.zeros(d_hidden), requires_grad=True),
        Tensor(w2, requires_grad=True),
        Tensor(np.zeros(d_out), requires_grad=True),
    )


@dataclass
class RouterParams:
    """Per-step skill router: a projection transformer layer and an FFN head
    mapping the [CLS] state to one logit per skill."""
    proj: TransformerLayerParams
    head: FFNParams


class Model:
    """Parameter container for the cascaded reasoning encoder-decoder."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        if config.vocab_size <= 0:
            raise ConfigError("vocab_size must be set before building a model")
        self.config = config
        self.seed = seed
        self._params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        c = config

        self.embed = init_embedding(rng, c.vocab_size, c.d_model,
                                    max_positions=max(c.max_len, 512),
                                    use_positions=c.use_positions)
        self._walk("embed", self.embed)

        self.rep_layers = [init_transformer_layer(rng, c.d_model, c.d_ff)
                           for _ in range(c.n_rep_layers)]
        for i, layer in enumerate(self.rep_layers):
            self._walk(f"rep.{i}", layer)
        self.rep_norm = init_layer_norm(c.d_model)
        self._walk("rep.norm", self.rep_norm)

        # One shared layer stack per skill, referenced at every step.
        self.rms: dict[str, list[TransformerLayerParams]] = {}
        for name in SKILL_NAMES:
            self.rms[name] = [init_transformer_layer(rng, c.d_model, c.d_ff)
                              for _ in range(c.n_rm_layers)]
            for i, layer in enumerate(self.rms[name]):
                self._walk(f"rm.{name}.{i}", layer)

        # Adapters: distinct per (skill, step, layer, sublayer site).
        self.adapters: dict[str, list[list[tuple[AdapterParams, AdapterParams]]]] = {}
        if c.adapters_enabled:
            for name in SKILL_NAMES:
                per_step = []
                for s in range(c.depth):
                    per_layer = []
                    for i in range(c.n_rm_layers):
                        pair = (init_adapter(rng, c.d_model, c.d_adapter),
                                init_adapter(rng, c.d_model, c.d_adapter))
                        self._walk(f"adapter.{name}.s{s}.{i}.attn", pair[0])
                        self._walk(f"adapter.{name}.s{s}.{i}.ffn", pair[1])
                        per_layer.append(pair)
                    per_step.append(per_layer)
                self.adapters[name] = per_step

        # Routers and stop gates: one per reasoning step, not shared.
        self.routers: list[RouterParams] = []
        self.gates: list[FFNParams] = []
        for s in range(c.depth):
            router = RouterParams(
                proj=init_transformer_layer(rng, c.d_model, c.d_ff),
                head=init_mlp(rng, c.d_model, c.d_router_hidden, c.n_skills,
                              out_scale=0.02),
            )
            self._walk(f"router.s{s}", router)
            self.routers.append(router)
            gate = init_mlp(rng, c.d_model, c.d_gate_hidden, c.d_model,
                            zero_out=True)
            self._walk(f"gate.s{s}", gate)
            self.gates.append(gate)

        self.dec_layers = [init_decoder_layer(rng, c.d_model, c.d_ff)
                           for _ in range(c.n_dec_layers)]
        for i, layer in enumerate(self.dec_layers):
            self._walk(f"dec.{i}", layer)
        self.dec_norm = init_layer_norm(c.d_model)
        self._walk("dec.norm", self.dec_norm)

    # -- registry ----------------------------------------------------------

    def _walk(self, prefix: str, obj):
        """Register every Tensor field reachable from a params dataclass."""
        if isinstance(obj, Tensor):
            if prefix in self._params:
                raise ConfigError(f"duplicate parameter name {prefix}")
            self._params[prefix] = obj
        elif dataclasses.is_dataclass(obj):
            for f in dataclasses.fields(obj):
                self._walk(f"{prefix}.{f.name}", getattr(obj, f.name))
        elif isinstance(obj, (list, tuple)):
            for i, item in enumerate(obj):
                self._walk(f"{prefix}.{i}", item)
        # non-Tensor leaves (position cache, flags) are not parameters

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    @staticmethod
    def group_of(name: str) -> str:
        prefix = name.split(".", 1)[0]
        try:
            return _PREFIX_TO_GROUP[prefix]
        except KeyError:
            raise ConfigError(f"parameter {name!r} has no group") from None

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def param_count(self) -> int:
        return sum(t.size for t in self._params.values())

    # -- checkpoint state --------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]):
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ConfigError(
                f"checkpoint/model parameter mismatch: missing={sorted(missing)[:3]} "
                f"extra={sorted(extra)[:3]}")
        for name, t in self._params.items():
            arr = arrays[name]
            if arr.shape != t.data.shape:
                raise ConfigError(
                    f"parameter {name}: checkpoint shape {arr.shape} != model "
                    f"shape {t.data.shape}")
            t.data[...] = arr
