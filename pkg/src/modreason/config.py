"""Model architecture configuration: the single source of truth for shapes."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError

SKILL_NAMES = ("logic", "qa", "ner", "nli", "fact", "general")
GENERAL_SKILL = "general"


@dataclass
class ModelConfig:
    """Architecture and numerics hyperparameters.

    Defaults are the desk-scale preset (trains in minutes on one CPU core);
    :func:`paper_scale` returns the large preset with the 9+3 layer split.
    """

    vocab_size: int = 0  # filled in from the vocabulary before building a model
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    n_rep_layers: int = 2          # representation module depth
    n_rm_layers: int = 1           # transformer layers per reasoning module
    depth: int = 3                 # cascaded reasoning steps
    n_skills: int = 6
    k: int = 2                     # sparsely activated modules per step
    d_adapter: int = 16            # adapter bottleneck width
    d_gate_hidden: int = 64        # stop-gate FFN hidden width
    d_router_hidden: int = 64      # router head FFN hidden width
    n_dec_layers: int = 2
    max_len: int = 64              # input truncation length (token count incl. [CLS])
    adapters_enabled: bool = True
    use_positions: bool = True        # disabled only by equivariance tests
    stop_residual: str = "pre_gate"   # residual base: pre_gate (as printed) | post_gate
    length_normalized_scoring: bool = False
    routing_target: str = "joint"     # joint (skill+general mass split) | binary
    layer_norm_eps: float = 1e-6

    def validate(self) -> "ModelConfig":
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) not divisible by n_heads ({self.n_heads})")
        if not 1 <= self.k <= self.n_skills:
            raise ConfigError(f"k ({self.k}) must be in 1..n_skills ({self.n_skills})")
        if self.d_adapter >= self.d_model:
            raise ConfigError(
                f"d_adapter ({self.d_adapter}) must be smaller than d_model ({self.d_model})")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.stop_residual not in ("pre_gate", "post_gate"):
            raise ConfigError(f"unknown stop_residual mode {self.stop_residual!r}")
        if self.routing_target not in ("joint", "binary"):
            raise ConfigError(f"unknown routing_target mode {self.routing_target!r}")
        if self.n_skills != len(SKILL_NAMES):
            raise ConfigError(
                f"n_skills ({self.n_skills}) must match the fixed skill set "
                f"({len(SKILL_NAMES)})")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()


def desk_scale(**overrides) -> ModelConfig:
    return dataclasses.replace(ModelConfig(), **overrides)


def paper_scale(**overrides) -> ModelConfig:
    """Large preset: 9 representation layers, 3-layer reasoning modules,
    depth 3, adapter bottleneck 256."""
    cfg = ModelConfig(
        d_model=768, n_heads=12, d_ff=3072,
        n_rep_layers=9, n_rm_layers=3, depth=3,
        d_adapter=256, d_gate_hidden=768, d_router_hidden=768,
        n_dec_layers=12, max_len=512,
    )
    return dataclasses.replace(cfg, **overrides)


def tiny(**overrides) -> ModelConfig:
    """Micro preset for unit tests and gradient checks."""
    cfg = ModelConfig(
        d_model=16, n_heads=2, d_ff=32,
        n_rep_layers=1, n_rm_layers=1, depth=2,
        d_adapter=4, d_gate_hidden=8, d_router_hidden=8,
        n_dec_layers=1, max_len=32,
    )
    return dataclasses.replace(cfg, **overrides)
