"""Optimization: Adam with global-norm clipping, linear warmup, and
module-group freezing.

Frozen groups are excluded from both the update and the clip norm, so a
frozen parameter array is bit-identical across any number of steps. Updates
are skipped for parameters that received no gradient (sparsely activated
modules stay untouched by instances that did not route to them).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import kernels
from .autodiff.tensor import Tensor
from .errors import ConfigError, ContractError
from .model import PARAM_GROUPS, Model

_GROUP_ALIASES = {
    "rm": "reasoning_modules", "rms": "reasoning_modules",
    "rep": "representation", "representation": "representation",
    "reasoning_modules": "reasoning_modules", "adapters": "adapters",
    "routers": "routers", "stop_gates": "stop_gates", "gates": "stop_gates",
    "decoder": "decoder", "embeddings": "embeddings", "embed": "embeddings",
}


@dataclass
class FreezeMask:
    """True = frozen. Group names follow the parameter registry."""
    representation: bool = False
    reasoning_modules: bool = False
    adapters: bool = False
    routers: bool = False
    stop_gates: bool = False
    decoder: bool = False
    embeddings: bool = False

    @classmethod
    def from_names(cls, names) -> "FreezeMask":
        mask = cls()
        for raw in names:
            name = raw.strip()
            if not name:
                continue
            try:
                setattr(mask, _GROUP_ALIASES[name], True)
            except KeyError:
                raise ConfigError(
                    f"unknown freeze group {name!r}; expected subset of "
                    f"{sorted(set(_GROUP_ALIASES))}") from None
        return mask

    def frozen_groups(self) -> set[str]:
        return {f.name for f in fields(self) if getattr(self, f.name)}

    def all_frozen(self) -> bool:
        return all(getattr(self, f.name) for f in fields(self))

    def names(self) -> list[str]:
        return sorted(self.frozen_groups())


def clip_scale(grad_norm: float, clip: float) -> float:
    """Scale factor bringing the global norm to <= clip (1.0 if already)."""
    if clip <= 0 or grad_norm <= clip:
        return 1.0
    return clip / grad_norm


class Adam:
    """Adaptive moment estimation over the model's named parameters."""

    def __init__(self, model: Model, lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: float = 1.0,
                 freeze: FreezeMask | None = None):
        self.model = model
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        frozen = (freeze or FreezeMask()).frozen_groups() - set()
        unknown = frozen - set(PARAM_GROUPS)
        if unknown:
            raise ConfigError(f"unknown parameter groups: {sorted(unknown)}")
        self.frozen = frozen
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._trainable = [
            (name, p) for name, p in model.named_parameters().items()
            if Model.group_of(name) not in self.frozen
        ]
        if not self._trainable:
            raise ContractError("all parameter groups are frozen; nothing to train")

    def grad_norm(self) -> float:
        sq = 0.0
        for _, p in self._trainable:
            if p.grad is not None:
                sq += float((p.grad * p.grad).sum())
        return math.sqrt(sq)

    def step(self, lr: float | None = None) -> dict:
        """One update over all trainable parameters with live gradients."""
        self.t += 1
        lr = self.lr if lr is None else lr
        norm = self.grad_norm()
        scale = clip_scale(norm, self.clip_norm)
        updated = 0
        for name, p in self._trainable:
            if p.grad is None:
                continue
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros(p.size)
                self._v[name] = np.zeros(p.size)
            kernels.adam_step(p.data.reshape(-1), p.grad.reshape(-1),
                              m, self._v[name], lr, self.beta1, self.beta2,
                              self.eps, self.t, scale)
            updated += 1
        return {"grad_norm": norm, "clip_scale": scale, "updated": updated,
                "lr": lr, "step": self.t}


class WarmupSchedule:
    """Linear warmup to the base rate, constant afterwards."""

    def __init__(self, base_lr: float, total_steps: int, warmup_ratio: float = 0.1):
        self.base_lr = base_lr
        self.warmup_steps = max(1, int(total_steps * warmup_ratio))

    def lr(self, step: int) -> float:
        if step >= self.warmup_steps:
            return self.base_lr
        return self.base_lr * (step + 1) / self.warmup_steps
