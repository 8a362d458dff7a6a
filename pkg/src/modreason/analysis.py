"""Routing-weight analysis and report emission.

``extract_routing`` averages the per-step skill routing weights over an
evaluation set (one row per step; each row is itself a distribution) and
records per-instance top-k traces. ``emit_report`` writes a stable, versioned
CSV + JSON pair, deterministically and atomically.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import tensor as T
from .config import SKILL_NAMES
from .corpus import Vocabulary
from .corpus.io import atomic_write_text
from .encoder import MODE_LEARNED, encode
from .errors import ValidationError
from .model import Model
from .trainer import batches, make_batch

ANALYSIS_SCHEMA_VERSION = 1

CSV_HEADER = "task,step,skill,mean_weight,activation_rate"


@dataclass
class RoutingProfile:
    """Averaged routing behaviour of one task's evaluation set."""
    task: str
    mean_weights: np.ndarray       # (depth, n_skills); rows sum to 1 (+-1e-6)
    activation_rate: np.ndarray    # (depth, n_skills) in [0, 1]
    traces: list[list[tuple[int, ...]]] = field(default_factory=list)
    count: int = 0

    def validate(self):
        sums = self.mean_weights.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ValidationError(f"profile rows do not sum to 1: {sums}")
        return self

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "count": self.count,
            "skills": list(SKILL_NAMES),
            "mean_weights": self.mean_weights.tolist(),
            "activation_rate": self.activation_rate.tolist(),
            "traces": [[list(a) for a in t] for t in self.traces],
        }


def extract_routing(model: Model, vocab: Vocabulary, instances, task: str,
                    batch_size: int = 32, mode: str = MODE_LEARNED) -> RoutingProfile:
    """Average per-step routing weights over an evaluation set."""
    depth, n = model.config.depth, model.config.n_skills
    sums = np.zeros((depth, n))
    act = np.zeros((depth, n))
    traces: list[list[tuple[int, ...]]] = []
    total = 0
    with T.no_grad():
        for chunk in batches(list(instances), batch_size):
            ids, mask, _, _ = make_batch(chunk, vocab, model.config.max_len)
            state = encode(model, ids, mask, mode=mode)
            for i in range(len(chunk)):
                traces.append([step.decisions[i].active for step in state.steps])
            for s, step in enumerate(state.steps):
                for d in step.decisions:
                    sums[s] += d.weights
                    for j in d.active:
                        act[s, j] += 1
            total += len(chunk)
    if total == 0:
        raise ValidationError(f"no instances to profile for task {task!r}")
    return RoutingProfile(task, sums / total, act / total, traces, total).validate()


def profiles_csv(profiles) -> str:
    """One row per task x step x skill; steps are 1-based."""
    lines = [CSV_HEADER]
    for p in profiles:
        for s in range(p.mean_weights.shape[0]):
            for j, skill in enumerate(SKILL_NAMES):
                lines.append(f"{p.task},{s + 1},{skill},"
                             f"{p.mean_weights[s, j]!r},{p.activation_rate[s, j]!r}")
    return "\n".join(lines) + "\n"


def emit_report(profiles, metrics: dict, out_dir) -> dict[str, str]:
    """Write routing.csv and analysis.json; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "routing.csv")
    json_path = os.path.join(out_dir, "analysis.json")
    atomic_write_text(csv_path, profiles_csv(profiles))
    bundle = {
        "schema_version": ANALYSIS_SCHEMA_VERSION,
        "skills": list(SKILL_NAMES),
        "profiles": [p.to_dict() for p in profiles],
        "metrics": metrics,
    }
    atomic_write_text(json_path, json.dumps(bundle, sort_keys=True, indent=2) + "\n")
    return {"csv": csv_path, "json": json_path}


def load_report(json_path) -> dict:
    with open(json_path, encoding="utf-8") as f:
        return json.load(f)
