"""Corpus assembly: seeded generation, disjoint splits, and the on-disk
dataset directory layout.

Layout written by :func:`write_dataset`:

    vocab.txt                  one non-special token per line
    manifest.json              sizes, seed, per-file instance counts
    pretrain_train.jsonl       skill-labeled instances, all six skills
    pretrain_val.jsonl         held-out labeled instances (routing oracle)
    <task>_train.jsonl         downstream splits per task
    <task>_val.jsonl
    <task>_test.jsonl
    <task>_fewshot.jsonl       first 64 training instances
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field

from ..config import SKILL_NAMES
from ..errors import GenerationError
from .generators import DOWNSTREAM_TASKS, gen_downstream, gen_skill_instance, leakage_check
from .io import SkillInstance, atomic_write_text, load_jsonl, save_jsonl
from .vocab import Vocabulary
from .world import SyntheticWorld, build_world

PRETRAIN_PER_SKILL = 5000
PRETRAIN_VAL_PER_SKILL = 250
DOWNSTREAM_SPLITS = (1600, 200, 200)   # train / val / test, 2000 total per task
FEWSHOT_SIZE = 64

_ATTEMPT_FACTOR = 40


def _unique_instances(make, count: int, rng) -> list[SkillInstance]:
    """Generate ``count`` distinct instances (identity = (input, target))."""
    seen = set()
    out = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > count * _ATTEMPT_FACTOR:
            raise GenerationError(
                f"could not generate {count} distinct instances "
                f"(got {len(out)} after {attempts} attempts)")
        inst = make(rng)
        key = (inst.input, inst.target)
        if key in seen:
            continue
        seen.add(key)
        out.append(inst)
    return out


def generate_pretrain(world: SyntheticWorld, seed: int,
                      per_skill: int = PRETRAIN_PER_SKILL,
                      val_per_skill: int = PRETRAIN_VAL_PER_SKILL):
    """Labeled pretraining corpus: disjoint train/val per skill."""
    train, val = [], []
    for skill in SKILL_NAMES:
        rng = random.Random(f"pretrain:{seed}:{skill}")
        batch = _unique_instances(lambda r: gen_skill_instance(world, skill, r),
                                  per_skill + val_per_skill, rng)
        train.extend(batch[:per_skill])
        val.extend(batch[per_skill:])
    return train, val


def generate_downstream(world: SyntheticWorld, task: str, seed: int,
                        splits=DOWNSTREAM_SPLITS, fewshot: int = FEWSHOT_SIZE):
    n_train, n_val, n_test = splits
    rng = random.Random(f"downstream:{seed}:{task}")
    batch = _unique_instances(lambda r: gen_downstream(world, task, r),
                              n_train + n_val + n_test, rng)
    return {
        "train": batch[:n_train],
        "val": batch[n_train:n_train + n_val],
        "test": batch[n_train + n_val:],
        "fewshot": batch[:min(fewshot, n_train)],
    }


@dataclass
class Dataset:
    """In-memory view of a dataset directory."""
    vocab: Vocabulary
    pretrain_train: list[SkillInstance]
    pretrain_val: list[SkillInstance]
    tasks: dict[str, dict[str, list[SkillInstance]]] = field(default_factory=dict)

    def split(self, task: str, name: str) -> list[SkillInstance]:
        if task == "pretrain":
            return self.pretrain_train if name == "train" else self.pretrain_val
        return self.tasks[task][name]


def build_dataset(seed: int, per_skill: int = PRETRAIN_PER_SKILL,
                  val_per_skill: int = PRETRAIN_VAL_PER_SKILL,
                  splits=DOWNSTREAM_SPLITS, fewshot: int = FEWSHOT_SIZE,
                  world_sizes: dict | None = None) -> tuple[Dataset, SyntheticWorld]:
    world = build_world(seed, **(world_sizes or {}))
    pt_train, pt_val = generate_pretrain(world, seed, per_skill, val_per_skill)
    tasks = {t: generate_downstream(world, t, seed, splits, fewshot)
             for t in DOWNSTREAM_TASKS}

    eval_insts = [i for t in DOWNSTREAM_TASKS
                  for split in ("val", "test") for i in tasks[t][split]]
    problems = leakage_check(world, pt_train, eval_insts)
    if problems:
        raise GenerationError("pretraining/evaluation leakage: " + problems[0])

    texts = [i.input for i in pt_train + pt_val] + [i.target for i in pt_train + pt_val]
    for t in DOWNSTREAM_TASKS:
        for split in tasks[t].values():
            texts.extend(i.input for i in split)
            texts.extend(i.target for i in split)
    vocab = Vocabulary.build(texts)
    return Dataset(vocab, pt_train, pt_val, tasks), world


def write_dataset(out_dir, dataset: Dataset, seed: int):
    os.makedirs(out_dir, exist_ok=True)
    dataset.vocab.save(os.path.join(out_dir, "vocab.txt"))
    save_jsonl(os.path.join(out_dir, "pretrain_train.jsonl"), dataset.pretrain_train)
    save_jsonl(os.path.join(out_dir, "pretrain_val.jsonl"), dataset.pretrain_val)
    counts = {"pretrain_train": len(dataset.pretrain_train),
              "pretrain_val": len(dataset.pretrain_val)}
    for task, splits in sorted(dataset.tasks.items()):
        for name, insts in sorted(splits.items()):
            save_jsonl(os.path.join(out_dir, f"{task}_{name}.jsonl"), insts)
            counts[f"{task}_{name}"] = len(insts)
    manifest = {"format_version": 1, "seed": seed, "counts": counts,
                "vocab_size": len(dataset.vocab)}
    atomic_write_text(os.path.join(out_dir, "manifest.json"),
                      json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_dataset_dir(path) -> Dataset:
    vocab = Vocabulary.load(os.path.join(path, "vocab.txt"))
    ds = Dataset(
        vocab=vocab,
        pretrain_train=load_jsonl(os.path.join(path, "pretrain_train.jsonl")),
        pretrain_val=load_jsonl(os.path.join(path, "pretrain_val.jsonl")),
    )
    for task in DOWNSTREAM_TASKS:
        splits = {}
        for name in ("train", "val", "test", "fewshot"):
            p = os.path.join(path, f"{task}_{name}.jsonl")
            if os.path.exists(p):
                splits[name] = load_jsonl(p)
        if splits:
            ds.tasks[task] = splits
    return ds
