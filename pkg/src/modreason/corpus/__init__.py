"""Synthetic skill corpora: seeded world, per-skill generators, tokenizer,
dataset assembly and JSONL ingestion."""

from .datasets import (
    DOWNSTREAM_SPLITS,
    FEWSHOT_SIZE,
    PRETRAIN_PER_SKILL,
    PRETRAIN_VAL_PER_SKILL,
    Dataset,
    build_dataset,
    generate_downstream,
    generate_pretrain,
    load_dataset_dir,
    write_dataset,
)
from .generators import (
    DOWNSTREAM_TASKS,
    TASK_OPTIONS,
    gen_downstream,
    gen_skill_instance,
    leakage_check,
)
from .io import SkillInstance, load_jsonl, save_jsonl
from .vocab import SPECIAL_TOKENS, Vocabulary
from .world import SyntheticWorld, build_world

__all__ = [
    "DOWNSTREAM_SPLITS", "DOWNSTREAM_TASKS", "Dataset", "FEWSHOT_SIZE",
    "PRETRAIN_PER_SKILL", "PRETRAIN_VAL_PER_SKILL", "SPECIAL_TOKENS",
    "SkillInstance", "SyntheticWorld", "TASK_OPTIONS", "Vocabulary",
    "build_dataset", "build_world", "gen_downstream", "gen_skill_instance",
    "generate_downstream", "generate_pretrain", "leakage_check",
    "load_dataset_dir", "load_jsonl", "save_jsonl", "write_dataset",
]
