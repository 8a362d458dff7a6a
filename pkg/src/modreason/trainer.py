"""Training and experiment protocols.

Pretraining: multi-task teacher forcing over the labeled skill corpus plus
the skill routing loss (targets put equal mass on the instance's skill and
the general skill; every step is supervised). Adaptation: teacher forcing
only, with optional module-group freezing. ``run_experiment`` drives the
whole protocol from an ExperimentSpec and emits a deterministic JSON report.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import random
from dataclasses import dataclass, field

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import Tensor, backward
from .checkpoint import Checkpoint, load as load_checkpoint, save as save_checkpoint
from .config import SKILL_NAMES, ModelConfig
from .corpus import TASK_OPTIONS, Dataset, SkillInstance, Vocabulary, load_dataset_dir
from .encoder import MODE_FULL, MODE_LEARNED, encode
from .errors import ConfigError, ContractError, ValidationError
from .model import Model
from .optim import Adam, FreezeMask, WarmupSchedule
from .seq2seq import generate_batch, score_options, teacher_forcing_loss

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# batching


def make_batch(instances, vocab: Vocabulary, max_len: int):
    """Token ids (B, T) with [CLS] first, key mask, target ids, skill indices."""
    rows = []
    for inst in instances:
        ids = [vocab.cls_id] + vocab.tokenize(inst.input)
        if len(ids) > max_len:
            log.warning("input length %d exceeds max_len %d; truncating",
                        len(ids), max_len)
            ids = ids[:max_len]
        rows.append(ids)
    t = max(len(r) for r in rows)
    ids = np.full((len(rows), t), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((len(rows), t))
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = 1.0
    targets = [vocab.tokenize(inst.target) for inst in instances]
    skills = [SKILL_NAMES.index(inst.skill) if inst.skill is not None else None
              for inst in instances]
    return ids, mask, targets, skills


def batches(items, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


# ---------------------------------------------------------------------------
# losses


def routing_targets(skill_indices, n_skills: int) -> np.ndarray:
    """Supervision rows: mass 0.5 on the instance skill and 0.5 on general
    (all mass on general when the instance skill *is* general)."""
    general = SKILL_NAMES.index("general")
    rows = np.zeros((len(skill_indices), n_skills))
    for i, s in enumerate(skill_indices):
        if s == general:
            rows[i, general] = 1.0
        else:
            rows[i, s] = 0.5
            rows[i, general] = 0.5
    return rows


def routing_labels(skill_indices, n_skills: int) -> np.ndarray:
    """Binary multi-label variant: 1 on the instance skill and on general."""
    general = SKILL_NAMES.index("general")
    rows = np.zeros((len(skill_indices), n_skills))
    for i, s in enumerate(skill_indices):
        rows[i, s] = 1.0
        rows[i, general] = 1.0
    return rows


def routing_loss(step_logits, skill_indices, n_skills: int,
                 target_mode: str = "joint") -> Tensor:
    """Cross-entropy between each step's router softmax and the skill target,
    averaged over steps."""
    if any(s is None for s in skill_indices):
        raise ContractError("routing loss requires a skill label on every instance")
    if not step_logits or any(lg is None for lg in step_logits):
        raise ContractError("routing loss requires learned-routing logits per step")
    if target_mode == "binary":
        labels = Tensor(routing_labels(skill_indices, n_skills))
        per_step = [T.bce_with_logits(lg, labels) for lg in step_logits]
    else:
        targets = Tensor(routing_targets(skill_indices, n_skills))
        per_step = [T.cross_entropy(lg, targets) for lg in step_logits]
    total = per_step[0]
    for ls in per_step[1:]:
        total = T.add(total, ls)
    return T.mul_scalar(total, 1.0 / len(per_step))


def _routing_dump(state) -> str:
    lines = []
    for s, step in enumerate(state.steps):
        w = np.mean([d.weights for d in step.decisions], axis=0)
        lines.append(f"step {s}: " + " ".join(
            f"{n}={v:.4f}" for n, v in zip(SKILL_NAMES, w)))
    return "; ".join(lines)


def pretrain_step(model: Model, opt: Adam, batch, vocab: Vocabulary,
                  lam: float, encode_mode: str = MODE_LEARNED,
                  lr: float | None = None) -> dict:
    """One optimizer step of teacher forcing + weighted routing loss."""
    ids, mask, targets, skills = make_batch(batch, vocab, model.config.max_len)
    if any(s is None for s in skills):
        raise ContractError("pretraining requires a skill label on every instance")
    model.zero_grad()
    state = encode(model, ids, mask, mode=encode_mode)
    loss_tf = teacher_forcing_loss(model, state, targets, vocab.bos_id,
                                   vocab.eos_id, vocab.pad_id)
    loss_r = routing_loss([st.router_logits for st in state.steps], skills,
                          model.config.n_skills, model.config.routing_target)
    total = T.add(loss_tf, T.mul_scalar(loss_r, lam)) if lam != 0.0 else loss_tf
    if not math.isfinite(total.item()):
        raise FloatingPointError(
            f"non-finite pretraining loss; routing weights: {_routing_dump(state)}")
    backward(total)
    stats = opt.step(lr)
    return {"loss_total": total.item(), "loss_tf": loss_tf.item(),
            "loss_r": loss_r.item(), **stats}


def adapt_step(model: Model, opt: Adam, batch, vocab: Vocabulary,
               encode_mode: str = MODE_LEARNED, lr: float | None = None) -> dict:
    """One optimizer step of teacher forcing only (no routing supervision)."""
    ids, mask, targets, _ = make_batch(batch, vocab, model.config.max_len)
    model.zero_grad()
    state = encode(model, ids, mask, mode=encode_mode)
    loss = teacher_forcing_loss(model, state, targets, vocab.bos_id,
                                vocab.eos_id, vocab.pad_id)
    if not math.isfinite(loss.item()):
        raise FloatingPointError(
            f"non-finite adaptation loss; routing weights: {_routing_dump(state)}")
    backward(loss)
    stats = opt.step(lr)
    return {"loss_tf": loss.item(), "loss_total": loss.item(), **stats}


# ---------------------------------------------------------------------------
# evaluation


def normalize_answer(text: str) -> str:
    return " ".join(text.split())


def exact_match(model: Model, vocab: Vocabulary, instances,
                batch_size: int = 32, max_gen_len: int = 8,
                mode: str = MODE_LEARNED) -> float:
    """Fraction of greedy generations string-equal to the gold answer."""
    hits = 0
    for chunk in batches(instances, batch_size):
        ids, mask, _, _ = make_batch(chunk, vocab, model.config.max_len)
        outs = generate_batch(model, ids, mask, vocab.bos_id, vocab.eos_id,
                              max_gen_len, mode=mode)
        for inst, out in zip(chunk, outs):
            if normalize_answer(vocab.detokenize(out)) == normalize_answer(inst.target):
                hits += 1
    return hits / len(instances)


def option_accuracy(model: Model, vocab: Vocabulary, instances,
                    options, mode: str = MODE_LEARNED) -> float:
    """Accuracy of log-likelihood option selection against the gold target."""
    hits = 0
    for inst in instances:
        ids, mask, _, _ = make_batch([inst], vocab, model.config.max_len)
        best, _ = score_options(model, ids, list(options), vocab.tokenize,
                                vocab.bos_id, vocab.eos_id, key_mask=mask,
                                mode=mode)
        if options[best] == inst.target:
            hits += 1
    return hits / len(instances)


def task_metric(model: Model, vocab: Vocabulary, task: str, instances,
                batch_size: int = 32, max_gen_len: int = 8,
                mode: str = MODE_LEARNED) -> dict:
    if task in TASK_OPTIONS:
        value = option_accuracy(model, vocab, instances, TASK_OPTIONS[task], mode)
        return {"metric": "accuracy", "value": value, "count": len(instances)}
    value = exact_match(model, vocab, instances, batch_size, max_gen_len, mode)
    return {"metric": "exact_match", "value": value, "count": len(instances)}


def routing_stats(model: Model, vocab: Vocabulary, instances,
                  batch_size: int = 32, mode: str = MODE_LEARNED) -> dict:
    """Mean routing weights per step plus top-1 accuracy vs skill labels."""
    depth = model.config.depth
    n = model.config.n_skills
    sums = np.zeros((depth, n))
    act = np.zeros((depth, n))
    correct = np.zeros(depth)
    labeled = 0
    total = 0
    with T.no_grad():
        for chunk in batches(instances, batch_size):
            ids, mask, _, skills = make_batch(chunk, vocab, model.config.max_len)
            state = encode(model, ids, mask, mode=mode)
            for s, step in enumerate(state.steps):
                for i, d in enumerate(step.decisions):
                    sums[s] += d.weights
                    for j in d.active:
                        act[s, j] += 1
                    if skills[i] is not None and int(np.argmax(d.weights)) == skills[i]:
                        correct[s] += 1
            total += len(chunk)
            labeled += sum(1 for s in skills if s is not None)
    out = {
        "mean_weights": (sums / max(total, 1)).tolist(),
        "activation_rate": (act / max(total, 1)).tolist(),
        "count": total,
    }
    if labeled:
        per_step = (correct / labeled).tolist()
        out["top1_per_step"] = per_step
        out["top1"] = float(np.mean(per_step))
    return out


def validation_loss(model: Model, vocab: Vocabulary, instances,
                    batch_size: int = 32, mode: str = MODE_LEARNED) -> float:
    total, count = 0.0, 0
    with T.no_grad():
        for chunk in batches(instances, batch_size):
            ids, mask, targets, _ = make_batch(chunk, vocab, model.config.max_len)
            state = encode(model, ids, mask, mode=mode)
            loss = teacher_forcing_loss(model, state, targets, vocab.bos_id,
                                        vocab.eos_id, vocab.pad_id)
            total += loss.item() * len(chunk)
            count += len(chunk)
    return total / max(count, 1)


# ---------------------------------------------------------------------------
# experiment spec


@dataclass
class ExperimentSpec:
    """Everything a protocol run needs; hashable into the report."""
    mode: str                      # pretrain | adapt | eval
    data_dir: str
    out_dir: str
    seed: int = 42
    epochs: int = 3
    batch_size: int = 16
    lr: float = 3e-4
    warmup_ratio: float = 0.1
    lambda_routing: float = 1.0
    clip_norm: float = 1.0
    tasks: list[str] = field(default_factory=list)   # downstream tasks
    fewshot: bool = False
    val_every: int | None = None   # steps; None = end of epoch
    max_gen_len: int = 8
    eval_batch_size: int = 32
    # ablations
    single_depth: bool = False
    no_adapter: bool = False
    no_modularity: bool = False
    k: int | None = None
    full_activation: bool = False
    freeze: FreezeMask = field(default_factory=FreezeMask)
    checkpoint: str | None = None  # input checkpoint for adapt/eval

    def validate(self) -> "ExperimentSpec":
        if self.mode not in ("pretrain", "adapt", "eval"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode in ("adapt", "eval") and not self.checkpoint:
            raise ConfigError(f"mode {self.mode!r} requires a checkpoint")
        if self.mode in ("adapt", "eval") and not self.tasks:
            raise ConfigError(f"mode {self.mode!r} requires at least one task")
        if self.mode in ("adapt", "eval") and (self.single_depth or self.no_adapter):
            raise ConfigError(
                "single_depth / no_adapter change the architecture and only "
                "apply to pretraining runs")
        if self.full_activation and self.k is not None:
            raise ConfigError("full_activation conflicts with an explicit k")
        if self.no_modularity and self.lambda_routing != 0.0:
            # the ablation disables the routing loss by definition
            self.lambda_routing = 0.0
        if self.mode != "adapt" and self.freeze.frozen_groups():
            raise ConfigError("freezing only applies to adaptation runs")
        if self.mode == "adapt" and self.freeze.all_frozen():
            raise ContractError("all parameter groups frozen; nothing to adapt")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["freeze"] = self.freeze.names()
        return d


def spec_hash(spec_dict: dict, model_cfg: dict) -> str:
    blob = json.dumps({"spec": spec_dict, "model": model_cfg}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def derive_model_config(base: ModelConfig, spec: ExperimentSpec,
                        vocab_size: int) -> ModelConfig:
    """Apply ablation switches to the architecture config."""
    changes: dict = {"vocab_size": vocab_size}
    if spec.single_depth:
        changes["depth"] = 1
        changes["adapters_enabled"] = False  # the single ablation drops adapters
    if spec.no_adapter:
        changes["adapters_enabled"] = False
    if spec.k is not None:
        changes["k"] = spec.k
    if spec.full_activation:
        changes["k"] = base.n_skills
    return dataclasses.replace(base, **changes).validate()


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[Model, Vocabulary]:
    model = Model(ckpt.config, seed=0)
    model.load_state(ckpt.arrays)
    return model, Vocabulary(ckpt.vocab_tokens)


def ensure_vocab_matches(vocab: Vocabulary, other_tokens: list[str], context: str):
    if list(vocab.tokens) != list(other_tokens):
        raise ValidationError(f"vocabulary mismatch: {context}")


# ---------------------------------------------------------------------------
# protocol runner


def _encode_mode(spec: ExperimentSpec) -> str:
    return MODE_FULL if spec.full_activation else MODE_LEARNED


def run_experiment(spec: ExperimentSpec, base_model_cfg: ModelConfig | None = None,
                   dataset: Dataset | None = None) -> dict:
    """Execute a full protocol; returns the report dict and writes
    report.json (and a checkpoint for training modes) under spec.out_dir."""
    spec.validate()
    ds = dataset if dataset is not None else load_dataset_dir(spec.data_dir)
    vocab = ds.vocab
    rng = random.Random(f"exp:{spec.seed}")
    encode_mode = _encode_mode(spec)

    if spec.mode == "pretrain":
        cfg = derive_model_config(base_model_cfg or ModelConfig(), spec, len(vocab))
        model = Model(cfg, seed=spec.seed)
        start_step = 0
    else:
        ckpt = load_checkpoint(spec.checkpoint)
        ensure_vocab_matches(vocab, ckpt.vocab_tokens,
                             f"checkpoint {spec.checkpoint} vs dataset {spec.data_dir}")
        cfg = ckpt.config
        if spec.k is not None or spec.full_activation:
            cfg = derive_model_config(cfg, spec, cfg.vocab_size)
        model = Model(cfg, seed=spec.seed)
        model.load_state(ckpt.arrays)
        start_step = ckpt.step

    report: dict = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "spec": spec.to_dict(),
        "model_config": cfg.to_dict(),
        "spec_hash": spec_hash(spec.to_dict(), cfg.to_dict()),
        "epochs": [],
        "validations": [],
        "metrics": {},
    }

    if spec.mode == "eval":
        for task in spec.tasks:
            insts = ds.split(task, "test" if task != "pretrain" else "val")
            report["metrics"][task] = task_metric(
                model, vocab, task, insts, spec.eval_batch_size,
                spec.max_gen_len, encode_mode)
        report["routing"] = routing_stats(model, vocab, ds.pretrain_val,
                                          spec.eval_batch_size, encode_mode)
        _write_report(spec.out_dir, report)
        return report

    # training modes
    if spec.mode == "pretrain":
        train = list(ds.pretrain_train)
        val = list(ds.pretrain_val)
    else:
        if len(spec.tasks) != 1:
            raise ConfigError("adaptation runs on exactly one task")
        task = spec.tasks[0]
        train = list(ds.split(task, "fewshot" if spec.fewshot else "train"))
        val = list(ds.split(task, "val"))

    opt = Adam(model, spec.lr, clip_norm=spec.clip_norm,
               freeze=spec.freeze if spec.mode == "adapt" else None)
    steps_per_epoch = math.ceil(len(train) / spec.batch_size)
    sched = WarmupSchedule(spec.lr, steps_per_epoch * spec.epochs, spec.warmup_ratio)

    for epoch in range(spec.epochs):
        order = list(range(len(train)))
        rng.shuffle(order)
        sums = {"loss_total": 0.0, "loss_tf": 0.0, "loss_r": 0.0}
        nb = 0
        for chunk_idx in batches(order, spec.batch_size):
            batch = [train[i] for i in chunk_idx]
            lr = sched.lr(opt.t)
            if spec.mode == "pretrain":
                stats = pretrain_step(model, opt, batch, vocab,
                                      spec.lambda_routing, encode_mode, lr)
            else:
                stats = adapt_step(model, opt, batch, vocab, encode_mode, lr)
            for key in sums:
                sums[key] += stats.get(key, 0.0)
            nb += 1
            if spec.val_every and opt.t % spec.val_every == 0:
                report["validations"].append({
                    "step": opt.t,
                    "val_tf_loss": validation_loss(model, vocab, val,
                                                   spec.eval_batch_size, encode_mode),
                })
        entry = {"epoch": epoch, **{k: v / nb for k, v in sums.items()}}
        if not spec.val_every:
            entry["val_tf_loss"] = validation_loss(model, vocab, val,
                                                   spec.eval_batch_size, encode_mode)
        report["epochs"].append(entry)
        log.info("epoch %d: %s", epoch,
                 " ".join(f"{k}={v:.4f}" for k, v in entry.items() if k != "epoch"))

    # final evaluation
    if spec.mode == "pretrain":
        report["routing"] = routing_stats(model, vocab, ds.pretrain_val,
                                          spec.eval_batch_size, encode_mode)
        report["metrics"]["pretrain_val"] = {
            "metric": "tf_loss",
            "value": validation_loss(model, vocab, ds.pretrain_val,
                                     spec.eval_batch_size, encode_mode),
            "count": len(ds.pretrain_val),
        }
    else:
        task = spec.tasks[0]
        for split in ("val", "test"):
            insts = ds.split(task, split)
            report["metrics"][f"{task}/{split}"] = task_metric(
                model, vocab, task, insts, spec.eval_batch_size,
                spec.max_gen_len, encode_mode)
        report["routing"] = routing_stats(
            model, vocab, ds.split(task, "test"), spec.eval_batch_size, encode_mode)

    os.makedirs(spec.out_dir, exist_ok=True)
    ckpt_path = os.path.join(spec.out_dir, "checkpoint.bin")
    save_checkpoint(ckpt_path, Checkpoint(
        config=cfg, arrays=model.state_arrays(), step=start_step + opt.t,
        rng_state=None, vocab_tokens=list(vocab.tokens),
        extra={"mode": spec.mode, "spec_hash": report["spec_hash"]}))
    report["checkpoint"] = "checkpoint.bin"
    _write_report(spec.out_dir, report)
    return report


def _write_report(out_dir, report: dict):
    from .corpus.io import atomic_write_text

    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(os.path.join(out_dir, "report.json"),
                      json.dumps(report, sort_keys=True, indent=2) + "\n")
