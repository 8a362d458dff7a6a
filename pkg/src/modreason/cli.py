"""Command-line surface.

Subcommands: gen-data, pretrain, adapt, eval, analyze, grad-check.
Configuration comes from a flat ``key = value`` file plus CLI overrides
(overrides win); every run writes its fully-resolved config next to its
outputs so the exact run can be reproduced from that file alone.

Exit codes: 0 success, 1 runtime failure (one-line ``error: <kind>: <msg>``
on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import analysis
from .config import SKILL_NAMES, ModelConfig
from .corpus import (
    DOWNSTREAM_SPLITS,
    DOWNSTREAM_TASKS,
    FEWSHOT_SIZE,
    PRETRAIN_PER_SKILL,
    PRETRAIN_VAL_PER_SKILL,
    build_dataset,
    load_dataset_dir,
    write_dataset,
)
from .corpus.io import atomic_write_text
from .checkpoint import load as load_checkpoint
from .errors import ConfigError, ModReasonError
from .optim import FreezeMask
from .trainer import (
    ExperimentSpec,
    ensure_vocab_matches,
    model_from_checkpoint,
    run_experiment,
)
from .verification import GRAD_TOL, run_all

log = logging.getLogger("modreason")

ABLATIONS = ("single_depth", "no_adapter", "no_modularity")

# config file key tables: name -> (section, type tag)
_MODEL_KEYS = {
    "vocab_size": "int", "d_model": "int", "n_heads": "int", "d_ff": "int",
    "n_rep_layers": "int", "n_rm_layers": "int", "depth": "int",
    "n_skills": "int", "k": "int", "d_adapter": "int", "d_gate_hidden": "int",
    "d_router_hidden": "int", "n_dec_layers": "int", "max_len": "int",
    "adapters_enabled": "bool", "use_positions": "bool",
    "stop_residual": "str", "length_normalized_scoring": "bool",
    "routing_target": "str", "layer_norm_eps": "float",
}
_SPEC_KEYS = {
    "mode": "str", "data_dir": "str", "out_dir": "str", "seed": "int",
    "epochs": "int", "batch_size": "int", "lr": "float",
    "warmup_ratio": "float", "lambda_routing": "float", "clip_norm": "float",
    "tasks": "list", "fewshot": "bool", "val_every": "optint",
    "max_gen_len": "int", "eval_batch_size": "int",
    "single_depth": "bool", "no_adapter": "bool", "no_modularity": "bool",
    "spec_k": "optint", "full_activation": "bool", "freeze": "list",
    "checkpoint": "optstr",
}
_GEN_KEYS = {
    "mode": "str", "seed": "int", "out_dir": "str", "per_skill": "int",
    "val_per_skill": "int", "n_train": "int", "n_val": "int", "n_test": "int",
    "fewshot_size": "int", "n_entities": "int", "n_relations": "int",
    "n_types": "int", "n_triples": "int",
}


def _parse_value(key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind in ("optint", "optstr"):
            if raw.lower() in ("none", ""):
                return None
            return int(raw) if kind == "optint" else raw
        if kind == "list":
            return [s.strip() for s in raw.split(",") if s.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None


def _format_value(kind: str, value) -> str:
    if value is None:
        return "none"
    if kind == "bool":
        return "true" if value else "false"
    if kind == "list":
        return ",".join(value)
    if kind == "float":
        return repr(float(value))
    return str(value)


def read_config_file(path, tables) -> dict:
    merged_keys = {}
    for t in tables:
        merged_keys.update(t)
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in merged_keys:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _parse_value(key, merged_keys[key], raw)
    return out


def write_resolved(out_dir, values: dict, tables):
    merged_keys = {}
    for t in tables:
        merged_keys.update(t)
    lines = [f"{k} = {_format_value(merged_keys[k], values[k])}"
             for k in sorted(values)]
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(os.path.join(out_dir, "resolved.cfg"), "\n".join(lines) + "\n")


def _resolve_experiment(args, mode: str) -> tuple[ModelConfig, ExperimentSpec, dict]:
    file_kv = {}
    if args.config:
        file_kv = read_config_file(args.config, (_MODEL_KEYS, _SPEC_KEYS))
    if file_kv.get("mode") not in (None, mode):
        raise ConfigError(f"config file mode {file_kv['mode']!r} does not match "
                          f"subcommand {mode!r}")

    model_kv = {k: v for k, v in file_kv.items() if k in _MODEL_KEYS}
    spec_kv = {k: v for k, v in file_kv.items() if k in _SPEC_KEYS and k != "mode"}

    # CLI overrides win
    overrides = {
        "data_dir": args.data, "out_dir": args.out, "seed": args.seed,
        "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr,
        "lambda_routing": getattr(args, "lambda_routing", None),
        "checkpoint": getattr(args, "checkpoint", None),
        "val_every": getattr(args, "val_every", None),
    }
    for key, val in overrides.items():
        if val is not None:
            spec_kv[key] = val
    if getattr(args, "fewshot", False):
        spec_kv["fewshot"] = True
    if getattr(args, "full_activation", False):
        spec_kv["full_activation"] = True
    if getattr(args, "k", None) is not None:
        spec_kv["spec_k"] = args.k
    if getattr(args, "ablate", None):
        for name in args.ablate.split(","):
            name = name.strip()
            if name and name not in ABLATIONS:
                raise ConfigError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")
            if name:
                spec_kv[name] = True
    if getattr(args, "freeze", None):
        spec_kv["freeze"] = [s for s in args.freeze.split(",") if s.strip()]
    if getattr(args, "task", None):
        spec_kv["tasks"] = [args.task]
    if getattr(args, "tasks", None):
        spec_kv["tasks"] = [s.strip() for s in args.tasks.split(",") if s.strip()]

    if not spec_kv.get("data_dir"):
        raise ConfigError("a dataset directory is required (--data or data_dir)")
    if mode != "eval" and not spec_kv.get("out_dir"):
        raise ConfigError("an output directory is required (--out or out_dir)")

    spec = ExperimentSpec(
        mode=mode,
        data_dir=spec_kv.get("data_dir", ""),
        out_dir=spec_kv.get("out_dir", ""),
        seed=spec_kv.get("seed", 42),
        epochs=spec_kv.get("epochs", 3),
        batch_size=spec_kv.get("batch_size", 16),
        lr=spec_kv.get("lr", 3e-4 if mode == "pretrain" else 1e-4),
        warmup_ratio=spec_kv.get("warmup_ratio", 0.1),
        lambda_routing=spec_kv.get("lambda_routing", 1.0),
        clip_norm=spec_kv.get("clip_norm", 1.0),
        tasks=spec_kv.get("tasks", []),
        fewshot=spec_kv.get("fewshot", False),
        val_every=spec_kv.get("val_every"),
        max_gen_len=spec_kv.get("max_gen_len", 8),
        eval_batch_size=spec_kv.get("eval_batch_size", 32),
        single_depth=spec_kv.get("single_depth", False),
        no_adapter=spec_kv.get("no_adapter", False),
        no_modularity=spec_kv.get("no_modularity", False),
        k=spec_kv.get("spec_k"),
        full_activation=spec_kv.get("full_activation", False),
        freeze=FreezeMask.from_names(spec_kv.get("freeze", [])),
        checkpoint=spec_kv.get("checkpoint"),
    ).validate()
    model_cfg = ModelConfig.from_dict({**ModelConfig().to_dict(), **model_kv}) \
        if model_kv else ModelConfig()

    resolved = {**model_cfg.to_dict(), "mode": mode}
    spec_d = spec.to_dict()
    spec_d["spec_k"] = spec_d.pop("k")
    del spec_d["mode"]
    resolved.update(spec_d)
    # model vocab_size is resolved from the dataset at run time
    del resolved["vocab_size"]
    return model_cfg, spec, resolved


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    file_kv = read_config_file(args.config, (_GEN_KEYS,)) if args.config else {}
    values = {
        "mode": "gen-data",
        "seed": args.seed if args.seed is not None else file_kv.get("seed", 42),
        "out_dir": args.out or file_kv.get("out_dir") or "",
        "per_skill": args.per_skill or file_kv.get("per_skill", PRETRAIN_PER_SKILL),
        "val_per_skill": file_kv.get("val_per_skill", PRETRAIN_VAL_PER_SKILL),
        "n_train": file_kv.get("n_train", DOWNSTREAM_SPLITS[0]),
        "n_val": file_kv.get("n_val", DOWNSTREAM_SPLITS[1]),
        "n_test": file_kv.get("n_test", DOWNSTREAM_SPLITS[2]),
        "fewshot_size": file_kv.get("fewshot_size", FEWSHOT_SIZE),
        "n_entities": file_kv.get("n_entities", 200),
        "n_relations": file_kv.get("n_relations", 20),
        "n_types": file_kv.get("n_types", 10),
        "n_triples": file_kv.get("n_triples", 2000),
    }
    if not values["out_dir"]:
        raise ConfigError("an output directory is required (--out or out_dir)")
    dataset, _ = build_dataset(
        values["seed"], per_skill=values["per_skill"],
        val_per_skill=values["val_per_skill"],
        splits=(values["n_train"], values["n_val"], values["n_test"]),
        fewshot=values["fewshot_size"],
        world_sizes={"n_entities": values["n_entities"],
                     "n_relations": values["n_relations"],
                     "n_types": values["n_types"],
                     "n_triples": values["n_triples"]})
    write_dataset(values["out_dir"], dataset, values["seed"])
    write_resolved(values["out_dir"], values, (_GEN_KEYS,))
    print(f"dataset written to {values['out_dir']} "
          f"(vocab {len(dataset.vocab)}, pretrain {len(dataset.pretrain_train)})")
    return 0


def _run_training(args, mode: str) -> int:
    model_cfg, spec, resolved = _resolve_experiment(args, mode)
    report = run_experiment(spec, base_model_cfg=model_cfg)
    if spec.out_dir:
        write_resolved(spec.out_dir, resolved, (_MODEL_KEYS, _SPEC_KEYS))
    for name, m in sorted(report.get("metrics", {}).items()):
        print(f"{name}: {m['metric']}={m['value']:.4f} (n={m['count']})")
    if "routing" in report and "top1" in report["routing"]:
        print(f"routing_top1: {report['routing']['top1']:.4f}")
    return 0


def cmd_pretrain(args) -> int:
    return _run_training(args, "pretrain")


def cmd_adapt(args) -> int:
    return _run_training(args, "adapt")


def cmd_eval(args) -> int:
    if not args.out:
        args.out = os.path.join(os.path.dirname(args.checkpoint or "."), "eval")
    return _run_training(args, "eval")


def cmd_analyze(args) -> int:
    ds = load_dataset_dir(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    ensure_vocab_matches(ds.vocab, ckpt.vocab_tokens,
                         f"checkpoint {args.checkpoint} vs dataset {args.data}")
    model, vocab = model_from_checkpoint(ckpt)
    names = ([s.strip() for s in args.tasks.split(",") if s.strip()]
             if args.tasks else
             list(DOWNSTREAM_TASKS) + [f"skill:{s}" for s in SKILL_NAMES])
    profiles = []
    for name in names:
        if name.startswith("skill:"):
            skill = name.split(":", 1)[1]
            if skill not in SKILL_NAMES:
                raise ConfigError(f"unknown skill {skill!r} in {name!r}")
            insts = [i for i in ds.pretrain_val if i.skill == skill]
        elif name == "pretrain":
            insts = ds.pretrain_val
        elif name in ds.tasks:
            insts = ds.split(name, "test")
        else:
            raise ConfigError(f"unknown analysis set {name!r}")
        profiles.append(analysis.extract_routing(model, vocab, insts, name))
    paths = analysis.emit_report(profiles, metrics={}, out_dir=args.out)
    print(f"wrote {paths['csv']} and {paths['json']}")
    return 0


def cmd_grad_check(args) -> int:
    results = run_all(args.seed)
    ok = True
    for name, err in results.items():
        status = "PASS" if err < GRAD_TOL else "FAIL"
        ok = ok and err < GRAD_TOL
        print(f"{name}: max_rel_err={err:.3e} {status}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="modreason",
        description="Cascaded skill-routing reasoner: data generation, "
                    "training protocols, and routing analysis.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--data", help="dataset directory")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, default=None)

    g = sub.add_parser("gen-data", help="generate the synthetic corpus")
    common(g)
    g.add_argument("--per-skill", type=int, default=None, dest="per_skill")
    g.set_defaults(func=cmd_gen_data)

    def training(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        common(sp)
        sp.add_argument("--epochs", type=int, default=None)
        sp.add_argument("--batch-size", type=int, default=None, dest="batch_size")
        sp.add_argument("--lr", type=float, default=None)
        sp.add_argument("--lambda", type=float, default=None, dest="lambda_routing",
                        help="routing loss weight")
        sp.add_argument("--k", type=int, default=None,
                        help="sparse activation width override")
        sp.add_argument("--full-activation", action="store_true",
                        dest="full_activation")
        sp.add_argument("--ablate", help="comma list: " + "|".join(ABLATIONS))
        sp.add_argument("--freeze", help="comma list of parameter groups to freeze")
        sp.add_argument("--checkpoint", help="input checkpoint")
        sp.add_argument("--task", help="downstream task (adapt)")
        sp.add_argument("--tasks", help="comma list of tasks (eval)")
        sp.add_argument("--fewshot", action="store_true")
        sp.add_argument("--val-every", type=int, default=None, dest="val_every")
        return sp

    training("pretrain", "multi-task skill pretraining").set_defaults(func=cmd_pretrain)
    training("adapt", "downstream adaptation").set_defaults(func=cmd_adapt)
    training("eval", "evaluate a checkpoint").set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="routing-weight analysis")
    a.add_argument("--config", help=argparse.SUPPRESS)
    a.add_argument("--data", required=True)
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--tasks", help="comma list: task names, pretrain, or skill:<name>")
    a.set_defaults(func=cmd_analyze)

    gc = sub.add_parser("grad-check", help="finite-difference check per block")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_grad_check)

    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MODREASON_LOGLEVEL", "INFO"),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    t0 = time.monotonic()
    try:
        rc = args.func(args)
    except ModReasonError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except FloatingPointError as e:
        print(f"error: numerics: {e}", file=sys.stderr)
        return 1
    log.info("wall time: %.1fs", time.monotonic() - t0)
    return rc


if __name__ == "__main__":
    sys.exit(main())
