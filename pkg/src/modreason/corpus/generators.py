"""Synthetic instance generators for the six pretraining skills and the
downstream composition tasks.

Every target is recomputable from the world by an independent lookup (the
generator is its own oracle), and every pretraining instance mentions at most
one KB edge — except simple-QA contexts, whose facts all share one head, so
no instance can ever contain both edges of a 2-hop evaluation chain.
"""

from __future__ import annotations

import random

from ..errors import GenerationError
from .io import SkillInstance
from .world import SyntheticWorld

LOGIC_FLAGS = ("A", "B", "C", "D", "E")
NLI_LABELS = ("entail", "neutral", "contradict")
DOWNSTREAM_TASKS = ("hop2_qa", "logic_fact", "typed_hop2")
MASK = "[MASK]"

_MAX_TRIES = 200


def _fact_str(h, r, t) -> str:
    return f"{h} {r} {t}"


def _corrupt_tail(world: SyntheticWorld, h: str, r: str, rng) -> str:
    """A tail making (h, r, tail) false; also != h so it still looks like a triple."""
    true_tail = world.kb.get((h, r))
    for _ in range(_MAX_TRIES):
        t = rng.choice(world.entities)
        if t != h and t != true_tail:
            return t
    raise GenerationError("could not corrupt tail")


# ---------------------------------------------------------------------------
# pretraining skills


def _gen_fact(world, rng) -> SkillInstance:
    h, r, t = rng.choice(world.triples)
    return SkillInstance(f"fact : {h} {r} ?", t, skill="fact", task="fact")


def _gen_logic(world, rng) -> SkillInstance:
    """Two rules with logical indicators; one premise is affirmed and the
    matching flag must be recovered."""
    f1 = (rng.choice(world.entities), rng.choice(world.relations))
    f2 = (rng.choice(world.entities), rng.choice(world.relations))
    s1 = _fact_str(f1[0], f1[1], _corrupt_tail(world, *f1, rng))
    s2 = _fact_str(f2[0], f2[1], _corrupt_tail(world, *f2, rng))
    while s2 == s1:
        s2 = _fact_str(f2[0], f2[1], _corrupt_tail(world, *f2, rng))
    g1, g2 = rng.sample(LOGIC_FLAGS, 2)
    affirmed_first = rng.random() < 0.5
    held = s1 if affirmed_first else s2
    answer = g1 if affirmed_first else g2
    return SkillInstance(
        f"logic : if {s1} then flag {g1} . if {s2} then flag {g2} . "
        f"{held} holds . therefore ?",
        answer, skill="logic", task="logic")


def _gen_ner(world, rng) -> SkillInstance:
    """Entity mentions with a queried type; output the matching mentions in
    order of appearance."""
    n = rng.randint(3, 5)
    mentions = rng.sample(world.entities, n)
    qtype = world.typing[rng.choice(mentions)]
    answer = " ".join(e for e in mentions if world.typing[e] == qtype)
    return SkillInstance(
        f"ner : {' '.join(mentions)} . type {qtype} ?",
        answer, skill="ner", task="ner")


def _gen_qa(world, rng) -> SkillInstance:
    """Extractive QA over a small same-head context."""
    for _ in range(_MAX_TRIES):
        h = rng.choice(world.entities)
        edges = world.out_edges[h]
        if len(edges) >= 3:
            picked = rng.sample(edges, 3)
            rq, tq = rng.choice(picked)
            ctx = " . ".join(_fact_str(h, r, t) for r, t in picked)
            return SkillInstance(
                f"context : {ctx} . question : {h} {rq} ?",
                tq, skill="qa", task="qa")
    raise GenerationError("no entity with 3 outgoing facts")


def _gen_nli(world, rng) -> SkillInstance:
    h, r, t = rng.choice(world.triples)
    label = rng.choice(NLI_LABELS)
    if label == "entail":
        hyp = (h, r, t)
    elif label == "contradict":
        hyp = (h, r, _corrupt_tail(world, h, r, rng))
    else:
        # an unrelated real fact; reject heads/tails that would chain with the
        # premise so the instance never contains both edges of a 2-hop path
        for _ in range(_MAX_TRIES):
            h2, r2, t2 = rng.choice(world.triples)
            if h2 != h and h2 != t and t2 != h:
                hyp = (h2, r2, t2)
                break
        else:
            raise GenerationError("no chain-free neutral hypothesis found")
    return SkillInstance(
        f"nli : premise {_fact_str(h, r, t)} . hypothesis {_fact_str(*hyp)} ?",
        label, skill="nli", task="nli")


def _gen_general(world, rng) -> SkillInstance:
    """Recover a masked token from a templated sentence; the masked position
    is always uniquely determined by the world."""
    if rng.random() < 0.5:
        h, r, t = rng.choice(world.triples)
        return SkillInstance(f"general : {h} {r} {MASK} .", t,
                             skill="general", task="general")
    e = rng.choice(world.entities)
    return SkillInstance(f"general : {e} is type {MASK} .", world.typing[e],
                         skill="general", task="general")


_SKILL_GENERATORS = {
    "fact": _gen_fact,
    "logic": _gen_logic,
    "ner": _gen_ner,
    "qa": _gen_qa,
    "nli": _gen_nli,
    "general": _gen_general,
}


def gen_skill_instance(world: SyntheticWorld, skill: str, rng: random.Random) -> SkillInstance:
    try:
        gen = _SKILL_GENERATORS[skill]
    except KeyError:
        raise GenerationError(f"unknown skill {skill!r}") from None
    return gen(world, rng)


# ---------------------------------------------------------------------------
# downstream composition tasks


def _chain(world, rng) -> tuple[str, str, str, str, str]:
    """(e, r1, mid, r2, answer) with both hops in the KB."""
    for _ in range(_MAX_TRIES):
        h, r1, mid = rng.choice(world.triples)
        edges = world.out_edges[mid]
        if edges:
            r2, ans = rng.choice(edges)
            return h, r1, mid, r2, ans
    raise GenerationError("no 2-hop chain found")


def _gen_hop2_qa(world, rng) -> SkillInstance:
    e, r1, _, r2, ans = _chain(world, rng)
    return SkillInstance(f"question : {e} {r1} {r2} ?", ans, task="hop2_qa")


def _gen_logic_fact(world, rng) -> SkillInstance:
    """A rule whose premise is a candidate KB fact; answer whether it holds."""
    h, r, t = rng.choice(world.triples)
    if rng.random() < 0.5:
        shown, answer = t, "yes"
    else:
        shown, answer = _corrupt_tail(world, h, r, rng), "no"
    return SkillInstance(
        f"judge : if {_fact_str(h, r, shown)} then yes else no . ?",
        answer, task="logic_fact")


def _gen_typed_hop2(world, rng) -> SkillInstance:
    """2-hop answer filtered by entity type: from the hop-1 node, the unique
    out-neighbor of the requested type."""
    for _ in range(_MAX_TRIES):
        h, r1, mid = rng.choice(world.triples)
        edges = world.out_edges[mid]
        if not edges:
            continue
        by_type: dict[str, list[str]] = {}
        for _, t in edges:
            by_type.setdefault(world.typing[t], []).append(t)
        unique = [(tp, ts[0]) for tp, ts in sorted(by_type.items()) if len(ts) == 1]
        if not unique:
            continue
        qtype, ans = rng.choice(unique)
        return SkillInstance(f"typed : {h} {r1} {qtype} ?", ans, task="typed_hop2")
    raise GenerationError("no typed 2-hop chain found")


_TASK_GENERATORS = {
    "hop2_qa": _gen_hop2_qa,
    "logic_fact": _gen_logic_fact,
    "typed_hop2": _gen_typed_hop2,
}

TASK_OPTIONS = {
    "logic_fact": ["yes", "no"],   # multi-choice; others are exact-match
}


def gen_downstream(world: SyntheticWorld, task: str, rng: random.Random) -> SkillInstance:
    try:
        gen = _TASK_GENERATORS[task]
    except KeyError:
        raise GenerationError(f"unknown downstream task {task!r}") from None
    return gen(world, rng)


# ---------------------------------------------------------------------------
# leakage check


def instance_edges(world: SyntheticWorld, inst: SkillInstance) -> set[tuple[str, str, str]]:
    """KB edges literally present in an instance's text (as 'h r t' windows)."""
    edges = set()
    for text in (inst.input, inst.target):
        toks = text.split()
        for i in range(len(toks) - 2):
            cand = (toks[i], toks[i + 1], toks[i + 2])
            if world.kb.get((cand[0], cand[1])) == cand[2]:
                edges.add(cand)
    return edges


def eval_chain_edges(world: SyntheticWorld, inst: SkillInstance):
    """The 2-hop KB edges an evaluation instance depends on, or None."""
    toks = inst.input.split()
    if inst.task == "hop2_qa":
        e, r1, r2 = toks[2], toks[3], toks[4]
        mid = world.kb[(e, r1)]
        return ((e, r1, mid), (mid, r2, world.kb[(mid, r2)]))
    if inst.task == "typed_hop2":
        e, r1 = toks[2], toks[3]
        mid = world.kb[(e, r1)]
        for r2, t in world.out_edges[mid]:
            if t == inst.target:
                return ((e, r1, mid), (mid, r2, t))
    return None


def leakage_check(world: SyntheticWorld, pretrain, eval_instances) -> list[str]:
    """Violations where one pretraining instance contains a complete
    evaluation 2-chain (more than one of its edges)."""
    chains = []
    for inst in eval_instances:
        edges = eval_chain_edges(world, inst)
        if edges is not None:
            chains.append((inst, set(edges)))
    problems = []
    for p in pretrain:
        present = instance_edges(world, p)
        if len(present) < 2:
            continue
        for inst, chain in chains:
            if len(chain & present) > 1:
                problems.append(f"pretraining instance {p.input!r} contains the "
                                f"full chain of {inst.input!r}")
    return problems
