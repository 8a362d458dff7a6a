"""Seeded synthetic world: entities with types and a functional fact KB.

The KB is functional per (head, relation) — at most one tail — which makes
every generated target recomputable by lookup, and tails never equal their
head, which keeps 2-hop chains well-formed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..errors import ConfigError


@dataclass
class SyntheticWorld:
    seed: int
    entities: list[str]
    relations: list[str]
    types: list[str]
    triples: list[tuple[str, str, str]]
    kb: dict[tuple[str, str], str] = field(repr=False)
    typing: dict[str, str] = field(repr=False)
    out_edges: dict[str, list[tuple[str, str]]] = field(repr=False)  # head -> [(rel, tail)]

    def tail(self, head: str, relation: str) -> str | None:
        return self.kb.get((head, relation))

    def hop2(self, head: str, r1: str, r2: str) -> str | None:
        mid = self.kb.get((head, r1))
        if mid is None:
            return None
        return self.kb.get((mid, r2))


def build_world(seed: int, n_entities: int = 200, n_relations: int = 20,
                n_types: int = 10, n_triples: int = 2000) -> SyntheticWorld:
    """Deterministic construction; the same seed is bit-identical."""
    if min(n_entities, n_relations, n_types, n_triples) <= 0:
        raise ConfigError("world sizes must be positive")
    if n_triples > n_entities * n_relations:
        raise ConfigError(
            f"cannot place {n_triples} functional triples with only "
            f"{n_entities} x {n_relations} (head, relation) slots")
    if n_entities < 2:
        raise ConfigError("need at least 2 entities for head != tail triples")

    rng = random.Random(f"world:{seed}")
    entities = [f"e{i:03d}" for i in range(n_entities)]
    relations = [f"r{i:02d}" for i in range(n_relations)]
    types = [f"t{i}" for i in range(n_types)]
    typing = {e: rng.choice(types) for e in entities}

    slots = rng.sample(range(n_entities * n_relations), n_triples)
    triples = []
    kb: dict[tuple[str, str], str] = {}
    out_edges: dict[str, list[tuple[str, str]]] = {e: [] for e in entities}
    for s in sorted(slots):
        head = entities[s // n_relations]
        rel = relations[s % n_relations]
        tail = head
        while tail == head:
            tail = rng.choice(entities)
        triples.append((head, rel, tail))
        kb[(head, rel)] = tail
        out_edges[head].append((rel, tail))
    return SyntheticWorld(seed, entities, relations, types, triples, kb,
                          typing, out_edges)
