"""Seeded synthetic graph-to-text corpora with templated verbalizations."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .io import build_instances
from .model import EntityGraph, Instance

RELATION_NAMES = (
    "used-for",
    "part-of",
    "feature-of",
    "compare",
    "hyponym-of",
    "evaluate-for",
    "conjunction",
    "located-in",
    "born-in",
    "leader-of",
)

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")


@dataclass(frozen=True)
class SynthSize:
    min_entities: int = 2
    max_entities: int = 4
    min_triples: int = 1
    max_triples: int = 3
    max_entity_tokens: int = 2
    n_words: int = 40
    n_relations: int = 5
    title_tokens: int = 0

    def __post_init__(self):
        if not (1 <= self.min_entities <= self.max_entities):
            raise ValueError("need 1 <= min_entities <= max_entities")
        if not (0 <= self.min_triples <= self.max_triples):
            raise ValueError("need 0 <= min_triples <= max_triples")
        if not (1 <= self.n_relations <= len(RELATION_NAMES)):
            raise ValueError(f"n_relations must be in 1..{len(RELATION_NAMES)}")
        if self.max_entity_tokens < 1 or self.n_words < 1:
            raise ValueError("max_entity_tokens and n_words must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def word_pool(n: int) -> list[str]:
    words = []
    for i in range(n):
        a, rest = divmod(i, len(_VOWELS))
        b, c = divmod(a, len(_ONSETS))
        words.append(_ONSETS[c] + _VOWELS[rest] + _ONSETS[b % len(_ONSETS)] + _VOWELS[(i // 7) % len(_VOWELS)])
    return words


def verbalize(graph: EntityGraph) -> list[str]:
    """Template: each triple (A, r, B) becomes ``A r B .`` in triple order."""
    out: list[str] = []
    for h, r, t in graph.edges:
        out += list(graph.entities[h]) + [r] + list(graph.entities[t]) + ["."]
    return out


def synth_entity_graph(rng: np.random.Generator, size: SynthSize) -> EntityGraph:
    words = word_pool(size.n_words)
    relations = RELATION_NAMES[: size.n_relations]
    n_ent = int(rng.integers(size.min_entities, size.max_entities + 1))
    entities = []
    seen = set()
    while len(entities) < n_ent:
        k = int(rng.integers(1, size.max_entity_tokens + 1))
        ent = tuple(words[int(i)] for i in rng.choice(len(words), size=k, replace=False))
        if ent not in seen:
            seen.add(ent)
            entities.append(ent)
    capacity = n_ent * (n_ent - 1) * len(relations)
    n_tri = min(int(rng.integers(size.min_triples, size.max_triples + 1)), capacity)
    triples: list[tuple[int, str, int]] = []
    while len(triples) < n_tri:
        h, t = (int(x) for x in rng.choice(n_ent, size=2, replace=False))
        tri = (h, relations[int(rng.integers(len(relations)))], t)
        if tri not in triples:
            triples.append(tri)
    title = None
    if size.title_tokens:
        title = [words[int(i)] for i in rng.choice(len(words), size=size.title_tokens)]
    return EntityGraph(entities, triples, title)


def synth_corpus(
    seed: int,
    n_instances: int,
    size_params: SynthSize | None = None,
    use_levi: bool = False,
) -> list[Instance]:
    if n_instances < 1:
        raise ValueError("n_instances must be >= 1")
    size = size_params or SynthSize()
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_instances):
        g = synth_entity_graph(rng, size)
        records.append((i + 1, g, verbalize(g)))
    return build_instances(records, use_levi=use_levi)
