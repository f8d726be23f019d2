"""Entity-level knowledge graphs and their token-level relational form."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

CANONICAL = "canonical"
INVERSE = "inverse"
SELF = "self"
LEVI_SUBJECT = "levi-subject"
LEVI_OBJECT = "levi-object"
LEVI_SUBJECT_INV = "levi-subject-inv"
LEVI_OBJECT_INV = "levi-object-inv"

RELATION_KINDS = (CANONICAL, INVERSE, SELF, LEVI_SUBJECT, LEVI_OBJECT, LEVI_SUBJECT_INV, LEVI_OBJECT_INV)
FORWARD_KINDS = frozenset({CANONICAL, LEVI_SUBJECT, LEVI_OBJECT})
SELF_LABEL = "self"
INVERSE_SUFFIX = "-inv"


class IngestionError(ValueError):
    """Malformed graph or dataset input."""


@dataclass(frozen=True)
class EntityGraph:
    entities: tuple[tuple[str, ...], ...]
    edges: tuple[tuple[int, str, int], ...]
    title: tuple[str, ...] | None = None
    relations: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(tuple(e) for e in self.entities))
        object.__setattr__(self, "edges", tuple((int(h), str(r), int(t)) for h, r, t in self.edges))
        if self.title is not None:
            object.__setattr__(self, "title", tuple(self.title))
        rels = frozenset(self.relations) | {r for _, r, _ in self.edges}
        object.__setattr__(self, "relations", rels)
        for i, ent in enumerate(self.entities):
            if not ent:
                raise IngestionError(f"entity {i} has no tokens")
        n = len(self.entities)
        for h, r, t in self.edges:
            if not (0 <= h < n and 0 <= t < n):
                raise IngestionError(f"edge ({h}, {r!r}, {t}) references an entity outside 0..{n - 1}")


class RelationVocab:
    """Ordered relation inventory; indices are the relation ids used on edges."""

    def __init__(self, entries: Iterable[tuple[str, str]] = ()):
        self.entries: list[str] = []
        self.kinds: list[str] = []
        self._index: dict[str, int] = {}
        for name, kind in entries:
            self._add(name, kind)

    def _add(self, name: str, kind: str) -> int:
        if kind not in RELATION_KINDS:
            raise ValueError(f"unknown relation kind {kind!r}")
        if name in self._index:
            if self.kinds[self._index[name]] != kind:
                raise ValueError(f"relation {name!r} already registered with another kind")
            return self._index[name]
        self._index[name] = len(self.entries)
        self.entries.append(name)
        self.kinds.append(kind)
        return self._index[name]

    @classmethod
    def build(cls, labels: Iterable[str], levi: bool = False, self_loops: bool = True) -> "RelationVocab":
        """Self relation first, then either canonical/inverse pairs (sorted) or the Levi labels."""
        vocab = cls()
        if self_loops:
            vocab._add(SELF_LABEL, SELF)
        if levi:
            for kind in (LEVI_SUBJECT, LEVI_SUBJECT_INV, LEVI_OBJECT, LEVI_OBJECT_INV):
                vocab._add(kind, kind)
        else:
            for label in sorted(set(labels)):
                if label.endswith(INVERSE_SUFFIX) or label == SELF_LABEL:
                    raise IngestionError(f"relation label {label!r} collides with a reserved name")
                vocab._add(label, CANONICAL)
                vocab._add(label + INVERSE_SUFFIX, INVERSE)
        return vocab

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, RelationVocab) and self.entries == other.entries and self.kinds == other.kinds

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"relation {name!r} is not in the vocabulary") from None

    def inverse_of(self, rid: int) -> int:
        name, kind = self.entries[rid], self.kinds[rid]
        if kind == CANONICAL:
            return self._index[name + INVERSE_SUFFIX]
        if kind == INVERSE:
            return self._index[name[: -len(INVERSE_SUFFIX)]]
        if kind in (LEVI_SUBJECT, LEVI_OBJECT):
            return self._index[kind + INVERSE_SUFFIX]
        if kind in (LEVI_SUBJECT_INV, LEVI_OBJECT_INV):
            return self._index[kind[: -len(INVERSE_SUFFIX)]]
        return rid

    @property
    def self_id(self) -> int | None:
        return self._index.get(SELF_LABEL)

    def to_list(self) -> list[list[str]]:
        return [[n, k] for n, k in zip(self.entries, self.kinds)]

    @classmethod
    def from_list(cls, rows) -> "RelationVocab":
        return cls((n, k) for n, k in rows)

    def __repr__(self) -> str:
        return f"RelationVocab({len(self)} entries)"


class Node(NamedTuple):
    token: str
    kind: str  # "entity", "title" or "relation"
    source: int  # entity id, 0 for title, entity-edge index for relation nodes
    position: int


class Edge(NamedTuple):
    u: int
    rel: int
    v: int


@dataclass(frozen=True)
class TokenGraph:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    relation_vocab: RelationVocab = field(compare=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def tokens(self) -> list[str]:
        return [n.token for n in self.nodes]

    @property
    def positions(self) -> list[int]:
        return [n.position for n in self.nodes]

    def forward_edges(self) -> list[Edge]:
        kinds = self.relation_vocab.kinds
        return [e for e in self.edges if kinds[e.rel] in FORWARD_KINDS]

    def undirected_adjacency(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in self.nodes]
        for u, _, v in self.edges:
            if u != v:
                adj[u].add(v)
                adj[v].add(u)
        return adj

    def permuted(self, perm) -> "TokenGraph":
        """Relabel nodes so old node ``i`` becomes node ``perm[i]``."""
        inv = [0] * len(perm)
        for old, new in enumerate(perm):
            inv[new] = old
        nodes = tuple(self.nodes[inv[i]] for i in range(len(perm)))
        edges = tuple(Edge(perm[u], r, perm[v]) for u, r, v in self.edges)
        return TokenGraph(nodes, edges, self.relation_vocab)


@dataclass(frozen=True)
class Instance:
    graph: TokenGraph
    target: tuple[str, ...]
    entity_graph: EntityGraph | None = None

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(self.target))
        if not self.target:
            raise IngestionError("instance target text is empty")


def build_token_graph(
    g: EntityGraph,
    use_levi: bool = False,
    relation_vocab: RelationVocab | None = None,
    self_loops: bool = True,
    include_title: bool = True,
) -> TokenGraph:
    """Expand entities into token nodes and entity edges into token edges.

    Every token of the head entity links to every token of the tail entity.
    In Levi mode each entity edge instead becomes a relation node wired from
    the head tokens and to the tail tokens. Inverse edges and self-loops are
    added in both modes.
    """
    if relation_vocab is None:
        relation_vocab = RelationVocab.build(g.relations, levi=use_levi, self_loops=self_loops)
    nodes: list[Node] = []
    spans: list[range] = []
    for eid, toks in enumerate(g.entities):
        if not toks:
            raise IngestionError(f"entity {eid} has no tokens")
        start = len(nodes)
        nodes.extend(Node(tok, "entity", eid, pos) for pos, tok in enumerate(toks))
        spans.append(range(start, len(nodes)))
    if include_title and g.title:
        nodes.extend(Node(tok, "title", 0, pos) for pos, tok in enumerate(g.title))

    edges: list[Edge] = []
    seen: set[Edge] = set()

    def link(u: int, rid: int, v: int) -> None:
        for e in (Edge(u, rid, v), Edge(v, relation_vocab.inverse_of(rid), u)):
            if e not in seen:
                seen.add(e)
                edges.append(e)

    if use_levi:
        subj, obj = relation_vocab.index(LEVI_SUBJECT), relation_vocab.index(LEVI_OBJECT)
        for k, (h, r, t) in enumerate(g.edges):
            rel_node = len(nodes)
            nodes.append(Node(r, "relation", k, 0))
            for u in spans[h]:
                link(u, subj, rel_node)
            for v in spans[t]:
                link(rel_node, obj, v)
    else:
        for h, r, t in g.edges:
            rid = relation_vocab.index(r)
            if relation_vocab.kinds[rid] != CANONICAL:
                raise IngestionError(f"relation {r!r} is not a canonical relation")
            for u in spans[h]:
                for v in spans[t]:
                    link(u, rid, v)

    if self_loops:
        sid = relation_vocab.self_id
        if sid is None:
            raise IngestionError("relation vocabulary has no self relation")
        for i in range(len(nodes)):
            e = Edge(i, sid, i)
            if e not in seen:
                seen.add(e)
                edges.append(e)
    return TokenGraph(tuple(nodes), tuple(edges), relation_vocab)
