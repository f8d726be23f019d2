"""JSONL dataset ingestion and the plain-text graph dump format."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

from .model import (
    EntityGraph,
    Instance,
    IngestionError,
    Node,
    Edge,
    RelationVocab,
    TokenGraph,
    build_token_graph,
)

REQUIRED_FIELDS = {"entities", "triples", "text"}
OPTIONAL_FIELDS = {"title"}


class DatasetError(IngestionError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _token_list(value, what: str, allow_empty: bool = False) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(t, str) for t in value):
        raise ValueError(f"{what} must be a list of strings")
    if not allow_empty and not value:
        raise ValueError(f"{what} must not be empty")
    for t in value:
        if not t or any(c.isspace() for c in t):
            raise ValueError(f"{what} contains an empty or whitespace-bearing token {t!r}")
    return value


def parse_record(record) -> tuple[EntityGraph, list[str]]:
    """Validate one decoded JSON object against the strict instance schema."""
    if not isinstance(record, dict):
        raise ValueError("instance must be a JSON object")
    unknown = set(record) - REQUIRED_FIELDS - OPTIONAL_FIELDS
    if unknown:
        raise ValueError(f"unknown field(s): {', '.join(sorted(unknown))}")
    missing = REQUIRED_FIELDS - set(record)
    if missing:
        raise ValueError(f"missing field(s): {', '.join(sorted(missing))}")
    if not isinstance(record["entities"], list):
        raise ValueError("entities must be a list")
    entities = [_token_list(e, f"entity {i}") for i, e in enumerate(record["entities"])]
    triples = record["triples"]
    if not isinstance(triples, list):
        raise ValueError("triples must be a list")
    edges = []
    for k, tr in enumerate(triples):
        if (
            not isinstance(tr, list)
            or len(tr) != 3
            or not isinstance(tr[0], int)
            or not isinstance(tr[2], int)
            or isinstance(tr[0], bool)
            or isinstance(tr[2], bool)
            or not isinstance(tr[1], str)
            or not tr[1]
        ):
            raise ValueError(f"triple {k} must be [head_index, relation, tail_index]")
        h, r, t = tr
        if not (0 <= h < len(entities) and 0 <= t < len(entities)):
            raise ValueError(f"triple {k} references entity outside 0..{len(entities) - 1}")
        edges.append((h, r, t))
    title = record.get("title")
    if title is not None:
        title = _token_list(title, "title", allow_empty=True)
    text = _token_list(record["text"], "text")
    return EntityGraph(entities, edges, title), text


def read_records(path) -> list[tuple[int, EntityGraph, list[str]]]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(lineno, f"invalid JSON ({exc.msg})") from None
            try:
                graph, text = parse_record(record)
            except (ValueError, IngestionError) as exc:
                raise DatasetError(lineno, str(exc)) from None
            out.append((lineno, graph, text))
    return out


def build_instances(
    records: Sequence[tuple[int, EntityGraph, list[str]]],
    use_levi: bool = False,
    include_title: bool = True,
    relation_vocab: RelationVocab | None = None,
) -> list[Instance]:
    if relation_vocab is None:
        labels = {r for _, g, _ in records for r in g.relations}
        relation_vocab = RelationVocab.build(labels, levi=use_levi)
    instances = []
    for lineno, graph, text in records:
        try:
            tg = build_token_graph(graph, use_levi=use_levi, relation_vocab=relation_vocab, include_title=include_title)
        except (KeyError, IngestionError) as exc:
            raise DatasetError(lineno, str(exc).strip("'\"")) from None
        instances.append(Instance(tg, text, graph))
    return instances


def load_dataset(
    path,
    use_levi: bool = False,
    include_title: bool = True,
    relation_vocab: RelationVocab | None = None,
    vocab=None,
) -> list[Instance]:
    """Load a JSONL file into token-graph instances.

    All instances share one relation vocabulary (built from the file unless
    given). When ``vocab`` is passed, node and target tokens are added to it.
    """
    instances = build_instances(read_records(path), use_levi, include_title, relation_vocab)
    if vocab is not None:
        for inst in instances:
            vocab.add_all(inst.graph.tokens)
            vocab.add_all(inst.target)
    return instances


def record_for(graph: EntityGraph, text: Iterable[str]) -> dict:
    rec: dict = {}
    if graph.title is not None:
        rec["title"] = list(graph.title)
    rec["entities"] = [list(e) for e in graph.entities]
    rec["triples"] = [[h, r, t] for h, r, t in graph.edges]
    rec["text"] = list(text)
    return rec


def write_dataset(path, instances: Iterable[Instance]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst in instances:
            if inst.entity_graph is None:
                raise ValueError("instance carries no entity graph to serialize")
            fh.write(json.dumps(record_for(inst.entity_graph, inst.target)) + "\n")


def dump_graph(g: TokenGraph) -> str:
    """Deterministic text form: relations, then nodes, then edges, one per line."""
    lines = [f"relations\t{len(g.relation_vocab)}"]
    lines += [f"{i}\t{name}\t{kind}" for i, (name, kind) in enumerate(zip(g.relation_vocab.entries, g.relation_vocab.kinds))]
    lines.append(f"nodes\t{g.num_nodes}")
    lines += [f"{i}\t{n.kind}\t{n.source}\t{n.position}\t{n.token}" for i, n in enumerate(g.nodes)]
    lines.append(f"edges\t{len(g.edges)}")
    lines += [f"{u}\t{r}\t{v}" for u, r, v in g.edges]
    return "\n".join(lines) + "\n"


def parse_graph_dump(text: str) -> TokenGraph:
    rows = text.rstrip("\n").split("\n")
    pos = 0

    def section(name: str) -> int:
        nonlocal pos
        head, count = rows[pos].split("\t")
        if head != name:
            raise IngestionError(f"expected section {name!r}, found {head!r}")
        pos += 1
        return int(count)

    rel_rows = []
    for _ in range(section("relations")):
        _, name, kind = rows[pos].split("\t")
        rel_rows.append((name, kind))
        pos += 1
    nodes = []
    for _ in range(section("nodes")):
        _, kind, source, position, token = rows[pos].split("\t", 4)
        nodes.append(Node(token, kind, int(source), int(position)))
        pos += 1
    edges = []
    for _ in range(section("edges")):
        u, r, v = rows[pos].split("\t")
        edges.append(Edge(int(u), int(r), int(v)))
        pos += 1
    return TokenGraph(tuple(nodes), tuple(edges), RelationVocab(rel_rows))
