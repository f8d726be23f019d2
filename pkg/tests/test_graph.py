import json
from collections import Counter

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kg2text.graph import (
    CANONICAL,
    INVERSE,
    SELF,
    DatasetError,
    EntityGraph,
    IngestionError,
    RelationVocab,
    SynthSize,
    build_token_graph,
    connected_components,
    diameter,
    dump_graph,
    graph_stats,
    load_dataset,
    parse_graph_dump,
    synth_corpus,
    verbalize,
    write_dataset,
)
from kg2text.graph.model import Instance


def kinds_of(g):
    return Counter(g.relation_vocab.kinds[e.rel] for e in g.edges)


@st.composite
def entity_graphs(draw, max_entities=6, max_tokens=3):
    n = draw(st.integers(1, max_entities))
    entities = [tuple(draw(st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=max_tokens))) for _ in range(n)]
    triples = draw(
        st.lists(st.tuples(st.integers(0, n - 1), st.sampled_from(["r1", "r2", "r3"]), st.integers(0, n - 1)), max_size=8, unique=True)
    )
    return EntityGraph(entities, triples)


def to_networkx(g):
    G = nx.Graph()
    G.add_nodes_from(range(g.num_nodes))
    G.add_edges_from((u, v) for u, _, v in g.edges if u != v)
    return G


def test_multi_token_entity_gives_one_node_per_token():
    g = build_token_graph(EntityGraph([("node", "embedding")], []))
    assert g.tokens == ["node", "embedding"]
    assert g.positions == [0, 1]


def test_token_edges_two_by_three():
    g = build_token_graph(EntityGraph([("a1", "a2"), ("b1", "b2", "b3")], [(0, "r", 1)]))
    assert kinds_of(g) == {CANONICAL: 6, INVERSE: 6, SELF: 5}
    for u, _, v in g.forward_edges():
        assert g.nodes[u].source == 0 and g.nodes[v].source == 1


def test_levi_example():
    g = build_token_graph(EntityGraph([("a",), ("b1", "b2")], [(0, "used-for", 1)]), use_levi=True)
    assert g.num_nodes == 4
    assert g.nodes[3].kind == "relation" and g.nodes[3].token == "used-for"
    assert len(g.forward_edges()) == 3
    assert len(g.edges) == 3 * 2 + 4
    # no direct head -> tail token edge
    assert not any(g.nodes[u].kind == "entity" and g.nodes[v].kind == "entity" and u != v for u, _, v in g.edges)


def test_empty_entity_is_rejected():
    with pytest.raises(IngestionError):
        EntityGraph([("a",), ()], [])


def test_edge_outside_entities_is_rejected():
    with pytest.raises(IngestionError):
        EntityGraph([("a",)], [(0, "r", 3)])


def test_relation_vocab_layout():
    v = RelationVocab.build(["used-for", "compare"])
    assert v.entries == ["self", "compare", "compare-inv", "used-for", "used-for-inv"]
    assert v.inverse_of(v.index("compare")) == v.index("compare-inv")
    assert v.inverse_of(v.self_id) == v.self_id
    assert RelationVocab.from_list(v.to_list()) == v
    lv = RelationVocab.build([], levi=True)
    assert lv.entries[1:] == ["levi-subject", "levi-subject-inv", "levi-object", "levi-object-inv"]


def test_reserved_relation_names():
    with pytest.raises(IngestionError):
        RelationVocab.build(["self"])
    with pytest.raises(IngestionError):
        RelationVocab.build(["x-inv"])


def test_title_tokens_are_isolated_nodes():
    g = build_token_graph(EntityGraph([("a",), ("b",)], [(0, "r", 1)], title=("t1", "t2")))
    assert [n.kind for n in g.nodes] == ["entity", "entity", "title", "title"]
    assert [n.position for n in g.nodes[2:]] == [0, 1]
    assert connected_components(g) == 3
    no_title = build_token_graph(EntityGraph([("a",), ("b",)], [(0, "r", 1)], title=("t1",)), include_title=False)
    assert no_title.num_nodes == 2


@settings(max_examples=80, deadline=None)
@given(entity_graphs(), st.booleans())
def test_structural_invariants(eg, levi):
    g = build_token_graph(eg, use_levi=levi)
    vocab = g.relation_vocab
    edges = set(g.edges)
    assert len(edges) == len(g.edges)
    for u, r, v in g.edges:
        assert (v, vocab.inverse_of(r), u) in edges
    loops = [e for e in g.edges if e.rel == vocab.self_id]
    assert sorted(e.u for e in loops) == list(range(g.num_nodes))
    tokens = sum(len(e) for e in eg.entities)
    assert g.num_nodes == tokens + (len(eg.edges) if levi else 0)
    for eid, ent in enumerate(eg.entities):
        assert [n.position for n in g.nodes if n.kind == "entity" and n.source == eid] == list(range(len(ent)))


@settings(max_examples=80, deadline=None)
@given(entity_graphs(max_entities=8, max_tokens=2), st.booleans())
def test_components_and_diameter_match_networkx(eg, levi):
    g = build_token_graph(eg, use_levi=levi)
    G = to_networkx(g)
    assert connected_components(g) == nx.number_connected_components(G)
    assert diameter(g) == max(nx.diameter(G.subgraph(c)) for c in nx.connected_components(G))


def canonical_form(g):
    names = g.relation_vocab.entries
    key = [(n.token, n.kind, n.source, n.position) for n in g.nodes]
    order = sorted(range(g.num_nodes), key=lambda i: key[i])
    rank = {old: new for new, old in enumerate(order)}
    return sorted(key), Counter((rank[u], names[r], rank[v]) for u, r, v in g.edges)


def test_edge_order_does_not_matter():
    eg = EntityGraph([("a", "b"), ("c",), ("d", "e")], [(0, "r1", 1), (2, "r2", 0), (1, "r1", 2)])
    flipped = EntityGraph(eg.entities, list(reversed(eg.edges)))
    assert canonical_form(build_token_graph(eg)) == canonical_form(build_token_graph(flipped))


def test_diameter_and_components_examples():
    isolated = build_token_graph(EntityGraph([("a",), ("b",), ("c",)], []))
    assert connected_components(isolated) == 3
    path = build_token_graph(EntityGraph([("a",), ("b",), ("c",), ("d",)], [(0, "r", 1), (1, "r", 2), (2, "r", 3)]))
    assert connected_components(path) == 1 and diameter(path) == 3
    star = build_token_graph(EntityGraph([("c",)] + [(f"l{i}",) for i in range(5)], [(0, "r", i) for i in range(1, 6)]))
    assert diameter(star) == 2
    tri = [(0, "r", 1), (1, "r", 2), (2, "r", 0)]
    two = build_token_graph(EntityGraph([(x,) for x in "abcdef"], tri + [(h + 3, r, t + 3) for h, r, t in tri]))
    assert connected_components(two) == 2
    assert diameter(build_token_graph(EntityGraph([("a",)], []))) == 0


def test_graph_stats_examples():
    eg = EntityGraph([("a",), ("b",), ("c",)], [(0, "r", 1), (1, "r", 2)])
    row = graph_stats([Instance(build_token_graph(eg), ("w",) * 4)])
    assert row.as_tuple() == (3.0, 2.0, 1.0, 4.0)
    two = [Instance(build_token_graph(EntityGraph([(x,) for x in "ab"[:k] + "cd"[: k - 2]], [])), ("w",)) for k in (2, 4)]
    assert graph_stats(two).avg_nodes == 3.0


def test_graph_stats_recount_on_synthetic_corpus():
    data = synth_corpus(3, 50)
    row = graph_stats(data)
    n = len(data)
    assert row.avg_nodes == sum(sum(len(e) for e in d.entity_graph.entities) for d in data) / n
    forward = sum(
        sum(len(d.entity_graph.entities[h]) * len(d.entity_graph.entities[t]) for h, _, t in d.entity_graph.edges)
        for d in data
    )
    assert row.avg_edges == forward / n
    assert row.avg_cc == sum(nx.number_connected_components(to_networkx(d.graph)) for d in data) / n


def test_synth_corpus_is_deterministic_and_templated():
    a, b = synth_corpus(5, 30), synth_corpus(5, 30)
    assert len(a) == 30
    assert [d.target for d in a] == [d.target for d in b]
    for d in a:
        assert list(d.target) == verbalize(d.entity_graph)


def test_synth_size_direction():
    small = graph_stats(synth_corpus(0, 60, SynthSize(max_triples=1)))
    large = graph_stats(synth_corpus(0, 60, SynthSize(min_triples=3, max_triples=6, max_entities=6)))
    assert large.avg_nodes > small.avg_nodes and large.avg_edges > small.avg_edges


def test_load_dataset_round_trip(tmp_path):
    data = synth_corpus(1, 5)
    path = tmp_path / "d.jsonl"
    write_dataset(path, data)
    loaded = load_dataset(path)
    assert [d.target for d in loaded] == [d.target for d in data]
    assert [d.graph.num_nodes for d in loaded] == [build_token_graph(d.entity_graph).num_nodes for d in data]
    (tmp_path / "empty.jsonl").write_text("")
    assert load_dataset(tmp_path / "empty.jsonl") == []


def test_load_dataset_reports_line_numbers(tmp_path):
    good = json.dumps({"entities": [["a"], ["b"]], "triples": [[0, "r", 1]], "text": ["a", "r", "b"]})
    bad_ref = json.dumps({"entities": [["a"]], "triples": [[0, "r", 4]], "text": ["a"]})
    path = tmp_path / "d.jsonl"
    path.write_text("\n".join([good] * 6 + [bad_ref]) + "\n")
    with pytest.raises(DatasetError, match="line 7") as err:
        load_dataset(path)
    assert err.value.line == 7
    path.write_text(json.dumps({"entities": [["a"]], "triples": [], "text": ["a"], "extra": 1}) + "\n")
    with pytest.raises(DatasetError, match="unknown field"):
        load_dataset(path)
    path.write_text("{not json\n")
    with pytest.raises(DatasetError, match="line 1"):
        load_dataset(path)


def test_dump_round_trip():
    for levi in (False, True):
        g = build_token_graph(EntityGraph([("a", "b"), ("c",)], [(0, "r", 1)], title=("t",)), use_levi=levi)
        text = dump_graph(g)
        back = parse_graph_dump(text)
        assert back == g and back.relation_vocab == g.relation_vocab
        assert dump_graph(back) == text


def test_permuted_graph_relabels_nodes(rng):
    g = build_token_graph(EntityGraph([("a",), ("b",), ("c",)], [(0, "r", 1), (1, "r", 2)]))
    perm = list(rng.permutation(3))
    p = g.permuted(perm)
    for i in range(3):
        assert p.nodes[perm[i]] == g.nodes[i]
    assert Counter((perm[u], r, perm[v]) for u, r, v in g.edges) == Counter(p.edges)
    assert np.array_equal(np.sort([e.rel for e in p.edges]), np.sort([e.rel for e in g.edges]))
