"""Corpus BLEU, score binning, length histograms and global-attention distances."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import GraphInputs
from .graph import UNREACHABLE, Instance, TokenGraph, diameter, distance_matrix
from .numerics import no_record

INF = math.inf
LENGTH_BIN = 10


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100] with uniform weights and no smoothing.

    Orders for which the candidates contain no n-grams at all are left out of
    the geometric mean; an order with candidate n-grams but no matches gives 0.
    """
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        raise ValueError("bleu needs at least one candidate/reference pair")
    matched = [0] * max_n
    total = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            c, r = _ngrams(cand, n), _ngrams(ref, n)
            matched[n - 1] += sum(min(k, r[g]) for g, k in c.items())
            total[n - 1] += sum(c.values())
    if cand_len == 0:
        return 0.0
    logs = []
    for m, t in zip(matched, total):
        if t == 0:
            continue
        if m == 0:
            return 0.0
        logs.append(math.log(m / t))
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(sum(logs) / len(logs))


def length_distribution(
    outputs: Sequence[Sequence[str]], references: Sequence[Sequence[str]], width: int = LENGTH_BIN
) -> tuple[dict[int, int], dict[int, int]]:
    """Word-count histograms keyed by the lower edge of each ``width``-wide bin."""

    def hist(seqs):
        return dict(sorted(Counter(len(s) // width * width for s in seqs).items()))

    return hist(outputs), hist(references)


BIN_KEYS = ("node_count", "diameter", "triple_count", "sentence_count")


def bin_value(inst: Instance, key: str) -> int:
    if key == "node_count":
        return inst.graph.num_nodes
    if key == "diameter":
        return diameter(inst.graph)
    if key == "triple_count":
        if inst.entity_graph is None:
            raise ValueError("triple_count binning needs the entity graph")
        return len(set(inst.entity_graph.edges))
    if key == "sentence_count":
        return max(1, sum(1 for t in inst.target if t in (".", "!", "?")))
    raise ValueError(f"unknown bin key {key!r}; expected one of {BIN_KEYS}")


@dataclass
class BinRow:
    low: float
    high: float
    count: int
    bleu: float

    def label(self) -> str:
        def edge(x):
            return str(x) if math.isinf(x) else str(int(x))

        return f"[{edge(self.low)},{edge(self.high)})"


def binned_scores(
    results: Sequence[tuple[Instance, Sequence[str]]], bin_by: str, boundaries: Sequence[float]
) -> list[BinRow]:
    """Corpus BLEU per bin; bins are ``[b_i, b_{i+1})`` plus an open last bin.

    Values below the first boundary fall into a leading ``[-inf, b_0)`` bin.
    Empty bins are omitted.
    """
    if not results:
        raise ValueError("binned_scores needs at least one result")
    edges = [-INF, *sorted(boundaries), INF]
    groups: dict[int, list[int]] = {}
    for i, (inst, _) in enumerate(results):
        v = bin_value(inst, bin_by)
        b = next(j for j in range(len(edges) - 1) if edges[j] <= v < edges[j + 1])
        groups.setdefault(b, []).append(i)
    rows = []
    for b in sorted(groups):
        members = groups[b]
        score = bleu([results[i][1] for i in members], [results[i][0].target for i in members])
        rows.append(BinRow(edges[b], edges[b + 1], len(members), score))
    return rows


class UnsupportedModelError(ValueError):
    pass


@dataclass
class AttentionTrace:
    """Argmax key and its hop distance for every (layer, head, query node).

    ``distance`` holds ``INF`` where the argmax key lies in another component.
    """

    argmax: np.ndarray  # (layers, heads, nodes) int
    distance: np.ndarray  # (layers, heads, nodes) float
    layer_mean: list[float] = field(default_factory=list)
    inf_fraction: list[float] = field(default_factory=list)

    @classmethod
    def from_weights(cls, weights: Sequence[Sequence[np.ndarray]], dist: np.ndarray) -> "AttentionTrace":
        argmax = np.asarray([[w.argmax(axis=1) for w in layer] for layer in weights], dtype=np.int64)
        n = dist.shape[0]
        hops = dist[np.arange(n), argmax].astype(float)
        hops[hops == UNREACHABLE] = INF
        means, fracs = [], []
        for layer in hops:
            finite = layer[np.isfinite(layer)]
            means.append(float(finite.mean()) if finite.size else float("nan"))
            fracs.append(float(1.0 - finite.size / layer.size))
        return cls(argmax, hops, means, fracs)


def attention_distance(model, graph: TokenGraph, src_vocab) -> AttentionTrace:
    """Distance from each node to the node its global heads attend to most."""
    if model.cfg.encoder.global_layers == 0 or model.cfg.encoder.architecture == "local-only":
        raise UnsupportedModelError("attention distance needs an encoder with global layers")
    trace: dict = {}
    with no_record():
        ids = np.asarray(src_vocab.encode(graph.tokens), dtype=np.int64)
        model.encode(GraphInputs.from_graph(graph), ids, np.asarray(graph.positions, dtype=np.int64), trace)
    return AttentionTrace.from_weights(trace["global"], distance_matrix(graph))


def write_tsv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = ["\t".join(header)] + ["\t".join(str(c) for c in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
