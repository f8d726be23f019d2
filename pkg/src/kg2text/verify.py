"""Verification suites: finite-difference gradients, invariants and brute-force oracles.

Every check returns :class:`CheckResult` records so the same code backs the
``verify`` command and the acceptance tests.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .decoder import DecoderLayer, Hypothesis, MultiHeadAttention, TargetLayout, beam_search, ranking_key
from .encoder import ARCHITECTURES, EncoderConfig, GlobalLayer, GraphEncoder, GraphInputs, LocalLayer
from .graph import (
    EntityGraph,
    TokenGraph,
    build_token_graph,
    connected_components,
    diameter,
)
from .model import Batch, Graph2Text, ModelConfig
from .numerics import (
    FeedForward,
    GRUCell,
    LayerNorm,
    Linear,
    Parameter,
    Tensor,
    grad_check,
    no_record,
    ops,
)
from .numerics.ops import log_softmax_values

GRAD_TOL = 1e-4
# central differences at GRAD_EPS carry ~5e-11 of round-off on these objectives,
# so relative error is only resolvable to GRAD_TOL for gradients above ~5e-7;
# a larger step starts straddling ReLU / LeakyReLU kinks
GRAD_EPS = 1e-5
GRAD_FLOOR = 1e-6
SUM_TOL = 1e-9
EQUIV_TOL = 1e-9
SENSITIVITY_FLOOR = 1e-12
SUITES = ("grad", "invariants", "oracle")
LABELS = ("used-for", "part-of", "compare")


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: {self.value:.3g} vs {self.threshold:.3g}{extra}"


# -- random inputs ----------------------------------------------------------


def random_entity_graph(
    rng: np.random.Generator, max_entities: int = 6, max_tokens: int = 3, min_entities: int = 1
) -> EntityGraph:
    """Entities of 1..max_tokens tokens joined by distinct triples (self-edges allowed)."""
    n = int(rng.integers(min_entities, max_entities + 1))
    entities = [tuple(f"w{int(rng.integers(12))}" for _ in range(int(rng.integers(1, max_tokens + 1)))) for _ in range(n)]
    pool = [(h, r, t) for h in range(n) for r in LABELS for t in range(n)]
    k = int(rng.integers(0, min(len(pool), 2 * n) + 1))
    picks = sorted(rng.choice(len(pool), size=k, replace=False)) if k else []
    return EntityGraph(entities, [pool[i] for i in picks], relations=frozenset(LABELS))


def random_token_graph(
    rng: np.random.Generator, lo: int = 4, hi: int = 6, levi: bool = False, min_in_degree: int = 1
) -> TokenGraph:
    """A token graph with between ``lo`` and ``hi`` nodes (one token per entity).

    ``min_in_degree`` counts incoming edges including the self-loop.
    """
    while True:
        g = random_entity_graph(rng, max_entities=hi, max_tokens=1, min_entities=1)
        tg = build_token_graph(g, use_levi=levi)
        if not lo <= tg.num_nodes <= hi:
            continue
        indeg = np.bincount([v for _, _, v in tg.edges], minlength=tg.num_nodes)
        if indeg.min() >= min_in_degree:
            return tg


def small_encoder_config(architecture: str, layers: int = 2, **kw) -> EncoderConfig:
    base = dict(global_layers=layers, local_layers=layers, global_heads=2, local_heads=2, d_v=8, d_ff=12)
    base.update(kw)
    return EncoderConfig(architecture, **base)


def _objective(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.total(ops.mul(out, weights))


# -- gradient suite ---------------------------------------------------------


def _grad_cases(rng: np.random.Generator) -> list[tuple[str, Callable[[], Tensor], list[Parameter]]]:
    cases = []
    d, n = 8, 5

    def inputs(shape=(n, d)):
        return Parameter("x", rng.normal(size=shape))

    def add(name, module_or_params, build):
        x = inputs()
        out_shape = build(x).shape
        w = rng.normal(size=out_shape)
        params = [x] + (module_or_params if isinstance(module_or_params, list) else module_or_params.parameters())
        cases.append((name, lambda: _objective(build(x), w), params))

    lin = Linear(rng, d, 6)
    add("linear", lin, lambda x: lin(x))
    ln = LayerNorm(d)
    ln.gain.value[...] = rng.normal(1.0, 0.2, size=d)
    ln.bias.value[...] = rng.normal(0.0, 0.2, size=d)
    add("layer_norm", ln, lambda x: ln(x))
    ff = FeedForward(rng, d, 12)
    add("feed_forward", ff, lambda x: ff(x))
    gru = GRUCell(rng, 6, d)
    m = Parameter("m", rng.normal(size=(n, 6)))
    add("gru_cell", [m] + gru.parameters(), lambda x: gru(x, m))

    # with a lone self-loop the local attention weight is fixed at 1 and the
    # gradients of Wv and a vanish exactly, which finite differences cannot resolve
    g = random_token_graph(rng, min_in_degree=2)
    ctx = GraphInputs.from_graph(g)
    R = len(g.relation_vocab)
    for label, cfg in (
        ("global_layer", small_encoder_config("global-only")),
        ("global_layer_sqrt", small_encoder_config("global-only", scaling="sqrt_dz")),
        ("local_layer", small_encoder_config("local-only")),
        ("local_layer_bases", small_encoder_config("local-only", num_bases=2)),
    ):
        layer = GlobalLayer(rng, cfg) if cfg.architecture == "global-only" else LocalLayer(rng, cfg, R)
        x = Parameter("x", rng.normal(size=(g.num_nodes, d)))
        w = rng.normal(size=(g.num_nodes, d))
        cases.append((label, (lambda layer=layer, x=x, w=w: _objective(layer(x, ctx), w)), [x] + layer.parameters()))

    mem = Parameter("mem", rng.normal(size=(4, d)))
    mha = MultiHeadAttention(rng, d, 2)
    layout = TargetLayout.pack([[0, 1, 2], [0, 3]], graph_of=[0, 1], node_segment=[0, 0, 1, 1])
    add("decoder_attention", [mem] + mha.parameters(), lambda x: mha(x, mem, layout.cross_mask()))
    dl = DecoderLayer(rng, d, 2, 12)
    add("decoder_layer", [mem] + dl.parameters(), lambda x: dl(x, mem, layout.self_mask(), layout.cross_mask()))

    logits = Parameter("logits", rng.normal(size=(6, 7)))
    targets = rng.integers(0, 7, size=6)
    cases.append(("smoothed_cross_entropy", lambda: ops.smoothed_cross_entropy(logits, targets, 0.1)[0], [logits]))

    for arch in ARCHITECTURES:
        cfg = small_encoder_config(arch, layers=1 if arch in ("PGE", "CGE") else 2)
        enc = GraphEncoder(rng, cfg, R)
        x = Parameter("x", rng.normal(size=(g.num_nodes, d)))
        w = rng.normal(size=(g.num_nodes, cfg.d_out))
        cases.append((f"encoder[{arch}]", (lambda enc=enc, x=x, w=w: _objective(enc(x, ctx), w)), [x] + enc.parameters()))

    # whole model: embeddings, encoder, bridge, decoder and smoothed loss
    g4 = random_token_graph(rng, 4, 4, min_in_degree=2)
    vocab = 9
    ids = rng.integers(4, vocab, size=5)
    batch = Batch(
        GraphInputs.from_graph(g4),
        rng.integers(4, vocab, size=4),
        np.asarray(g4.positions, dtype=np.int64),
        TargetLayout.pack([[0, *ids[:-1]]], graph_of=[0], node_segment=[0] * 4),
        np.append(ids[1:], 1),
        1,
    )
    for arch in ("CGE-LW", "PGE"):
        cfg = ModelConfig(small_encoder_config(arch, layers=1), decoder_layers=1, decoder_heads=2, decoder_d_ff=12)
        model = Graph2Text(cfg, vocab, vocab, len(g4.relation_vocab), int(rng.integers(1 << 30)))
        cases.append((f"model[{arch}]", (lambda model=model: model.loss(batch, 0.1)[0]), model.parameters()))
    return cases


def grad_suite(seed: int = 0, max_coords: int = 6) -> list[CheckResult]:
    """Tape gradients against central differences for each layer and architecture."""
    rng = np.random.default_rng(seed)
    results = []
    for name, f, params in _grad_cases(rng):
        coord_rng = np.random.default_rng([seed, len(results)])
        err = grad_check(f, params, eps=GRAD_EPS, max_coords=max_coords, rng=coord_rng, floor=GRAD_FLOOR)
        results.append(CheckResult(f"grad/{name}", err < GRAD_TOL, err, GRAD_TOL))
    return results


# -- invariants -------------------------------------------------------------


def _tiny_model(rng: np.random.Generator, R: int, vocab: int = 10) -> Graph2Text:
    cfg = ModelConfig(small_encoder_config("CGE-LW"), decoder_layers=2, decoder_heads=2, decoder_d_ff=12)
    return Graph2Text(cfg, vocab, vocab, R, int(rng.integers(1 << 30)))


def normalization_suite(trials: int = 100, seed: int = 0) -> list[CheckResult]:
    """Attention rows of every kind sum to one on random packed forwards."""
    rng = np.random.default_rng(seed)
    worst = {"global": 0.0, "local": 0.0, "self": 0.0, "cross": 0.0}
    for _ in range(trials):
        graphs = [random_token_graph(rng, 1, 6) for _ in range(int(rng.integers(1, 3)))]
        model = _tiny_model(rng, len(graphs[0].relation_vocab))
        ctx = GraphInputs.from_graphs(graphs)
        ids = rng.integers(0, 10, size=ctx.num_nodes)
        pos = np.zeros(ctx.num_nodes, dtype=np.int64)
        seqs = [list(rng.integers(0, 10, size=int(rng.integers(1, 5)))) for _ in graphs]
        layout = TargetLayout.pack(seqs, graph_of=np.arange(len(graphs)), node_segment=ctx.segment)
        trace: dict = {}
        with no_record():
            mem = model.encode(ctx, ids, pos, trace)
            model.decoder(model.target_embedding, mem, layout, trace)
        for layer in trace["global"]:
            for a in layer:
                worst["global"] = max(worst["global"], float(np.abs(a.sum(axis=1) - 1).max()))
        for layer in trace["local"]:
            for a in layer:
                sums = np.bincount(ctx.dst, weights=a, minlength=ctx.num_nodes)
                worst["local"] = max(worst["local"], float(np.abs(sums - 1).max()))
        for kind in ("self", "cross"):
            for layer in trace[kind]:
                for a in layer:
                    worst[kind] = max(worst[kind], float(np.abs(a.sum(axis=1) - 1).max()))
    return [CheckResult(f"normalization/{k}", v < SUM_TOL, v, SUM_TOL, f"{trials} forwards") for k, v in worst.items()]


def equivariance_suite(trials: int = 50, seed: int = 0) -> list[CheckResult]:
    """Permuting node order permutes every architecture's output the same way."""
    rng = np.random.default_rng(seed)
    results = []
    for arch in ARCHITECTURES:
        worst = 0.0
        for _ in range(trials):
            g = random_token_graph(rng, 2, 7)
            enc = GraphEncoder(rng, small_encoder_config(arch), len(g.relation_vocab))
            H0 = rng.normal(size=(g.num_nodes, 8))
            perm = rng.permutation(g.num_nodes)
            H0p = np.empty_like(H0)
            H0p[perm] = H0
            with no_record():
                out = enc(Tensor(H0), GraphInputs.from_graph(g)).value
                outp = enc(Tensor(H0p), GraphInputs.from_graph(g.permuted(list(perm)))).value
            worst = max(worst, float(np.abs(outp[perm] - out).max()))
        results.append(CheckResult(f"equivariance/{arch}", worst < EQUIV_TOL, worst, EQUIV_TOL, f"{trials} trials"))
    return results


def locality_suite(trials: int = 20, seed: int = 0) -> list[CheckResult]:
    """Local layers see exactly L hops; one global layer sees every node."""
    rng = np.random.default_rng(seed)
    leaked = 0.0
    for _ in range(trials):
        g = random_token_graph(rng, 5, 9)
        L = int(rng.integers(1, 4))
        enc = GraphEncoder(rng, small_encoder_config("local-only", layers=L), len(g.relation_vocab))
        ctx = GraphInputs.from_graph(g)
        dist = exact_distances(g)
        H0 = rng.normal(size=(g.num_nodes, 8))
        with no_record():
            base = enc(Tensor(H0), ctx).value
            for u in range(g.num_nodes):
                H1 = H0.copy()
                H1[u] += rng.normal(size=8)
                out = enc(Tensor(H1), ctx).value
                far = (dist[u] > L) | (dist[u] < 0)
                if far.any():
                    leaked = max(leaked, float(np.abs(out[far] - base[far]).max()))
    weakest = math.inf
    for _ in range(trials):
        g = random_token_graph(rng, 4, 8)
        enc = GraphEncoder(rng, small_encoder_config("global-only", layers=1), len(g.relation_vocab))
        ctx = GraphInputs.from_graph(g)
        H0 = rng.normal(size=(g.num_nodes, 8))
        with no_record():
            base = enc(Tensor(H0), ctx).value
            for u in range(g.num_nodes):
                H1 = H0.copy()
                H1[u] += rng.normal(size=8)
                change = np.abs(enc(Tensor(H1), ctx).value - base).max(axis=1)
                weakest = min(weakest, float(change.min()))
    return [
        CheckResult("locality/local_beyond_L", leaked == 0.0, leaked, 0.0, f"{trials} trials, exact"),
        CheckResult("locality/global_reach", weakest > SENSITIVITY_FLOOR, weakest, SENSITIVITY_FLOOR, f"{trials} trials"),
    ]


# -- oracles ----------------------------------------------------------------


def exact_distances(g: TokenGraph) -> np.ndarray:
    """All-pairs hop counts by Floyd-Warshall; -1 where unreachable."""
    n = g.num_nodes
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for u, _, v in g.edges:
        if u != v:
            d[u, v] = d[v, u] = 1.0
    for k in range(n):
        d = np.minimum(d, d[:, k : k + 1] + d[k : k + 1, :])
    return np.where(np.isinf(d), -1, d).astype(np.int64)


def graph_oracle_suite(trials: int = 200, seed: int = 0) -> list[CheckResult]:
    """Token and Levi graph sizes by formula; components and diameter by brute force."""
    rng = np.random.default_rng(seed)
    bad = {"edges": 0, "levi_nodes": 0, "levi_edges": 0, "components": 0, "diameter": 0}
    for _ in range(trials):
        eg = random_entity_graph(rng)
        tokens = sum(len(e) for e in eg.entities)
        tg = build_token_graph(eg, use_levi=False)
        pairs = sum(len(eg.entities[h]) * len(eg.entities[t]) for h, _, t in eg.edges)
        bad["edges"] += len(tg.edges) != 2 * pairs + tokens
        lg = build_token_graph(eg, use_levi=True)
        n_levi = tokens + len(eg.edges)
        bad["levi_nodes"] += lg.num_nodes != n_levi
        spokes = sum(len(eg.entities[h]) + len(eg.entities[t]) for h, _, t in eg.edges)
        bad["levi_edges"] += len(lg.edges) != 2 * spokes + n_levi
        for g in (tg, lg):
            dist = exact_distances(g)
            reach = dist >= 0
            # components: count distinct reachability rows
            comps = len({tuple(row) for row in reach})
            bad["components"] += connected_components(g) != comps
            bad["diameter"] += diameter(g) != int(dist.max())
    return [CheckResult(f"graph_oracle/{k}", v == 0, float(v), 0.0, f"{trials} graphs") for k, v in bad.items()]


def dense_attention_suite(trials: int = 20, seed: int = 0) -> list[CheckResult]:
    """Vectorised global and local layers against per-node / per-edge loops."""
    rng = np.random.default_rng(seed)
    worst_g = worst_l = 0.0
    for _ in range(trials):
        g = random_token_graph(rng, 2, 7)
        ctx = GraphInputs.from_graph(g)
        H = rng.normal(size=(g.num_nodes, 8))
        cfg = small_encoder_config("CGE")
        glayer = GlobalLayer(rng, cfg)
        llayer = LocalLayer(rng, cfg, len(g.relation_vocab))
        with no_record():
            worst_g = max(worst_g, float(np.abs(glayer(Tensor(H), ctx).value - global_layer_oracle(glayer, H)).max()))
            worst_l = max(worst_l, float(np.abs(llayer(Tensor(H), ctx).value - local_layer_oracle(llayer, H, g)).max()))
    return [
        CheckResult("oracle/global_layer", worst_g < 1e-10, worst_g, 1e-10, f"{trials} graphs"),
        CheckResult("oracle/local_layer", worst_l < 1e-10, worst_l, 1e-10, f"{trials} graphs"),
    ]


def _ln(x, gain, bias, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def global_layer_oracle(layer: GlobalLayer, H: np.ndarray) -> np.ndarray:
    n = H.shape[0]
    heads = []
    for head in layer.heads:
        q, k, v = H @ head.Wq.value, H @ head.Wk.value, H @ head.Wg.value
        out = np.zeros((n, v.shape[1]))
        for i in range(n):
            s = np.array([q[i] @ k[j] for j in range(n)]) / layer._scale
            w = np.exp(s - s.max())
            w /= w.sum()
            out[i] = sum(w[j] * v[j] for j in range(n))
        heads.append(out)
    m = np.concatenate(heads, axis=1)
    if hasattr(layer, "Wo"):
        m = m @ layer.Wo.value
    hhat = _ln(m + H, layer.norm.gain.value, layer.norm.bias.value)
    f = layer.ffn
    ff = np.maximum(hhat @ f.W1.value + f.b1.value, 0.0) @ f.W2.value + f.b2.value
    return ff + m + H


def local_layer_oracle(layer: LocalLayer, H: np.ndarray, g: TokenGraph) -> np.ndarray:
    n = H.shape[0]
    heads = []
    for head in layer.heads:
        Wr = head.relation_stack().value
        dz = layer.d_z
        a = head.a.value.reshape(-1)
        out = np.zeros((n, dz))
        for v in range(n):
            incoming = [(u, r) for u, r, w in g.edges if w == v]
            msgs = [H[u] @ Wr[r] for u, r in incoming]
            scores = []
            for msg in msgs:
                s = a[:dz] @ (H[v] @ head.Wv.value) + a[dz:] @ msg
                scores.append(s if s > 0 else layer._slope * s)
            scores = np.array(scores)
            w = np.exp(scores - scores.max())
            w /= w.sum()
            out[v] = sum(wi * mi for wi, mi in zip(w, msgs))
        heads.append(out)
    m = np.concatenate(heads, axis=1)
    gru = layer.gru
    d = H.shape[1]
    gx, gh = m @ gru.Wx.value, H @ gru.Wh.value
    b = gru.b.value
    sig = lambda x: 1.0 / (1.0 + np.exp(-x))  # noqa: E731
    z = sig(gx[:, :d] + gh[:, :d] + b[:d])
    r = sig(gx[:, d : 2 * d] + gh[:, d : 2 * d] + b[d : 2 * d])
    cand = np.tanh(gx[:, 2 * d :] + (r * H) @ gru.Wh.value[:, 2 * d :] + b[2 * d :])
    return H + z * (cand - H)


def toy_step_fn(seed: int, vocab: int, bos: int = 0):
    """Deterministic next-token log-probabilities keyed on the whole prefix."""

    def step(prefixes):
        rows = []
        for p in prefixes:
            logits = np.random.default_rng([seed, *p]).normal(scale=2.0, size=vocab)
            row = log_softmax_values(logits[None, :])[0]
            row[bos] = -np.inf
            rows.append(row)
        return np.stack(rows)

    return step


def exhaustive_search(step_fn, vocab: int, alpha: float, max_len: int, bos: int, eos: int) -> Hypothesis:
    """Score every finishable sequence and return the best under ``ranking_key``."""
    best = None
    frontier = [Hypothesis((bos,), 0.0)]
    for t in range(1, max_len + 1):
        nxt = []
        for h in frontier:
            row = step_fn([h.tokens])[0]
            for tok in range(vocab):
                if row[tok] == -np.inf:
                    continue
                c = Hypothesis(h.tokens + (tok,), h.logp + float(row[tok]), tok == eos or t == max_len)
                if c.finished:
                    if best is None or ranking_key(c, alpha) < ranking_key(best, alpha):
                        best = c
                else:
                    nxt.append(c)
        frontier = nxt
    return best


def beam_oracle_suite(trials: int = 50, seed: int = 0) -> list[CheckResult]:
    """Full-width beam search equals exhaustive enumeration on toy models."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    for i in range(trials):
        vocab = int(rng.integers(2, 5))
        max_len = int(rng.integers(1, 5))
        alpha = float(rng.choice([0.0, 0.6, 1.0, float(rng.uniform(0, 2))]))
        step = toy_step_fn(seed * 1000 + i, vocab)
        width = vocab**max_len
        got = beam_search(step, width, alpha, max_len, 0, 1)
        want = exhaustive_search(step, vocab, alpha, max_len, 0, 1)
        mismatches += got.tokens != want.tokens or got.score(alpha) != want.score(alpha)
    return [CheckResult("oracle/beam_exhaustive", mismatches == 0, float(mismatches), 0.0, f"{trials} toy models")]


def run_suite(name: str, seed: int = 0) -> list[CheckResult]:
    if name == "grad":
        start = time.perf_counter()
        results = grad_suite(seed)
        elapsed = time.perf_counter() - start
        results.append(CheckResult("grad/runtime_s", elapsed < 60.0, elapsed, 60.0))
        return results
    if name == "invariants":
        return normalization_suite(seed=seed) + equivariance_suite(seed=seed) + locality_suite(seed=seed)
    if name == "oracle":
        return graph_oracle_suite(seed=seed) + dense_attention_suite(seed=seed) + beam_oracle_suite(seed=seed)
    raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
