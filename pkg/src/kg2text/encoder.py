"""Global and local graph attention layers and their four fusion architectures.

Both layer types follow the same two-stage pattern: aggregate context from a
set of nodes (all nodes for the global layer, the labelled neighbourhood for
the local one) and combine it with the node's current state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .graph import TokenGraph
from .numerics import GRUCell, FeedForward, LayerNorm, Linear, Module, Parameter, Tensor, glorot, ops

ARCHITECTURES = ("global-only", "local-only", "PGE", "CGE", "PGE-LW", "CGE-LW")
LAYER_WISE = ("PGE-LW", "CGE-LW")
SCALING_MODES = ("linear_dz", "sqrt_dz")
ABLATIONS = frozenset({"no_global_attention", "no_ffn", "no_local_attention", "no_relation_weights", "no_gru"})


class ConfigError(ValueError):
    pass


class EmptyGraphError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    architecture: str = "CGE-LW"
    global_layers: int = 2
    local_layers: int = 2
    global_heads: int = 4
    local_heads: int = 4
    d_v: int = 64
    d_ff: int = 256
    scaling: str = "linear_dz"
    output_projection: bool = True
    leaky_slope: float = 0.2
    num_bases: int = 0
    ablations: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "ablations", frozenset(self.ablations))
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        if self.scaling not in SCALING_MODES:
            raise ConfigError(f"unknown scaling mode {self.scaling!r}")
        unknown = self.ablations - ABLATIONS
        if unknown:
            raise ConfigError(f"unknown ablation flag(s): {sorted(unknown)}")
        if self.global_layers < 0 or self.local_layers < 0:
            raise ConfigError("layer counts must be nonnegative")
        if self.architecture in LAYER_WISE and self.global_layers != self.local_layers:
            raise ConfigError(
                f"{self.architecture} fuses layers pairwise and needs global_layers == local_layers "
                f"(got {self.global_layers} and {self.local_layers})"
            )
        for heads, name in ((self.global_heads, "global_heads"), (self.local_heads, "local_heads")):
            if heads < 1 or self.d_v % heads:
                raise ConfigError(f"{name}={heads} must be positive and divide d_v={self.d_v}")
        if self.num_bases < 0:
            raise ConfigError("num_bases must be >= 0 (0 means one full matrix per relation)")

    @property
    def uses_global(self) -> bool:
        return self.architecture != "local-only"

    @property
    def uses_local(self) -> bool:
        return self.architecture != "global-only"

    @property
    def d_out(self) -> int:
        return 2 * self.d_v if self.architecture == "PGE" else self.d_v

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["ablations"] = sorted(self.ablations)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown encoder config key(s): {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes) -> "EncoderConfig":
        return replace(self, **changes)


@dataclass
class GraphInputs:
    """Index arrays for one graph or a disjoint union of graphs.

    Edge ``k`` carries a message from ``src[k]`` to ``dst[k]`` under relation
    ``rel[k]``. ``segment`` assigns every node to its graph so global attention
    stays within a graph when several are packed together.
    """

    num_nodes: int
    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray
    num_relations: int
    segment: np.ndarray

    @classmethod
    def from_graph(cls, g: TokenGraph) -> "GraphInputs":
        return cls.from_graphs([g])

    @classmethod
    def from_graphs(cls, graphs: Sequence[TokenGraph]) -> "GraphInputs":
        if not graphs:
            raise EmptyGraphError("no graphs given")
        vocab = graphs[0].relation_vocab
        src, rel, dst, seg = [], [], [], []
        offset = 0
        for gi, g in enumerate(graphs):
            if g.relation_vocab != vocab:
                raise ConfigError("graphs in one batch must share a relation vocabulary")
            for u, r, v in g.edges:
                src.append(u + offset)
                rel.append(r)
                dst.append(v + offset)
            seg.extend([gi] * g.num_nodes)
            offset += g.num_nodes
        return cls(
            num_nodes=offset,
            src=np.asarray(src, dtype=np.int64),
            rel=np.asarray(rel, dtype=np.int64),
            dst=np.asarray(dst, dtype=np.int64),
            num_relations=len(vocab),
            segment=np.asarray(seg, dtype=np.int64),
        )

    def attention_mask(self) -> np.ndarray | None:
        if self.segment.size == 0 or (self.segment == self.segment[0]).all():
            return None
        return self.segment[:, None] == self.segment[None, :]

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.num_nodes)


class GlobalHead(Module):
    def __init__(self, rng, d_v: int, d_z: int, attention: bool):
        self.Wg = Parameter("Wg", glorot(rng, d_v, d_z))
        if attention:
            self.Wq = Parameter("Wq", glorot(rng, d_v, d_z))
            self.Wk = Parameter("Wk", glorot(rng, d_v, d_z))


class GlobalLayer(Module):
    """Attention over every node pair, ignoring edge labels.

    Per head the score of key ``u`` for query ``v`` is ``(h_v Wq).(h_u Wk) / s``
    with ``s = d_z`` or ``sqrt(d_z)``. Heads are concatenated, optionally
    projected, then ``h' = FFN(LN(m + h)) + m + h``.
    """

    def __init__(self, rng, cfg: EncoderConfig):
        self.d_z = cfg.d_v // cfg.global_heads
        self._attention = "no_global_attention" not in cfg.ablations
        self._use_ffn = "no_ffn" not in cfg.ablations
        self._scale = float(self.d_z) if cfg.scaling == "linear_dz" else float(np.sqrt(self.d_z))
        self.heads = [GlobalHead(rng, cfg.d_v, self.d_z, self._attention) for _ in range(cfg.global_heads)]
        if cfg.output_projection:
            self.Wo = Parameter("Wo", np.eye(cfg.global_heads * self.d_z, cfg.d_v))
        self.norm = LayerNorm(cfg.d_v)
        if self._use_ffn:
            self.ffn = FeedForward(rng, cfg.d_v, cfg.d_ff)

    def attention(self, H: Tensor, head: GlobalHead, mask: np.ndarray | None) -> Tensor:
        n = H.shape[0]
        if not self._attention:
            support = np.ones((n, n), dtype=bool) if mask is None else mask
            return Tensor(support / support.sum(axis=1, keepdims=True))
        q = ops.matmul(H, head.Wq)
        k = ops.matmul(H, head.Wk)
        scores = ops.mul(ops.matmul(q, ops.transpose(k)), 1.0 / self._scale)
        return ops.softmax(scores, mask)

    def __call__(self, H: Tensor, ctx: GraphInputs, trace: dict | None = None) -> Tensor:
        if H.shape[0] == 0:
            raise EmptyGraphError("global layer called on a graph with no nodes")
        mask = ctx.attention_mask()
        outs = []
        weights = []
        for head in self.heads:
            alpha = self.attention(H, head, mask)
            weights.append(alpha.value)
            outs.append(ops.matmul(alpha, ops.matmul(H, head.Wg)))
        if trace is not None:
            trace.setdefault("global", []).append(weights)
        m = outs[0] if len(outs) == 1 else ops.concat(outs, axis=1)
        if hasattr(self, "Wo"):
            m = ops.matmul(m, self.Wo)
        hhat = self.norm(ops.add(m, H))
        if not self._use_ffn:
            return hhat
        return ops.add_n([self.ffn(hhat), m, H])


class LocalHead(Module):
    def __init__(self, rng, cfg: EncoderConfig, num_relations: int, d_z: int, attention: bool):
        d_v = cfg.d_v
        if attention:
            self.Wv = Parameter("Wv", glorot(rng, d_v, d_z))
            self.a = Parameter("a", glorot(rng, 2 * d_z, 1).reshape(1, 2 * d_z))
        if cfg.num_bases > 0:
            self.bases = Parameter("bases", glorot(rng, d_v, d_z, shape=(cfg.num_bases, d_v, d_z)))
            self.coeffs = Parameter("coeffs", glorot(rng, num_relations, cfg.num_bases))
        else:
            self.Wr = Parameter("Wr", glorot(rng, d_v, d_z, shape=(num_relations, d_v, d_z)))

    def relation_stack(self) -> Tensor:
        """All relation matrices as a (R, d_v, d_z) tensor."""
        if hasattr(self, "Wr"):
            return self.Wr
        B, d_v, d_z = self.bases.shape
        mixed = ops.matmul(self.coeffs, ops.reshape(self.bases, (B, d_v * d_z)))
        return ops.reshape(mixed, (self.coeffs.shape[0], d_v, d_z))


class LocalLayer(Module):
    """Relational graph attention over each node's labelled neighbourhood.

    Edge ``u -r-> v`` sends ``h_u W_r`` to ``v``; scores are
    ``LeakyReLU(a . [h_v W_v || h_u W_r])`` normalised over the incoming edges
    of ``v``. Heads are concatenated and fed as input to a GRU whose previous
    state is ``h_v``.
    """

    def __init__(self, rng, cfg: EncoderConfig, num_relations: int):
        self.d_z = cfg.d_v // cfg.local_heads
        self.num_relations = num_relations
        self._attention = "no_local_attention" not in cfg.ablations
        self._tied = "no_relation_weights" in cfg.ablations
        self._use_gru = "no_gru" not in cfg.ablations
        self._slope = cfg.leaky_slope
        stored = 1 if self._tied else num_relations
        if self._tied and cfg.num_bases > 0:
            cfg = replace(cfg, num_bases=0)
        self.heads = [LocalHead(rng, cfg, stored, self.d_z, self._attention) for _ in range(cfg.local_heads)]
        if self._use_gru:
            self.gru = GRUCell(rng, cfg.local_heads * self.d_z, cfg.d_v)

    def relation_weight(self, r: int, head: int = 0) -> np.ndarray:
        if not 0 <= r < self.num_relations:
            raise ConfigError(f"relation id {r} outside 0..{self.num_relations - 1}")
        stack = self.heads[head].relation_stack().value
        return stack[0 if self._tied else r]

    def _edge_relations(self, ctx: GraphInputs) -> np.ndarray:
        if ctx.rel.size and (ctx.rel.min() < 0 or ctx.rel.max() >= self.num_relations):
            raise ConfigError(
                f"edge relation id outside 0..{self.num_relations - 1} (layer built for {self.num_relations} relations)"
            )
        return np.zeros_like(ctx.rel) if self._tied else ctx.rel

    def __call__(self, H: Tensor, ctx: GraphInputs, trace: dict | None = None) -> Tensor:
        n, d_v = H.shape
        rel = self._edge_relations(ctx)
        if n and np.bincount(ctx.dst, minlength=n).min() == 0:
            raise ConfigError("every node needs at least one incoming edge (enable self-loops)")
        outs = []
        weights = []
        for head in self.heads:
            stack = head.relation_stack()
            R = stack.shape[0]
            # (R, d_v, d_z) -> (d_v, R*d_z) so a single matmul projects under every relation
            wide = ops.reshape(ops.transpose(stack, (1, 0, 2)), (d_v, R * self.d_z))
            per_rel = ops.reshape(ops.matmul(H, wide), (n * R, self.d_z))
            msg = ops.take_rows(per_rel, ctx.src * R + rel)
            if self._attention:
                a_dst = ops.transpose(ops.columns(head.a, 0, self.d_z))
                a_src = ops.transpose(ops.columns(head.a, self.d_z, 2 * self.d_z))
                dst_score = ops.take_rows(ops.matmul(ops.matmul(H, head.Wv), a_dst), ctx.dst)
                scores = ops.leaky_relu(ops.add(dst_score, ops.matmul(msg, a_src)), self._slope)
                alpha = ops.segment_softmax(ops.reshape(scores, (-1,)), ctx.dst, n)
            else:
                alpha = Tensor(1.0 / ctx.in_degree()[ctx.dst])
            weights.append(alpha.value)
            weighted = ops.mul(ops.reshape(alpha, (-1, 1)), msg)
            outs.append(ops.segment_sum(weighted, ctx.dst, n))
        if trace is not None:
            trace.setdefault("local", []).append(weights)
        m = outs[0] if len(outs) == 1 else ops.concat(outs, axis=1)
        if not self._use_gru:
            return ops.add(H, m)
        return self.gru(H, m)


class GraphEncoder(Module):
    def __init__(self, rng, cfg: EncoderConfig, num_relations: int):
        self.cfg = cfg
        n_global = cfg.global_layers if cfg.uses_global else 0
        n_local = cfg.local_layers if cfg.uses_local else 0
        self.global_layers = [GlobalLayer(rng, cfg) for _ in range(n_global)]
        self.local_layers = [LocalLayer(rng, cfg, num_relations) for _ in range(n_local)]
        if cfg.architecture == "PGE-LW":
            self.fuse = [Linear(rng, 2 * cfg.d_v, cfg.d_v) for _ in range(cfg.global_layers)]

    def __call__(self, H0: Tensor, ctx: GraphInputs, trace: dict | None = None) -> Tensor:
        arch = self.cfg.architecture

        def run(layers, H):
            for layer in layers:
                H = layer(H, ctx, trace)
            return H

        if arch == "global-only":
            return run(self.global_layers, H0)
        if arch == "local-only":
            return run(self.local_layers, H0)
        if arch == "PGE":
            return ops.concat([run(self.global_layers, H0), run(self.local_layers, H0)], axis=1)
        if arch == "CGE":
            return run(self.local_layers, run(self.global_layers, H0))
        H = H0
        if arch == "PGE-LW":
            for g_layer, l_layer, fuse in zip(self.global_layers, self.local_layers, self.fuse):
                H = fuse(ops.concat([g_layer(H, ctx, trace), l_layer(H, ctx, trace)], axis=1))
            return H
        for g_layer, l_layer in zip(self.global_layers, self.local_layers):
            H = l_layer(g_layer(H, ctx, trace), ctx, trace)
        return H


def encode(H0: Tensor, g: TokenGraph | GraphInputs, cfg: EncoderConfig, encoder: GraphEncoder, trace=None) -> Tensor:
    """Run ``encoder`` (built for ``cfg``) on initial node states ``H0``."""
    if encoder.cfg != cfg:
        raise ConfigError("encoder parameters were built for a different configuration")
    ctx = g if isinstance(g, GraphInputs) else GraphInputs.from_graph(g)
    if H0.shape[0] != ctx.num_nodes:
        raise ConfigError(f"H0 has {H0.shape[0]} rows but the graph has {ctx.num_nodes} nodes")
    return encoder(H0, ctx, trace)
