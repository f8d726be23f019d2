"""Graph-to-text model: node embeddings, graph encoder, bridge and decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .decoder import Hypothesis, TargetLayout, TransformerDecoder, beam_search
from .encoder import ConfigError, EncoderConfig, GraphEncoder, GraphInputs
from .graph import Instance, TokenGraph
from .numerics import Linear, Module, Parameter, Tensor, no_record, ops, sinusoidal_table
from .numerics.ops import log_softmax_values
from .vocab import BOS, EOS, PAD, Vocab


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_layers: int = 2
    decoder_heads: int = 4
    decoder_d_ff: int = 256
    share_vocab: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            object.__setattr__(self, "encoder", EncoderConfig.from_dict(self.encoder))
        if self.decoder_layers < 0 or self.decoder_heads < 1:
            raise ConfigError("decoder_layers must be >= 0 and decoder_heads >= 1")
        if self.encoder.d_v % self.decoder_heads:
            raise ConfigError(f"decoder_heads={self.decoder_heads} must divide d_v={self.encoder.d_v}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.encoder.d_v % 2:
            raise ConfigError("d_v must be even for sinusoidal positions")

    @property
    def d_model(self) -> int:
        return self.encoder.d_v

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["encoder"] = self.encoder.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


@dataclass
class Batch:
    graph: GraphInputs
    node_ids: np.ndarray
    node_pos: np.ndarray
    tgt: TargetLayout
    tgt_out: np.ndarray
    num_instances: int

    @property
    def num_tokens(self) -> int:
        return int(self.tgt_out.size)


def make_batch(instances: Sequence[Instance], src_vocab: Vocab, tgt_vocab: Vocab) -> Batch:
    """Pack instances into one disjoint-union graph and one packed target."""
    graphs = [inst.graph for inst in instances]
    ctx = GraphInputs.from_graphs(graphs)
    node_ids = np.asarray([i for g in graphs for i in src_vocab.encode(g.tokens)], dtype=np.int64)
    node_pos = np.asarray([p for g in graphs for p in g.positions], dtype=np.int64)
    seq_in, seq_out = [], []
    for inst in instances:
        ids = tgt_vocab.encode(inst.target)
        seq_in.append([BOS] + ids)
        seq_out.append(ids + [EOS])
    layout = TargetLayout.pack(seq_in, graph_of=np.arange(len(instances)), node_segment=ctx.segment)
    return Batch(ctx, node_ids, node_pos, layout, np.concatenate(seq_out).astype(np.int64), len(instances))


class Graph2Text(Module):
    def __init__(self, cfg: ModelConfig, src_vocab_size: int, tgt_vocab_size: int, num_relations: int, seed: int = 0):
        if cfg.share_vocab and src_vocab_size != tgt_vocab_size:
            raise ConfigError("a shared vocabulary needs equal source and target sizes")
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.d_model
        self.src_embed = Parameter("src_embed", rng.normal(0.0, d ** -0.5, size=(src_vocab_size, d)))
        if not cfg.share_vocab:
            self.tgt_embed = Parameter("tgt_embed", rng.normal(0.0, d ** -0.5, size=(tgt_vocab_size, d)))
        self.encoder = GraphEncoder(rng, cfg.encoder, num_relations)
        if cfg.encoder.d_out != d:
            self.bridge = Linear(rng, cfg.encoder.d_out, d)
        self.decoder = TransformerDecoder(rng, d, cfg.decoder_heads, cfg.decoder_layers, cfg.decoder_d_ff, tgt_vocab_size)
        self.num_relations = num_relations
        self._dropout_rng: np.random.Generator | None = None
        for name, p in self.named_parameters():
            p.name = name

    @property
    def target_embedding(self) -> Parameter:
        return self.src_embed if self.cfg.share_vocab else self.tgt_embed

    def initial_states(self, node_ids: np.ndarray, node_pos: np.ndarray) -> Tensor:
        """Token embedding (scaled by sqrt(d)) plus sinusoidal position of each node."""
        d = self.cfg.d_model
        x = ops.mul(ops.take_rows(self.src_embed, node_ids), math.sqrt(d))
        return ops.add(x, sinusoidal_table(node_pos, d))

    def _dropout(self):
        if self.cfg.dropout <= 0 or self._dropout_rng is None:
            return None
        p, rng = self.cfg.dropout, self._dropout_rng
        return lambda t: ops.dropout(t, p, rng)

    def encode(self, ctx: GraphInputs, node_ids, node_pos, trace: dict | None = None) -> Tensor:
        mem = self.encoder(self.initial_states(node_ids, node_pos), ctx, trace)
        if hasattr(self, "bridge"):
            mem = self.bridge(mem)
        return mem

    def logits(self, batch: Batch, trace: dict | None = None) -> Tensor:
        mem = self.encode(batch.graph, batch.node_ids, batch.node_pos, trace)
        return self.decoder(self.target_embedding, mem, batch.tgt, trace, self._dropout())

    def loss(self, batch: Batch, smoothing: float) -> tuple[Tensor, float]:
        """Label-smoothed loss per target token and the plain NLL per token."""
        return ops.smoothed_cross_entropy(self.logits(batch), batch.tgt_out, smoothing)

    def decoder_forward(self, node_embs: Tensor, prefix: Sequence[int], trace: dict | None = None) -> Tensor:
        """Logits ``(len(prefix), V)`` for one prefix against one graph's node embeddings."""
        return self.decoder(self.target_embedding, node_embs, TargetLayout.single(prefix), trace)

    def step_fn(self, mem: Tensor):
        """Next-token log-probabilities for a batch of equal-length prefixes."""
        banned = [BOS, PAD]

        def step(prefixes):
            with no_record():
                layout = TargetLayout.pack(prefixes)
                logits = self.decoder(self.target_embedding, mem, layout).value
            out = log_softmax_values(logits[layout.last_rows()])
            out[:, banned] = -np.inf
            return out

        return step

    def generate(
        self,
        graph: TokenGraph,
        src_vocab: Vocab,
        beam_size: int = 4,
        alpha: float = 0.0,
        max_len: int = 60,
    ) -> Hypothesis:
        with no_record():
            ctx = GraphInputs.from_graph(graph)
            ids = np.asarray(src_vocab.encode(graph.tokens), dtype=np.int64)
            mem = self.encode(ctx, ids, np.asarray(graph.positions, dtype=np.int64))
        return beam_search(self.step_fn(mem), beam_size, alpha, max_len, BOS, EOS)


def build_model(cfg: ModelConfig, src_vocab: Vocab, tgt_vocab: Vocab, num_relations: int, seed: int) -> Graph2Text:
    return Graph2Text(cfg, len(src_vocab), len(tgt_vocab), num_relations, seed)
