"""Transformer decoder over node embeddings, smoothed loss and beam search."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .numerics import FeedForward, LayerNorm, Module, Parameter, Tensor, glorot, new_bias, ops, sinusoidal_table


class MultiHeadAttention(Module):
    """Scaled dot-product attention with packed per-head projections."""

    def __init__(self, rng, d: int, heads: int):
        if d % heads:
            raise ValueError(f"heads={heads} must divide width {d}")
        self.heads = heads
        self.d_head = d // heads
        self.Wq = Parameter("Wq", glorot(rng, d, d))
        self.Wk = Parameter("Wk", glorot(rng, d, d))
        self.Wv = Parameter("Wv", glorot(rng, d, d))
        self.Wo = Parameter("Wo", glorot(rng, d, d))
        self.bo = new_bias("bo", d)

    def __call__(self, x: Tensor, mem: Tensor, mask: np.ndarray | None, weights: list | None = None) -> Tensor:
        q = ops.matmul(x, self.Wq)
        k = ops.matmul(mem, self.Wk)
        v = ops.matmul(mem, self.Wv)
        scale = 1.0 / math.sqrt(self.d_head)
        outs = []
        for h in range(self.heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            scores = ops.mul(ops.matmul(ops.columns(q, lo, hi), ops.transpose(ops.columns(k, lo, hi))), scale)
            alpha = ops.softmax(scores, mask)
            if weights is not None:
                weights.append(alpha.value)
            outs.append(ops.matmul(alpha, ops.columns(v, lo, hi)))
        cat = outs[0] if len(outs) == 1 else ops.concat(outs, axis=1)
        return ops.add(ops.matmul(cat, self.Wo), self.bo)


class DecoderLayer(Module):
    """Pre-norm block: masked self-attention, cross-attention, feed-forward."""

    def __init__(self, rng, d: int, heads: int, d_ff: int):
        self.self_attn = MultiHeadAttention(rng, d, heads)
        self.cross_attn = MultiHeadAttention(rng, d, heads)
        self.ffn = FeedForward(rng, d, d_ff)
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)
        self.norm3 = LayerNorm(d)

    def __call__(self, x, mem, self_mask, cross_mask, trace=None, dropout=None):
        sw = cw = None
        if trace is not None:
            sw, cw = [], []
            trace.setdefault("self", []).append(sw)
            trace.setdefault("cross", []).append(cw)
        drop = dropout or (lambda t: t)
        y = self.norm1(x)
        x = ops.add(x, drop(self.self_attn(y, y, self_mask, sw)))
        x = ops.add(x, drop(self.cross_attn(self.norm2(x), mem, cross_mask, cw)))
        return ops.add(x, drop(self.ffn(self.norm3(x))))


@dataclass
class TargetLayout:
    """Token sequences packed row-wise for one decoder pass.

    ``segment`` numbers the sequences; ``graph_of`` maps each sequence to the
    packed graph it attends to and ``node_segment`` gives the graph of every
    memory row. With ``node_segment`` unset every sequence sees all memory rows.
    """

    tokens: np.ndarray
    positions: np.ndarray
    segment: np.ndarray
    graph_of: np.ndarray | None = None
    node_segment: np.ndarray | None = None

    @classmethod
    def single(cls, prefix: Sequence[int]) -> "TargetLayout":
        return cls.pack([prefix])

    @classmethod
    def pack(cls, seqs: Sequence[Sequence[int]], graph_of=None, node_segment=None) -> "TargetLayout":
        tokens = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs])
        positions = np.concatenate([np.arange(len(s)) for s in seqs])
        segment = np.concatenate([np.full(len(s), i, dtype=np.int64) for i, s in enumerate(seqs)])
        return cls(
            tokens,
            positions,
            segment,
            None if graph_of is None else np.asarray(graph_of, dtype=np.int64),
            None if node_segment is None else np.asarray(node_segment, dtype=np.int64),
        )

    def self_mask(self) -> np.ndarray:
        same = self.segment[:, None] == self.segment[None, :]
        return same & (self.positions[None, :] <= self.positions[:, None])

    def cross_mask(self) -> np.ndarray | None:
        if self.node_segment is None:
            return None
        graph = self.segment if self.graph_of is None else self.graph_of[self.segment]
        return graph[:, None] == self.node_segment[None, :]

    def last_rows(self) -> np.ndarray:
        return np.flatnonzero(np.diff(self.segment, append=-1) != 0)


class TransformerDecoder(Module):
    def __init__(self, rng, d: int, heads: int, layers: int, d_ff: int, vocab_size: int):
        self.layers = [DecoderLayer(rng, d, heads, d_ff) for _ in range(layers)]
        self.final_norm = LayerNorm(d)
        self.out_W = Parameter("out_W", glorot(rng, d, vocab_size))
        self.out_b = new_bias("out_b", vocab_size)
        self.d = d
        self.vocab_size = vocab_size

    def __call__(self, embed: Tensor, mem: Tensor, layout: TargetLayout, trace=None, dropout=None) -> Tensor:
        if layout.tokens.size == 0:
            raise ValueError("decoder needs a nonempty prefix (at least BOS)")
        bad = layout.tokens[(layout.tokens < 0) | (layout.tokens >= embed.shape[0])]
        if bad.size:
            raise IndexError(f"token id {int(bad[0])} outside vocabulary of size {embed.shape[0]}")
        x = ops.mul(ops.take_rows(embed, layout.tokens), math.sqrt(self.d))
        x = ops.add(x, sinusoidal_table(layout.positions, self.d))
        if dropout is not None:
            x = dropout(x)
        self_mask, cross_mask = layout.self_mask(), layout.cross_mask()
        for layer in self.layers:
            x = layer(x, mem, self_mask, cross_mask, trace, dropout)
        return ops.add(ops.matmul(self.final_norm(x), self.out_W), self.out_b)


def label_smoothed_nll(logits: Tensor, targets: Sequence[int], eps: float = 0.1) -> Tensor:
    """Mean cross-entropy against (1 - eps) on the gold id and eps / (V - 1) elsewhere."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {eps}")
    loss, _ = ops.smoothed_cross_entropy(logits, np.asarray(targets), eps)
    return loss


def length_penalty(length: int, alpha: float) -> float:
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    return ((5.0 + length) / 6.0) ** alpha


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logp: float
    finished: bool = False

    @property
    def length(self) -> int:
        return len(self.tokens) - 1

    def score(self, alpha: float) -> float:
        return self.logp / length_penalty(self.length, alpha)


def ranking_key(h: Hypothesis, alpha: float):
    """Higher score first; ties go to lower token ids, then the shorter sequence."""
    return (-h.score(alpha), h.tokens[1:], len(h.tokens))


StepFn = Callable[[Sequence[tuple[int, ...]]], np.ndarray]


def _best_possible(logp: float, length: int, max_len: int, alpha: float) -> float:
    # lp is monotone in length, so the best reachable score sits at one end
    if length >= max_len:
        return -math.inf
    return max(logp / length_penalty(length + 1, alpha), logp / length_penalty(max_len, alpha))


def beam_search(
    step_fn: StepFn,
    beam_size: int,
    alpha: float,
    max_len: int,
    bos: int,
    eos: int,
) -> Hypothesis:
    """Length-penalised beam search.

    ``step_fn`` maps a list of prefixes (each starting with ``bos``) to a
    ``(len(prefixes), V)`` array of next-token log-probabilities; ``-inf``
    entries are never expanded. A hypothesis finishes on ``eos`` or at
    ``max_len`` generated tokens and is scored ``logp / ((5 + len) / 6) ** alpha``.
    Search stops once no open hypothesis can still beat the best finished one.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    alive = [Hypothesis((bos,), 0.0)]
    finished: list[Hypothesis] = []
    for t in range(1, max_len + 1):
        logps = np.asarray(step_fn([h.tokens for h in alive]))
        cands = []
        for h, row in zip(alive, logps):
            for tok in range(row.shape[0]):
                if row[tok] == -np.inf:
                    continue
                done = tok == eos or t == max_len
                cands.append(Hypothesis(h.tokens + (tok,), h.logp + float(row[tok]), done))
        cands.sort(key=lambda c: (-c.logp, c.tokens))
        finished.extend(c for c in cands[:beam_size] if c.finished)
        alive = [c for c in cands if not c.finished][:beam_size]
        if not alive:
            break
        if finished:
            best = min(finished, key=lambda h: ranking_key(h, alpha))
            if max(_best_possible(h.logp, t, max_len, alpha) for h in alive) < best.score(alpha):
                break
    if not finished:
        raise ValueError("no hypothesis with finite log-probability")
    return min(finished, key=lambda h: ranking_key(h, alpha))
