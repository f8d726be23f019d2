"""Deterministic training, checkpoint round-trips, evaluation and ablations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .analysis import bleu, length_distribution
from .checkpoint import Checkpoint
from .encoder import ConfigError
from .graph import Instance, RelationVocab, build_token_graph
from .model import Graph2Text, ModelConfig, make_batch
from .numerics import Tape, adam_step, clip_grad_norm, no_record, noam_lr
from .vocab import Vocab

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    steps: int = 1000
    batch_size: int = 10
    warmup: int = 100
    lr_scale: float = 0.5
    smoothing: float = 0.1
    alpha: float = 0.5
    beam_size: int = 4
    max_len: int = 60
    clip_norm: float = 1.0
    use_levi: bool = False
    include_title: bool = True

    def __post_init__(self):
        if isinstance(self.model, dict):
            object.__setattr__(self, "model", ModelConfig.from_dict(self.model))
        for name in ("steps",):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("batch_size", "warmup", "beam_size", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError("smoothing must lie in [0, 1)")
        if self.lr_scale <= 0:
            raise ConfigError("lr_scale must be positive")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["model"] = self.model.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


def build_vocabs(data: Sequence[Instance], share: bool) -> tuple[Vocab, Vocab]:
    if share:
        v = Vocab.from_instances(data)
        return v, v
    return Vocab.from_instances(data, targets=False), Vocab.from_instances(data, nodes=False)


@dataclass
class TrainState:
    config: TrainConfig
    model: Graph2Text
    src_vocab: Vocab
    tgt_vocab: Vocab
    relation_vocab: RelationVocab
    step: int = 0
    dropout_rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def checkpoint(self) -> Checkpoint:
        header = {
            "config": self.config.to_dict(),
            "step": self.step,
            "rng_state": self.dropout_rng.bit_generator.state,
            "src_vocab": self.src_vocab.to_list(),
            "tgt_vocab": None if self.config.model.share_vocab else self.tgt_vocab.to_list(),
            "relations": self.relation_vocab.to_list(),
        }
        arrays = {}
        for name, p in self.model.named_parameters():
            arrays[f"param/{name}"] = p.value.copy()
        for name, p in self.model.named_parameters():
            arrays[f"adam_m/{name}"] = p.adam_m.copy()
            arrays[f"adam_v/{name}"] = p.adam_v.copy()
        return Checkpoint(header, arrays)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "TrainState":
        h = ckpt.header
        cfg = TrainConfig.from_dict(h["config"])
        src = Vocab.from_list(h["src_vocab"])
        tgt = src if h["tgt_vocab"] is None else Vocab.from_list(h["tgt_vocab"])
        rel = RelationVocab.from_list(h["relations"])
        model = Graph2Text(cfg.model, len(src), len(tgt), len(rel), cfg.seed)
        for name, p in model.named_parameters():
            p.value[...] = ckpt.arrays[f"param/{name}"]
            p.adam_m[...] = ckpt.arrays[f"adam_m/{name}"]
            p.adam_v[...] = ckpt.arrays[f"adam_v/{name}"]
        rng = np.random.default_rng()
        rng.bit_generator.state = h["rng_state"]
        state = cls(cfg, model, src, tgt, rel, int(h["step"]), rng)
        model._dropout_rng = rng
        return state


def init_state(cfg: TrainConfig, data: Sequence[Instance]) -> TrainState:
    if not data:
        raise TrainingError("training data is empty")
    rel = data[0].graph.relation_vocab
    src, tgt = build_vocabs(data, cfg.model.share_vocab)
    model = Graph2Text(cfg.model, len(src), len(tgt), len(rel), cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    model._dropout_rng = rng
    return TrainState(cfg, model, src, tgt, rel, 0, rng)


def conform(data: Sequence[Instance], rel: RelationVocab, cfg: TrainConfig) -> list[Instance]:
    """Rebuild graphs whose relation ids were assigned by a different vocabulary."""
    out = []
    for inst in data:
        if inst.graph.relation_vocab == rel:
            out.append(inst)
            continue
        if inst.entity_graph is None:
            raise TrainingError("instance uses a foreign relation vocabulary and has no entity graph")
        g = build_token_graph(inst.entity_graph, cfg.use_levi, rel, include_title=cfg.include_title)
        out.append(Instance(g, inst.target, inst.entity_graph))
    return out


def make_batches(data: Sequence[Instance], batch_size: int) -> list[list[int]]:
    """Fixed batches of instance indices, bucketed by node count."""
    order = sorted(range(len(data)), key=lambda i: (data[i].graph.num_nodes, i))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def batch_for_step(step: int, n_batches: int, seed: int) -> int:
    """Batch index used at 1-based ``step``; each epoch is a seeded permutation."""
    epoch, within = divmod(step - 1, n_batches)
    return int(np.random.default_rng([seed, 2, epoch]).permutation(n_batches)[within])


@dataclass
class LossTrace:
    loss: list[float] = field(default_factory=list)
    nll: list[float] = field(default_factory=list)


def train_steps(state: TrainState, data: Sequence[Instance], steps: int, trace: LossTrace | None = None) -> LossTrace:
    """Advance ``state`` by ``steps`` optimizer updates."""
    cfg = state.config
    trace = trace or LossTrace()
    data = conform(data, state.relation_vocab, cfg)
    batches = make_batches(data, cfg.batch_size)
    cache: dict[int, object] = {}
    params = state.model.parameters()
    for _ in range(steps):
        step = state.step + 1
        bi = batch_for_step(step, len(batches), cfg.seed)
        if bi not in cache:
            cache[bi] = make_batch([data[i] for i in batches[bi]], state.src_vocab, state.tgt_vocab)
        for p in params:
            p.grad = None
        with Tape() as tape:
            loss, nll = state.model.loss(cache[bi], cfg.smoothing)
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step}")
            tape.backward(loss)
        clip_grad_norm(params, cfg.clip_norm)
        lr = noam_lr(step, cfg.model.d_model, cfg.warmup, cfg.lr_scale)
        adam_step(params, [p.grad for p in params], lr, step)
        state.step = step
        trace.loss.append(value)
        trace.nll.append(nll)
        if step % 100 == 0:
            log.info("step %d loss %.4f nll %.4f lr %.2e", step, value, nll, lr)
    for p in params:
        p.grad = None
    return trace


def train(cfg: TrainConfig, data: Sequence[Instance]) -> tuple[Checkpoint, LossTrace]:
    state = init_state(cfg, data)
    trace = train_steps(state, data, cfg.steps)
    return state.checkpoint(), trace


def resume(ckpt: Checkpoint, data: Sequence[Instance], steps: int) -> tuple[Checkpoint, LossTrace]:
    state = TrainState.from_checkpoint(ckpt)
    trace = train_steps(state, data, steps)
    return state.checkpoint(), trace


def dataset_nll(state: TrainState, data: Sequence[Instance], batch_size: int = 10) -> float:
    """Mean per-token negative log-likelihood of the targets (no smoothing)."""
    data = conform(data, state.relation_vocab, state.config)
    total, count = 0.0, 0
    with no_record():
        for chunk in make_batches(data, batch_size):
            batch = make_batch([data[i] for i in chunk], state.src_vocab, state.tgt_vocab)
            _, nll = state.model.loss(batch, 0.0)
            total += nll * batch.num_tokens
            count += batch.num_tokens
    return total / count


@dataclass
class EvalResult:
    bleu: float
    outputs: list[list[str]]
    references: list[list[str]]
    output_lengths: dict[int, int]
    reference_lengths: dict[int, int]


def generate_all(state: TrainState, data: Sequence[Instance], beam: int, alpha: float, max_len: int | None = None):
    data = conform(data, state.relation_vocab, state.config)
    max_len = max_len or state.config.max_len
    outputs = []
    for inst in data:
        hyp = state.model.generate(inst.graph, state.src_vocab, beam, alpha, max_len)
        outputs.append(state.tgt_vocab.decode(hyp.tokens))
    return outputs


def evaluate(ckpt: Checkpoint | TrainState, data: Sequence[Instance], beam: int, alpha: float) -> EvalResult:
    state = ckpt if isinstance(ckpt, TrainState) else TrainState.from_checkpoint(ckpt)
    outputs = generate_all(state, data, beam, alpha)
    refs = [list(inst.target) for inst in data]
    out_hist, ref_hist = length_distribution(outputs, refs)
    return EvalResult(bleu(outputs, refs), outputs, refs, out_hist, ref_hist)


ABLATION_FLAGS = (
    "no_global_attention",
    "no_ffn",
    "no_global_encoder",
    "no_local_attention",
    "no_relation_weights",
    "no_gru",
    "no_local_encoder",
    "no_shared_vocab",
    "no_length_penalty",
)


def ablate(base: TrainConfig, flag: str) -> TrainConfig:
    enc = base.model.encoder
    if flag in ("no_global_attention", "no_ffn", "no_local_attention", "no_relation_weights", "no_gru"):
        return base.with_(model=base.model.with_(encoder=enc.with_(ablations=enc.ablations | {flag})))
    if flag == "no_global_encoder":
        return base.with_(model=base.model.with_(encoder=enc.with_(architecture="local-only")))
    if flag == "no_local_encoder":
        return base.with_(model=base.model.with_(encoder=enc.with_(architecture="global-only")))
    if flag == "no_shared_vocab":
        return base.with_(model=base.model.with_(share_vocab=False))
    if flag == "no_length_penalty":
        return base.with_(alpha=0.0)
    raise ConfigError(f"unknown ablation {flag!r}")


@dataclass
class AblationRow:
    name: str
    bleu: float
    params: int
    final_nll: float

    HEADER = ("model", "bleu", "params", "train_nll")

    def cells(self) -> list[str]:
        return [self.name, f"{self.bleu:.2f}", str(self.params), f"{self.final_nll:.4f}"]


def ablation_grid(base: TrainConfig, data: Sequence[Instance], flags: Sequence[str] = ABLATION_FLAGS) -> list[AblationRow]:
    """Train and score the base configuration and each single-flag ablation."""
    rows = []
    states: dict[str, TrainState] = {}
    for name in ("base", *flags):
        cfg = base if name == "base" else ablate(base, name)
        if name == "no_length_penalty":
            # decoding-only change: reuse the base model
            state = states["base"]
        else:
            state = init_state(cfg, data)
            train_steps(state, data, cfg.steps)
            states[name] = state
        result = evaluate(state, data, cfg.beam_size, cfg.alpha)
        rows.append(AblationRow(name, result.bleu, state.model.num_parameters(), dataset_nll(state, data)))
        log.info("ablation %s bleu %.2f", name, result.bleu)
    return rows
