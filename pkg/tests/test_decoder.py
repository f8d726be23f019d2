import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kg2text.decoder import (
    Hypothesis,
    TargetLayout,
    TransformerDecoder,
    beam_search,
    label_smoothed_nll,
    length_penalty,
    ranking_key,
)
from kg2text.encoder import GraphInputs
from kg2text.model import Graph2Text, make_batch
from kg2text.numerics import Parameter, Tensor, grad_check, no_record, ops
from kg2text.numerics.ops import log_softmax_values
from kg2text.verify import exhaustive_search, toy_step_fn
from kg2text.vocab import BOS, EOS, PAD, Vocab

from conftest import tiny_model_config


@pytest.fixture
def decoder(rng):
    return TransformerDecoder(rng, 8, 2, 2, 16, 7)


@pytest.fixture
def embed(rng):
    return Parameter("E", rng.normal(size=(7, 8)))


def test_causal_masking(rng, decoder, embed):
    mem = Tensor(rng.normal(size=(4, 8)))
    seq = [0, 4, 5, 6, 3]
    full = decoder(embed, mem, TargetLayout.single(seq)).value
    for t in range(1, len(seq)):
        changed = seq[:t] + [(seq[t] + 1) % 7] + seq[t + 1 :]
        out = decoder(embed, mem, TargetLayout.single(changed)).value
        assert np.array_equal(out[:t], full[:t])
        assert not np.allclose(out[t:], full[t:])


def test_single_node_cross_attention_is_one(rng, decoder, embed):
    trace = {}
    decoder(embed, Tensor(rng.normal(size=(1, 8))), TargetLayout.single([0, 3, 4]), trace)
    for layer in trace["cross"]:
        for w in layer:
            assert np.all(w == 1.0)


def test_attention_rows_normalised(rng, decoder, embed):
    trace = {}
    layout = TargetLayout.pack([[0, 3], [0, 4, 5]], graph_of=[0, 1], node_segment=[0, 0, 1, 1, 1])
    decoder(embed, Tensor(rng.normal(size=(5, 8))), layout, trace)
    for kind in ("self", "cross"):
        for layer in trace[kind]:
            for w in layer:
                np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_packed_equals_separate(rng, decoder, embed):
    mems = [rng.normal(size=(3, 8)), rng.normal(size=(5, 8))]
    seqs = [[0, 3, 4], [0, 5]]
    layout = TargetLayout.pack(seqs, graph_of=[0, 1], node_segment=[0, 0, 0, 1, 1, 1, 1, 1])
    packed = decoder(embed, Tensor(np.concatenate(mems)), layout).value
    separate = np.concatenate([decoder(embed, Tensor(m), TargetLayout.single(s)).value for m, s in zip(mems, seqs)])
    np.testing.assert_allclose(packed, separate, atol=1e-12)


def test_decoder_rejects_bad_tokens(rng, decoder, embed):
    mem = Tensor(rng.normal(size=(2, 8)))
    with pytest.raises(IndexError, match="token id 9"):
        decoder(embed, mem, TargetLayout.single([0, 9]))
    with pytest.raises(ValueError, match="nonempty"):
        decoder(embed, mem, TargetLayout(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)))


def test_label_smoothed_nll_matches_direct_formula(rng):
    logits = rng.normal(size=(4, 6))
    targets = [0, 5, 2, 2]
    eps = 0.1
    logp = log_softmax_values(logits)
    want = 0.0
    for i, y in enumerate(targets):
        q = np.full(6, eps / 5)
        q[y] = 1 - eps
        want -= (q * logp[i]).sum()
    assert label_smoothed_nll(Tensor(logits), targets, eps).value == pytest.approx(want / 4, abs=1e-12)
    plain = -np.mean(logp[np.arange(4), targets])
    assert label_smoothed_nll(Tensor(logits), targets, 0.0).value == pytest.approx(plain, abs=1e-12)
    with pytest.raises(ValueError):
        label_smoothed_nll(Tensor(logits), targets, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.9))
def test_smoothed_loss_bounded_by_target_entropy(seed, eps):
    rng = np.random.default_rng(seed)
    V = int(rng.integers(2, 9))
    logits = rng.normal(scale=3.0, size=(5, V))
    targets = rng.integers(0, V, size=5)
    others = eps / (V - 1)
    entropy = -(1 - eps) * math.log(1 - eps) - (others * math.log(others) * (V - 1) if others > 0 else 0.0)
    assert label_smoothed_nll(Tensor(logits), targets, eps).value >= entropy - 1e-12


def test_uniform_logits_give_log_v():
    for eps in (0.0, 0.1, 0.5):
        assert label_smoothed_nll(Tensor(np.zeros((3, 5))), [0, 1, 4], eps).value == pytest.approx(math.log(5), abs=1e-12)


def test_three_word_vocabulary_by_hand():
    logits = np.array([[2.0, 0.0, -1.0]])
    z = math.exp(2.0) + 1.0 + math.exp(-1.0)
    logp = [2.0 - math.log(z), -math.log(z), -1.0 - math.log(z)]
    want = -(0.9 * logp[0] + 0.05 * logp[1] + 0.05 * logp[2])
    assert label_smoothed_nll(Tensor(logits), [0], 0.1).value == pytest.approx(want, abs=1e-12)


def test_decoder_gradient(rng, decoder, embed):
    mem = Parameter("mem", rng.normal(size=(3, 8)))
    prefix = [0, 4, 5]

    def f():
        logits = decoder(embed, mem, TargetLayout.single(prefix))
        return ops.smoothed_cross_entropy(logits, np.array([4, 5, 1]), 0.1)[0]

    err = grad_check(f, [mem, embed] + decoder.parameters(), max_coords=6, rng=rng, floor=1e-6)
    assert err < 1e-4


def test_length_penalty_values():
    assert length_penalty(7, 1.0) == 2.0
    assert length_penalty(1, 0.6) == 1.0
    assert length_penalty(13, 0.5) == pytest.approx(math.sqrt(3.0))
    assert length_penalty(20, 0.0) == 1.0
    with pytest.raises(ValueError):
        length_penalty(0, 1.0)


def greedy(step_fn, max_len, bos, eos):
    tokens, logp = (bos,), 0.0
    for _ in range(max_len):
        row = step_fn([tokens])[0]
        tok = int(np.argmax(row))
        tokens, logp = tokens + (tok,), logp + float(row[tok])
        if tok == eos:
            break
    return tokens, logp


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 6))
def test_beam_one_is_greedy(seed, vocab, max_len):
    step = toy_step_fn(seed, vocab)
    got = beam_search(step, 1, 0.0, max_len, 0, 1)
    tokens, logp = greedy(step, max_len, 0, 1)
    assert got.tokens == tokens
    assert got.logp == pytest.approx(logp, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(1, 4), st.sampled_from([0.0, 0.5, 1.0, 2.0]))
def test_full_beam_equals_exhaustive(seed, vocab, max_len, alpha):
    step = toy_step_fn(seed, vocab)
    got = beam_search(step, vocab**max_len, alpha, max_len, 0, 1)
    assert got == exhaustive_search(step, vocab, alpha, max_len, 0, 1)


def test_alpha_favours_longer_outputs():
    # EOS is likely early, but a long continuation costs little per token
    def step(prefixes):
        rows = []
        for p in prefixes:
            row = np.log(np.array([1e-12, 0.4, 0.6]))
            rows.append(row)
        return np.stack(rows)

    lengths = [beam_search(step, 9, a, 8, 0, 1).length for a in (0.0, 1.0, 3.0)]
    assert lengths == sorted(lengths) and lengths[0] < lengths[-1]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(2, 4))
def test_larger_alpha_never_shortens_output(seed, vocab, max_len):
    step = toy_step_fn(seed, vocab)
    width = vocab**max_len
    lengths = [beam_search(step, width, a, max_len, 0, 1).length for a in (0.0, 0.3, 0.6, 1.0, 2.0, 4.0)]
    assert lengths == sorted(lengths)


def test_ranking_breaks_ties_by_tokens_then_length():
    a = Hypothesis((0, 2, 1), -1.0, True)
    b = Hypothesis((0, 3, 1), -1.0, True)
    assert min([b, a], key=lambda h: ranking_key(h, 0.0)) == a


def test_beam_search_errors():
    dead = lambda prefixes: np.full((len(prefixes), 3), -np.inf)
    with pytest.raises(ValueError, match="finite"):
        beam_search(dead, 2, 0.0, 3, 0, 1)
    with pytest.raises(ValueError):
        beam_search(toy_step_fn(0, 3), 0, 0.0, 3, 0, 1)
    with pytest.raises(ValueError):
        beam_search(toy_step_fn(0, 3), 2, 0.0, 0, 0, 1)


def test_model_never_emits_bos_or_pad(corpus):
    vocab = Vocab.from_instances(corpus)
    model = Graph2Text(tiny_model_config(), len(vocab), len(vocab), len(corpus[0].graph.relation_vocab), seed=3)
    for inst in corpus[:3]:
        hyp = model.generate(inst.graph, vocab, beam_size=3, alpha=0.5, max_len=6)
        assert hyp.tokens[0] == BOS
        assert BOS not in hyp.tokens[1:] and PAD not in hyp.tokens
        assert hyp.finished and (hyp.tokens[-1] == EOS or hyp.length == 6)


def test_batched_logits_match_single_instances(corpus):
    vocab = Vocab.from_instances(corpus)
    model = Graph2Text(tiny_model_config(), len(vocab), len(vocab), len(corpus[0].graph.relation_vocab), seed=3)
    insts = corpus[:3]
    with no_record():
        packed = model.logits(make_batch(insts, vocab, vocab)).value
        separate = np.concatenate([model.logits(make_batch([i], vocab, vocab)).value for i in insts])
        np.testing.assert_allclose(packed, separate, atol=1e-10)
        inst = insts[0]
        mem = model.encode(
            GraphInputs.from_graph(inst.graph),
            np.asarray(vocab.encode(inst.graph.tokens)),
            np.asarray(inst.graph.positions),
        )
        prefix = [BOS] + vocab.encode(inst.target)
        direct = model.decoder_forward(mem, prefix).value
    np.testing.assert_allclose(direct, separate[: len(prefix)], atol=1e-10)
