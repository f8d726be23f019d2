import numpy as np
import pytest

from kg2text import training
from kg2text.checkpoint import Checkpoint, CheckpointError
from kg2text.encoder import ConfigError
from kg2text.model import Graph2Text, make_batch
from kg2text.numerics import Tape, adam_step, noam_lr
from kg2text.training import TrainConfig, TrainingError

from conftest import tiny_model_config, tiny_train_config


def test_zero_steps_checkpoint_is_initialisation(corpus):
    cfg = tiny_train_config(steps=0)
    ckpt, trace = training.train(cfg, corpus)
    assert ckpt.step == 0 and trace.loss == []
    state = training.init_state(cfg, corpus)
    for name, p in state.model.named_parameters():
        assert np.array_equal(ckpt.arrays[f"param/{name}"], p.value)
        assert not ckpt.arrays[f"adam_m/{name}"].any()


def test_training_is_byte_deterministic(corpus):
    cfg = tiny_train_config(steps=6, model=tiny_model_config().with_(dropout=0.1))
    a, ta = training.train(cfg, corpus)
    b, tb = training.train(cfg, corpus)
    assert a.to_bytes() == b.to_bytes()
    assert ta.loss == tb.loss


def test_resume_matches_uninterrupted_run(corpus):
    cfg = tiny_train_config(steps=8, model=tiny_model_config().with_(dropout=0.1))
    whole, _ = training.train(cfg, corpus)
    half, _ = training.train(cfg.with_(steps=3), corpus)
    # the stored config says steps=3; resuming only needs the remaining count
    rest, _ = training.resume(half, corpus, 5)
    assert rest.step == 8
    assert rest.arrays.keys() == whole.arrays.keys()
    for k in whole.arrays:
        assert np.array_equal(rest.arrays[k], whole.arrays[k]), k
    assert rest.header["rng_state"] == whole.header["rng_state"]


def test_checkpoint_round_trip(tmp_path, corpus):
    ckpt, _ = training.train(tiny_train_config(steps=2), corpus)
    path = tmp_path / "m.kg2t"
    ckpt.save(path)
    back = Checkpoint.load(path)
    assert back.header == ckpt.header
    assert back.to_bytes() == ckpt.to_bytes()
    state = training.TrainState.from_checkpoint(back)
    assert state.step == 2 and state.config == tiny_train_config(steps=2)


def test_checkpoint_corruption_detected(corpus):
    raw = bytearray(training.train(tiny_train_config(steps=0), corpus)[0].to_bytes())
    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0x01
    with pytest.raises(CheckpointError, match="CRC"):
        Checkpoint.from_bytes(bytes(flipped))
    with pytest.raises(CheckpointError, match="magic"):
        Checkpoint.from_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"KG2T")


def test_config_is_strict():
    cfg = tiny_train_config()
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="unknown config"):
        TrainConfig.from_dict({**cfg.to_dict(), "learning_rate": 1.0})
    bad_model = cfg.to_dict()
    bad_model["model"]["heads"] = 3
    with pytest.raises(ConfigError):
        TrainConfig.from_dict(bad_model)
    for field, value in (("steps", -1), ("batch_size", 0), ("smoothing", 1.0), ("lr_scale", 0.0)):
        with pytest.raises(ConfigError):
            cfg.with_(**{field: value})


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises(corpus):
    state = training.init_state(tiny_train_config(), corpus)
    state.model.src_embed.value[...] = np.nan
    with pytest.raises(TrainingError, match="non-finite"):
        training.train_steps(state, corpus, 1)
    with pytest.raises(TrainingError, match="empty"):
        training.init_state(tiny_train_config(), [])


def test_memorises_single_instance(corpus):
    data = corpus[:1]
    cfg = tiny_train_config(steps=100, batch_size=1, smoothing=0.0)
    state = training.init_state(cfg, data)
    training.train_steps(state, data, cfg.steps)
    assert training.dataset_nll(state, data) < 0.05
    plain = training.evaluate(state, data, beam=2, alpha=0.0)
    penalised = training.evaluate(state, data, beam=2, alpha=0.5)
    assert plain.bleu == 100.0 and penalised.bleu == 100.0
    assert plain.output_lengths == plain.reference_lengths


def test_loss_decreases_on_fixed_batch(corpus):
    state = training.init_state(tiny_train_config(batch_size=len(corpus)), corpus)
    trace = training.train_steps(state, corpus, 50)
    assert np.mean(trace.loss[-5:]) < np.mean(trace.loss[:5]) - 0.5


def test_parameter_count_is_sum_of_sizes(corpus):
    state = training.init_state(tiny_train_config(), corpus)
    params = state.checkpoint().params()
    assert state.model.num_parameters() == sum(a.size for a in params.values())
    assert len(params) == len(state.model.parameters())


def test_batches_cover_every_instance(corpus):
    batches = training.make_batches(corpus, 3)
    assert sorted(i for b in batches for i in b) == list(range(len(corpus)))
    n = len(batches)
    for epoch in range(3):
        seen = [training.batch_for_step(epoch * n + s + 1, n, seed=5) for s in range(n)]
        assert sorted(seen) == list(range(n))


def test_adam_update_matches_hand_computation():
    from kg2text.numerics import Parameter

    p = Parameter("w", np.array([1.0, -2.0]))
    g = np.array([0.5, 0.25])
    lr = noam_lr(1, 8, 10, 0.5)
    adam_step([p], [g], lr, 1)
    m = 0.1 * g / (1 - 0.9)
    v = 0.02 * g**2 / (1 - 0.98)
    np.testing.assert_allclose(p.value, np.array([1.0, -2.0]) - lr * m / (np.sqrt(v) + 1e-9), rtol=1e-12)


def test_ablation_grid_small(corpus):
    base = tiny_train_config(steps=2, beam_size=2, max_len=5)
    rows = training.ablation_grid(base, corpus[:4])
    assert [r.name for r in rows] == ["base", *training.ABLATION_FLAGS]
    by = {r.name: r for r in rows}
    assert by["no_ffn"].params < by["base"].params
    assert by["no_relation_weights"].params < by["base"].params
    assert by["no_shared_vocab"].params > by["base"].params
    assert by["no_length_penalty"].params == by["base"].params
    assert all(np.isfinite(r.final_nll) for r in rows)
    assert len(rows[0].cells()) == len(training.AblationRow.HEADER)
    with pytest.raises(ConfigError):
        training.ablate(base, "no_decoder")


def test_conform_rebuilds_foreign_relation_ids(corpus):
    from kg2text.graph import Instance, RelationVocab, build_token_graph

    state = training.init_state(tiny_train_config(), corpus)
    rel = state.relation_vocab
    other = RelationVocab.from_list(list(reversed(rel.to_list())))
    assert other != rel
    inst = corpus[0]
    foreign = Instance(build_token_graph(inst.entity_graph, relation_vocab=other), inst.target, inst.entity_graph)
    fixed = training.conform([foreign], rel, state.config)[0]
    assert fixed.graph.relation_vocab == rel
    assert set(fixed.graph.edges) == set(inst.graph.edges)
