import numpy as np
import pytest

from kg2text.encoder import EncoderConfig
from kg2text.graph import EntityGraph, build_token_graph, synth_corpus
from kg2text.model import ModelConfig
from kg2text.training import TrainConfig


def tiny_model_config(architecture="CGE-LW", **enc) -> ModelConfig:
    base = dict(global_layers=1, local_layers=1, global_heads=2, local_heads=2, d_v=8, d_ff=16)
    base.update(enc)
    return ModelConfig(EncoderConfig(architecture, **base), decoder_layers=1, decoder_heads=2, decoder_d_ff=16)


def tiny_train_config(**kw) -> TrainConfig:
    kw.setdefault("model", tiny_model_config())
    kw.setdefault("steps", 5)
    kw.setdefault("batch_size", 4)
    kw.setdefault("warmup", 10)
    return TrainConfig(**kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def corpus():
    return synth_corpus(7, 8)


@pytest.fixture
def star_graph():
    # centre entity 0 linked to four leaves under two relations
    g = EntityGraph([("c",), ("a",), ("b",), ("d",), ("e",)], [(0, "r1", 1), (0, "r2", 2), (3, "r1", 0), (4, "r2", 0)])
    return build_token_graph(g)
