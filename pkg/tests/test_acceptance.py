"""One PASS/FAIL line per acceptance criterion, checked at its stated tolerance."""

import json
import math

import pytest

from kg2text import training, verify
from kg2text.analysis import bleu
from kg2text.checkpoint import Checkpoint
from kg2text.cli import main
from kg2text.encoder import EncoderConfig
from kg2text.graph import load_dataset, synth_corpus, write_dataset
from kg2text.model import ModelConfig

OVERFIT_INSTANCES = 30
OVERFIT_SECONDS = 300.0
OVERFIT = training.TrainConfig(
    ModelConfig(EncoderConfig("CGE-LW", global_layers=2, local_layers=2, global_heads=4, local_heads=4, d_v=64, d_ff=256)),
    seed=0,
    steps=600,
    batch_size=10,
    warmup=100,
    lr_scale=0.5,
    smoothing=0.0,
    alpha=0.0,
    beam_size=4,
)


def report(capsys, label, passed, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if passed else 'FAIL'} {label}: {detail}")


def check_all(capsys, label, results):
    failed = [r for r in results if not r.passed]
    detail = "; ".join(f"{r.name} {r.value:.3g} vs {r.threshold:g}" for r in results)
    report(capsys, label, not failed, detail)
    assert results and not failed, detail


def test_c01_gradients(capsys):
    results = verify.run_suite("grad")
    err = max(r.value for r in results if r.name.startswith("grad/") and r.name != "grad/runtime_s")
    runtime = next(r.value for r in results if r.name == "grad/runtime_s")
    names = {r.name for r in results}
    for arch in ("global-only", "local-only", "PGE", "CGE", "PGE-LW", "CGE-LW"):
        assert f"grad/encoder[{arch}]" in names
    ok = all(r.passed for r in results)
    report(capsys, "C1 gradient check", ok, f"max rel err {err:.2e} < {verify.GRAD_TOL:g}, runtime {runtime:.1f}s < 60s")
    assert ok


def test_c02_attention_rows_sum_to_one(capsys):
    check_all(capsys, "C2 attention normalisation", verify.normalization_suite(trials=100))


def test_c03_permutation_equivariance(capsys):
    check_all(capsys, "C3 permutation equivariance", verify.equivariance_suite(trials=50))


def test_c04_locality(capsys):
    check_all(capsys, "C4 locality", verify.locality_suite(trials=20))


def test_c05_graph_oracle(capsys):
    check_all(capsys, "C5 graph oracle", verify.graph_oracle_suite(trials=200))


def test_c06_beam_equals_exhaustive(capsys):
    check_all(capsys, "C6 beam vs exhaustive", verify.beam_oracle_suite(trials=50))


@pytest.fixture(scope="module")
def overfit_runs(tmp_path_factory):
    """Two independent CLI train+generate runs of the frozen overfit configuration."""
    root = tmp_path_factory.mktemp("overfit")
    write_dataset(root / "train.jsonl", synth_corpus(0, OVERFIT_INSTANCES))
    (root / "config.json").write_text(json.dumps(OVERFIT.to_dict()))
    runs = []
    for name in ("a", "b"):
        out = root / name
        assert main(["train", str(root / "config.json"), str(root / "train.jsonl"), "--out", str(out)]) == 0
        assert main(["generate", str(out / "checkpoint.kg2t"), str(root / "train.jsonl"), "--out", str(out)]) == 0
        runs.append(out)
    return root, runs


def test_c07_overfit(capsys, overfit_runs):
    root, (run, _) = overfit_runs
    seconds = json.loads((run / "train.manifest.json").read_text())["wall_clock_s"]
    state = training.TrainState.from_checkpoint(Checkpoint.load(run / "checkpoint.kg2t"))
    data = load_dataset(root / "train.jsonl")
    nll = training.dataset_nll(state, data)
    outputs = [line.split() for line in (run / "outputs.txt").read_text().splitlines()]
    score = bleu(outputs, [list(i.target) for i in data])
    ok = state.step <= 2000 and seconds < OVERFIT_SECONDS and nll < 0.1 and score >= 90.0
    detail = f"{state.step} steps in {seconds:.0f}s, train loss {nll:.2e} nats/token < 0.1, train BLEU {score:.2f} >= 90"
    report(capsys, "C7 overfit", ok, detail)
    assert ok, detail


def test_c08_baselines_report_only(capsys, overfit_runs):
    root, (run, _) = overfit_runs
    data = load_dataset(root / "train.jsonl")
    combined = training.evaluate(Checkpoint.load(run / "checkpoint.kg2t"), data, OVERFIT.beam_size, OVERFIT.alpha).bleu
    scores = {}
    for arch in ("global-only", "local-only"):
        cfg = OVERFIT.with_(model=OVERFIT.model.with_(encoder=OVERFIT.model.encoder.with_(architecture=arch)))
        state = training.init_state(cfg, data)
        training.train_steps(state, data, cfg.steps)
        scores[arch] = training.evaluate(state, data, cfg.beam_size, cfg.alpha).bleu
    ok = all(combined >= s for s in scores.values())
    parts = ", ".join(f"{k} {v:.2f}" for k, v in scores.items())
    report(capsys, "C8 (report only) CGE-LW vs baselines", ok, f"CGE-LW {combined:.2f}; {parts}")


def test_c09_determinism(capsys, overfit_runs):
    _, (a, b) = overfit_runs
    same = {f: (a / f).read_bytes() == (b / f).read_bytes() for f in ("checkpoint.kg2t", "outputs.txt", "loss.tsv")}
    ok = all(same.values())
    report(capsys, "C9 determinism", ok, ", ".join(f"{f} {'identical' if s else 'DIFFERS'}" for f, s in same.items()))
    assert ok


def test_c10_bleu_hand_case(capsys):
    score = bleu([["the", "cat", "sat"]], [["the", "cat", "sat", "down"]])
    ok = math.isclose(score, 71.65, abs_tol=0.01)
    report(capsys, "C10 BLEU hand case", ok, f"{score:.4f} vs 71.65 +/- 0.01")
    assert ok
