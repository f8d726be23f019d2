"""Command-line entry point: ``kg2text {synth,stats,train,generate,verify,analyze}``.

Every command writes its outputs plus one ``<command>.manifest.json`` into
``--out`` and reports failures as a single ``ERROR:`` line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import analysis, training, verify
from .checkpoint import Checkpoint, CheckpointError
from .encoder import ConfigError
from .graph import (
    DatasetError,
    IngestionError,
    RelationVocab,
    SynthSize,
    graph_stats,
    load_dataset,
    synth_corpus,
    write_dataset,
)

CHECKPOINT_NAME = "checkpoint.kg2t"


class CommandError(Exception):
    pass


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects what a command read and wrote, then writes its manifest."""

    def __init__(self, command: str, out_dir, args: argparse.Namespace):
        self.command = command
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = {k: v for k, v in vars(args).items() if k != "func"}
        self.seed = None
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.start = time.perf_counter()

    def read(self, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise CommandError(f"cannot read {p}: no such file")
        self.inputs[str(p)] = sha256_of(p)
        return p

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def finish(self, error: str | None = None) -> None:
        manifest = {
            "command": self.command,
            "status": "error" if error else "ok",
            "error": error,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_clock_s": round(time.perf_counter() - self.start, 3),
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        analysis.write_json(self.out / f"{self.command}.manifest.json", manifest)


def read_config(path) -> training.TrainConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CommandError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise CommandError(f"{path}: config must be a JSON object")
    return training.TrainConfig.from_dict(raw)


def load(run: Run, path, use_levi: bool, include_title: bool, relations: RelationVocab | None = None):
    data = load_dataset(run.read(path), use_levi, include_title, relations)
    if not data:
        raise CommandError(f"{path}: no instances")
    return data


def load_checkpoint(run: Run, path) -> training.TrainState:
    return training.TrainState.from_checkpoint(Checkpoint.load(run.read(path)))


def load_for(run: Run, state: training.TrainState, path):
    cfg = state.config
    return load(run, path, cfg.use_levi, cfg.include_title, state.relation_vocab)


def cmd_synth(args, run: Run) -> None:
    run.seed = args.seed
    size = SynthSize(max_entities=args.max_entities, max_triples=args.max_triples)
    data = synth_corpus(args.seed, args.n, size)
    out = run.path(args.name)
    write_dataset(out, data)
    print(f"wrote {len(data)} instances to {out}")


def cmd_stats(args, run: Run) -> None:
    data = load(run, args.data, args.levi, not args.no_title)
    row = graph_stats(data)
    header = ("instances", "avg_nodes", "avg_edges", "avg_cc", "avg_length")
    cells = [len(data), *(f"{v:.2f}" for v in row.as_tuple())]
    analysis.write_tsv(run.path("stats.tsv"), header, [cells])
    print("\t".join(header))
    print("\t".join(str(c) for c in cells))


def cmd_train(args, run: Run) -> None:
    cfg = read_config(run.read(args.config))
    run.config["train_config"] = cfg.to_dict()
    run.seed = cfg.seed
    data = load(run, args.data, cfg.use_levi, cfg.include_title)
    if args.resume:
        state = load_checkpoint(run, args.resume)
        if state.config != cfg:
            raise CommandError("resume config differs from the checkpoint's config")
        steps = cfg.steps - state.step
        if steps < 0:
            raise CommandError(f"checkpoint is already at step {state.step} > steps={cfg.steps}")
    else:
        state = training.init_state(cfg, data)
        steps = cfg.steps
    first = state.step
    trace = training.train_steps(state, data, steps)
    state.checkpoint().save(run.path(CHECKPOINT_NAME))
    rows = [(first + i + 1, f"{l:.6f}", f"{n:.6f}") for i, (l, n) in enumerate(zip(trace.loss, trace.nll))]
    analysis.write_tsv(run.path("loss.tsv"), ("step", "loss", "nll"), rows)
    if trace.loss:
        print(f"step {state.step}: loss {trace.loss[-1]:.4f} nll {trace.nll[-1]:.4f}")
    else:
        print("step 0: initial checkpoint written")


def _decode_settings(args, state):
    beam = state.config.beam_size if args.beam is None else args.beam
    alpha = state.config.alpha if args.alpha is None else args.alpha
    return beam, alpha


def cmd_generate(args, run: Run) -> None:
    state = load_checkpoint(run, args.checkpoint)
    run.seed = state.config.seed
    data = load_for(run, state, args.data)
    beam, alpha = _decode_settings(args, state)
    run.config.update(beam=beam, alpha=alpha)
    outputs = training.generate_all(state, data, beam, alpha, args.max_len)
    out = run.path("outputs.txt")
    out.write_text("".join(" ".join(o) + "\n" for o in outputs), encoding="utf-8")
    score = analysis.bleu(outputs, [list(i.target) for i in data])
    print(f"{len(outputs)} outputs written to {out}; BLEU {score:.2f}")


def cmd_verify(args, run: Run) -> None:
    run.seed = args.seed
    results = verify.run_suite(args.suite, args.seed)
    rows = [(r.name, "PASS" if r.passed else "FAIL", f"{r.value:.6g}", f"{r.threshold:.6g}", r.detail) for r in results]
    analysis.write_tsv(run.path(f"verify_{args.suite}.tsv"), ("check", "status", "value", "threshold", "detail"), rows)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CommandError(f"{len(failed)} check(s) failed: {', '.join(failed)}")


def cmd_analyze(args, run: Run) -> None:
    state = load_checkpoint(run, args.checkpoint)
    run.seed = state.config.seed
    data = load_for(run, state, args.data)
    if not (args.attention_distance or args.bins or args.lengths):
        raise CommandError("choose at least one of --attention-distance, --bins, --lengths")
    if args.attention_distance:
        rows = []
        for i, inst in enumerate(data):
            tr = analysis.attention_distance(state.model, inst.graph, state.src_vocab)
            for layer, (mean, frac) in enumerate(zip(tr.layer_mean, tr.inf_fraction)):
                rows.append((i, layer, f"{mean:.4f}", f"{frac:.4f}"))
        analysis.write_tsv(run.path("attention_distance.tsv"), ("instance", "layer", "mean_distance", "inf_fraction"), rows)
        print(f"attention distance: {len(data)} instances")
    if args.bins or args.lengths:
        beam, alpha = _decode_settings(args, state)
        run.config.update(beam=beam, alpha=alpha)
        outputs = training.generate_all(state, data, beam, alpha)
    if args.bins:
        boundaries = [float(b) for b in args.boundaries.split(",")] if args.boundaries else []
        table = analysis.binned_scores(list(zip(data, outputs)), args.bins, boundaries)
        rows = [(r.label(), r.count, f"{r.bleu:.2f}") for r in table]
        analysis.write_tsv(run.path(f"bins_{args.bins}.tsv"), ("bin", "count", "bleu"), rows)
        for row in rows:
            print("\t".join(str(c) for c in row))
    if args.lengths:
        out_hist, ref_hist = analysis.length_distribution(outputs, [i.target for i in data])
        keys = sorted(set(out_hist) | set(ref_hist))
        rows = [(f"{k}-{k + analysis.LENGTH_BIN - 1}", out_hist.get(k, 0), ref_hist.get(k, 0)) for k in keys]
        analysis.write_tsv(run.path("lengths.tsv"), ("words", "outputs", "references"), rows)
        print(f"length histogram: {len(keys)} bins")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kg2text", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", default=".", help="directory for outputs and the manifest")
        sp.set_defaults(func=func)
        return sp

    sp = command("synth", cmd_synth, "write a seeded synthetic corpus as JSONL")
    sp.add_argument("--n", type=int, default=30)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-entities", type=int, default=4)
    sp.add_argument("--max-triples", type=int, default=3)
    sp.add_argument("--name", default="synthetic.jsonl")

    sp = command("stats", cmd_stats, "dataset statistics after graph transformation")
    sp.add_argument("data")
    sp.add_argument("--levi", action="store_true")
    sp.add_argument("--no-title", action="store_true")

    sp = command("train", cmd_train, "train a model from a JSON config")
    sp.add_argument("config")
    sp.add_argument("data")
    sp.add_argument("--resume", help="checkpoint to continue from (up to the config's step count)")

    sp = command("generate", cmd_generate, "decode every instance with beam search")
    sp.add_argument("checkpoint")
    sp.add_argument("data")
    sp.add_argument("--beam", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--max-len", type=int)

    sp = command("verify", cmd_verify, "run a verification suite")
    sp.add_argument("--suite", choices=verify.SUITES, required=True)
    sp.add_argument("--seed", type=int, default=0)

    sp = command("analyze", cmd_analyze, "attention distance, binned BLEU and length reports")
    sp.add_argument("checkpoint")
    sp.add_argument("data")
    sp.add_argument("--attention-distance", action="store_true")
    sp.add_argument("--bins", choices=analysis.BIN_KEYS)
    sp.add_argument("--boundaries", help="comma-separated bin edges, e.g. 5,10,20")
    sp.add_argument("--lengths", action="store_true")
    sp.add_argument("--beam", type=int)
    sp.add_argument("--alpha", type=float)
    return p


EXPECTED_ERRORS = (
    CommandError,
    ConfigError,
    CheckpointError,
    DatasetError,
    IngestionError,
    training.TrainingError,
    analysis.UnsupportedModelError,
    OSError,
    ValueError,
    KeyError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    run = None
    try:
        run = Run(args.command, args.out, args)
        args.func(args, run)
    except EXPECTED_ERRORS as exc:
        msg = str(exc).replace("\n", " ") or type(exc).__name__
        print(f"ERROR: {msg}", file=sys.stderr)
        if run is not None:
            run.finish(msg)
        return 1
    run.finish()
    return 0


if __name__ == "__main__":
    sys.exit(main())
