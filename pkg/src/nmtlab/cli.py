"""Command-line entry point: ``nmtlab <command> ...``.

Exit codes: 0 success, 2 I/O error, 3 configuration or validation error,
4 runtime or training failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from .corpus import Corpus, CorpusError, LidModel, ingest, partition_by_language, read_sentences, train_lid
from .eval import METRICS, format_table, score, translate_text
from .metrics import MetricError, bleu, character, ter
from .model.checkpoint import CheckpointError, load_checkpoint
from .model.config import ConfigError, DecodeConfig
from .pipeline import PRESETS, Registry, RegistryError, StageError, build_preset, load, run_pipeline
from .pipeline.registry import write_json_atomic
from .subword import BpeError, BpeModel, apply_bpe, decode_bpe, learn_bpe
from .training.trainer import TrainingError

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _need(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_IO, f"no such file: {p}")
    return p


def _read_lines(path) -> list[str]:
    """Lines of a file (or stdin for None/'-'), normalized, blank lines kept."""
    if path in (None, "-"):
        data = sys.stdin.buffer.read()
    else:
        data = _need(path).read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CliError(EXIT_IO, f"{path or '<stdin>'}: invalid UTF-8 at byte offset {e.start}") from e
    return [" ".join(line.split()) for line in text.splitlines()]


def _write_lines(path, lines) -> None:
    text = "".join(line + "\n" for line in lines)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def canonical_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def write_manifest(path, argv, config, seeds, artifacts, started, status) -> dict:
    """RunManifest; ``manifest_hash`` covers everything except wall-clock time."""
    body = {"command": list(argv), "config_hash": canonical_hash(config), "seeds": seeds,
            "artifacts": artifacts, "exit_status": status}
    manifest = {**body, "manifest_hash": canonical_hash(body),
                "wall_clock_seconds": round(time.time() - started, 3)}
    write_json_atomic(path, manifest)
    return manifest


# -- commands ---------------------------------------------------------------------------------

def cmd_lid_train(a) -> int:
    labeled = []
    for item in a.corpus:
        path, sep, lang = item.rpartition(":")
        if not sep or not lang:
            raise CliError(EXIT_CONFIG, f"--corpus expects PATH:LANG, got {item!r}")
        labeled.append((ingest(_need(path), lang), lang))
    model = train_lid(labeled, order=a.order, smoothing=a.smoothing)
    model.save(a.out)
    print(f"languages {' '.join(model.languages)}", file=sys.stderr)
    return EXIT_OK


def cmd_clean(a) -> int:
    model = LidModel.load(_need(a.lid_model))
    if a.lang not in model.languages:
        raise CliError(EXIT_CONFIG, f"language {a.lang!r} is not known to the LID model "
                                    f"({', '.join(model.languages)})")
    c = Corpus(a.lang, read_sentences(_read_lines(a.input)))
    kept, rejected = partition_by_language(c, model, a.lang, a.margin)
    _write_lines(a.output, kept.sentences)
    if a.rejected:
        _write_lines(a.rejected, rejected.sentences)
    print(f"kept {len(kept)} dropped {len(rejected)}", file=sys.stderr)
    return EXIT_OK


def cmd_bpe(a) -> int:
    if a.action == "learn":
        corpora = [Corpus("x", read_sentences(_read_lines(p))) for p in a.inputs]
        model = learn_bpe(corpora, a.merges)
        model.save(a.model)
        print(f"merges {len(model.merges)} vocab {len(model)}", file=sys.stderr)
        return EXIT_OK
    model = BpeModel.load(_need(a.model))
    lines = _read_lines(a.input)
    if a.action == "apply":
        _write_lines(a.output, [" ".join(apply_bpe(model, s)) for s in lines])
    else:
        _write_lines(a.output, [decode_bpe(model, s.split()) for s in lines])
    return EXIT_OK


def cmd_pipeline(a) -> int:
    started = time.time()
    argv = ["pipeline", "run"] + ([f"--preset={a.preset}"] if a.preset else [str(a.spec)]) + [f"--seed={a.seed}"]
    if a.preset:
        try:
            spec = build_preset(a.preset, seed=a.seed if a.seed is not None else 0)
        except KeyError as e:
            raise CliError(EXIT_CONFIG, str(e.args[0])) from e
        base = Path(".")
    else:
        spec = load(_need(a.spec))
        if a.seed is not None:
            spec.seed = a.seed
        base = Path(a.spec).parent
    if a.show:
        sys.stdout.write(spec.dumps())
        return EXIT_OK
    root = Path(a.registry)
    status, err = EXIT_OK, None
    try:
        reg = run_pipeline(spec, root, base, progress=_progress if a.verbose else None)
    except (StageError, TrainingError) as e:
        status, err = EXIT_RUNTIME, e
        reg = Registry(root)
    artifacts = {i: reg.content_hash(i) for i in reg.ids()}
    m = write_manifest(root / "run-manifest.json", argv, spec.to_dict(), {"seed": spec.seed}, artifacts,
                       started, status)
    if err is not None:
        raise CliError(EXIT_RUNTIME, str(err))
    for st in spec.stages:
        if st.test and f"{st.name}.report" in reg:
            print((reg.path(f"{st.name}.report") / "report.txt").read_text(encoding="utf-8"), end="")
    print(f"manifest {m['manifest_hash']}", file=sys.stderr)
    return EXIT_OK


def _progress(stage, rec):
    print(f"[{stage}] {json.dumps(rec, sort_keys=True)}", file=sys.stderr, flush=True)


def _slot(name: str, slots: dict) -> int:
    if name in slots:
        return int(slots[name])
    if name.isdigit():
        return int(name)
    raise CliError(EXIT_CONFIG, f"unknown language {name!r}; checkpoint knows {sorted(slots)}")


def cmd_translate(a) -> int:
    params, header, _ = load_checkpoint(_need(a.checkpoint))
    bpe = BpeModel.load(_need(a.bpe))
    if len(bpe) != params.cfg.vocab_size:
        raise CliError(EXIT_CONFIG, f"BPE vocabulary ({len(bpe)}) does not match the checkpoint "
                                    f"({params.cfg.vocab_size})")
    slots = header.get("meta", {}).get("lang_slots", {})
    src, tgt = _slot(a.src_lang, slots), _slot(a.tgt_lang, slots)
    if a.greedy:
        dc = DecodeConfig.greedy(a.max_len)
    else:
        dc = DecodeConfig.beam(a.beam, a.alpha, a.max_len)
    lines = _read_lines(a.input)
    _write_lines(a.output, translate_text(params, bpe, lines, src, tgt, dc))
    return EXIT_OK


def cmd_evaluate(a) -> int:
    hyps, refs = _read_lines(a.hyp), _read_lines(a.ref)
    if len(hyps) != len(refs):
        raise CliError(EXIT_CONFIG, f"line count mismatch: {len(hyps)} hypotheses vs {len(refs)} references")
    metrics = METRICS if a.metrics == "all" else tuple(a.metrics.split(","))
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown metric(s) {unknown}; choose from {', '.join(METRICS)}")
    funcs = {"bleu": lambda: bleu(hyps, refs, cased=False), "bleu_cased": lambda: bleu(hyps, refs),
             "ter": lambda: ter(hyps, refs), "character": lambda: character(hyps, refs)}
    values = {m: funcs[m]() for m in metrics}
    if a.json:
        print(json.dumps({"system": a.system, **values, "sentences": len(refs)}, sort_keys=True))
    elif set(metrics) == set(METRICS):
        print(format_table([score(a.system, hyps, refs)]))
    else:
        for m in metrics:
            print(f"{m}\t{values[m]:.4f}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nmtlab", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("lid", help="train a character n-gram language identifier")
    s.add_argument("action", choices=["train"])
    s.add_argument("--corpus", action="append", required=True, help="PATH:LANG, repeatable")
    s.add_argument("--out", required=True)
    s.add_argument("--order", type=int, default=3)
    s.add_argument("--smoothing", type=float, default=0.1)
    s.set_defaults(func=cmd_lid_train)

    s = sub.add_parser("clean", help="keep only sentences identified as the given language")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--lid-model", required=True)
    s.add_argument("--lang", required=True)
    s.add_argument("--margin", type=float, default=0.0, help="minimum log-probability margin")
    s.add_argument("--rejected", help="also write the dropped sentences here")
    s.set_defaults(func=cmd_clean)

    s = sub.add_parser("bpe", help="learn, apply or undo BPE segmentation")
    bsub = s.add_subparsers(dest="action", required=True)
    b = bsub.add_parser("learn", help="learn merges from one or more corpora")
    b.add_argument("--model", required=True, help="BPE model file to write")
    b.add_argument("--merges", type=int, default=2000)
    b.add_argument("inputs", nargs="+", help="training corpora")
    b.set_defaults(func=cmd_bpe)
    for action, what in (("apply", "segment words into subwords"), ("decode", "join subwords back into words")):
        b = bsub.add_parser(action, help=what)
        b.add_argument("--model", required=True, help="BPE model file")
        b.add_argument("--in", dest="input", help="input file (default stdin)")
        b.add_argument("--out", dest="output", help="output file (default stdout)")
        b.set_defaults(func=cmd_bpe)

    s = sub.add_parser("pipeline", help="run a pipeline spec or a named preset")
    s.add_argument("action", choices=["run"])
    s.add_argument("spec", nargs="?", help="YAML pipeline spec")
    s.add_argument("--preset", help=f"one of: {', '.join(PRESETS)}")
    s.add_argument("--seed", type=int)
    s.add_argument("--registry", default="registry", help="artifact directory")
    s.add_argument("--show", action="store_true", help="print the resolved spec and exit")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("translate", help="translate stdin to stdout, line by line")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--bpe", required=True)
    s.add_argument("--src-lang", required=True)
    s.add_argument("--tgt-lang", required=True)
    s.add_argument("--beam", type=int, default=8)
    s.add_argument("--alpha", type=float, default=0.8)
    s.add_argument("--greedy", action="store_true")
    s.add_argument("--max-len", type=int, default=64)
    s.add_argument("--in", dest="input")
    s.add_argument("--out", dest="output")
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("evaluate", help="score hypotheses against references")
    s.add_argument("hyp")
    s.add_argument("ref")
    s.add_argument("--metrics", default="all", help=f"'all' or a comma list of {','.join(METRICS)}")
    s.add_argument("--system", default="system")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
    if a.command == "pipeline":
        if bool(a.spec) == bool(a.preset):
            print("error: give exactly one of a spec file or --preset", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return a.func(a)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (StageError, TrainingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, CorpusError, BpeError, MetricError, CheckpointError, RegistryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
