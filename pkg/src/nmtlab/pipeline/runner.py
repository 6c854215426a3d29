"""Execute pipeline specs: materialize inputs, then run stages in order."""

from __future__ import annotations

import hashlib
import json
import logging
import zlib
from dataclasses import asdict
from pathlib import Path
from typing import Callable

import numpy as np

from ..corpus import Corpus, ParallelCorpus, ingest, pair_synthetic
from ..eval import EvalReport, format_table, score, translate_text
from ..model.checkpoint import read_checkpoint, save_checkpoint
from ..model.transformer import (TransformerParams, copy_encoder_into_decoder, init_params,
                                 param_shapes)
from ..subword import learn_bpe
from ..toy import ToyFamily
from ..training.optim import lr_at
from ..training.trainer import (DevSet, TrainingError, TrainState, denoising_step, mt_step,
                                online_bt_step, select_best, xlm_step)
from .registry import Registry, RegistryError, write_json_atomic
from .spec import CorpusRef, PipelineSpec, SpecError, StageSpec, generated_id, stage_hash, validate

log = logging.getLogger("nmtlab.pipeline")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage


def derive_seed(seed: int, name: str) -> int:
    return (int(seed) * 1_000_003 + zlib.crc32(name.encode("utf-8"))) % (2 ** 31)


# -- inputs ---------------------------------------------------------------------------------

def _input_producer(inp: dict, base_dir: Path) -> str:
    payload = dict(inp)
    for key in ("path", "prefix"):
        if key in inp:
            p = base_dir / inp[key]
            files = [p] if key == "path" else [Path(f"{p}.{inp['src']}"), Path(f"{p}.{inp['tgt']}")]
            payload[key + "_sha256"] = [hashlib.sha256(f.read_bytes()).hexdigest() if f.exists() else None
                                        for f in files]
    return "input:" + hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def toy_family(inp: dict) -> ToyFamily:
    fam = ToyFamily.create(int(inp.get("seed", 0)), **inp.get("options", {}))
    for lang in inp["languages"]:
        lang = dict(lang)
        fam.add_language(lang.pop("name"), **lang)
    return fam


def materialize_inputs(spec: PipelineSpec, reg: Registry, base_dir) -> None:
    base_dir = Path(base_dir)
    for inp in spec.inputs:
        producer = _input_producer(inp, base_dir)
        kind = inp["kind"]
        if kind == "toy":
            todo = [c for c in inp["corpora"] if not reg.check_producer(c["id"], producer)]
            if not todo:
                continue
            fam = toy_family(inp)
            for c in todo:
                if "lang" in c:
                    reg.put_corpus(c["id"], fam.monolingual(c["lang"], int(c["n"]), int(c["seed"])), producer)
                else:
                    reg.put_parallel(c["id"], fam.parallel(c["src"], c["tgt"], int(c["n"]), int(c["seed"])),
                                     producer)
            continue
        if reg.check_producer(inp["id"], producer):
            continue
        if kind == "corpus":
            reg.put_corpus(inp["id"], ingest(base_dir / inp["path"], inp["lang"]), producer)
        else:
            prefix = base_dir / inp["prefix"]
            reg.put_parallel(inp["id"], ParallelCorpus.load(prefix, inp["src"], inp["tgt"]), producer)


# -- data access ------------------------------------------------------------------------------

class StageData:
    """Tokenized corpora for one stage, filtered to the model's length limit."""

    def __init__(self, spec: PipelineSpec, reg: Registry, bpe, limit: int):
        self.spec, self.reg, self.bpe, self.limit = spec, reg, bpe, limit
        self.dropped = 0

    def _enc(self, sentences):
        return [self.bpe.encode(s) for s in sentences]

    def mono(self, ref: CorpusRef):
        """``(lang, ids)`` of a monolingual corpus."""
        c = self.reg.corpus(ref.id)
        ids = [x for x in self._enc(c.sentences) if 0 < len(x) <= self.limit]
        self.dropped += len(c) - len(ids)
        if not ids:
            raise SpecError(f"corpus {ref.id!r} has no usable sentences")
        return c.lang, ids

    def pairs(self, ref: CorpusRef, keep_text: bool = False):
        pc = self.reg.parallel(ref.id)
        if ref.rev:
            pc = pc.reversed()
        if keep_text:
            return pc
        enc = [(s, t) for s, t in zip(self._enc(pc.sources), self._enc(pc.targets))
               if 0 < len(s) <= self.limit and 0 < len(t) <= self.limit]
        self.dropped += len(pc) - len(enc)
        if not enc:
            raise SpecError(f"parallel corpus {ref.id!r} has no usable pairs")
        return pc.src_lang, pc.tgt_lang, enc

    def other_lang(self, lang: str, ref: CorpusRef) -> str:
        if ref.target is not None:
            return ref.target
        others = [x for x in self.spec.langs if x != lang]
        if len(others) != 1:
            raise SpecError(f"BT reference {ref.id!r} needs an explicit '>lang' target")
        return others[0]


def _sample(rng: np.random.Generator, data: list, budget: int, size=len) -> list:
    out, used = [], 0
    while used < budget:
        item = data[int(rng.integers(len(data)))]
        out.append(item)
        used += size(item) + 1
    return out


def build_tasks(stage: StageSpec, spec: PipelineSpec, data: StageData) -> list[tuple[str, Callable]]:
    """Round-robin task list: objectives in the declared order, one task per binding."""
    budget = stage.optimizer.tokens_per_batch
    tasks = []
    for obj in stage.objectives:
        refs = [CorpusRef.parse(r) for r in stage.data[obj]]
        if obj == "XLM":
            mono = [(spec.slot(lang), ids) for lang, ids in map(data.mono, refs)]
            share = max(1, budget // len(mono))

            def xlm(state, mono=mono, share=share):
                rng = state.rng("batch")
                batch, langs = [], []
                for slot, ids in mono:
                    part = _sample(rng, ids, share)
                    batch += part
                    langs += [slot] * len(part)
                xlm_step(state, batch, langs, stage.mask)
            tasks.append(("XLM", xlm))
            continue
        for ref in refs:
            if obj == "DN":
                lang, ids = data.mono(ref)
                tasks.append((f"DN:{lang}", lambda state, ids=ids, s=spec.slot(lang):
                              denoising_step(state, _sample(state.rng("batch"), ids, budget), s, stage.noise)))
            elif obj == "BT":
                lang, ids = data.mono(ref)
                tgt = data.other_lang(lang, ref)
                tasks.append((f"BT:{lang}-{tgt}", lambda state, ids=ids, s=spec.slot(lang), t=spec.slot(tgt):
                              online_bt_step(state, _sample(state.rng("batch"), ids, budget), s, t, stage.decode)))
            else:
                src, tgt, pairs = data.pairs(ref)
                tasks.append((f"MT:{src}-{tgt}", lambda state, pairs=pairs, s=spec.slot(src), t=spec.slot(tgt):
                              mt_step(state, _sample(state.rng("batch"), pairs, budget,
                                                     lambda p: max(len(p[0]), len(p[1]))), s, t)))
    return tasks


# -- resumable snapshots ------------------------------------------------------------------------

def _flatten_opt(opt: dict) -> dict:
    out = {}
    for key, val in opt.items():
        if isinstance(val, dict):
            out.update({f"opt/{key}/{k}": v for k, v in val.items()})
        elif isinstance(val, np.ndarray):
            out[f"opt/{key}"] = val
    return out


def _unflatten_opt(arrays: dict, t: int) -> dict:
    opt: dict = {"t": t}
    for name, val in arrays.items():
        parts = name.split("/", 2)
        if len(parts) == 3 and parts[1] in ("m", "v"):
            opt.setdefault(parts[1], {})[parts[2]] = val
        else:
            opt[name.split("/", 1)[1]] = val
    return opt


def save_snapshot(path: Path, state: TrainState, progress: dict) -> None:
    extra = _flatten_opt(state.opt)
    if state.best_params is not None:
        extra.update({f"best/{k}": v for k, v in state.best_params.tensors.items()})
    rng = {k: g.bit_generator.state for k, g in state.rngs.items()}
    meta = {**progress, "opt_t": state.opt["t"], "best_score": state.best_score, "best_step": state.best_step}
    save_checkpoint(path, state.params, state.step, rng, meta, extra)


def load_snapshot(path: Path, state: TrainState) -> dict:
    header, arrays = read_checkpoint(path)
    names = param_shapes(state.params.cfg)
    state.params = TransformerParams(state.params.cfg, {k: arrays[k] for k in names})
    state.step = header["step"]
    meta = header["meta"]
    state.opt = _unflatten_opt({k: v for k, v in arrays.items() if k.startswith("opt/")}, meta["opt_t"])
    best = {k[5:]: v for k, v in arrays.items() if k.startswith("best/")}
    state.best_params = TransformerParams(state.params.cfg, best) if best else None
    state.best_score, state.best_step = meta["best_score"], meta["best_step"]
    state.rngs = {}
    for name, st in header["rng"].items():
        g = np.random.default_rng()
        g.bit_generator.state = st
        state.rngs[name] = g
    return meta


# -- stages ---------------------------------------------------------------------------------------

def bpe_for(spec: PipelineSpec, stage: StageSpec) -> str:
    current = None
    for st in spec.stages:
        if st is stage:
            break
        if st.kind == "bpe":
            current = st.name
    if current is None:
        raise SpecError(f"stage {stage.name!r} has no preceding bpe stage")
    return current


def _deps(spec: PipelineSpec, stage: StageSpec) -> list[str]:
    deps = {r.id for r in stage.refs()} | set(stage.checkpoint_deps())
    if stage.kind != "bpe":
        deps.add(bpe_for(spec, stage))
    return sorted(deps)


def run_stage(stage: StageSpec, spec: PipelineSpec, reg: Registry, progress=None) -> list[str]:
    """Run one stage unless its outputs already exist; returns the artifact ids it provides."""
    for dep in _deps(spec, stage):
        if dep not in reg:
            raise StageError(stage.name, f"missing artifact {dep!r}")
    h = stage_hash(stage, spec, {d: reg.content_hash(d) for d in _deps(spec, stage)})
    outputs = stage.produces(spec.langs)
    done = [reg.check_producer(o, h) for o in outputs]
    if all(done):
        log.info("stage %s: up to date", stage.name)
        return outputs
    if any(done):
        raise StageError(stage.name, "outputs are partially present; registry is inconsistent")
    try:
        if stage.kind == "bpe":
            _run_bpe(stage, reg, h)
        elif stage.kind == "generate":
            _run_generate(stage, spec, reg, h)
        else:
            _run_train(stage, spec, reg, h, progress)
    except (TrainingError, FloatingPointError, ValueError) as e:
        if isinstance(e, (SpecError, RegistryError)):
            raise
        raise StageError(stage.name, str(e)) from e
    return outputs


def _run_bpe(stage: StageSpec, reg: Registry, h: str) -> None:
    corpora = []
    for text in stage.corpora:
        cid = CorpusRef.parse(text).id
        if reg.kind(cid) == "parallel":
            pc = reg.parallel(cid)
            corpora += [Corpus(pc.src_lang, pc.sources), Corpus(pc.tgt_lang, pc.targets)]
        else:
            corpora.append(reg.corpus(cid))
    model = learn_bpe(corpora, stage.n_merges)
    d = reg.begin(stage.name)
    model.save(d / "bpe.txt")
    reg.commit(stage.name, "bpe", h, {"vocab_size": len(model), "n_merges": len(model.merges)})


def _load_params(reg: Registry, ckpt: str, stage: str):
    params, header = reg.checkpoint(ckpt)
    return params, header


def _run_generate(stage: StageSpec, spec: PipelineSpec, reg: Registry, h: str) -> None:
    bpe = reg.bpe(bpe_for(spec, stage))
    params, _ = _load_params(reg, stage.checkpoint, stage.name)
    for text in stage.corpora:
        ref = CorpusRef.parse(text)
        mono = reg.corpus(ref.id)
        tgt = StageData(spec, reg, bpe, 0).other_lang(mono.lang, ref)
        rng = np.random.default_rng(derive_seed(spec.seed, f"{stage.name}.{ref.id}"))
        pc, dropped = generate_synthetic(params, bpe, mono, spec.slot(mono.lang), spec.slot(tgt), tgt,
                                         stage.decode, rng)
        reg.put_parallel(generated_id(stage.name, ref), pc, h,
                         {"dropped": dropped, "source_corpus": ref.id, "checkpoint": stage.checkpoint})


def generate_synthetic(params, bpe, mono: Corpus, src_slot: int, tgt_slot: int, tgt_lang: str,
                       dc, rng=None) -> tuple[ParallelCorpus, int]:
    """Translate every sentence of ``mono``; pair authentic source with synthetic target."""
    if len(mono) == 0:
        raise ValueError("cannot generate from an empty corpus")
    hyps = translate_text(params, bpe, mono.sentences, src_slot, tgt_slot, dc, rng)
    pc, dropped = pair_synthetic(mono, hyps)
    return ParallelCorpus(mono.lang, tgt_lang, pc.pairs), dropped


def _dev_sets(stage: StageSpec, spec: PipelineSpec, data: StageData) -> list[DevSet]:
    devs = []
    for text in stage.dev:
        pc = data.pairs(CorpusRef.parse(text), keep_text=True)
        limit = data.limit
        devs.append(DevSet([data.bpe.encode(s)[:limit] for s in pc.sources], pc.targets,
                           spec.slot(pc.src_lang), spec.slot(pc.tgt_lang)))
    return devs


def _run_train(stage: StageSpec, spec: PipelineSpec, reg: Registry, h: str, progress) -> None:
    bpe_id = bpe_for(spec, stage)
    bpe = reg.bpe(bpe_id)
    cfg = spec.model_config(len(bpe))
    seed = derive_seed(spec.seed, stage.name)
    step0 = 0
    if stage.init == "random":
        params = init_params(cfg, seed)
    else:
        params, header = _load_params(reg, stage.init, stage.name)
        if params.cfg != cfg:
            raise StageError(stage.name, f"checkpoint {stage.init!r} has a different architecture or vocabulary")
        if stage.continue_steps:
            step0 = int(header["step"])
    if stage.decoder_from_encoder:
        params = copy_encoder_into_decoder(params)
    state = TrainState(params, stage.optimizer, seed=seed, step=step0)
    data = StageData(spec, reg, bpe, cfg.max_len - 1)
    tasks = build_tasks(stage, spec, data)
    devs = _dev_sets(stage, spec, data)
    eval_dc = stage.eval_decode or stage.decode

    work = reg.work_dir(stage.name)
    snap = work / "state.ck"
    records: list[dict] = []
    local, bad = 0, 0
    if snap.exists():
        header, _ = read_checkpoint(snap)
        if header["meta"].get("stage_hash") == h:
            meta = load_snapshot(snap, state)
            local, bad, records = meta["local_step"], meta["bad_evals"], meta["records"]
            log.info("stage %s: resuming at step %d", stage.name, local)

    def evaluate():
        nonlocal bad
        rec = {"step": state.step, "local_step": local, "lr": lr_at(state.oc, max(state.step, 1)),
               "losses": {k: round(v, 6) for k, v in sorted(state.last_losses.items()) if k != "dev_bleu"}}
        if devs:
            before = state.best_score
            select_best(state, devs, bpe, eval_dc)
            rec["dev_bleu"] = state.last_losses.pop("dev_bleu")
            bad = 0 if before is None or state.best_score > before else bad + 1
        records.append(rec)
        if progress:
            progress(stage.name, rec)

    stop = stage.stop
    while local < stop.max_steps:
        name, task = tasks[local % len(tasks)]
        task(state)
        local += 1
        if stop.eval_every and local % stop.eval_every == 0:
            evaluate()
            save_snapshot(snap, state, {"stage_hash": h, "local_step": local, "bad_evals": bad,
                                        "records": records})
            if stop.patience is not None and bad >= stop.patience:
                break
    if devs and (not records or records[-1]["local_step"] != local):
        evaluate()

    final, final_step = state.params, state.step
    if devs and state.best_params is not None:
        final, final_step = state.best_params, state.best_step
    d = reg.begin(stage.name)
    meta = {"stage": stage.name, "local_steps": local, "selected_step": final_step,
            "best_dev_bleu": state.best_score, "dropped_sentences": data.dropped, "init": stage.init}
    header_meta = {"stage_hash": h, "lang_slots": spec.slots()}
    save_checkpoint(d / "model.ck", final, final_step, {}, header_meta)
    with open(d / "train.jsonl", "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    reg.commit(stage.name, "checkpoint", h, meta)

    if stage.test:
        reports = []
        for text in stage.test:
            pc = data.pairs(CorpusRef.parse(text), keep_text=True)
            hyps = translate_text(final, bpe, pc.sources, spec.slot(pc.src_lang), spec.slot(pc.tgt_lang), eval_dc)
            reports.append(score(f"{stage.name} {pc.src_lang}->{pc.tgt_lang}", hyps, pc.targets))
        write_reports(reg, f"{stage.name}.report", reports, h)
    snap.unlink(missing_ok=True)


def write_reports(reg: Registry, artifact_id: str, reports: list[EvalReport], producer: str) -> None:
    d = reg.begin(artifact_id)
    (d / "report.jsonl").write_text("".join(r.to_json() + "\n" for r in reports), encoding="utf-8")
    (d / "report.txt").write_text(format_table(reports) + "\n", encoding="utf-8")
    reg.commit(artifact_id, "report", producer, {"systems": [r.system for r in reports]})


def read_reports(reg: Registry, artifact_id: str) -> list[EvalReport]:
    text = (reg.path(artifact_id) / "report.jsonl").read_text(encoding="utf-8")
    return [EvalReport(**json.loads(line)) for line in text.splitlines() if line]


def run_pipeline(spec: PipelineSpec, root, base_dir=".", progress=None) -> Registry:
    """Run every stage in order.  A failing stage aborts; finished artifacts stay."""
    validate(spec)
    reg = Registry(root)
    materialize_inputs(spec, reg, base_dir)
    for stage in spec.stages:
        log.info("stage %s (%s)", stage.name, stage.kind)
        run_stage(stage, spec, reg, progress)
    write_json_atomic(reg.root / f"pipeline-{spec.name}.json", spec.to_dict())
    return reg
