import copy

import numpy as np
import pytest

from nmtlab.corpus import Corpus
from nmtlab.metrics import bleu
from nmtlab.model.checkpoint import load_checkpoint
from nmtlab.model.config import DecodeConfig, ModelConfig
from nmtlab.model.transformer import init_params
from nmtlab.pipeline import (PRESETS, Registry, RegistryError, SpecError, StageError, build_preset,
                             generate_synthetic, loads, run_pipeline)
from nmtlab.pipeline import runner
from nmtlab.pipeline.spec import CorpusRef, from_dict
from nmtlab.training.optim import OptimizerConfig
from nmtlab.training.trainer import TrainingError

TOY = {"kind": "toy", "seed": 1,
       "languages": [{"name": "xa"}, {"name": "xb", "adj_after_noun": True, "base": "xa", "keep": 0.3}],
       "corpora": [{"id": "mono.xa", "lang": "xa", "n": 60, "seed": 1},
                   {"id": "mono.xb", "lang": "xb", "n": 60, "seed": 2},
                   {"id": "par", "src": "xa", "tgt": "xb", "n": 40, "seed": 3},
                   {"id": "dev", "src": "xa", "tgt": "xb", "n": 8, "seed": 4}]}
MODEL = {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_ff": 32, "max_len": 24, "dropout": 0.0}
OPT = {"base_lr": 0.003, "warmup_steps": 5, "tokens_per_batch": 64}


def spec_dict(*stages, seed=0):
    return {"version": 1, "name": "t", "seed": seed, "langs": ["xa", "xb"], "model": dict(MODEL),
            "inputs": [copy.deepcopy(TOY)],
            "stages": [{"name": "bpe", "kind": "bpe", "corpora": ["mono.xa", "mono.xb"], "n_merges": 200},
                       *stages]}


def train(name, objectives, data, steps=6, **kw):
    return {"name": name, "objectives": objectives, "data": data, "stop": {"max_steps": steps},
            "optimizer": OPT, "decode": {"mode": "greedy", "max_len": 12}, **kw}


UNSUP = [train("xlm", ["XLM"], {"XLM": ["mono.xa", "mono.xb"]}),
         train("mono", ["DN", "BT"], {"DN": ["mono.xa", "mono.xb"], "BT": ["mono.xa", "mono.xb"]},
               init="xlm", decoder_from_encoder=True, test=["dev", "dev:rev"]),
         {"name": "gen", "kind": "generate", "checkpoint": "mono", "corpora": ["mono.xa"],
          "decode": {"mode": "greedy", "max_len": 12}},
         train("synth", ["MT", "BT"], {"MT": ["gen.mono.xa:rev"], "BT": ["mono.xb"]}, init="xlm",
               decoder_from_encoder=True)]


# -- spec validation ---------------------------------------------------------------------

@pytest.mark.parametrize("mutate,match", [
    (lambda d: d["stages"].append(train("bpe", ["MT"], {"MT": ["par"]})), "duplicated"),
    (lambda d: d["stages"].append(train("a", ["MT"], {"MT": ["later"]})), "no earlier stage"),
    (lambda d: d["stages"].append(train("a", ["MT"], {"MT": ["par"]}, init="b")), "checkpoint 'b'"),
    (lambda d: d["stages"].append(train("a", ["MT", "BT"], {"MT": ["par"]})), "no data binding"),
    (lambda d: d["stages"].append(train("a", ["XX"], {"XX": ["par"]})), "objectives"),
    (lambda d: d["stages"].append(train("a", ["MT"], {"MT": ["par"]}, stop={"max_steps": 5, "patience": 2,
                                                                          "eval_every": 1})), "dev"),
    (lambda d: d.update(version=2), "version"),
    (lambda d: d["stages"].insert(0, train("a", ["MT"], {"MT": ["par"]})), "before any bpe"),
    (lambda d: d["model"].update(vocab_size=10), "derived"),
    (lambda d: d["stages"].append(train("a", ["MT"], {"MT": ["par"]}, bogus=1)), "unknown field"),
    (lambda d: d["stages"].append(train("a", ["MT"], {"MT": ["par"]}, test=["dev"],
                                        decode={"mode": "sample"})), "cannot sample"),
    (lambda d: d["stages"].append(train("a", ["MT"], {"MT": ["par"]}, decode={"mode": "sample",
                                                                         "temperature": 0})), "temperature"),
])
def test_invalid_specs(mutate, match):
    d = spec_dict()
    mutate(d)
    with pytest.raises(SpecError, match=match):
        from_dict(d)


def test_cycle_is_rejected():
    # two stages initialized from each other cannot both come first
    d = spec_dict(train("a", ["MT"], {"MT": ["par"]}, init="b"), train("b", ["MT"], {"MT": ["par"]}, init="a"))
    with pytest.raises(SpecError):
        from_dict(d)


def test_yaml_roundtrip():
    spec = from_dict(spec_dict(*UNSUP))
    again = loads(spec.dumps())
    assert again.to_dict() == spec.to_dict()


def test_corpus_ref_parsing():
    assert CorpusRef.parse("a.b:rev") == CorpusRef("a.b", True, None)
    assert CorpusRef.parse("m>xb") == CorpusRef("m", False, "xb")
    with pytest.raises(SpecError):
        CorpusRef.parse("bad/id")


# -- running --------------------------------------------------------------------------------

def test_empty_pipeline_leaves_registry_empty(tmp_path):
    d = spec_dict()
    d["stages"], d["inputs"] = [], []
    reg = run_pipeline(from_dict(d), tmp_path / "reg")
    assert reg.ids() == []


def test_zero_steps_checkpoint_equals_initialization(tmp_path):
    reg = run_pipeline(from_dict(spec_dict(train("a", ["MT"], {"MT": ["par"]}, steps=0))), tmp_path)
    params, header = reg.checkpoint("a")
    init = init_params(params.cfg, runner.derive_seed(0, "a"))
    assert header["step"] == 0
    assert all(np.array_equal(params[k], init[k]) for k in init.tensors)


@pytest.fixture(scope="module")
def unsup_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("reg")
    return run_pipeline(from_dict(spec_dict(*UNSUP)), root)


def test_unsupervised_chain_artifacts(unsup_run):
    reg = unsup_run
    for a in ("bpe", "xlm", "mono", "mono.report", "gen.mono.xa", "synth"):
        assert a in reg
    m = reg.manifest("gen.mono.xa")
    pc = reg.parallel("gen.mono.xa")
    assert len(pc) + m["meta"]["dropped"] == 60
    assert pc.src_lang == "xa" and pc.tgt_lang == "xb"
    assert reg.manifest("mono")["meta"]["init"] == "xlm"
    reports = runner.read_reports(reg, "mono.report")
    assert [r.system for r in reports] == ["mono xa->xb", "mono xb->xa"]
    assert all(r.sentences == 8 for r in reports)
    assert (reg.path("mono") / "train.jsonl").exists()


def test_rerun_is_deterministic_and_reuses(unsup_run, tmp_path):
    spec = from_dict(spec_dict(*UNSUP))
    before = {i: unsup_run.content_hash(i) for i in unsup_run.ids()}
    mtime = (unsup_run.path("synth") / "model.ck").stat().st_mtime_ns
    run_pipeline(spec, unsup_run.root)
    assert (unsup_run.path("synth") / "model.ck").stat().st_mtime_ns == mtime
    fresh = run_pipeline(spec, tmp_path / "fresh")
    assert {i: fresh.content_hash(i) for i in fresh.ids()} == before


def test_sampled_back_translation_is_reproducible(tmp_path):
    sampled = train("mono", ["DN", "BT"], {"DN": ["mono.xa", "mono.xb"], "BT": ["mono.xa", "mono.xb"]},
                    decode={"mode": "sample", "temperature": 1.0, "max_len": 12},
                    eval_decode={"mode": "greedy", "max_len": 12}, test=["dev"])
    gen = {"name": "gen", "kind": "generate", "checkpoint": "mono", "corpora": ["mono.xa"],
           "decode": {"mode": "sample", "max_len": 12}}
    spec = from_dict(spec_dict(sampled, gen))
    a, b = run_pipeline(spec, tmp_path / "a"), run_pipeline(spec, tmp_path / "b")
    for i in ("mono", "gen.mono.xa"):
        assert a.content_hash(i) == b.content_hash(i)


def test_changed_stage_refuses_to_overwrite(unsup_run):
    stages = copy.deepcopy(UNSUP)
    stages[0]["stop"] = {"max_steps": 7}
    with pytest.raises(RegistryError, match="refusing to overwrite"):
        run_pipeline(from_dict(spec_dict(*stages)), unsup_run.root)


def test_different_seed_gives_different_model(tmp_path):
    st = train("a", ["MT"], {"MT": ["par"]}, steps=3)
    r1 = run_pipeline(from_dict(spec_dict(st, seed=1)), tmp_path / "1")
    r2 = run_pipeline(from_dict(spec_dict(st, seed=2)), tmp_path / "2")
    assert r1.content_hash("a") != r2.content_hash("a")
    assert r1.content_hash("bpe") == r2.content_hash("bpe")


def test_resume_after_interruption_matches_uninterrupted(tmp_path):
    st = train("a", ["MT"], {"MT": ["par", "par:rev"]}, steps=12, dev=["dev"],
               stop={"max_steps": 12, "eval_every": 3})
    spec = from_dict(spec_dict(st))
    full = run_pipeline(spec, tmp_path / "full")

    class Stop(Exception):
        pass

    def interrupt(stage, rec):
        if rec["local_step"] == 6:
            raise Stop()

    with pytest.raises(Stop):
        run_pipeline(spec, tmp_path / "cut", progress=interrupt)
    assert "a" not in Registry(tmp_path / "cut")
    resumed = run_pipeline(spec, tmp_path / "cut")
    assert resumed.content_hash("a") == full.content_hash("a")


def test_patience_stops_early_and_keeps_best(tmp_path, monkeypatch):
    scores = iter([5.0, 4.0, 3.0, 2.0, 1.0] * 10)
    monkeypatch.setattr("nmtlab.training.trainer.dev_bleu", lambda *a, **k: next(scores))
    st = train("a", ["MT"], {"MT": ["par"]}, dev=["dev"], stop={"max_steps": 100, "patience": 2, "eval_every": 2})
    reg = run_pipeline(from_dict(spec_dict(st)), tmp_path)
    m = reg.manifest("a")["meta"]
    assert m["local_steps"] == 6
    assert m["selected_step"] == 2 and m["best_dev_bleu"] == 5.0


def test_failing_stage_aborts_and_preserves_registry(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise TrainingError("non-finite MT loss at step 1")
    monkeypatch.setattr(runner, "mt_step", boom)
    d = spec_dict(train("ok", ["DN"], {"DN": ["mono.xa"]}, steps=2), train("bad", ["MT"], {"MT": ["par"]}))
    with pytest.raises(StageError, match="stage 'bad'.*step 1"):
        run_pipeline(from_dict(d), tmp_path)
    reg = Registry(tmp_path)
    assert "ok" in reg and "bad" not in reg


def test_missing_artifact_reported(tmp_path):
    spec = from_dict(spec_dict(train("a", ["MT"], {"MT": ["par"]})))
    reg = Registry(tmp_path)
    with pytest.raises(StageError, match="missing artifact"):
        runner.run_stage(spec.stages[1], spec, reg)


# -- synthetic data ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def identity_model():
    """A small model trained to copy: translating xa 'into' xa."""
    from nmtlab.subword import learn_bpe
    from nmtlab.toy import ToyFamily
    from nmtlab.training.trainer import TrainState, mt_step as step
    fam = ToyFamily.create(2)
    fam.add_language("xa")
    mono = fam.monolingual("xa", 400, 1)
    bpe = learn_bpe([mono], 500)
    cfg = ModelConfig(n_layers=1, d_model=32, n_heads=2, d_ff=64, vocab_size=len(bpe), max_len=24,
                      n_langs=1, dropout=0.0)
    st = TrainState(init_params(cfg, 0), OptimizerConfig(base_lr=3e-3, warmup_steps=50), seed=0)
    data = [bpe.encode(s) for s in mono]
    rng = np.random.default_rng(0)
    for _ in range(600):
        batch = [data[i] for i in rng.choice(len(data), 16, replace=False)]
        step(st, [(x, x) for x in batch], 0, 0)
    return st.params, bpe, fam


def test_generate_synthetic_on_identity_pair(identity_model):
    params, bpe, fam = identity_model
    mono = fam.monolingual("xa", 100, 99)
    pc, dropped = generate_synthetic(params, bpe, mono, 0, 0, "xa", DecodeConfig.greedy(24))
    assert len(pc) + dropped == len(mono)
    assert dropped == 0 and pc.sources == mono.sentences
    assert bleu(pc.targets, pc.sources) > 90


def test_generate_synthetic_rejects_empty(identity_model):
    params, bpe, _ = identity_model
    with pytest.raises(ValueError):
        generate_synthetic(params, bpe, Corpus("xa", []), 0, 0, "xa", DecodeConfig.greedy())


# -- presets ---------------------------------------------------------------------------------

@pytest.mark.parametrize("name", PRESETS)
def test_presets_validate(name):
    spec = build_preset(name)
    assert spec.name == name
    names = [s.name for s in spec.stages]
    assert len(names) == len(set(names))


def test_unknown_preset():
    with pytest.raises(KeyError):
        build_preset("nope")


def _stage(spec, name):
    return next(s for s in spec.stages if s.name == name)


def test_monolingual_preset_structure():
    spec = build_preset("monolingual")
    xlm, mono = _stage(spec, "xlm"), _stage(spec, "monolingual")
    assert xlm.objectives == ("XLM",)
    assert mono.objectives == ("DN", "BT") and mono.init == "xlm" and mono.decoder_from_encoder


def test_synthetic_two_consumes_first_round():
    spec = build_preset("synthetic-2")
    names = [s.name for s in spec.stages]
    assert names == ["bpe", "xlm", "monolingual", "synth1", "synthetic-i", "synth2", "synthetic-ii"]
    assert _stage(spec, "synth1").checkpoint == "monolingual"
    assert _stage(spec, "synth2").checkpoint == "synthetic-i"
    s2 = _stage(spec, "synthetic-ii")
    assert s2.data["MT"] == ["synth2.mono.xa:rev", "synth2.mono.xb:rev"]
    assert s2.init == "xlm" and "BT" in s2.objectives


def test_synthetic_flags():
    assert _stage(build_preset("synthetic-1", online_bt=False), "synthetic-i-nobt").objectives == ("MT",)
    assert _stage(build_preset("synthetic-1", synthetic_init="random"), "synthetic-i-rand").init == "random"


def test_low_resource_presets_structure():
    assert _stage(build_preset("supervised-baseline"), "baseline").init == "random"
    assert _stage(build_preset("auth-no-bt"), "auth-no-bt").objectives == ("MT",)
    ab = _stage(build_preset("auth-bt"), "auth-bt")
    assert ab.objectives == ("MT", "BT") and ab.init == "xlm"
    sa = _stage(build_preset("synth-auth"), "synth-auth")
    assert sa.init == "synthetic-ii" and sa.data["MT"] == ["auth", "auth:rev"]


def test_transfer_preset_changes_only_data_and_counter():
    spec = build_preset("transfer")
    parent, child = _stage(spec, "parent"), _stage(spec, "child")
    assert child.init == "parent" and child.continue_steps
    assert parent.stop.patience == 5
    assert spec.slot("xa") == spec.slot("xc")
    assert child.data != parent.data
    assert child.optimizer == parent.optimizer and child.objectives == parent.objectives
