"""Ready-made pipeline specs for the named systems, on built-in toy data.

Every preset is self-contained: its ``toy`` input generates the corpora, so
``nmtlab pipeline run --preset NAME`` needs no files.  Presets that share a
prefix of stages (for example ``synthetic-2`` contains all of
``monolingual``) produce identical artifacts for the shared part, so running
several presets in one registry directory reuses earlier work.
"""

from __future__ import annotations

from ..model.config import DecodeConfig
from ..training.optim import OptimizerConfig
from .spec import PipelineSpec, StageSpec, StopSpec, validate

PRESETS = ("monolingual", "synthetic-1", "synthetic-2", "supervised-baseline", "auth-no-bt",
           "auth-bt", "synth-auth", "transfer")

MODEL = {"n_layers": 2, "d_model": 64, "n_heads": 4, "d_ff": 256, "max_len": 40, "dropout": 0.1}

# desk-scale settings; the sizes of the toy task are fixed by the preset
DEFAULTS = {
    "n_merges": 2000,
    "xlm_steps": 8000,
    "unsup_steps": 3000,
    "synth_steps": 3000,
    "sup_steps": 2000,
    "parent_steps": 20000,
    "child_steps": 1000,
    "eval_every": 500,
    "patience": 5,
    "lr": 1e-3,
    "warmup": 200,
    "tokens_per_batch": 512,
    "keep": 0.3,
    # the low-resource presets need words that 500 pairs barely cover
    "lowres_toy": {"scale": 8, "zipf": 1.0},
    "transfer_optimizer": "adafactor",
    "transfer_lr": 1e-3,
}

# presets whose toy task uses DEFAULTS["lowres_toy"]; transfer does too
LOW_RESOURCE = ("supervised-baseline", "auth-no-bt", "auth-bt", "synth-auth")


def _opt(o, kind: str = "adam", lr: float | None = None) -> OptimizerConfig:
    return OptimizerConfig(kind=kind, base_lr=o["lr"] if lr is None else lr, warmup_steps=o["warmup"],
                           tokens_per_batch=o["tokens_per_batch"])


def _toy_pair(seed: int, keep: float, options: dict | None = None) -> dict:
    """Two languages related by a word bijection and adjective/noun reordering."""
    return {
        "kind": "toy", "seed": seed, **({"options": dict(options)} if options else {}),
        "languages": [{"name": "xa"}, {"name": "xb", "adj_after_noun": True, "base": "xa", "keep": keep}],
        "corpora": [
            {"id": "mono.xa", "lang": "xa", "n": 5000, "seed": 1},
            {"id": "mono.xb", "lang": "xb", "n": 5000, "seed": 2},
            {"id": "test", "src": "xa", "tgt": "xb", "n": 200, "seed": 3},
            {"id": "dev", "src": "xa", "tgt": "xb", "n": 100, "seed": 4},
            {"id": "auth", "src": "xa", "tgt": "xb", "n": 500, "seed": 5},
        ],
    }


def _toy_transfer(seed: int, options: dict | None = None) -> dict:
    """Parent xc<->xb, child xa<->xb, where xa is a close relative of xc."""
    return {
        "kind": "toy", "seed": seed, **({"options": dict(options)} if options else {}),
        "languages": [{"name": "xb"}, {"name": "xc", "adj_after_noun": True},
                      {"name": "xa", "adj_after_noun": True, "base": "xc", "keep": 0.5}],
        "corpora": [
            {"id": "parent.train", "src": "xc", "tgt": "xb", "n": 50000, "seed": 11},
            {"id": "parent.dev", "src": "xc", "tgt": "xb", "n": 100, "seed": 12},
            {"id": "child.train", "src": "xa", "tgt": "xb", "n": 500, "seed": 13},
            {"id": "child.dev", "src": "xa", "tgt": "xb", "n": 100, "seed": 14},
            {"id": "child.test", "src": "xa", "tgt": "xb", "n": 200, "seed": 15},
        ],
    }


def _both(ref: str) -> tuple:
    return (ref, f"{ref}:rev")


def _train(name, o, objectives, data, init="random", steps=0, dev=(), test=(), patience=None,
           decoder_from_encoder=False, decode=None, continue_steps=False, optimizer=None) -> StageSpec:
    return StageSpec(
        name=name, objectives=tuple(objectives), data={k: list(v) for k, v in data.items()}, init=init,
        decoder_from_encoder=decoder_from_encoder, continue_steps=continue_steps,
        stop=StopSpec(max_steps=steps, patience=patience, eval_every=o["eval_every"] if dev else 0),
        optimizer=optimizer or _opt(o), decode=decode or DecodeConfig.greedy(o["max_len"]), dev=tuple(dev), test=tuple(test))


def _unsup_stages(name: str, o: dict) -> list[StageSpec]:
    mono = ["mono.xa", "mono.xb"]
    dev, test = _both("dev"), _both("test")
    stages = [StageSpec(name="bpe", kind="bpe", corpora=tuple(mono), n_merges=o["n_merges"])]
    xlm_init = {"init": "xlm", "decoder_from_encoder": True}
    if o.get("pretrain", True) and name != "supervised-baseline":
        stages.append(_train("xlm", o, ["XLM"], {"XLM": mono}, steps=o["xlm_steps"]))
    else:
        xlm_init = {}
    if name in ("supervised-baseline",):
        stages.append(_train("baseline", o, ["MT"], {"MT": _both("auth")}, steps=o["sup_steps"],
                             dev=dev, test=test))
        return stages
    if name in ("auth-no-bt", "auth-bt"):
        objectives = ["MT"] + (["BT"] if name == "auth-bt" else [])
        data = {"MT": _both("auth")}
        if name == "auth-bt":
            data["BT"] = mono
        stages.append(_train(name, o, objectives, data, steps=o["sup_steps"], dev=dev, test=test, **xlm_init))
        return stages
    mono_stage = "monolingual" if o.get("pretrain", True) else "monolingual-noxlm"
    stages.append(_train(mono_stage, o, ["DN", "BT"], {"DN": mono, "BT": mono}, steps=o["unsup_steps"],
                         dev=dev, test=test, **xlm_init))
    if name in ("monolingual",):
        return stages
    synth_init = xlm_init if o.get("synthetic_init", "xlm") == "xlm" else {}
    online_bt = o.get("online_bt", True)
    prev = mono_stage
    rounds = 1 if name == "synthetic-1" else 2
    for r in range(1, rounds + 1):
        gen = f"synth{r}"
        stages.append(StageSpec(name=gen, kind="generate", checkpoint=prev, corpora=tuple(mono),
                                decode=DecodeConfig.greedy(o["max_len"])))
        # synthetic source -> authentic target, both directions
        data = {"MT": [f"{gen}.mono.xa:rev", f"{gen}.mono.xb:rev"]}
        objectives = ["MT"]
        if online_bt:
            objectives.append("BT")
            data["BT"] = mono
        suffix = "" if online_bt else "-nobt"
        suffix += "" if synth_init else "-rand"
        prev = f"synthetic-{'i' * r}{suffix}"
        stages.append(_train(prev, o, objectives, data, steps=o["synth_steps"], dev=dev, test=test,
                             **synth_init))
    if name == "synth-auth":
        stages.append(_train("synth-auth", o, ["MT", "BT"], {"MT": _both("auth"), "BT": mono},
                             init=prev, steps=o["sup_steps"], dev=dev, test=test))
    return stages


def _transfer_stages(o: dict) -> list[StageSpec]:
    stages = [StageSpec(name="bpe", kind="bpe", corpora=("parent.train", "child.train"),
                        n_merges=o["n_merges"])]
    beam = DecodeConfig.beam(8, 0.8, o["max_len"])
    opt = _opt(o, o["transfer_optimizer"], o["transfer_lr"])
    stages.append(_train("parent", o, ["MT"], {"MT": _both("parent.train")}, steps=o["parent_steps"],
                         dev=_both("parent.dev"), patience=o["patience"], optimizer=opt))
    child = dict(steps=o["child_steps"], dev=_both("child.dev"), test=_both("child.test"), optimizer=opt)
    stages.append(_train("child", o, ["MT"], {"MT": _both("child.train")}, init="parent",
                         continue_steps=True, **child))
    stages[-1].eval_decode = beam
    if o.get("baseline", True):
        stages.append(_train("child-only", o, ["MT"], {"MT": _both("child.train")}, **child))
        stages[-1].eval_decode = beam
    return stages


def build_preset(name: str, seed: int = 0, **overrides) -> PipelineSpec:
    """Spec for a named system.  ``overrides`` adjust :data:`DEFAULTS` and flags.

    Flags: ``pretrain`` (XLM stage, default on), ``online_bt`` (during
    synthetic rounds, default on), ``synthetic_init`` ("xlm" or "random"),
    ``baseline`` (transfer: also train the child-only system, default on),
    ``toy`` (options for the toy family; the low-resource and transfer
    presets default to ``lowres_toy``, the others to the 100-word lexicon).
    """
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    o = {**DEFAULTS, **overrides}
    model = {**MODEL, **o.get("model", {})}
    o["max_len"] = model["max_len"]
    if name == "transfer":
        spec = PipelineSpec(name=name, langs=("xb", "xc", "xa"), seed=seed, model=model,
                            lang_slots={"xb": 0, "xc": 1, "xa": 1},
                            inputs=[_toy_transfer(o.get("data_seed", 0), o.get("toy", o["lowres_toy"]))],
                            stages=_transfer_stages(o))
    else:
        toy = o.get("toy", o["lowres_toy"] if name in LOW_RESOURCE else None)
        spec = PipelineSpec(name=name, langs=("xa", "xb"), seed=seed, model=model,
                            inputs=[_toy_pair(o.get("data_seed", 0), o["keep"], toy)],
                            stages=_unsup_stages(name, o))
    validate(spec)
    return spec
