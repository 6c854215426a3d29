"""Declarative pipeline description and its YAML schema (version 1).

Example::

    version: 1
    name: demo
    seed: 0
    langs: [xa, xb]
    model: {n_layers: 2, d_model: 64, n_heads: 4, d_ff: 256, max_len: 40}
    inputs:
      - {id: mono.xa, kind: corpus, lang: xa, path: data/mono.xa}
      - {id: test, kind: parallel, src: xa, tgt: xb, prefix: data/test}
    stages:
      - {name: bpe, kind: bpe, corpora: [mono.xa, mono.xb], n_merges: 2000}
      - name: xlm
        objectives: [XLM]
        data: {XLM: [mono.xa, mono.xb]}
        stop: {max_steps: 4000}
      - name: mono
        objectives: [DN, BT]
        data: {DN: [mono.xa, mono.xb], BT: [mono.xa, mono.xb]}
        init: xlm
        decoder_from_encoder: true
        test: [test, "test:rev"]

Corpus references in ``data``/``dev``/``test`` may carry a ``:rev`` suffix
(swap the sides of a parallel corpus) and BT references a ``>lang`` suffix
naming the generation target language.

``decode`` drives online BT and generate stages; ``mode: sample`` (with
``temperature``) draws those translations instead of decoding greedily.
Dev and test decoding use ``eval_decode`` when set, else ``decode``, and
must not sample.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..model.config import ConfigError, DecodeConfig, ModelConfig
from ..training.noise import MaskConfig, NoiseConfig
from ..training.optim import OptimizerConfig

SCHEMA_VERSION = 1
OBJECTIVES = ("XLM", "DN", "BT", "MT")
STAGE_KINDS = ("train", "bpe", "generate")
INPUT_KINDS = ("corpus", "parallel", "toy")
_ID = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.\-]*$")


class SpecError(ConfigError):
    pass


@dataclass(frozen=True)
class StopSpec:
    max_steps: int = 0
    patience: int | None = None
    eval_every: int = 0

    def __post_init__(self):
        if self.max_steps < 0:
            raise SpecError("max_steps must be >= 0")
        if self.patience is not None and self.patience < 1:
            raise SpecError("patience must be >= 1")
        if self.patience is not None and self.eval_every < 1:
            raise SpecError("patience needs eval_every >= 1")


@dataclass(frozen=True)
class CorpusRef:
    """A parsed reference ``id[:rev][>lang]``."""

    id: str
    rev: bool = False
    target: str | None = None

    @classmethod
    def parse(cls, text: str) -> "CorpusRef":
        ref, target = text, None
        if ">" in ref:
            ref, target = ref.split(">", 1)
        rev = ref.endswith(":rev")
        if rev:
            ref = ref[:-4]
        if not _ID.match(ref):
            raise SpecError(f"bad corpus reference {text!r}")
        return cls(ref, rev, target)


@dataclass
class StageSpec:
    name: str
    kind: str = "train"
    objectives: tuple = ()
    data: dict = field(default_factory=dict)
    init: str = "random"
    decoder_from_encoder: bool = False
    continue_steps: bool = False
    stop: StopSpec = field(default_factory=StopSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    eval_decode: DecodeConfig | None = None
    mask: MaskConfig = field(default_factory=MaskConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    dev: tuple = ()
    test: tuple = ()
    # bpe stages
    corpora: tuple = ()
    n_merges: int = 0
    # generate stages
    checkpoint: str | None = None

    def refs(self) -> list[CorpusRef]:
        out = [CorpusRef.parse(r) for rs in self.data.values() for r in rs]
        out += [CorpusRef.parse(r) for r in (*self.dev, *self.test, *self.corpora)]
        return out

    def checkpoint_deps(self) -> list[str]:
        deps = []
        if self.kind == "train" and self.init != "random":
            deps.append(self.init)
        if self.kind == "generate" and self.checkpoint:
            deps.append(self.checkpoint)
        return deps

    def produces(self, langs) -> list[str]:
        if self.kind == "train":
            return [self.name] + ([f"{self.name}.report"] if self.test else [])
        if self.kind == "bpe":
            return [self.name]
        return [generated_id(self.name, r) for r in map(CorpusRef.parse, self.corpora)]

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == "bpe":
            d.update(corpora=list(self.corpora), n_merges=self.n_merges)
            return d
        if self.kind == "generate":
            d.update(checkpoint=self.checkpoint, corpora=list(self.corpora), decode=self.decode.to_dict())
            return d
        d.update(objectives=list(self.objectives), data={k: list(v) for k, v in self.data.items()},
                 init=self.init, decoder_from_encoder=self.decoder_from_encoder,
                 continue_steps=self.continue_steps, stop=asdict(self.stop),
                 optimizer=self.optimizer.to_dict(), decode=self.decode.to_dict(),
                 eval_decode=self.eval_decode.to_dict() if self.eval_decode else None,
                 mask=asdict(self.mask), noise=asdict(self.noise),
                 dev=list(self.dev), test=list(self.test))
        return d


def generated_id(stage: str, ref: CorpusRef) -> str:
    """Id of the synthetic corpus a generate stage makes from ``ref``."""
    return f"{stage}.{ref.id}"


@dataclass
class PipelineSpec:
    name: str
    langs: tuple
    seed: int = 0
    model: dict = field(default_factory=dict)
    lang_slots: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    version: int = SCHEMA_VERSION

    def slot(self, lang: str) -> int:
        slots = self.slots()
        if lang not in slots:
            raise SpecError(f"unknown language {lang!r}")
        return slots[lang]

    def slots(self) -> dict:
        if self.lang_slots:
            return dict(self.lang_slots)
        return {lang: i for i, lang in enumerate(self.langs)}

    def n_slots(self) -> int:
        return max(self.slots().values()) + 1

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(**{**self.model, "vocab_size": vocab_size, "n_langs": self.n_slots()})

    def to_dict(self) -> dict:
        d = {"version": self.version, "name": self.name, "seed": self.seed, "langs": list(self.langs),
             "model": dict(self.model), "inputs": [dict(i) for i in self.inputs],
             "stages": [s.to_dict() for s in self.stages]}
        if self.lang_slots:
            d["lang_slots"] = dict(self.lang_slots)
        return d

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


# -- parsing --------------------------------------------------------------------------

def _build(cls, d, what):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise SpecError(f"{what} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise SpecError(f"{what}: unknown field(s) {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise SpecError(f"{what}: {e}") from e


def stage_from_dict(d: dict) -> StageSpec:
    if not isinstance(d, dict) or "name" not in d:
        raise SpecError("every stage needs a name")
    d = dict(d)
    where = f"stage {d['name']!r}"
    known = {f.name for f in fields(StageSpec)}
    unknown = set(d) - known
    if unknown:
        raise SpecError(f"{where}: unknown field(s) {sorted(unknown)}")
    for key, cls in (("stop", StopSpec), ("optimizer", OptimizerConfig), ("decode", DecodeConfig),
                     ("mask", MaskConfig), ("noise", NoiseConfig)):
        if key in d:
            d[key] = _build(cls, d[key], f"{where} {key}")
    if d.get("eval_decode") is not None:
        d["eval_decode"] = _build(DecodeConfig, d["eval_decode"], f"{where} eval_decode")
    for key in ("objectives", "dev", "test", "corpora"):
        if key in d:
            d[key] = tuple(d[key] or ())
    if "data" in d:
        d["data"] = {k: list(v) for k, v in (d["data"] or {}).items()}
    try:
        return StageSpec(**d)
    except TypeError as e:
        raise SpecError(f"{where}: {e}") from e


def from_dict(d: dict) -> PipelineSpec:
    if not isinstance(d, dict):
        raise SpecError("pipeline spec must be a mapping")
    version = d.get("version")
    if version != SCHEMA_VERSION:
        raise SpecError(f"unsupported pipeline spec version {version!r} (expected {SCHEMA_VERSION})")
    unknown = set(d) - {"version", "name", "seed", "langs", "model", "lang_slots", "inputs", "stages"}
    if unknown:
        raise SpecError(f"unknown top-level field(s) {sorted(unknown)}")
    spec = PipelineSpec(name=str(d.get("name", "pipeline")), langs=tuple(d.get("langs") or ()),
                        seed=int(d.get("seed", 0)), model=dict(d.get("model") or {}),
                        lang_slots=dict(d.get("lang_slots") or {}), inputs=list(d.get("inputs") or []),
                        stages=[stage_from_dict(s) for s in d.get("stages") or []])
    validate(spec)
    return spec


def loads(text: str) -> PipelineSpec:
    try:
        return from_dict(yaml.safe_load(text))
    except yaml.YAMLError as e:
        raise SpecError(f"invalid YAML: {e}") from e


def load(path) -> PipelineSpec:
    return loads(Path(path).read_text(encoding="utf-8"))


# -- validation --------------------------------------------------------------------------

def input_ids(inp: dict) -> list[str]:
    if inp.get("kind") == "toy":
        return [c["id"] for c in inp.get("corpora", [])]
    return [inp["id"]]


def validate(spec: PipelineSpec) -> None:
    """Structural checks: unique names, known objectives and a DAG of artifacts."""
    if len(spec.langs) < 1 or len(set(spec.langs)) != len(spec.langs):
        raise SpecError("langs must be a non-empty list of distinct language ids")
    if spec.lang_slots and set(spec.lang_slots) != set(spec.langs):
        raise SpecError("lang_slots must map exactly the declared langs")
    bad_model = set(spec.model) - {f.name for f in fields(ModelConfig)} | ({"vocab_size", "n_langs"} & set(spec.model))
    if bad_model:
        raise SpecError(f"model: field(s) {sorted(bad_model)} not allowed (vocab_size and n_langs are derived)")
    available: dict[str, str] = {}
    for inp in spec.inputs:
        kind = inp.get("kind")
        if kind not in INPUT_KINDS:
            raise SpecError(f"input kind {kind!r} is not one of {INPUT_KINDS}")
        for i in input_ids(inp):
            if not _ID.match(i) or i in available:
                raise SpecError(f"input id {i!r} is invalid or duplicated")
            available[i] = "input"
    names = set()
    bpe_seen = False
    for st in spec.stages:
        where = f"stage {st.name!r}"
        if not _ID.match(st.name) or st.name in names:
            raise SpecError(f"stage name {st.name!r} is invalid or duplicated")
        names.add(st.name)
        if st.kind not in STAGE_KINDS:
            raise SpecError(f"{where}: kind {st.kind!r} is not one of {STAGE_KINDS}")
        for ref in st.refs():
            if ref.id not in available:
                raise SpecError(f"{where}: references {ref.id!r}, which no earlier stage or input produces")
            if ref.target is not None and ref.target not in spec.langs:
                raise SpecError(f"{where}: unknown target language {ref.target!r}")
        for dep in st.checkpoint_deps():
            if available.get(dep) != "checkpoint":
                raise SpecError(f"{where}: checkpoint {dep!r} is not produced by an earlier stage")
        if st.kind == "bpe":
            if not st.corpora or st.n_merges < 0:
                raise SpecError(f"{where}: a bpe stage needs corpora and n_merges >= 0")
            bpe_seen = True
        elif not bpe_seen:
            raise SpecError(f"{where}: runs before any bpe stage")
        if st.kind == "train":
            if not st.objectives or any(o not in OBJECTIVES for o in st.objectives):
                raise SpecError(f"{where}: objectives must be a non-empty subset of {OBJECTIVES}")
            if len(set(st.objectives)) != len(st.objectives):
                raise SpecError(f"{where}: repeated objective")
            for o in st.objectives:
                if not st.data.get(o):
                    raise SpecError(f"{where}: objective {o} has no data binding")
            extra = set(st.data) - set(st.objectives)
            if extra:
                raise SpecError(f"{where}: data bound to unused objective(s) {sorted(extra)}")
            if st.stop.patience is not None and not st.dev:
                raise SpecError(f"{where}: patience needs a dev binding")
            if (st.dev or st.test) and (st.eval_decode or st.decode).mode == "sample":
                raise SpecError(f"{where}: dev/test decoding cannot sample; set eval_decode")
        if st.kind == "generate" and (not st.checkpoint or not st.corpora):
            raise SpecError(f"{where}: a generate stage needs a checkpoint and corpora")
        kind_of = {"train": "checkpoint", "bpe": "bpe", "generate": "corpus"}[st.kind]
        for out in st.produces(spec.langs):
            if out in available:
                raise SpecError(f"{where}: artifact {out!r} already exists")
            available[out] = "report" if out.endswith(".report") else kind_of


def stage_hash(stage: StageSpec, spec: PipelineSpec, dep_hashes: dict) -> str:
    """Content hash of everything that determines a stage's outputs."""
    payload = {"stage": stage.to_dict(), "seed": spec.seed, "model": spec.model,
               "slots": spec.slots(), "deps": dict(sorted(dep_hashes.items()))}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()
