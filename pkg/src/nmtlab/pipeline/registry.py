"""On-disk artifact registry: one directory per artifact plus a manifest.

Artifacts are immutable.  Registering an id that already exists succeeds
only when the producing stage hash matches (the artifact is reused);
otherwise it is an error.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from pathlib import Path

from ..corpus import Corpus, ParallelCorpus, ingest
from ..model.checkpoint import load_checkpoint
from ..subword import BpeModel

MANIFEST = "manifest.json"
KINDS = ("corpus", "parallel", "bpe", "checkpoint", "report")


class RegistryError(RuntimeError):
    pass


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json_atomic(path, obj) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    os.replace(tmp, path)


class Registry:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._cache: dict = {}

    # -- bookkeeping --------------------------------------------------------------

    def path(self, artifact_id: str) -> Path:
        return self.root / artifact_id

    def work_dir(self, stage: str) -> Path:
        d = self.root / "_work" / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def __contains__(self, artifact_id: str) -> bool:
        return (self.path(artifact_id) / MANIFEST).exists()

    def ids(self) -> list[str]:
        return sorted(p.parent.name for p in self.root.glob(f"*/{MANIFEST}"))

    def manifest(self, artifact_id: str) -> dict:
        p = self.path(artifact_id) / MANIFEST
        if not p.exists():
            raise RegistryError(f"missing artifact {artifact_id!r}")
        return json.loads(p.read_text(encoding="utf-8"))

    def content_hash(self, artifact_id: str) -> str:
        return self.manifest(artifact_id)["content_hash"]

    def begin(self, artifact_id: str) -> Path:
        """Fresh staging directory; publish with :meth:`commit`."""
        if artifact_id in self:
            raise RegistryError(f"artifact {artifact_id!r} already exists and is immutable")
        d = self.root / "_staging" / artifact_id
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        return d

    def commit(self, artifact_id: str, kind: str, producer: str, meta: dict | None = None) -> dict:
        if kind not in KINDS:
            raise RegistryError(f"unknown artifact kind {kind!r}")
        staging = self.root / "_staging" / artifact_id
        files = {p.name: file_sha256(p) for p in sorted(staging.iterdir()) if p.name != MANIFEST}
        content = hashlib.sha256(json.dumps(files, sort_keys=True).encode()).hexdigest()
        manifest = {"id": artifact_id, "kind": kind, "producer": producer, "files": files,
                    "content_hash": content, "meta": meta or {}}
        write_json_atomic(staging / MANIFEST, manifest)
        if self.path(artifact_id).exists():
            shutil.rmtree(self.path(artifact_id))   # a half-published leftover without manifest
        os.replace(staging, self.path(artifact_id))
        return manifest

    def check_producer(self, artifact_id: str, producer: str) -> bool:
        """True if the artifact exists and was made by ``producer``; error on conflict."""
        if artifact_id not in self:
            return False
        if self.manifest(artifact_id)["producer"] != producer:
            raise RegistryError(f"artifact {artifact_id!r} exists with a different producer; "
                                f"refusing to overwrite (use a fresh registry directory)")
        return True

    # -- typed access ----------------------------------------------------------------

    def put_corpus(self, artifact_id: str, c: Corpus, producer: str, meta: dict | None = None) -> dict:
        d = self.begin(artifact_id)
        c.save(d / "corpus.txt")
        return self.commit(artifact_id, "corpus", producer, {"lang": c.lang, "sentences": len(c), **(meta or {})})

    def put_parallel(self, artifact_id: str, pc: ParallelCorpus, producer: str, meta: dict | None = None) -> dict:
        d = self.begin(artifact_id)
        Corpus(pc.src_lang, pc.sources).save(d / "src.txt")
        Corpus(pc.tgt_lang, pc.targets).save(d / "tgt.txt")
        return self.commit(artifact_id, "parallel", producer,
                           {"src": pc.src_lang, "tgt": pc.tgt_lang, "pairs": len(pc), **(meta or {})})

    def kind(self, artifact_id: str) -> str:
        return self.manifest(artifact_id)["kind"]

    def corpus(self, artifact_id: str) -> Corpus:
        m = self.manifest(artifact_id)
        if m["kind"] != "corpus":
            raise RegistryError(f"{artifact_id!r} is a {m['kind']}, not a monolingual corpus")
        return ingest(self.path(artifact_id) / "corpus.txt", m["meta"]["lang"])

    def parallel(self, artifact_id: str) -> ParallelCorpus:
        m = self.manifest(artifact_id)
        if m["kind"] != "parallel":
            raise RegistryError(f"{artifact_id!r} is a {m['kind']}, not a parallel corpus")
        d = self.path(artifact_id)
        src, tgt = ingest(d / "src.txt", m["meta"]["src"]), ingest(d / "tgt.txt", m["meta"]["tgt"])
        # ingest drops blank lines; parallel files never contain any
        return ParallelCorpus(m["meta"]["src"], m["meta"]["tgt"], list(zip(src.sentences, tgt.sentences)))

    def bpe(self, artifact_id: str) -> BpeModel:
        key = ("bpe", artifact_id)
        if key not in self._cache:
            self._cache[key] = BpeModel.load(self.path(artifact_id) / "bpe.txt")
        return self._cache[key]

    def checkpoint(self, artifact_id: str):
        if self.kind(artifact_id) != "checkpoint":
            raise RegistryError(f"{artifact_id!r} is not a checkpoint")
        params, header, _ = load_checkpoint(self.path(artifact_id) / "model.ck")
        return params, header
