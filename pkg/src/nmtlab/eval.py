"""System evaluation: translate a test set and score it with every metric."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

from .corpus import ParallelCorpus
from .metrics import bleu, character, ter
from .model.config import DecodeConfig
from .model.decoding import translate_batch
from .model.transformer import TransformerParams
from .subword import BpeModel

METRICS = ("bleu", "bleu_cased", "ter", "character")


@dataclass(frozen=True)
class EvalReport:
    system: str
    bleu: float
    bleu_cased: float
    ter: float
    character: float
    sentences: int

    def __post_init__(self):
        if not 0.0 <= self.bleu <= 100.0 or not 0.0 <= self.bleu_cased <= 100.0:
            raise ValueError("BLEU must lie in [0, 100]")
        if self.ter < 0 or self.character < 0:
            raise ValueError("TER and CharacTER are non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def score(system: str, hyps: Sequence[str], refs: Sequence[str], cased_edit: bool = True) -> EvalReport:
    """All metrics for text hypotheses.  ``bleu`` is uncased, ``bleu_cased`` cased."""
    return EvalReport(system, bleu(hyps, refs, cased=False), bleu(hyps, refs, cased=True),
                      ter(hyps, refs, cased=cased_edit), character(hyps, refs, cased=cased_edit),
                      len(refs))


def translate_text(params: TransformerParams, bpe: BpeModel, sentences: Sequence[str],
                   src_slot: int, tgt_slot: int, dc: DecodeConfig = DecodeConfig(), rng=None) -> list[str]:
    """Subword-encode, translate and decode.  Overlong sources are truncated.

    ``rng`` is only used (and required) in sample mode.
    """
    limit = params.cfg.max_len - 1
    ids = [bpe.encode(s)[:limit] for s in sentences]
    todo = [i for i, x in enumerate(ids) if x]
    hyps = translate_batch(params, [ids[i] for i in todo], src_slot, tgt_slot, dc, rng=rng)
    out = [""] * len(sentences)
    for i, h in zip(todo, hyps):
        out[i] = bpe.decode_ids(h)
    return out


def evaluate_system(params: TransformerParams, test: ParallelCorpus, dc: DecodeConfig, bpe: BpeModel,
                    src_slot: int = 0, tgt_slot: int = 1, system: str = "system") -> EvalReport:
    hyps = translate_text(params, bpe, test.sources, src_slot, tgt_slot, dc)
    return score(system, hyps, test.targets)


def format_table(reports: Sequence[EvalReport], metrics: Sequence[str] = METRICS) -> str:
    heads = {"bleu": "BLEU", "bleu_cased": "BLEU-cased", "ter": "TER", "character": "CharacTER"}
    width = max([len("system")] + [len(r.system) for r in reports])
    lines = ["  ".join(["system".ljust(width)] + [heads[m].rjust(10) for m in metrics] + ["sents".rjust(6)])]
    for r in reports:
        cells = []
        for m in metrics:
            v = getattr(r, m)
            cells.append((f"{v:.2f}" if m.startswith("bleu") else f"{v:.4f}").rjust(10))
        lines.append("  ".join([r.system.ljust(width)] + cells + [str(r.sentences).rjust(6)]))
    return "\n".join(lines)
