"""Monolingual and parallel corpora, language-id cleaning and splitting."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_SPACE_RUN = re.compile(r"\s+")

LID_FORMAT_VERSION = 1


class CorpusError(ValueError):
    pass


def normalize(line: str) -> str:
    return _SPACE_RUN.sub(" ", line.strip())


@dataclass
class Corpus:
    lang: str
    sentences: list[str] = field(default_factory=list)

    def __post_init__(self):
        for i, s in enumerate(self.sentences):
            if not s or "\n" in s or "\r" in s:
                raise CorpusError(f"sentence {i} is empty or contains a line break")

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def save(self, path) -> None:
        text = "".join(s + "\n" for s in self.sentences)
        Path(path).write_text(text, encoding="utf-8", newline="\n")


@dataclass
class ParallelCorpus:
    src_lang: str
    tgt_lang: str
    pairs: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        for i, (s, t) in enumerate(self.pairs):
            if not s or not t:
                raise CorpusError(f"pair {i} has an empty side")

    def __len__(self):
        return len(self.pairs)

    @property
    def sources(self) -> list[str]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[str]:
        return [t for _, t in self.pairs]

    def reversed(self) -> "ParallelCorpus":
        return ParallelCorpus(self.tgt_lang, self.src_lang, [(t, s) for s, t in self.pairs])

    def save(self, prefix) -> None:
        """Write ``<prefix>.<src_lang>`` and ``<prefix>.<tgt_lang>``."""
        Corpus(self.src_lang, self.sources).save(f"{prefix}.{self.src_lang}")
        Corpus(self.tgt_lang, self.targets).save(f"{prefix}.{self.tgt_lang}")

    @classmethod
    def load(cls, prefix, src_lang: str, tgt_lang: str) -> "ParallelCorpus":
        src = _read_lines(Path(f"{prefix}.{src_lang}"))
        tgt = _read_lines(Path(f"{prefix}.{tgt_lang}"))
        if len(src) != len(tgt):
            raise CorpusError(
                f"parallel files have {len(src)} and {len(tgt)} lines")
        pairs = []
        for s, t in zip(src, tgt):
            s, t = normalize(s), normalize(t)
            if s and t:
                pairs.append((s, t))
        return cls(src_lang, tgt_lang, pairs)


def _read_lines(path: Path) -> list[str]:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CorpusError(f"cannot read {path}: {e.strerror or e}") from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorpusError(f"{path}: invalid UTF-8 at byte offset {e.start}") from e
    return text.split("\n") if text else []


def ingest(path, lang: str) -> Corpus:
    """Read a one-sentence-per-line UTF-8 file, dropping blank lines."""
    sentences = []
    for line in _read_lines(Path(path)):
        line = normalize(line)
        if line:
            sentences.append(line)
    return Corpus(lang, sentences)


# -- language identification ------------------------------------------------

def _ngrams(text: str, order: int) -> list[str]:
    return [text[i:i + order] for i in range(len(text) - order + 1)]


@dataclass
class _Table:
    counts: dict[str, int]
    total: int

    def log_probs(self, smoothing: float):
        denom = self.total + smoothing * (len(self.counts) + 1)
        known = {g: math.log((c + smoothing) / denom) for g, c in self.counts.items()}
        return known, math.log(smoothing / denom)


class LidModel:
    """Character n-gram Naive Bayes language identifier.

    Each language has an order-``n`` table and a unigram table used for
    sentences shorter than ``n`` characters.  Probabilities are additively
    smoothed; all unseen n-grams share a single reserved mass, so every
    per-language distribution sums to one.
    """

    def __init__(self, ngram_order: int, smoothing: float,
                 tables: dict[str, _Table], unigrams: dict[str, _Table]):
        self.ngram_order = ngram_order
        self.smoothing = smoothing
        self.tables = tables
        self.unigrams = unigrams
        self._logp = {lang: t.log_probs(smoothing) for lang, t in tables.items()}
        self._logp1 = {lang: t.log_probs(smoothing) for lang, t in unigrams.items()}

    @property
    def languages(self) -> list[str]:
        return sorted(self.tables)

    def scores(self, sentence: str) -> dict[str, float]:
        sentence = normalize(sentence)
        if len(sentence) >= self.ngram_order:
            feats, logp = _ngrams(sentence, self.ngram_order), self._logp
        else:
            feats, logp = list(sentence), self._logp1
        out = {}
        for lang in self.languages:
            known, unseen = logp[lang]
            out[lang] = math.fsum(known.get(g, unseen) for g in feats)
        return out

    def classify(self, sentence: str) -> tuple[str, float]:
        """Return ``(best language, log-likelihood margin over runner-up)``.

        Ties go to the lexicographically smallest language id.
        """
        scores = self.scores(sentence)
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        best, runner = ranked[0], ranked[1]
        return best[0], best[1] - runner[1]

    # -- serialization -------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"nmtlab-lid {LID_FORMAT_VERSION}",
                 f"order {self.ngram_order}",
                 f"smoothing {self.smoothing!r}",
                 f"languages {len(self.tables)}"]
        for lang in self.languages:
            for kind, table in (("ngrams", self.tables[lang]), ("unigrams", self.unigrams[lang])):
                lines.append(f"{kind} {json.dumps(lang)} {table.total} {len(table.counts)}")
                for g in sorted(table.counts):
                    lines.append(f"{table.counts[g]}\t{json.dumps(g, ensure_ascii=False)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "LidModel":
        lines = text.rstrip("\n").split("\n")
        if lines[0] != f"nmtlab-lid {LID_FORMAT_VERSION}":
            raise CorpusError("not a version-1 LID model file")
        order = int(lines[1].split()[1])
        smoothing = float(lines[2].split()[1])
        n_langs = int(lines[3].split()[1])
        tables, unigrams = {}, {}
        pos = 4
        for _ in range(2 * n_langs):
            head = lines[pos]
            kind, rest = head.split(" ", 1)
            lang_json, total, n = rest.rsplit(" ", 2)
            counts = {}
            for line in lines[pos + 1: pos + 1 + int(n)]:
                c, g = line.split("\t", 1)
                counts[json.loads(g)] = int(c)
            target = tables if kind == "ngrams" else unigrams
            target[json.loads(lang_json)] = _Table(counts, int(total))
            pos += 1 + int(n)
        return cls(order, smoothing, tables, unigrams)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LidModel":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise CorpusError(f"cannot read LID model {path}: {e.strerror or e}") from e
        return cls.loads(text)


def train_lid(labeled: Sequence[tuple[Corpus, str]], order: int = 3,
              smoothing: float = 0.1) -> LidModel:
    if order < 1:
        raise CorpusError("n-gram order must be >= 1")
    tables, unigrams = {}, {}
    by_lang: dict[str, list[str]] = {}
    for corpus, lang in labeled:
        if len(corpus) == 0:
            raise CorpusError(f"empty training corpus for language {lang!r}")
        by_lang.setdefault(lang, []).extend(corpus.sentences)
    if len(by_lang) < 2:
        raise CorpusError("language identification needs at least two languages")
    for lang, sentences in by_lang.items():
        grams: Counter = Counter()
        chars: Counter = Counter()
        for s in sentences:
            s = normalize(s)
            grams.update(_ngrams(s, order))
            chars.update(s)
        tables[lang] = _Table(dict(grams), sum(grams.values()))
        unigrams[lang] = _Table(dict(chars), sum(chars.values()))
    return LidModel(order, smoothing, tables, unigrams)


def filter_by_language(c: Corpus, m: LidModel, lang: str,
                       min_margin: float = 0.0) -> Corpus:
    kept, _ = partition_by_language(c, m, lang, min_margin)
    return kept


def partition_by_language(c: Corpus, m: LidModel, lang: str,
                          min_margin: float = 0.0) -> tuple[Corpus, Corpus]:
    """Split ``c`` into (kept, rejected), each in original order."""
    if lang not in m.tables:
        raise CorpusError(f"language {lang!r} unknown to the LID model "
                          f"(known: {', '.join(m.languages)})")
    kept, rejected = [], []
    for s in c.sentences:
        best, margin = m.classify(s)
        (kept if best == lang and margin >= min_margin else rejected).append(s)
    return Corpus(c.lang, kept), Corpus(c.lang, rejected)


# -- parallel data ------------------------------------------------------------

def pair_synthetic(source: Corpus, translations: Corpus | Sequence[str]):
    """Pair ``source[i]`` with ``translations[i]``.

    Returns ``(ParallelCorpus, n_dropped)``; pairs whose translation is
    empty are dropped and counted.
    """
    src_lang = source.lang
    if isinstance(translations, Corpus):
        tgt_lang, hyps = translations.lang, translations.sentences
    else:
        tgt_lang, hyps = None, list(translations)
    if len(source) != len(hyps):
        raise CorpusError(f"length mismatch: {len(source)} sources vs {len(hyps)} translations")
    pairs, dropped = [], 0
    for s, t in zip(source.sentences, hyps):
        t = normalize(t)
        if t:
            pairs.append((s, t))
        else:
            dropped += 1
    return ParallelCorpus(src_lang, tgt_lang or "", pairs), dropped


def split(c: ParallelCorpus, dev_n: int, test_n: int, seed: int):
    """Random disjoint (train, dev, test) split; each part keeps corpus order."""
    n = len(c)
    if dev_n < 0 or test_n < 0 or dev_n + test_n >= n:
        raise CorpusError(f"cannot take dev={dev_n} and test={test_n} from {n} pairs "
                          "and leave a training set")
    perm = np.random.default_rng(seed).permutation(n)
    dev_idx = np.sort(perm[:dev_n])
    test_idx = np.sort(perm[dev_n:dev_n + test_n])
    train_idx = np.sort(perm[dev_n + test_n:])

    def take(idx):
        return ParallelCorpus(c.src_lang, c.tgt_lang, [c.pairs[i] for i in idx])

    return take(train_idx), take(dev_idx), take(test_idx)


def read_sentences(lines: Iterable[str]) -> list[str]:
    return [s for s in (normalize(line) for line in lines) if s]
