"""Joint byte-pair-encoding vocabulary shared by both languages.

Words are split into characters with an end-of-word marker, the most
frequent adjacent symbol pair is merged repeatedly, and the learned merge
list is replayed at application time.  Output tokens follow the fastBPE
convention: every non-final subword of a word carries a ``@@`` suffix, so

    "lower newest" -> ["low@@", "er", "new@@", "est"]

and decoding is a plain ``" ".join(tokens).replace("@@ ", "")``.
"""

from __future__ import annotations

import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

FORMAT_VERSION = 1
MARKER = "@@"
EOW = "</w>"

PAD, UNK, BOS, EOS, MASK = "<pad>", "<unk>", "<s>", "</s>", "<mask>"
SPECIALS = (PAD, UNK, BOS, EOS, MASK)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, MASK_ID = range(len(SPECIALS))

_STRIP_ON_DECODE = {PAD, BOS, EOS}


class BpeError(ValueError):
    pass


def _surface(symbol: str) -> str:
    """Map an internal symbol to its output token form."""
    if symbol.endswith(EOW):
        return symbol[: -len(EOW)]
    return symbol + MARKER


@dataclass
class BpeModel:
    merges: list[tuple[str, str]]
    alphabet: list[str]
    specials: tuple[str, ...] = SPECIALS
    vocab: list[str] = field(init=False)
    _ranks: dict = field(init=False, repr=False)
    _index: dict = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.alphabet = sorted(set(self.alphabet))
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        if len(self._ranks) != len(self.merges):
            raise BpeError("duplicate merge in merge list")
        vocab = list(self.specials)
        seen = set(vocab)
        for ch in self.alphabet:
            for tok in (ch + MARKER, ch):
                if tok not in seen:
                    seen.add(tok)
                    vocab.append(tok)
        for left, right in self.merges:
            tok = _surface(left + right)
            if tok not in seen:
                seen.add(tok)
                vocab.append(tok)
        self.vocab = vocab
        self._index = {tok: i for i, tok in enumerate(vocab)}
        self._cache = {}

    def __len__(self):
        return len(self.vocab)

    @property
    def alphabet_set(self) -> frozenset:
        return frozenset(self.alphabet)

    def token_id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise BpeError(f"unknown token {token!r}") from None

    def segment_word(self, word: str) -> list[str]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        alphabet = self.alphabet_set
        if any(ch not in alphabet for ch in word):
            out = [UNK]
        else:
            symbols = list(word[:-1]) + [word[-1] + EOW]
            ranks = self._ranks
            while len(symbols) > 1:
                best = None
                for i in range(len(symbols) - 1):
                    r = ranks.get((symbols[i], symbols[i + 1]))
                    if r is not None and (best is None or r < best):
                        best = r
                if best is None:
                    break
                left, right = self.merges[best]
                merged = []
                i = 0
                while i < len(symbols):
                    if i < len(symbols) - 1 and symbols[i] == left and symbols[i + 1] == right:
                        merged.append(left + right)
                        i += 2
                    else:
                        merged.append(symbols[i])
                        i += 1
                symbols = merged
            out = [_surface(s) for s in symbols]
        self._cache[word] = out
        return out

    # -- ids ---------------------------------------------------------------

    def encode(self, sentence: str) -> list[int]:
        return [self._index[t] for t in apply_bpe(self, sentence)]

    def decode_ids(self, ids: Iterable[int]) -> str:
        tokens = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.vocab):
                raise BpeError(f"unknown token id {i}")
            tokens.append(self.vocab[i])
        return decode_bpe(self, tokens)

    # -- serialization -----------------------------------------------------

    def dumps(self) -> str:
        lines = [f"nmtlab-bpe {FORMAT_VERSION} marker={MARKER}"]
        lines.append(f"specials {len(self.specials)}")
        lines.extend(self.specials)
        lines.append(f"alphabet {len(self.alphabet)}")
        lines.extend(self.alphabet)
        lines.append(f"merges {len(self.merges)}")
        lines.extend(f"{a} {b}" for a, b in self.merges)
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "BpeModel":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        pos = 0

        def block(name):
            nonlocal pos
            head = lines[pos].split(" ")
            if len(head) != 2 or head[0] != name:
                raise BpeError(f"line {pos + 1}: expected '{name} <count>' block header")
            n = int(head[1])
            items = lines[pos + 1: pos + 1 + n]
            if len(items) != n:
                raise BpeError(f"truncated '{name}' block")
            pos += 1 + n
            return items

        if not lines:
            raise BpeError("empty model file")
        header = lines[0].split(" ")
        if header[0] != "nmtlab-bpe" or len(header) != 3:
            raise BpeError("not a BPE model file")
        if int(header[1]) != FORMAT_VERSION:
            raise BpeError(f"unsupported BPE model version {header[1]}")
        if header[2] != f"marker={MARKER}":
            raise BpeError(f"unsupported marker convention {header[2]}")
        pos = 1
        specials = tuple(block("specials"))
        alphabet = block("alphabet")
        merges = []
        for line in block("merges"):
            parts = line.split(" ")
            if len(parts) != 2:
                raise BpeError(f"malformed merge line {line!r}")
            merges.append((parts[0], parts[1]))
        if pos != len(lines):
            raise BpeError("trailing data after merges block")
        return cls(merges=merges, alphabet=alphabet, specials=specials)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeModel":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _word_counts(corpora) -> Counter:
    counts: Counter = Counter()
    for corpus in corpora:
        sentences = getattr(corpus, "sentences", corpus)
        for sent in sentences:
            counts.update(sent.split())
    return counts


def learn_bpe(corpora: Sequence, n_merges: int) -> BpeModel:
    """Learn ``n_merges`` merges over the concatenation of ``corpora``.

    Ties between equally frequent pairs go to the lexicographically
    smallest ``(left, right)``.  Learning stops early if no pair is left.
    Pairs whose merged token would collide with a special token are never
    merged.
    """
    if n_merges < 0:
        raise BpeError("n_merges must be >= 0")
    counts = _word_counts(corpora)
    if not counts:
        raise BpeError("cannot learn BPE from an empty corpus")

    words = sorted(counts)
    freqs = [counts[w] for w in words]
    alphabet = sorted({ch for w in words for ch in w})
    seqs = [list(w[:-1]) + [w[-1] + EOW] for w in words]

    pair_counts: dict = defaultdict(int)
    where: dict = defaultdict(set)
    for wi, seq in enumerate(seqs):
        for a, b in zip(seq, seq[1:]):
            pair_counts[(a, b)] += freqs[wi]
            where[(a, b)].add(wi)

    heap = [(-c, a, b) for (a, b), c in pair_counts.items()]
    heapq.heapify(heap)
    forbidden = set(SPECIALS)
    merges: list[tuple[str, str]] = []

    while len(merges) < n_merges and heap:
        negc, a, b = heapq.heappop(heap)
        current = pair_counts.get((a, b), 0)
        if current <= 0:
            continue
        if -negc != current:
            heapq.heappush(heap, (-current, a, b))
            continue
        if _surface(a + b) in forbidden:
            continue
        merges.append((a, b))
        merged = a + b
        touched = set()
        for wi in sorted(where.pop((a, b), ())):
            seq = seqs[wi]
            f = freqs[wi]
            for x, y in zip(seq, seq[1:]):
                pair_counts[(x, y)] -= f
                touched.add((x, y))
            out = []
            i = 0
            while i < len(seq):
                if i < len(seq) - 1 and seq[i] == a and seq[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            seqs[wi] = out
            for x, y in zip(out, out[1:]):
                pair_counts[(x, y)] += f
                where[(x, y)].add(wi)
                touched.add((x, y))
        pair_counts.pop((a, b), None)
        for pair in touched:
            c = pair_counts.get(pair, 0)
            if c > 0:
                heapq.heappush(heap, (-c, pair[0], pair[1]))
            else:
                pair_counts.pop(pair, None)
                where.pop(pair, None)
    return BpeModel(merges=merges, alphabet=alphabet)


def apply_bpe(m: BpeModel, sentence: str) -> list[str]:
    tokens: list[str] = []
    for word in sentence.split():
        tokens.extend(m.segment_word(word))
    return tokens


def decode_bpe(m: BpeModel, tokens: Sequence) -> str:
    """Invert :func:`apply_bpe`; accepts token strings or integer ids."""
    parts = []
    for tok in tokens:
        if not isinstance(tok, str):
            i = int(tok)
            if not 0 <= i < len(m.vocab):
                raise BpeError(f"unknown token id {i}")
            tok = m.vocab[i]
        elif tok not in m._index:
            raise BpeError(f"unknown token {tok!r}")
        if tok in _STRIP_ON_DECODE:
            continue
        parts.append(tok)
    text = " ".join(parts).replace(MARKER + " ", "")
    if text.endswith(MARKER):
        text = text[: -len(MARKER)]
    return text
