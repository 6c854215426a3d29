"""Synthetic language families for desk-scale experiments.

A family is a shared "concept" grammar rendered into several languages.
Every language maps concepts to surface words through a bijection (names
and numbers are spelled identically everywhere, like in real related
languages) and may swap adjective/noun order, a reordering that moves no
word more than one position.  Sentences of two languages generated from the
same concept sequence are exact translations of each other.

Word choice is driven by sparse collocation preferences (each noun prefers
a few adjectives and verbs, each verb a few objects, ...), so a word's
identity is recoverable from its contexts alone, which is what makes
translation learnable without parallel data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, ParallelCorpus

CLASS_SIZES = {"NOUN": 30, "ADJ": 14, "VERB": 20, "DET": 4, "PREP": 6, "ADV": 6,
               "NAME": 10, "NUM": 10}
OPEN_CLASSES = ("NOUN", "ADJ", "VERB", "ADV")
SHARED_CLASSES = ("NAME", "NUM")

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _word(rng, taken: set, syllables: tuple[int, int]) -> str:
    while True:
        n = int(rng.integers(syllables[0], syllables[1] + 1))
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(n))
        if w not in taken:
            taken.add(w)
            return w


@dataclass
class ToyLanguage:
    name: str
    lexicon: dict[int, str]
    adj_after_noun: bool


@dataclass
class ToyFamily:
    """Concept grammar plus its languages."""

    seed: int
    concepts: dict[str, list[int]]
    prefs: dict[str, dict[int, np.ndarray]]
    languages: dict[str, ToyLanguage] = field(default_factory=dict)
    pref_weight: float = 0.85
    zipf: float = 0.0
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, seed: int = 0, n_prefs: int = 3, scale: int = 1, zipf: float = 0.0) -> "ToyFamily":
        """``scale`` multiplies the open-class lexicon sizes.  With ``zipf`` > 0,
        words picked without a collocation preference follow a Zipf law of
        that exponent (rank order is concept order) instead of being uniform.
        """
        if scale < 1 or zipf < 0:
            raise ValueError("scale must be >= 1 and zipf >= 0")
        rng = np.random.default_rng(seed)
        concepts, nxt = {}, 0
        for cls_name, size in CLASS_SIZES.items():
            size *= scale if cls_name in OPEN_CLASSES else 1
            concepts[cls_name] = list(range(nxt, nxt + size))
            nxt += size

        def prefer(src, dst):
            return {c: rng.choice(concepts[dst], size=n_prefs, replace=False) for c in concepts[src]}

        prefs = {
            "NOUN>ADJ": prefer("NOUN", "ADJ"),
            "NOUN>VERB": prefer("NOUN", "VERB"),
            "NAME>VERB": prefer("NAME", "VERB"),
            "VERB>NOUN": prefer("VERB", "NOUN"),
            "VERB>PREP": prefer("VERB", "PREP"),
            "PREP>NOUN": prefer("PREP", "NOUN"),
            "VERB>ADV": prefer("VERB", "ADV"),
            "NOUN>DET": prefer("NOUN", "DET"),
            "NUM>NOUN": prefer("NUM", "NOUN"),
        }
        weights = {}
        if zipf > 0:
            for cls_name, ids in concepts.items():
                w = 1.0 / np.arange(1, len(ids) + 1) ** zipf
                weights[cls_name] = w / w.sum()
        return cls(seed, concepts, prefs, zipf=zipf, weights=weights)

    # -- languages ------------------------------------------------------------

    def add_language(self, name: str, adj_after_noun: bool = False, seed: int | None = None,
                     base: str | None = None, keep: float = 0.0) -> ToyLanguage:
        """Create a language with its own random lexicon.

        With ``base`` set, a fraction ``keep`` of that language's content
        words is reused verbatim (a closely related language).
        """
        rng = np.random.default_rng(self.seed * 1000 + (seed if seed is not None else len(self.languages) + 1))
        taken = {w for lang in self.languages.values() for w in lang.lexicon.values()}
        lexicon = {}
        for cls_name, ids in self.concepts.items():
            for c in ids:
                if cls_name in SHARED_CLASSES:
                    lexicon[c] = self._shared_word(cls_name, c)
                elif base is not None and rng.random() < keep:
                    lexicon[c] = self.languages[base].lexicon[c]
                else:
                    syl = (1, 1) if cls_name in ("DET", "PREP") else (2, 3)
                    lexicon[c] = _word(rng, taken, syl)
        lang = ToyLanguage(name, lexicon, adj_after_noun)
        self.languages[name] = lang
        return lang

    def _shared_word(self, cls_name: str, c: int) -> str:
        i = c - self.concepts[cls_name][0]
        if cls_name == "NUM":
            return str(11 + 7 * i)
        return ["Anna", "Boris", "Clara", "David", "Emil", "Frida", "Gustav", "Hana",
                "Ivo", "Jana"][i]

    # -- sentence generation -------------------------------------------------------

    def _pick(self, rng, cls_name: str, pref_key: str | None = None, given: int | None = None) -> int:
        if pref_key is not None and given is not None and rng.random() < self.pref_weight:
            return int(rng.choice(self.prefs[pref_key][given]))
        if self.zipf > 0:
            return int(rng.choice(self.concepts[cls_name], p=self.weights[cls_name]))
        return int(rng.choice(self.concepts[cls_name]))

    def _noun_phrase(self, rng, noun: int) -> list[tuple[str, int]]:
        det = self._pick(rng, "DET", "NOUN>DET", noun)
        np_ = [("DET", det)]
        if rng.random() < 0.5:
            np_.append(("ADJ", self._pick(rng, "ADJ", "NOUN>ADJ", noun)))
        np_.append(("NOUN", noun))
        return np_

    def sample_concepts(self, rng) -> list[tuple[str, int]]:
        out: list[tuple[str, int]] = []
        r = rng.random()
        if r < 0.25:
            subj = self._pick(rng, "NAME")
            out.append(("NAME", subj))
            verb = self._pick(rng, "VERB", "NAME>VERB", subj)
        elif r < 0.4:
            num = self._pick(rng, "NUM")
            noun = self._pick(rng, "NOUN", "NUM>NOUN", num)
            out += [("NUM", num), ("NOUN", noun)]
            verb = self._pick(rng, "VERB", "NOUN>VERB", noun)
        else:
            noun = self._pick(rng, "NOUN")
            out += self._noun_phrase(rng, noun)
            verb = self._pick(rng, "VERB", "NOUN>VERB", noun)
        out.append(("VERB", verb))
        obj = self._pick(rng, "NOUN", "VERB>NOUN", verb)
        out += self._noun_phrase(rng, obj)
        if rng.random() < 0.5:
            prep = self._pick(rng, "PREP", "VERB>PREP", verb)
            out.append(("PREP", prep))
            out += self._noun_phrase(rng, self._pick(rng, "NOUN", "PREP>NOUN", prep))
        if rng.random() < 0.3:
            out.append(("ADV", self._pick(rng, "ADV", "VERB>ADV", verb)))
        return out

    def render(self, concepts: list[tuple[str, int]], lang: str) -> str:
        L = self.languages[lang]
        seq = list(concepts)
        if L.adj_after_noun:
            i = 0
            while i < len(seq) - 1:
                if seq[i][0] == "ADJ" and seq[i + 1][0] == "NOUN":
                    seq[i], seq[i + 1] = seq[i + 1], seq[i]
                    i += 2
                else:
                    i += 1
        return " ".join(L.lexicon[c] for _, c in seq)

    def monolingual(self, lang: str, n: int, seed: int) -> Corpus:
        rng = np.random.default_rng(seed)
        return Corpus(lang, [self.render(self.sample_concepts(rng), lang) for _ in range(n)])

    def parallel(self, src: str, tgt: str, n: int, seed: int) -> ParallelCorpus:
        rng = np.random.default_rng(seed)
        pairs = []
        for _ in range(n):
            c = self.sample_concepts(rng)
            pairs.append((self.render(c, src), self.render(c, tgt)))
        return ParallelCorpus(src, tgt, pairs)

    def translate_word(self, word: str, src: str, tgt: str) -> str:
        inv = {w: c for c, w in self.languages[src].lexicon.items()}
        return self.languages[tgt].lexicon[inv[word]]
