"""Corpus-level BLEU, TER and CharacTER.

All three are pure functions of (hypotheses, references).  Sentence-level
statistics are integers or are summed with ``math.fsum``, so corpus scores
do not depend on the order of the sentence pairs.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

import regex
from rapidfuzz.distance import Levenshtein

MAX_ORDER = 4
MAX_SHIFT_SIZE = 10
# TER searches shifts exactly (up to EXACT_DEPTH moves) when both sides are this short
EXACT_MAX_WORDS = 8
EXACT_DEPTH = 3

# mteval-v14 "international" tokenization, applied to hyps and refs alike.
_INTL_RULES = [
    (regex.compile(r"(\P{N})(\p{P})"), r"\1 \2 "),
    (regex.compile(r"(\p{P})(\P{N})"), r" \1 \2"),
    (regex.compile(r"(\p{S})"), r" \1 "),
]


class MetricError(ValueError):
    pass


def tokenize_intl(line: str) -> list[str]:
    for pattern, repl in _INTL_RULES:
        line = pattern.sub(repl, line)
    return line.split()


def _check(hyps: Sequence[str], refs: Sequence[str]) -> None:
    if len(hyps) != len(refs):
        raise MetricError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not refs:
        raise MetricError("empty test set")
    for i, r in enumerate(refs):
        if not r.strip():
            raise MetricError(f"reference {i} is empty")


# -- BLEU -------------------------------------------------------------------

def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hyp: str, ref: str, cased: bool = True):
    """Clipped matches and totals per order, plus hyp/ref lengths."""
    if not cased:
        hyp, ref = hyp.lower(), ref.lower()
    h, r = tokenize_intl(hyp), tokenize_intl(ref)
    matches, totals = [], []
    for n in range(1, MAX_ORDER + 1):
        hc, rc = _ngram_counts(h, n), _ngram_counts(r, n)
        matches.append(sum(min(c, rc[g]) for g, c in hc.items()))
        totals.append(max(len(h) - n + 1, 0))
    return matches, totals, len(h), len(r)


def bleu(hyps: Sequence[str], refs: Sequence[str], cased: bool = True) -> float:
    """Corpus BLEU in [0, 100], no smoothing.

    Orders for which no hypothesis has any n-gram (every hypothesis shorter
    than ``n`` tokens) are left out of the geometric mean; any other zero
    precision makes the score 0.
    """
    _check(hyps, refs)
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        m, t, hl, rl = bleu_stats(h, r, cased)
        for n in range(MAX_ORDER):
            matches[n] += m[n]
            totals[n] += t[n]
        hyp_len += hl
        ref_len += rl
    if hyp_len == 0:
        return 0.0
    log_p = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        if m == 0:
            return 0.0
        log_p.append(math.log(m / t))
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(sum(log_p) / len(log_p))


# -- edit distance with shifts ------------------------------------------------

def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit costs (strings or token lists)."""
    return Levenshtein.distance(a, b)


def _shift_candidates(hyp: list[str], ref: list[str]):
    """Yield (start, length, dest) block moves in search order.

    A hypothesis block ``hyp[start:start+length]`` (at most MAX_SHIFT_SIZE
    words) is movable only if the same word sequence occurs somewhere in the
    reference.  ``dest`` is the index at which the block starts after the
    move; every destination that changes the hypothesis is tried.
    """
    n = len(hyp)
    ref_blocks = set()
    for length in range(1, min(MAX_SHIFT_SIZE, len(ref)) + 1):
        for j in range(len(ref) - length + 1):
            ref_blocks.add(tuple(ref[j:j + length]))
    for start in range(n):
        for length in range(1, min(MAX_SHIFT_SIZE, n - start) + 1):
            if tuple(hyp[start:start + length]) not in ref_blocks:
                break
            for dest in range(n - length + 1):
                if dest != start:
                    yield start, length, dest


def apply_shift(words: list, start: int, length: int, dest: int) -> list:
    block = words[start:start + length]
    rest = words[:start] + words[start + length:]
    return rest[:dest] + block + rest[dest:]


def greedy_shifts(hyp: list[str], ref: list[str], distance):
    """Greedy shift search used by TER and CharacTER.

    ``distance(hyp_words, ref_words)`` is the edit distance being reduced.
    Each round takes the candidate with the largest reduction (ties: the
    first candidate in (start, length, dest) order) and stops when no
    shift reduces the distance.  Returns (shifted hyp, n_shifts, distance).
    """
    current = distance(hyp, ref)
    shifts = 0
    while current > 0:
        best_gain, best = 0, None
        for start, length, dest in _shift_candidates(hyp, ref):
            cand = apply_shift(hyp, start, length, dest)
            gain = current - distance(cand, ref)
            if gain > best_gain:
                best_gain, best = gain, cand
        if best is None:
            break
        hyp = best
        current -= best_gain
        shifts += 1
    return hyp, shifts, current


def exact_shift_cost(hyp: list[str], ref: list[str], depth: int = EXACT_DEPTH) -> int:
    """min over at most ``depth`` arbitrary block moves of (moves + edit distance).

    Breadth-first over distinct hypotheses.  Moves never change the bag of
    words, so ``max(len) - |bag overlap|`` bounds the edit distance from
    below and prunes levels that cannot improve.
    """
    best = edit_distance(hyp, ref)
    overlap = sum((Counter(hyp) & Counter(ref)).values())
    floor = max(len(hyp), len(ref)) - overlap
    frontier, seen = [tuple(hyp)], {tuple(hyp)}
    for k in range(1, depth + 1):
        if k + floor >= best:
            break
        nxt = []
        for h in frontier:
            n = len(h)
            for start in range(n):
                for length in range(1, n - start + 1):
                    for dest in range(n - length + 1):
                        if dest == start:
                            continue
                        moved = tuple(apply_shift(list(h), start, length, dest))
                        if moved in seen:
                            continue
                        seen.add(moved)
                        nxt.append(moved)
                        best = min(best, k + edit_distance(moved, ref))
        frontier = nxt
    return best


def ter_edits(hyp: str, ref: str, cased: bool = True) -> tuple[int, int]:
    """(number of edits, number of reference words) for one pair.

    Short pairs get the exact minimum over up to three shifts; longer ones
    the greedy shift search.
    """
    if not cased:
        hyp, ref = hyp.lower(), ref.lower()
    h, r = hyp.split(), ref.split()
    if max(len(h), len(r)) <= EXACT_MAX_WORDS:
        return exact_shift_cost(h, r), len(r)
    _, shifts, dist = greedy_shifts(h, r, edit_distance)
    return shifts + dist, len(r)


def ter(hyps: Sequence[str], refs: Sequence[str], cased: bool = True) -> float:
    """Corpus TER: total edits over total reference words (a fraction, not %)."""
    _check(hyps, refs)
    edits = words = 0
    for h, r in zip(hyps, refs):
        e, n = ter_edits(h, r, cased)
        edits += e
        words += n
    return edits / words


# -- CharacTER --------------------------------------------------------------------

def _char_distance(hyp_words: list[str], ref_words: list[str]) -> int:
    return edit_distance(" ".join(hyp_words), " ".join(ref_words))


def character_sentence(hyp: str, ref: str, cased: bool = True) -> float:
    """Shift cost plus character edit distance, over hypothesis length.

    An empty hypothesis scores ``len(ref)`` (the edit cost divided by 1).
    """
    if not cased:
        hyp, ref = hyp.lower(), ref.lower()
    h, r = hyp.split(), ref.split()
    hyp_chars = len(" ".join(h))
    if hyp_chars == 0:
        return float(len(" ".join(r)))
    _, shifts, dist = greedy_shifts(h, r, _char_distance)
    return (shifts + dist) / hyp_chars


def character(hyps: Sequence[str], refs: Sequence[str], cased: bool = True) -> float:
    _check(hyps, refs)
    scores = [character_sentence(h, r, cased) for h, r in zip(hyps, refs)]
    return math.fsum(scores) / len(scores)
