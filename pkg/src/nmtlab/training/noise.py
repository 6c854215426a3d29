"""Input corruption for masked-LM pre-training and denoising.

Both functions draw from ``numpy.random.default_rng(seed)`` in a fixed,
documented order so a caller can replay the exact random sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..subword import MASK_ID, SPECIALS


@dataclass(frozen=True)
class MaskConfig:
    mask_rate: float = 0.15
    sub_mask: float = 0.8
    sub_random: float = 0.1
    sub_keep: float = 0.1

    def __post_init__(self):
        for v in (self.mask_rate, self.sub_mask, self.sub_random, self.sub_keep):
            if not 0.0 <= v <= 1.0:
                raise ValueError("mask probabilities must lie in [0, 1]")
        if abs(self.sub_mask + self.sub_random + self.sub_keep - 1.0) > 1e-9:
            raise ValueError("sub_mask + sub_random + sub_keep must equal 1")


@dataclass(frozen=True)
class NoiseConfig:
    shuffle_window: int = 3
    drop_prob: float = 0.1
    blank_prob: float = 0.1

    def __post_init__(self):
        if self.shuffle_window < 0:
            raise ValueError("shuffle_window must be >= 0")
        for v in (self.drop_prob, self.blank_prob):
            if not 0.0 <= v < 1.0:
                raise ValueError("noise probabilities must lie in [0, 1)")


def mask_for_mlm(tokens: Sequence[int], mc: MaskConfig, seed, vocab_size: int):
    """Select and corrupt positions for masked-LM training.

    RNG order: ``u = rng.random(n)`` selects positions with ``u < mask_rate``;
    then for every selected position, in increasing order, ``r = rng.random()``
    picks MASK (``r < sub_mask``), a random token (``r < sub_mask + sub_random``,
    drawn as ``rng.integers(len(SPECIALS), vocab_size)``) or keeps the original.

    Returns ``(inputs, positions, targets)``.
    """
    if len(tokens) == 0:
        raise ValueError("cannot mask an empty sequence")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    inputs = list(tokens)
    selected = np.flatnonzero(rng.random(len(tokens)) < mc.mask_rate)
    for i in selected:
        r = rng.random()
        if r < mc.sub_mask:
            inputs[i] = MASK_ID
        elif r < mc.sub_mask + mc.sub_random:
            inputs[i] = int(rng.integers(len(SPECIALS), vocab_size))
    positions = [int(i) for i in selected]
    return inputs, positions, [int(tokens[i]) for i in positions]


def add_noise(tokens: Sequence[int], nc: NoiseConfig, seed) -> list[int]:
    """Local shuffle, word dropout, then blanking with MASK.

    RNG order: ``rng.uniform(0, k + 1, n)`` keys for the shuffle (only when
    ``k > 0``; token i is sorted by ``i + key``, which moves no token more
    than ``k`` places); ``rng.random(n)`` for dropping (dropped when
    ``< drop_prob``; only drawn when ``drop_prob > 0``); if everything was
    dropped, ``rng.integers(n)`` picks the survivor; finally
    ``rng.random(m)`` blanks (when ``blank_prob > 0``).
    """
    n = len(tokens)
    if n == 0:
        return []
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    toks = np.asarray(tokens)
    if nc.shuffle_window > 0:
        keys = np.arange(n) + rng.uniform(0, nc.shuffle_window + 1, n)
        toks = toks[np.argsort(keys, kind="stable")]
    if nc.drop_prob > 0:
        keep = rng.random(n) >= nc.drop_prob
        if not keep.any():
            keep[int(rng.integers(n))] = True
        toks = toks[keep]
    if nc.blank_prob > 0:
        blank = rng.random(len(toks)) < nc.blank_prob
        toks = np.where(blank, MASK_ID, toks)
    return [int(t) for t in toks]
