"""Greedy and beam-search decoding against frozen parameters."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .config import DecodeConfig
from .layers import softmax
from .transformer import TransformerParams, _pad, decoder_fwd, encoder_fwd, project
from ..subword import BOS_ID, EOS_ID


def encoder_input(ids: Sequence[int]) -> list[int]:
    return list(ids) + [EOS_ID]


def length_penalty(n: int, alpha: float) -> float:
    return ((5.0 + n) / 6.0) ** alpha


def _log_softmax(z):
    z = z.astype(np.float64)
    z = z - z.max(-1, keepdims=True)
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


def _steps(p: TransformerParams, max_len: int) -> int:
    # the decoder input (BOS + generated tokens) must fit in the position table
    return max(1, min(max_len, p.cfg.max_len - 1))


def greedy_batch(p: TransformerParams, srcs: Sequence[Sequence[int]],
                 src_langs: Sequence[int], tgt_langs: Sequence[int],
                 max_len: int = 64, min_len: int = 0, rng=None,
                 temperature: float = 1.0) -> list[list[int]]:
    """Greedy decoding of a batch; outputs exclude BOS and EOS.

    ``min_len`` suppresses EOS for the first ``min_len`` steps.  With
    ``rng`` given, tokens are sampled from softmax(logits / temperature)
    instead of taking the argmax.
    """
    if not srcs:
        return []
    cfg, P = p.cfg, p.tensors
    src_ids = _pad([encoder_input(s) for s in srcs], cfg.max_len)
    enc, _ = encoder_fwd(P, cfg, src_ids, np.asarray(src_langs))
    tl = np.asarray(tgt_langs)
    B = len(srcs)
    ys = np.full((B, 1), BOS_ID, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    for step in range(_steps(p, max_len)):
        dec, _ = decoder_fwd(P, cfg, ys, tl, enc, src_ids)
        logits = project(P, cfg, dec[:, -1])
        if step < min_len:
            logits[:, EOS_ID] = -np.inf
        if rng is None:
            nxt = logits.argmax(-1)
        else:
            probs = softmax(logits.astype(np.float64) / temperature, axis=-1)
            u = rng.random(B)[:, None]
            nxt = np.minimum((probs.cumsum(-1) < u).sum(-1), probs.shape[-1] - 1)
        nxt[done] = EOS_ID
        ys = np.concatenate([ys, nxt[:, None]], axis=1)
        done |= nxt == EOS_ID
        if done.all():
            break
    out = []
    for row in ys[:, 1:]:
        toks = row.tolist()
        if EOS_ID in toks:
            toks = toks[:toks.index(EOS_ID)]
        out.append(toks)
    return out


def beam_search(p: TransformerParams, src: Sequence[int], src_lang: int, tgt_lang: int,
                beam_size: int, alpha: float, max_len: int = 64, min_len: int = 0):
    """Beam search scored by sum of log-probs / ((5 + n) / 6) ** alpha.

    ``n`` counts generated tokens including EOS.  At each step the 2k best
    expansions are ranked; EOS expansions inside the top k finish a
    hypothesis, the best non-EOS ones stay alive.  Search stops once no
    alive hypothesis can beat the best finished one (valid for alpha >= 0).
    Returns ``(tokens, normalized score)``.
    """
    cfg, P = p.cfg, p.tensors
    k = beam_size
    src_ids = _pad([encoder_input(src)], cfg.max_len)
    enc, _ = encoder_fwd(P, cfg, src_ids, np.array([src_lang]))
    steps = _steps(p, max_len)
    alive = [[BOS_ID]]
    alive_lp = np.zeros(1)
    finished: list[tuple[float, list[int]]] = []
    for step in range(steps):
        n_alive = len(alive)
        ys = np.array(alive, dtype=np.int64)
        dec, _ = decoder_fwd(P, cfg, ys, np.full(n_alive, tgt_lang),
                             np.repeat(enc, n_alive, axis=0), np.repeat(src_ids, n_alive, axis=0))
        logp = _log_softmax(project(P, cfg, dec[:, -1]))
        if step < min_len:
            logp[:, EOS_ID] = -np.inf
        cand = (alive_lp[:, None] + logp).reshape(-1)
        V = logp.shape[1]
        n_cand = min(2 * k, cand.size)
        top = np.argpartition(-cand, n_cand - 1)[:n_cand]
        # stable order: score desc, then flat index asc
        top = top[np.lexsort((top, -cand[top]))]
        new_alive, new_lp = [], []
        for rank, flat in enumerate(top):
            score = cand[flat]
            if not np.isfinite(score):
                continue
            b, tok = divmod(int(flat), V)
            if tok == EOS_ID:
                if rank < k:
                    n = step + 1
                    finished.append((score / length_penalty(n, alpha), alive[b][1:]))
            elif len(new_alive) < k:
                new_alive.append(alive[b] + [tok])
                new_lp.append(score)
        alive, alive_lp = new_alive, np.array(new_lp)
        if not alive:
            break
        if finished:
            best_done = max(s for s, _ in finished)
            bound = alive_lp.max() / length_penalty(steps, alpha)
            if best_done >= bound:
                break
    if not finished:
        for lp, hyp in zip(alive_lp, alive):
            finished.append((lp / length_penalty(len(hyp) - 1, alpha), hyp[1:]))
    best = max(finished, key=lambda sh: sh[0])
    return best[1], float(best[0])


def translate(p: TransformerParams, src: Sequence[int], src_lang: int, tgt_lang: int,
              dc: DecodeConfig = DecodeConfig()) -> list[int]:
    if len(src) == 0:
        raise ValueError("cannot translate an empty source")
    if dc.mode == "sample":
        raise ValueError("sampling needs a random generator; use translate_batch(..., rng=)")
    if dc.mode == "greedy":
        return greedy_batch(p, [src], [src_lang], [tgt_lang], dc.max_len)[0]
    toks, _ = beam_search(p, src, src_lang, tgt_lang, dc.beam_size, dc.length_alpha, dc.max_len)
    return toks


def translate_batch(p: TransformerParams, srcs: Sequence[Sequence[int]], src_lang: int,
                    tgt_lang: int, dc: DecodeConfig = DecodeConfig(),
                    batch_size: int = 64, rng=None) -> list[list[int]]:
    """Translate many sources; order of the output matches the input.

    Sample mode needs ``rng``.
    """
    out: list[list[int]] = []
    if dc.mode == "sample" and rng is None:
        raise ValueError("sampling needs a random generator")
    if dc.mode in ("greedy", "sample"):
        order = sorted(range(len(srcs)), key=lambda i: len(srcs[i]))
        res: dict[int, list[int]] = {}
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            hyps = greedy_batch(p, [srcs[i] for i in idx], [src_lang] * len(idx),
                                [tgt_lang] * len(idx), dc.max_len,
                                rng=rng if dc.mode == "sample" else None, temperature=dc.temperature)
            res.update(zip(idx, hyps))
        return [res[i] for i in range(len(srcs))]
    for s in srcs:
        out.append(translate(p, s, src_lang, tgt_lang, dc))
    return out
