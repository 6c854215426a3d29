"""Training state and the four objectives: XLM (masked LM), DN, BT and MT.

Every step function performs one optimizer update.  The batch handed to a
step is split into ``accum_steps`` consecutive micro-batches whose
gradients are averaged before the update.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..metrics import bleu
from ..model.config import DecodeConfig
from ..model.decoding import encoder_input, greedy_batch, translate_batch
from ..model.transformer import MLM, MT, MLMExample, MTExample, TransformerParams, loss_and_grads
from ..subword import BOS_ID, EOS_ID
from .noise import MaskConfig, NoiseConfig, add_noise, mask_for_mlm
from .optim import OptimizerConfig, apply_update, init_optimizer_state, lr_at, tree_mean


class TrainingError(RuntimeError):
    pass


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent named random stream derived from one integer seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


@dataclass
class TrainState:
    params: TransformerParams
    oc: OptimizerConfig
    seed: int = 0
    step: int = 0
    opt: dict = field(default_factory=dict)
    rngs: dict = field(default_factory=dict)
    best_score: float | None = None
    best_step: int | None = None
    best_params: TransformerParams | None = None
    last_losses: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.opt:
            self.opt = init_optimizer_state(self.params.tensors, self.oc)

    def rng(self, name: str) -> np.random.Generator:
        if name not in self.rngs:
            self.rngs[name] = stream(self.seed, name)
        return self.rngs[name]

    def reset_optimizer(self, oc: OptimizerConfig | None = None) -> None:
        if oc is not None:
            self.oc = oc
        self.opt = init_optimizer_state(self.params.tensors, self.oc)


def make_mt_example(src: Sequence[int], src_lang: int, tgt: Sequence[int], tgt_lang: int) -> MTExample:
    tgt_in = (BOS_ID, *tgt)
    targets = (*tgt, EOS_ID)
    return MTExample(tuple(encoder_input(src)), src_lang, tgt_in, tgt_lang,
                     tuple(range(len(targets))), targets)


def _chunks(items: list, n: int) -> list[list]:
    n = max(1, min(n, len(items)))
    size, extra = divmod(len(items), n)
    out, start = [], 0
    for i in range(n):
        end = start + size + (1 if i < extra else 0)
        out.append(items[start:end])
        start = end
    return out


def _update(state: TrainState, examples: list, objective: str) -> float:
    if not examples:
        raise TrainingError("empty batch")
    dropout_rng = state.rng("dropout") if state.params.cfg.dropout > 0 else None
    grads, losses, weights = [], [], []
    for micro in _chunks(examples, state.oc.accum_steps):
        loss, g, n = loss_and_grads(state.params, micro, objective, dropout_rng)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite {objective} loss at step {state.step + 1}")
        grads.append(g)
        losses.append(loss)
        weights.append(n)
    g = tree_mean(grads)
    state.step += 1
    apply_update(state.params.tensors, g, state.opt, state.oc, lr_at(state.oc, state.step))
    return float(np.average(losses, weights=weights))


def gradients(state: TrainState, examples: list, objective: str):
    """Accumulated gradients exactly as a step would apply them (no update)."""
    grads = []
    for micro in _chunks(examples, state.oc.accum_steps):
        _, g, _ = loss_and_grads(state.params, micro, objective, None)
        grads.append(g)
    return tree_mean(grads)


# -- objectives ---------------------------------------------------------------------

def mlm_examples(sentences: Sequence[Sequence[int]], langs: Sequence[int], mc: MaskConfig,
                 rng: np.random.Generator, vocab_size: int) -> list[MLMExample]:
    out = []
    for toks, lang in zip(sentences, langs):
        inputs, pos, tgt = mask_for_mlm(toks, mc, rng, vocab_size)
        if pos:
            out.append(MLMExample(tuple(inputs), lang, tuple(pos), tuple(tgt)))
    return out


def xlm_step(state: TrainState, mono_batch: Sequence[Sequence[int]], langs: Sequence[int],
             mc: MaskConfig = MaskConfig()) -> TrainState:
    examples = mlm_examples(mono_batch, langs, mc, state.rng("mask"), state.params.cfg.vocab_size)
    if not examples:
        return state
    state.last_losses["XLM"] = _update(state, examples, MLM)
    return state


def denoising_examples(mono_batch, lang: int, nc: NoiseConfig, rng) -> list[MTExample]:
    return [make_mt_example(add_noise(x, nc, rng), lang, x, lang) for x in mono_batch]


def denoising_step(state: TrainState, mono_batch: Sequence[Sequence[int]], lang: int,
                   nc: NoiseConfig = NoiseConfig()) -> TrainState:
    """Train to reconstruct ``x`` from ``add_noise(x)`` within one language."""
    examples = denoising_examples(mono_batch, lang, nc, state.rng("noise"))
    state.last_losses[f"DN:{lang}"] = _update(state, examples, MT)
    return state


def back_translate(params: TransformerParams, mono_batch, src_lang: int, tgt_lang: int,
                   max_len: int = 64, rng=None, temperature: float = 1.0) -> list[list[int]]:
    """Generate translations with frozen parameters; never empty.

    Greedy unless ``rng`` is given (then sampled at ``temperature``).
    Output length is capped at ``1.5 * longest source + 5`` tokens.
    """
    n = len(mono_batch)
    cap = int(1.5 * max(len(x) for x in mono_batch)) + 5
    return greedy_batch(params, mono_batch, [src_lang] * n, [tgt_lang] * n,
                        min(max_len, cap), min_len=1, rng=rng, temperature=temperature)


def online_bt_examples(params, mono_batch, src_lang: int, tgt_lang: int,
                       dc: DecodeConfig = DecodeConfig(), rng=None) -> list[MTExample]:
    """Pairs (generated tgt -> original src), direction tgt_lang -> src_lang.

    ``dc.mode == "sample"`` draws the generations with ``rng``; any other
    mode decodes greedily.
    """
    if dc.mode == "sample" and rng is None:
        raise ValueError("sampled back-translation needs a random generator")
    limit = params.cfg.max_len - 2
    gen = back_translate(params, mono_batch, src_lang, tgt_lang, dc.max_len,
                         rng if dc.mode == "sample" else None, dc.temperature)
    return [make_mt_example(y[:limit], tgt_lang, x, src_lang) for x, y in zip(mono_batch, gen)]


def online_bt_step(state: TrainState, mono_batch: Sequence[Sequence[int]], src_lang: int,
                   tgt_lang: int, dc: DecodeConfig = DecodeConfig()) -> TrainState:
    rng = state.rng("bt") if dc.mode == "sample" else None
    examples = online_bt_examples(state.params, mono_batch, src_lang, tgt_lang, dc, rng)
    state.last_losses[f"BT:{src_lang}-{tgt_lang}"] = _update(state, examples, MT)
    return state


def mt_step(state: TrainState, parallel_batch: Sequence[tuple], src_lang: int,
            tgt_lang: int) -> TrainState:
    examples = [make_mt_example(s, src_lang, t, tgt_lang) for s, t in parallel_batch]
    state.last_losses[f"MT:{src_lang}-{tgt_lang}"] = _update(state, examples, MT)
    return state


# -- model selection ----------------------------------------------------------------

@dataclass
class DevSet:
    """Dev data already split into subword ids, with text references."""

    src_ids: list
    refs: list
    src_lang: int
    tgt_lang: int


def dev_bleu(params: TransformerParams, devs: Sequence[DevSet], bpe,
             dc: DecodeConfig = DecodeConfig()) -> float:
    """Mean BLEU over the dev directions."""
    scores = []
    for dev in devs:
        hyps = translate_batch(params, dev.src_ids, dev.src_lang, dev.tgt_lang, dc)
        scores.append(bleu([bpe.decode_ids(h) for h in hyps], dev.refs))
    return float(np.mean(scores))


def select_best(state: TrainState, devs: Sequence[DevSet], bpe,
                dc: DecodeConfig = DecodeConfig()) -> TrainState:
    """Snapshot parameters when dev BLEU strictly improves on the best so far."""
    if not devs or any(len(d.src_ids) == 0 for d in devs):
        raise TrainingError("model selection needs a non-empty dev set")
    score = dev_bleu(state.params, devs, bpe, dc)
    state.last_losses["dev_bleu"] = score
    if state.best_score is None or score > state.best_score:
        state.best_score = score
        state.best_step = state.step
        state.best_params = state.params.copy()
    return state
