import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curves import FIXTURE, dn_curve, mt_curve, roundtrip_curve
from nmtlab.model.config import ModelConfig
from nmtlab.model.transformer import MT, init_params, loss_and_grads
from nmtlab.subword import EOS_ID, MASK_ID, SPECIALS
from nmtlab.training.noise import MaskConfig, NoiseConfig, add_noise, mask_for_mlm
from nmtlab.training.optim import (OptimizerConfig, OptimizerError, apply_update, init_optimizer_state,
                                   lr_at, tree_mean)
from nmtlab.training.trainer import (DevSet, TrainState, back_translate, denoising_step, make_mt_example,
                                     mt_step, online_bt_examples, online_bt_step, select_best, stream,
                                     xlm_step)

TINY = ModelConfig(n_layers=1, d_model=16, n_heads=2, d_ff=32, vocab_size=30, max_len=16, n_langs=2,
                   dropout=0.0)


def _state(seed=0, **oc):
    return TrainState(init_params(TINY, seed), OptimizerConfig(**{"base_lr": 1e-3, "warmup_steps": 10, **oc}),
                      seed=seed)


# -- masking -------------------------------------------------------------------------

def test_mask_rate_zero_selects_nothing():
    inputs, pos, tgt = mask_for_mlm([5, 6, 7], MaskConfig(mask_rate=0.0), 1, 30)
    assert (inputs, pos, tgt) == ([5, 6, 7], [], [])


def test_mask_everything():
    toks = list(range(5, 15))
    inputs, pos, tgt = mask_for_mlm(toks, MaskConfig(1.0, 1.0, 0.0, 0.0), 1, 30)
    assert inputs == [MASK_ID] * 10 and pos == list(range(10)) and tgt == toks


def _replay_mask(tokens, mc, seed, vocab):
    """Independent replay of the documented draw order."""
    rng = np.random.default_rng(seed)
    u = rng.random(len(tokens))
    inputs = list(tokens)
    chosen = [i for i in range(len(tokens)) if u[i] < mc.mask_rate]
    for i in chosen:
        r = rng.random()
        if r < mc.sub_mask:
            inputs[i] = MASK_ID
        elif r < mc.sub_mask + mc.sub_random:
            inputs[i] = int(rng.integers(len(SPECIALS), vocab))
    return inputs, chosen


def test_mask_pinned_seed():
    toks = list(range(10, 30))
    inputs, pos, tgt = mask_for_mlm(toks, MaskConfig(), 1234, 100)
    assert (inputs, pos) == _replay_mask(toks, MaskConfig(), 1234, 100)
    assert pos == [5] and inputs[5] == MASK_ID   # frozen from the replay
    assert tgt == [toks[i] for i in pos]


def test_mask_empty_input():
    with pytest.raises(ValueError):
        mask_for_mlm([], MaskConfig(), 0, 30)


@pytest.mark.parametrize("kw", [dict(mask_rate=1.5), dict(sub_mask=0.5, sub_random=0.1, sub_keep=0.1)])
def test_mask_config_validation(kw):
    with pytest.raises(ValueError):
        MaskConfig(**kw)


# -- noise ---------------------------------------------------------------------------

def test_noise_identity():
    assert add_noise([5, 6, 7, 8], NoiseConfig(0, 0.0, 0.0), 3) == [5, 6, 7, 8]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(0, 5), st.integers(0, 2 ** 32 - 1))
def test_shuffle_displacement_bound(n, k, seed):
    toks = list(range(100, 100 + n))
    out = add_noise(toks, NoiseConfig(k, 0.0, 0.0), seed)
    assert sorted(out) == toks
    assert all(abs(new - (t - 100)) <= k for new, t in enumerate(out))


def _replay_noise(tokens, nc, seed):
    rng = np.random.default_rng(seed)
    n = len(tokens)
    keys = [i + x for i, x in enumerate(rng.uniform(0, nc.shuffle_window + 1, n))]
    order = sorted(range(n), key=lambda i: (keys[i], i))
    toks = [tokens[i] for i in order]
    drop = rng.random(n)
    toks = [t for t, d in zip(toks, drop) if d >= nc.drop_prob]
    blank = rng.random(len(toks))
    return [MASK_ID if b < nc.blank_prob else t for t, b in zip(toks, blank)]


def test_noise_pinned_seed():
    toks = list(range(10, 20))
    nc = NoiseConfig(3, 0.1, 0.1)
    out = add_noise(toks, nc, 42)
    assert out == _replay_noise(toks, nc, 42)
    assert out == [11, 10, 14, 12, 13, 18, 15, MASK_ID, 19]   # frozen from the replay


def test_noise_never_empty():
    for seed in range(20):
        assert len(add_noise([5, 6, 7], NoiseConfig(1, 0.99, 0.0), seed)) == 1


# -- schedule and optimizers ---------------------------------------------------------------

def test_lr_examples():
    oc = OptimizerConfig(base_lr=1e-4, warmup_steps=16000)
    assert lr_at(oc, 16000) == pytest.approx(1e-4)
    assert lr_at(oc, 4 * 16000) == pytest.approx(5e-5)
    assert lr_at(oc, 1) == pytest.approx(1e-4 / 16000)
    with pytest.raises(OptimizerError):
        lr_at(oc, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 500))
def test_lr_peak_and_monotone_after_warmup(w):
    oc = OptimizerConfig(base_lr=2.0, warmup_steps=w)
    values = [lr_at(oc, s) for s in range(1, 3 * w + 2)]
    assert max(values) == pytest.approx(2.0)
    after = values[w - 1:]
    assert all(a >= b for a, b in zip(after, after[1:]))


@pytest.mark.parametrize("kind", ["adam", "adafactor"])
def test_zero_gradients_leave_parameters(kind):
    oc = OptimizerConfig(kind=kind)
    tensors = {"w": np.arange(6, dtype=np.float64).reshape(2, 3), "b": np.ones(3)}
    before = {k: v.copy() for k, v in tensors.items()}
    opt = init_optimizer_state(tensors, oc)
    apply_update(tensors, {k: np.zeros_like(v) for k, v in tensors.items()}, opt, oc, 0.1)
    assert all(np.array_equal(tensors[k], before[k]) for k in tensors)


def test_adam_single_step_by_hand():
    # f(x) = x^2 at x = 1: g = 2, m = 0.2, v = 0.08, bias-corrected 2 and 4
    oc = OptimizerConfig(beta1=0.9, beta2=0.98, eps=1e-9)
    x = {"x": np.array([1.0])}
    opt = init_optimizer_state(x, oc)
    apply_update(x, {"x": np.array([2.0])}, opt, oc, 0.01)
    assert x["x"][0] == pytest.approx(1.0 - 0.01 * 2.0 / (2.0 + 1e-9), abs=1e-15)


def test_adafactor_clips_first_update():
    # with beta2_1 = 0 the preconditioned update has RMS 1, clipped to the threshold
    oc = OptimizerConfig(kind="adafactor", clip_threshold=0.5)
    x = {"v": np.zeros(4)}
    opt = init_optimizer_state(x, oc)
    apply_update(x, {"v": np.array([1.0, -2.0, 3.0, -4.0])}, opt, oc, 1.0)
    assert np.allclose(x["v"], [-0.5, 0.5, -0.5, 0.5], atol=1e-9)


def test_non_finite_gradient_names_tensor():
    oc = OptimizerConfig()
    x = {"a": np.zeros(2), "b": np.zeros(2)}
    opt = init_optimizer_state(x, oc)
    with pytest.raises(OptimizerError, match="'b'"):
        apply_update(x, {"a": np.zeros(2), "b": np.array([0.0, np.nan])}, opt, oc, 0.1)


def test_tree_mean_is_exact_for_identical_inputs():
    g = {"w": np.array([0.1, 1 / 3, 2.7])}
    assert np.array_equal(tree_mean([g] * 8)["w"], g["w"])


@pytest.mark.parametrize("kind", ["adam", "adafactor"])
def test_accumulation_equivalence(kind):
    a = _state(kind=kind, accum_steps=8)
    b = _state(kind=kind, accum_steps=1)
    mt_step(a, [([5, 6, 7], [8, 9])] * 8, 0, 1)
    mt_step(b, [([5, 6, 7], [8, 9])], 0, 1)
    assert a.step == b.step == 1
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params.tensors)


# -- objectives ------------------------------------------------------------------------------

def test_zero_noise_denoising_is_autoencoding():
    s = _state()
    batch = [[5, 6, 7], [8, 9]]
    expected, _, _ = loss_and_grads(s.params, [make_mt_example(x, 0, x, 0) for x in batch], MT)
    denoising_step(s, batch, 0, NoiseConfig(0, 0.0, 0.0))
    assert s.last_losses["DN:0"] == pytest.approx(expected, rel=1e-12)
    assert s.step == 1


def test_xlm_step_counts():
    s = _state()
    xlm_step(s, [[5, 6, 7, 8, 9, 10, 11, 12]] * 4, [0, 1, 0, 1], MaskConfig(mask_rate=0.5))
    assert s.step == 1 and "XLM" in s.last_losses
    xlm_step(s, [[5, 6]], [0], MaskConfig(mask_rate=0.0))
    assert s.step == 1   # nothing to predict: batch skipped


def test_back_translation_never_empty():
    p = init_params(TINY, 0)
    p.tensors["out_bias"][EOS_ID] = 100.0    # EOS dominates every step
    gen = back_translate(p, [[5, 6], [7]], 0, 1)
    assert all(len(g) >= 1 for g in gen)


def test_online_bt_gradient_equals_mt_on_frozen_pairs():
    a, b = _state(seed=2), _state(seed=2)
    batch = [[5, 6, 7], [8, 9, 10, 11]]
    gen = back_translate(a.params, batch, 0, 1)
    online_bt_step(a, batch, 0, 1)
    mt_step(b, list(zip(gen, batch)), 1, 0)
    assert a.last_losses["BT:0-1"] == b.last_losses["MT:1-0"]
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params.tensors)


def test_identity_language_bt_is_autoencoding():
    s = _state()
    ex = online_bt_examples(s.params, [[5, 6, 7]], 0, 0)
    assert ex[0].src_lang == ex[0].tgt_lang == 0
    assert ex[0].targets[:-1] == (5, 6, 7)


def test_named_streams_are_independent_and_reproducible():
    assert stream(1, "a").random() == stream(1, "a").random()
    assert stream(1, "a").random() != stream(1, "b").random()


# -- model selection --------------------------------------------------------------------------

class FixedBleu:
    """Stand-in dev evaluation returning a scripted score sequence."""

    def __init__(self, scores, monkeypatch):
        self.scores = list(scores)
        monkeypatch.setattr("nmtlab.training.trainer.dev_bleu", lambda *a, **k: self.scores.pop(0))


def test_select_best_strictness(monkeypatch):
    FixedBleu([10.0, 10.0, 12.0, 11.0], monkeypatch)
    s = _state()
    dev = [DevSet([[5]], ["x"], 0, 1)]
    best = []
    for step in range(4):
        s.step = step + 1
        select_best(s, dev, bpe=None)
        best.append((s.best_score, s.best_step))
    assert best == [(10.0, 1), (10.0, 1), (12.0, 3), (12.0, 3)]
    assert all(a[0] <= b[0] for a, b in zip(best, best[1:]))


def test_select_best_needs_dev():
    with pytest.raises(RuntimeError):
        select_best(_state(), [], bpe=None)


# -- frozen loss curves ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def frozen():
    return json.loads(FIXTURE.read_text())


def test_denoising_loss_curve(frozen):
    curve = dn_curve()
    assert curve == pytest.approx(frozen["dn"], rel=1e-4)
    assert curve[-1] < 0.5 * curve[0]


def test_mt_loss_curve(frozen):
    curve = mt_curve()
    assert curve == pytest.approx(frozen["mt"], rel=1e-4)
    assert curve[-1] < 0.5 * curve[0]


def test_roundtrip_bleu_improves(frozen):
    curve = roundtrip_curve()
    assert curve == pytest.approx(frozen["roundtrip"], rel=1e-3, abs=1e-3)
    assert curve[-1] > curve[0]


def test_sampled_bt_follows_the_stream_and_differs_from_greedy():
    from nmtlab.model.config import DecodeConfig
    from nmtlab.training.trainer import online_bt_examples
    cfg = ModelConfig(n_layers=1, d_model=16, n_heads=2, d_ff=32, vocab_size=30, max_len=16, n_langs=2,
                      dropout=0.0)
    p = init_params(cfg, 5)
    batch = [[5, 6, 7], [8, 9]]
    dc = DecodeConfig(mode="sample", temperature=2.0, max_len=8)
    one = online_bt_examples(p, batch, 0, 1, dc, np.random.default_rng(1))
    two = online_bt_examples(p, batch, 0, 1, dc, np.random.default_rng(1))
    greedy = online_bt_examples(p, batch, 0, 1, DecodeConfig(max_len=8))
    assert one == two
    assert [e.src for e in one] != [e.src for e in greedy]
    assert all(len(e.src) >= 2 for e in one)         # at least one token plus EOS
    with pytest.raises(ValueError):
        online_bt_examples(p, batch, 0, 1, dc)
