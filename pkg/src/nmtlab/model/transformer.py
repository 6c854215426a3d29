"""Shared encoder-decoder transformer with hand-written backpropagation.

One parameter set serves every language: the language of each side is
signalled by a learned language embedding added to token and position
embeddings.  Layers are pre-norm.  When ``tie_embeddings`` is set the
output projection is the transposed token embedding matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import layers as L
from .config import ConfigError, ModelConfig
from ..subword import PAD_ID

MT = "MT"
MLM = "MLM"


class ModelError(ValueError):
    pass


@dataclass
class TransformerParams:
    cfg: ModelConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name):
        return self.tensors[name]

    @property
    def dtype(self):
        return self.tensors["tok_emb"].dtype

    def astype(self, dtype) -> "TransformerParams":
        return TransformerParams(self.cfg, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "TransformerParams":
        return TransformerParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())


def _attn_shapes(d):
    return {"wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,),
            "wv": (d, d), "bv": (d,), "wo": (d, d), "bo": (d,)}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Ordered name -> shape map; the order fixes the initialization stream."""
    d, f, V = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes = {
        "tok_emb": (V, d),
        "pos_emb": (cfg.max_len, d),
        "lang_emb": (cfg.n_langs, d),
    }
    ffn = {"w1": (d, f), "b1": (f,), "w2": (f, d), "b2": (d,)}
    for i in range(cfg.n_layers):
        p = f"enc.{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        shapes.update({p + "attn." + k: s for k, s in _attn_shapes(d).items()})
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes.update({p + "ffn." + k: s for k, s in ffn.items()})
    shapes["enc.lnf.g"] = (d,)
    shapes["enc.lnf.b"] = (d,)
    for i in range(cfg.n_layers):
        p = f"dec.{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        shapes.update({p + "self." + k: s for k, s in _attn_shapes(d).items()})
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes.update({p + "cross." + k: s for k, s in _attn_shapes(d).items()})
        shapes[p + "ln3.g"] = (d,)
        shapes[p + "ln3.b"] = (d,)
        shapes.update({p + "ffn." + k: s for k, s in ffn.items()})
    shapes["dec.lnf.g"] = (d,)
    shapes["dec.lnf.b"] = (d,)
    if not cfg.tie_embeddings:
        shapes["out_proj"] = (d, V)
    shapes["out_bias"] = (V,)
    return shapes


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> TransformerParams:
    """Scaled-uniform init: Xavier for matrices, std d^-1/2 for embeddings."""
    if not isinstance(cfg, ModelConfig):
        raise ConfigError("init_params needs a ModelConfig")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith("_emb"):
            a = np.sqrt(3.0 / cfg.d_model)
            t = rng.uniform(-a, a, size=shape)
        elif leaf == "g":
            t = np.ones(shape)
        elif len(shape) == 1:
            t = np.zeros(shape)
        else:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            t = rng.uniform(-a, a, size=shape)
        tensors[name] = t.astype(dtype)
    return TransformerParams(cfg, tensors)


def copy_encoder_into_decoder(p: TransformerParams) -> TransformerParams:
    """Initialize decoder self-attention, FFN and norms from the encoder.

    This is how a masked-LM pre-trained encoder seeds both halves of the
    translation model; cross-attention keeps its own initialization.
    """
    t = dict(p.tensors)
    for i in range(p.cfg.n_layers):
        e, d = f"enc.{i}.", f"dec.{i}."
        for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            t[d + "self." + k] = p.tensors[e + "attn." + k].copy()
        for k in ("w1", "b1", "w2", "b2"):
            t[d + "ffn." + k] = p.tensors[e + "ffn." + k].copy()
        for k in ("g", "b"):
            t[d + "ln1." + k] = p.tensors[e + "ln1." + k].copy()
            t[d + "ln3." + k] = p.tensors[e + "ln2." + k].copy()
    for k in ("g", "b"):
        t["dec.lnf." + k] = p.tensors["enc.lnf." + k].copy()
    return TransformerParams(p.cfg, t)


# -- batching -------------------------------------------------------------------

def _pad(seqs: Sequence[Sequence[int]], max_len: int) -> np.ndarray:
    T = max(len(s) for s in seqs)
    if T > max_len:
        raise ModelError(f"sequence of length {T} exceeds max_len={max_len}")
    out = np.full((len(seqs), T), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        if len(s) == 0:
            raise ModelError("empty input sequence")
        out[i, :len(s)] = s
    return out


def _check_ids(ids: np.ndarray, cfg: ModelConfig):
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ModelError(f"token id out of range [0, {cfg.vocab_size})")


def _check_langs(langs: np.ndarray, cfg: ModelConfig):
    if langs.min() < 0 or langs.max() >= cfg.n_langs:
        raise ModelError(f"language id out of range [0, {cfg.n_langs})")


# -- embedding ----------------------------------------------------------------

def _embed_fwd(P, ids, langs, rate, rng):
    T = ids.shape[1]
    x = P["tok_emb"][ids] + P["pos_emb"][:T][None] + P["lang_emb"][langs][:, None, :]
    x, keep = L.dropout_fwd(x, rate, rng)
    return x, (ids, langs, keep)


def _embed_bwd(dx, cache, G):
    ids, langs, keep = cache
    dx = L.dropout_bwd(dx, keep)
    np.add.at(G["tok_emb"], ids.reshape(-1), dx.reshape(-1, dx.shape[-1]))
    G["pos_emb"][:ids.shape[1]] += dx.sum(0)
    np.add.at(G["lang_emb"], langs, dx.sum(1))


# -- encoder / decoder stacks -------------------------------------------------------

def _key_mask(ids, dtype):
    return np.where(ids == PAD_ID, L.NEG_INF, 0.0).astype(dtype)[:, None, None, :]


def _causal_mask(T, dtype):
    return np.triu(np.full((T, T), L.NEG_INF), 1).astype(dtype)[None, None]


def encoder_fwd(P, cfg, ids, langs, rng=None):
    rate = cfg.dropout if rng is not None else 0.0
    dtype = P["tok_emb"].dtype
    mask = _key_mask(ids, dtype)
    x, emb_cache = _embed_fwd(P, ids, langs, rate, rng)
    caches = []
    for i in range(cfg.n_layers):
        p = f"enc.{i}."
        h, c_ln1 = L.layernorm_fwd(x, P[p + "ln1.g"], P[p + "ln1.b"])
        a, c_att = L.attention_fwd(P, p + "attn.", h, h, mask, cfg.n_heads)
        a, k1 = L.dropout_fwd(a, rate, rng)
        x = x + a
        h, c_ln2 = L.layernorm_fwd(x, P[p + "ln2.g"], P[p + "ln2.b"])
        f, c_ffn = L.ffn_fwd(P, p + "ffn.", h)
        f, k2 = L.dropout_fwd(f, rate, rng)
        x = x + f
        caches.append((c_ln1, c_att, k1, c_ln2, c_ffn, k2))
    out, c_lnf = L.layernorm_fwd(x, P["enc.lnf.g"], P["enc.lnf.b"])
    return out, (emb_cache, caches, c_lnf)


def encoder_bwd(dout, cache, P, G, cfg):
    emb_cache, caches, c_lnf = cache
    dx, dg, db = L.layernorm_bwd(dout, c_lnf)
    G["enc.lnf.g"] += dg
    G["enc.lnf.b"] += db
    for i in reversed(range(cfg.n_layers)):
        p = f"enc.{i}."
        c_ln1, c_att, k1, c_ln2, c_ffn, k2 = caches[i]
        df = L.dropout_bwd(dx, k2)
        dh = L.ffn_bwd(df, c_ffn, P, G, p + "ffn.")
        d, dg, db = L.layernorm_bwd(dh, c_ln2)
        G[p + "ln2.g"] += dg
        G[p + "ln2.b"] += db
        dx = dx + d
        da = L.dropout_bwd(dx, k1)
        dq, dkv = L.attention_bwd(da, c_att, P, G, p + "attn.", cfg.n_heads)
        d, dg, db = L.layernorm_bwd(dq + dkv, c_ln1)
        G[p + "ln1.g"] += dg
        G[p + "ln1.b"] += db
        dx = dx + d
    _embed_bwd(dx, emb_cache, G)


def decoder_fwd(P, cfg, ids, langs, enc_out, src_ids, rng=None):
    rate = cfg.dropout if rng is not None else 0.0
    dtype = P["tok_emb"].dtype
    self_mask = _causal_mask(ids.shape[1], dtype)
    cross_mask = _key_mask(src_ids, dtype)
    x, emb_cache = _embed_fwd(P, ids, langs, rate, rng)
    caches = []
    for i in range(cfg.n_layers):
        p = f"dec.{i}."
        h, c_ln1 = L.layernorm_fwd(x, P[p + "ln1.g"], P[p + "ln1.b"])
        a, c_self = L.attention_fwd(P, p + "self.", h, h, self_mask, cfg.n_heads)
        a, k1 = L.dropout_fwd(a, rate, rng)
        x = x + a
        h, c_ln2 = L.layernorm_fwd(x, P[p + "ln2.g"], P[p + "ln2.b"])
        a, c_cross = L.attention_fwd(P, p + "cross.", h, enc_out, cross_mask, cfg.n_heads)
        a, k2 = L.dropout_fwd(a, rate, rng)
        x = x + a
        h, c_ln3 = L.layernorm_fwd(x, P[p + "ln3.g"], P[p + "ln3.b"])
        f, c_ffn = L.ffn_fwd(P, p + "ffn.", h)
        f, k3 = L.dropout_fwd(f, rate, rng)
        x = x + f
        caches.append((c_ln1, c_self, k1, c_ln2, c_cross, k2, c_ln3, c_ffn, k3))
    out, c_lnf = L.layernorm_fwd(x, P["dec.lnf.g"], P["dec.lnf.b"])
    return out, (emb_cache, caches, c_lnf)


def decoder_bwd(dout, cache, P, G, cfg):
    """Returns the gradient with respect to the encoder output."""
    emb_cache, caches, c_lnf = cache
    dx, dg, db = L.layernorm_bwd(dout, c_lnf)
    G["dec.lnf.g"] += dg
    G["dec.lnf.b"] += db
    denc = 0.0
    for i in reversed(range(cfg.n_layers)):
        p = f"dec.{i}."
        c_ln1, c_self, k1, c_ln2, c_cross, k2, c_ln3, c_ffn, k3 = caches[i]
        df = L.dropout_bwd(dx, k3)
        dh = L.ffn_bwd(df, c_ffn, P, G, p + "ffn.")
        d, dg, db = L.layernorm_bwd(dh, c_ln3)
        G[p + "ln3.g"] += dg
        G[p + "ln3.b"] += db
        dx = dx + d
        da = L.dropout_bwd(dx, k2)
        dq, dkv = L.attention_bwd(da, c_cross, P, G, p + "cross.", cfg.n_heads)
        denc = denc + dkv
        d, dg, db = L.layernorm_bwd(dq, c_ln2)
        G[p + "ln2.g"] += dg
        G[p + "ln2.b"] += db
        dx = dx + d
        da = L.dropout_bwd(dx, k1)
        dq, dkv = L.attention_bwd(da, c_self, P, G, p + "self.", cfg.n_heads)
        d, dg, db = L.layernorm_bwd(dq + dkv, c_ln1)
        G[p + "ln1.g"] += dg
        G[p + "ln1.b"] += db
        dx = dx + d
    _embed_bwd(dx, emb_cache, G)
    return denc


def _out_weight(P, cfg):
    return P["tok_emb"].T if cfg.tie_embeddings else P["out_proj"]


def project(P, cfg, h):
    return h @ _out_weight(P, cfg) + P["out_bias"]


# -- public forward passes ------------------------------------------------------------

def forward_mt(p: TransformerParams, src: Sequence[int], src_lang: int,
               tgt_prefix: Sequence[int], tgt_lang: int) -> np.ndarray:
    """Logits (len(tgt_prefix), vocab) for one source/target-prefix pair."""
    cfg, P = p.cfg, p.tensors
    src_ids = _pad([list(src)], cfg.max_len)
    tgt_ids = _pad([list(tgt_prefix)], cfg.max_len)
    _check_ids(src_ids, cfg)
    _check_ids(tgt_ids, cfg)
    sl, tl = np.array([src_lang]), np.array([tgt_lang])
    _check_langs(sl, cfg)
    _check_langs(tl, cfg)
    enc, _ = encoder_fwd(P, cfg, src_ids, sl)
    dec, _ = decoder_fwd(P, cfg, tgt_ids, tl, enc, src_ids)
    return project(P, cfg, dec[0])


def forward_mlm(p: TransformerParams, masked_input: Sequence[int], lang: int) -> np.ndarray:
    """Encoder-only logits (len(masked_input), vocab)."""
    cfg, P = p.cfg, p.tensors
    ids = _pad([list(masked_input)], cfg.max_len)
    _check_ids(ids, cfg)
    langs = np.array([lang])
    _check_langs(langs, cfg)
    enc, _ = encoder_fwd(P, cfg, ids, langs)
    return project(P, cfg, enc[0])


# -- training loss ----------------------------------------------------------------

@dataclass(frozen=True)
class MTExample:
    """``src`` is the encoder input; ``tgt_in`` the decoder input (BOS-led).

    ``positions``/``targets`` list the supervised decoder positions.
    """

    src: tuple
    src_lang: int
    tgt_in: tuple
    tgt_lang: int
    positions: tuple
    targets: tuple


@dataclass(frozen=True)
class MLMExample:
    tokens: tuple
    lang: int
    positions: tuple
    targets: tuple


def _gather_targets(examples):
    b_idx, t_idx, tgt = [], [], []
    for b, ex in enumerate(examples):
        if len(ex.positions) != len(ex.targets):
            raise ModelError("positions and targets differ in length")
        b_idx.extend([b] * len(ex.positions))
        t_idx.extend(ex.positions)
        tgt.extend(ex.targets)
    if not tgt:
        raise ModelError("batch has no supervised positions")
    return np.array(b_idx), np.array(t_idx), np.array(tgt, dtype=np.int64)


def _xent(logits, targets):
    """Mean cross-entropy, computed in float64; returns (loss, dlogits)."""
    z = logits.astype(np.float64)
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    s = e.sum(-1, keepdims=True)
    logp = z - np.log(s)
    n = len(targets)
    loss = -logp[np.arange(n), targets].sum() / n
    d = e / s
    d[np.arange(n), targets] -= 1.0
    return float(loss), (d / n).astype(logits.dtype)


def zero_grads(p: TransformerParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in p.tensors.items()}


def loss_and_grads(p: TransformerParams, batch: Sequence, objective: str,
                   rng: np.random.Generator | None = None):
    """Mean token cross-entropy over supervised positions and its gradients.

    ``rng`` enables dropout (training mode); ``None`` means deterministic.
    Returns ``(loss, grads, n_supervised_tokens)``.
    """
    if not batch:
        raise ModelError("empty batch")
    cfg, P = p.cfg, p.tensors
    G = zero_grads(p)
    b_idx, t_idx, targets = _gather_targets(batch)
    if rng is None or cfg.dropout == 0.0:
        rng = None
    if objective == MLM:
        ids = _pad([ex.tokens for ex in batch], cfg.max_len)
        langs = np.array([ex.lang for ex in batch])
        _check_ids(ids, cfg)
        _check_langs(langs, cfg)
        h, cache = encoder_fwd(P, cfg, ids, langs, rng)
    elif objective == MT:
        src_ids = _pad([ex.src for ex in batch], cfg.max_len)
        tgt_ids = _pad([ex.tgt_in for ex in batch], cfg.max_len)
        sl = np.array([ex.src_lang for ex in batch])
        tl = np.array([ex.tgt_lang for ex in batch])
        for a in (src_ids, tgt_ids):
            _check_ids(a, cfg)
        _check_langs(sl, cfg)
        _check_langs(tl, cfg)
        enc, enc_cache = encoder_fwd(P, cfg, src_ids, sl, rng)
        h, cache = decoder_fwd(P, cfg, tgt_ids, tl, enc, src_ids, rng)
    else:
        raise ModelError(f"unknown objective {objective!r}")
    _check_ids(targets, cfg)

    hs = h[b_idx, t_idx]
    W = _out_weight(P, cfg)
    logits = hs @ W + P["out_bias"]
    loss, dlogits = _xent(logits, targets)
    G["out_bias"] += dlogits.sum(0)
    if cfg.tie_embeddings:
        G["tok_emb"] += dlogits.T @ hs
    else:
        G["out_proj"] += hs.T @ dlogits
    dh = np.zeros_like(h)
    np.add.at(dh, (b_idx, t_idx), dlogits @ W.T)

    if objective == MLM:
        encoder_bwd(dh, cache, P, G, cfg)
    else:
        denc = decoder_bwd(dh, cache, P, G, cfg)
        encoder_bwd(denc, enc_cache, P, G, cfg)
    return loss, G, len(targets)
