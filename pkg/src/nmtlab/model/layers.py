"""Forward/backward pairs for the transformer building blocks.

Every ``*_fwd`` returns ``(output, cache)`` and the matching ``*_bwd``
takes the output gradient and that cache.  Arrays keep the dtype of the
parameters, so the same code runs in float32 for training and float64 for
gradient checks.
"""

from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-5
NEG_INF = -1e9
_GELU_C = math.sqrt(2.0 / math.pi)


def layernorm_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def layernorm_bwd(dy, cache):
    xhat, rstd, g = cache
    d = xhat.shape[-1]
    flat_dy = dy.reshape(-1, d)
    dg = (flat_dy * xhat.reshape(-1, d)).sum(0)
    db = flat_dy.sum(0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def gelu_fwd(x):
    inner = _GELU_C * (x + 0.044715 * (x * x * x))   # x ** 3 is far slower
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_bwd(dy, cache):
    x, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def linear_fwd(x, w, b):
    return x @ w + b, x


def linear_bwd(dy, x, w):
    d_in, d_out = w.shape
    dw = x.reshape(-1, d_in).T @ dy.reshape(-1, d_out)
    db = dy.reshape(-1, d_out).sum(0)
    return dy @ w.T, dw, db


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def dropout_fwd(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def dropout_bwd(dy, keep):
    return dy if keep is None else dy * keep


def _split_heads(x, n_heads):
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def attention_fwd(P, prefix, xq, xkv, mask, n_heads):
    """Multi-head attention; ``mask`` is additive, broadcastable to (B,H,Tq,Tk)."""
    q, _ = linear_fwd(xq, P[prefix + "wq"], P[prefix + "bq"])
    k, _ = linear_fwd(xkv, P[prefix + "wk"], P[prefix + "bk"])
    v, _ = linear_fwd(xkv, P[prefix + "wv"], P[prefix + "bv"])
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / math.sqrt(qh.shape[-1])
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    if mask is not None:
        scores = scores + mask
    a = softmax(scores)
    oh = a @ vh
    o = _merge_heads(oh)
    out, _ = linear_fwd(o, P[prefix + "wo"], P[prefix + "bo"])
    return out, (xq, xkv, qh, kh, vh, a, o, scale)


def attention_bwd(dout, cache, P, G, prefix, n_heads):
    xq, xkv, qh, kh, vh, a, o, scale = cache
    do, dwo, dbo = linear_bwd(dout, o, P[prefix + "wo"])
    G[prefix + "wo"] += dwo
    G[prefix + "bo"] += dbo
    doh = _split_heads(do, n_heads)
    da = doh @ vh.transpose(0, 1, 3, 2)
    dvh = a.transpose(0, 1, 3, 2) @ doh
    ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
    dqh = ds @ kh
    dkh = ds.transpose(0, 1, 3, 2) @ qh
    dxq, dw, db = linear_bwd(_merge_heads(dqh), xq, P[prefix + "wq"])
    G[prefix + "wq"] += dw
    G[prefix + "bq"] += db
    dxkv, dw, db = linear_bwd(_merge_heads(dkh), xkv, P[prefix + "wk"])
    G[prefix + "wk"] += dw
    G[prefix + "bk"] += db
    dxv, dw, db = linear_bwd(_merge_heads(dvh), xkv, P[prefix + "wv"])
    G[prefix + "wv"] += dw
    G[prefix + "bv"] += db
    return dxq, dxkv + dxv


def ffn_fwd(P, prefix, x):
    h, _ = linear_fwd(x, P[prefix + "w1"], P[prefix + "b1"])
    g, gcache = gelu_fwd(h)
    y, _ = linear_fwd(g, P[prefix + "w2"], P[prefix + "b2"])
    return y, (x, g, gcache)


def ffn_bwd(dy, cache, P, G, prefix):
    x, g, gcache = cache
    dg, dw2, db2 = linear_bwd(dy, g, P[prefix + "w2"])
    G[prefix + "w2"] += dw2
    G[prefix + "b2"] += db2
    dh = gelu_bwd(dg, gcache)
    dx, dw1, db1 = linear_bwd(dh, x, P[prefix + "w1"])
    G[prefix + "w1"] += dw1
    G[prefix + "b1"] += db1
    return dx
