"""Adam and Adafactor with a warm-up / inverse-square-root schedule."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    base_lr: float = 1e-4
    warmup_steps: int = 4000
    schedule: str = "inverse_sqrt"
    accum_steps: int = 1
    tokens_per_batch: int = 512
    # Adafactor: beta2_t = 1 - t ** -decay_rate; updates clipped to RMS <= clip_threshold
    decay_rate: float = 0.8
    clip_threshold: float = 1.0
    eps1: float = 1e-30
    eps2: float = 1e-3
    scale_parameter: bool = False

    def __post_init__(self):
        if self.kind not in ("adam", "adafactor"):
            raise OptimizerError(f"unknown optimizer {self.kind!r}")
        if self.schedule != "inverse_sqrt":
            raise OptimizerError(f"unknown schedule {self.schedule!r}")
        if self.warmup_steps < 1:
            raise OptimizerError("warmup_steps must be >= 1")
        if self.accum_steps < 1:
            raise OptimizerError("accum_steps must be >= 1")
        if self.tokens_per_batch < 1:
            raise OptimizerError("tokens_per_batch must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(oc: OptimizerConfig, step: int) -> float:
    """Linear warm-up to ``base_lr`` at ``warmup_steps``, then ``~ step**-0.5``."""
    if step < 1:
        raise OptimizerError("step must be >= 1")
    w = oc.warmup_steps
    return oc.base_lr * min(math.sqrt(w / step), step / w)


def init_optimizer_state(tensors: dict, oc: OptimizerConfig) -> dict:
    state: dict = {"t": 0}
    if oc.kind == "adam":
        state["m"] = {k: np.zeros_like(v) for k, v in tensors.items()}
        state["v"] = {k: np.zeros_like(v) for k, v in tensors.items()}
    else:
        for k, v in tensors.items():
            if v.ndim == 2:
                state["vr." + k] = np.zeros(v.shape[0], dtype=v.dtype)
                state["vc." + k] = np.zeros(v.shape[1], dtype=v.dtype)
            else:
                state["v." + k] = np.zeros_like(v)
    return state


def check_finite(grads: dict) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient in tensor {name!r}")


def apply_update(tensors: dict, grads: dict, opt: dict, oc: OptimizerConfig, lr: float) -> None:
    """In-place parameter update; ``opt['t']`` counts updates from 1."""
    check_finite(grads)
    opt["t"] += 1
    t = opt["t"]
    if oc.kind == "adam":
        b1, b2 = oc.beta1, oc.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for k, g in grads.items():
            m, v = opt["m"][k], opt["v"][k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            tensors[k] -= (lr * (m / c1) / (np.sqrt(v / c2) + oc.eps)).astype(tensors[k].dtype)
        return
    beta2t = 1.0 - t ** (-oc.decay_rate)
    for k, g in grads.items():
        x = tensors[k]
        g2 = g * g + oc.eps1
        if g.ndim == 2:
            vr, vc = opt["vr." + k], opt["vc." + k]
            vr *= beta2t
            vr += (1.0 - beta2t) * g2.mean(1)
            vc *= beta2t
            vc += (1.0 - beta2t) * g2.mean(0)
            vhat = np.outer(vr, vc) / vr.mean()
        else:
            v = opt["v." + k]
            v *= beta2t
            v += (1.0 - beta2t) * g2
            vhat = v
        u = g / np.sqrt(vhat)
        rms = math.sqrt(float(np.mean(u * u)))
        u = u / max(1.0, rms / oc.clip_threshold)
        step_size = lr
        if oc.scale_parameter:
            step_size *= max(oc.eps2, math.sqrt(float(np.mean(x * x))))
        x -= (step_size * u).astype(x.dtype)


def tree_mean(grads_list: list) -> dict:
    """Average gradient dicts by balanced pairwise summation.

    For a power-of-two count of identical inputs the result is exact.
    """
    items = list(grads_list)
    n = len(items)
    while len(items) > 1:
        nxt = []
        for i in range(0, len(items) - 1, 2):
            a, b = items[i], items[i + 1]
            nxt.append({k: a[k] + b[k] for k in a})
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    total = items[0]
    return {k: v / n for k, v in total.items()} if n > 1 else total
