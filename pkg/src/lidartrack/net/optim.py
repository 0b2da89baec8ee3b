from __future__ import annotations

import numpy as np


def adam_init(weights: dict[str, np.ndarray]) -> dict:
    return {"t": 0,
            "m": {k: np.zeros_like(v) for k, v in weights.items()},
            "v": {k: np.zeros_like(v) for k, v in weights.items()}}


def adam_step(weights, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place bias-corrected Adam update; returns ``weights``."""
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        m, v = state["m"][k], state["v"][k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        weights[k] -= step.astype(weights[k].dtype, copy=False)
    return weights
