"""Class-weighted cross entropy at several resolutions."""
from __future__ import annotations

import numpy as np

from ..config import LossConfig


def downsample_gt(gt: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Majority class per cell among non-empty pixels; vehicle wins ties.

    Cells are ``ceil(H/h) x ceil(W/w)`` blocks; a ragged trailing edge is
    padded with empty pixels.
    """
    *lead, H, W = gt.shape
    h, w = shape
    fh, fw = -(-H // h), -(-W // w)
    if (h - 1) * fh >= H or (w - 1) * fw >= W:
        raise ValueError(f"cannot downsample ground truth {gt.shape[-2:]} to {shape}")
    if (fh, fw) == (1, 1) and (H, W) == (h, w):
        return gt
    if (H, W) != (h * fh, w * fw):
        pad = [(0, 0)] * len(lead) + [(0, h * fh - H), (0, w * fw - W)]
        gt = np.pad(gt, pad)
    blocks = gt.reshape(*lead, h, fh, w, fw)
    veh = (blocks == 2).sum(axis=(-3, -1))
    bg = (blocks == 1).sum(axis=(-3, -1))
    out = np.where(veh >= bg, 2, 1).astype(gt.dtype)
    out[(veh + bg) == 0] = 0
    return out


def wce_loss(logits: np.ndarray, gt: np.ndarray, vehicle_weight: float = 25.0):
    """Weighted cross entropy summed over occupied cells.

    ``logits`` is (B, 2, h, w); ``gt`` is (B, h, w) with 0 empty, 1 background,
    2 vehicle. Returns the scalar loss and its gradient w.r.t. ``logits``.
    """
    if gt.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ValueError(f"ground truth {gt.shape} does not match logits {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    occupied = gt > 0
    target = np.clip(gt.astype(np.int64) - 1, 0, 1)
    weight = np.where(gt == 2, vehicle_weight, 1.0) * occupied
    picked = np.take_along_axis(logp, target[:, None], axis=1)[:, 0]
    loss = float(-(weight * picked).sum())
    grad = np.exp(logp)
    onehot = np.zeros_like(grad)
    np.put_along_axis(onehot, target[:, None], 1.0, axis=1)
    grad = (grad - onehot) * weight[:, None].astype(logits.dtype)
    return loss, grad.astype(logits.dtype, copy=False)


def total_loss(losses, cfg: LossConfig | None = None) -> float:
    weights = (cfg or LossConfig()).resolution_weights
    return float(sum(lam * l for lam, l in zip(weights, losses)))


def multires_loss(logits, gt_full: np.ndarray, cfg: LossConfig | None = None):
    """Per-resolution losses, weighted total, and the weighted logit gradients."""
    cfg = cfg or LossConfig()
    losses, grads = [], []
    for lam, lg in zip(cfg.resolution_weights, logits):
        l, g = wce_loss(lg, downsample_gt(gt_full, lg.shape[2:]), cfg.vehicle_weight)
        losses.append(l)
        grads.append(g * lg.dtype.type(lam))
    return losses, total_loss(losses, cfg), grads
