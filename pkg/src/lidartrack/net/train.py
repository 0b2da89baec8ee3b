"""Desk-scale training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import LossConfig, TrainConfig
from .loss import multires_loss
from .model import NetworkParams, backward, crop_input, forward, hflip_augment, predict
from .optim import adam_init, adam_step

log = logging.getLogger(__name__)

LOG_HEADER = ["iteration", "loss_r1", "loss_r2", "loss_r3", "total"]


@dataclass
class TrainState:
    params: NetworkParams
    adam: dict
    iteration: int = 0
    history: list = field(default_factory=list)


def learning_rate(it: int, budget: int, cfg: TrainConfig) -> float:
    return cfg.lr if it < cfg.lr_halve_at * budget else cfg.lr / 2


def train(state: TrainState, inputs: np.ndarray, gts: np.ndarray, iterations: int,
          cfg: TrainConfig | None = None, loss_cfg: LossConfig | None = None, seed: int = 0,
          budget: int | None = None, log_path: str | Path | None = None) -> TrainState:
    """Run ``iterations`` Adam steps on ``(inputs, gts)`` starting at ``state.iteration``.

    ``inputs`` is (N, 2, H, W) and ``gts`` (N, H, W). Batches and flips are
    drawn from a generator seeded by ``(seed, iteration)`` so a resumed run
    sees the same data stream as an uninterrupted one. ``budget`` is the
    schedule length for the learning-rate halving (defaults to the end of this
    call).
    """
    cfg = cfg or TrainConfig()
    loss_cfg = loss_cfg or LossConfig()
    if len(inputs) == 0:
        raise ValueError("empty training set")
    end = state.iteration + iterations
    budget = budget or end
    x_all = crop_input(inputs)
    y_all = crop_input(gts)
    fh = None
    if log_path is not None:
        new = not Path(log_path).exists() or state.iteration == 0
        fh = open(log_path, "w" if new else "a", newline="")
        writer = csv.writer(fh)
        if new:
            writer.writerow(LOG_HEADER)
    try:
        for it in range(state.iteration, end):
            rng = np.random.default_rng([seed, it])
            bs = min(cfg.batch_size, len(x_all))
            idx = rng.choice(len(x_all), size=bs, replace=False) if bs < len(x_all) else np.arange(bs)
            xs, ys = [], []
            for i in idx:
                x, y = hflip_augment(x_all[i], y_all[i], bool(rng.random() < cfg.flip_prob))
                xs.append(x)
                ys.append(y)
            x, y = np.stack(xs), np.stack(ys)
            logits, cache = forward(state.params, x, "train", cfg.bn_momentum)
            losses, total, dlogits = multires_loss(logits, y, loss_cfg)
            grads = backward(state.params, cache, dlogits)
            adam_step(state.params.weights, grads, state.adam, learning_rate(it, budget, cfg),
                      cfg.beta1, cfg.beta2, cfg.adam_eps)
            row = [it, *losses, total]
            state.history.append(row)
            if fh is not None:
                writer.writerow([it, *(f"{v:.6f}" for v in row[1:])])
            if it % 25 == 0:
                log.info("iter %d total loss %.3f", it, total)
            state.iteration = it + 1
    finally:
        if fh is not None:
            fh.close()
    return state


def new_state(params: NetworkParams) -> TrainState:
    return TrainState(params, adam_init(params.weights))


def point_accuracy(params: NetworkParams, images, point_classes, threshold: float = 0.5) -> float:
    """Fraction of projected points whose thresholded vehicle score matches the label."""
    correct = total = 0
    for img, cls in zip(images, point_classes):
        prob = predict(params, img)
        mask = img.mask
        pred = prob[mask] >= threshold
        truth = cls[img.index_map[mask]] == 2
        correct += int((pred == truth).sum())
        total += int(mask.sum())
    return correct / max(total, 1)
