"""Block-wise training and tiled inference."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ..imaging import as_gray, partition_blocks, stitch_blocks
from .model import FOREGROUND, Architecture, Model, build_model, forward, loss_and_gradients
from .optim import AdamState, adam_step
from ..errors import DimensionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    in_channels: int = 1
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0 or self.threads < 1:
            raise ValueError(f"invalid training configuration {self}")
        if self.in_channels not in (1, 3):
            raise ValueError("in_channels must be 1 or 3")


@dataclass
class TrainResult:
    model: Model
    history: list[float] = field(default_factory=list)
    optimizer: AdamState | None = None


def prepare_input(img: np.ndarray, in_channels: int = 1) -> np.ndarray:
    """Scale an 8-bit image to ``[0, 1]`` floats with a trailing channel axis."""
    img = np.asarray(img)
    if in_channels == 1:
        return (as_gray(img).astype(np.float64) / 255.0)[..., None]
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img.astype(np.float64) / 255.0


def make_blocks(pairs: Sequence, arch: Architecture) -> tuple[list[np.ndarray], list[np.ndarray]]:
    inputs, targets = [], []
    for pair in pairs:
        if pair.source.shape[:2] != pair.truth.shape:
            raise DimensionError(f"pair {pair.id!r}: source {pair.source.shape[:2]} and truth {pair.truth.shape} differ")
        xb, _ = partition_blocks(prepare_input(pair.source, arch.in_channels), arch.block)
        tb, _ = partition_blocks(pair.truth, arch.block)
        inputs += xb
        targets += tb
    return inputs, targets


def _map_ordered(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def train(
    pairs: Sequence,
    config: TrainConfig = TrainConfig(),
    arch: Architecture | None = None,
    dtype=np.float32,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Fit a fresh model to the 224x224 block pairs cut from ``pairs``.

    Each epoch visits every block once in a seeded random order. Per-block
    gradients are reduced in batch order, so results do not depend on
    ``config.threads``.
    """
    if not pairs:
        raise ValueError("training needs at least one pair")
    arch = arch or Architecture(in_channels=config.in_channels)
    inputs, targets = make_blocks(pairs, arch)
    model = build_model(config.seed, arch)
    state = AdamState(lr=config.learning_rate)
    rng = np.random.default_rng([config.seed, 1])
    history = []

    def block_grad(i):
        return loss_and_gradients(model, inputs[i], targets[i], dtype)

    with threadpool_limits(limits=1, user_api="blas"):
        for epoch in range(config.epochs):
            order = rng.permutation(len(inputs))
            losses = []
            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                results = _map_ordered(block_grad, batch, config.threads)
                total = {k: np.zeros_like(v) for k, v in model.params.items()}
                for value, grads in results:
                    losses.append(value)
                    for k, g in grads.items():
                        total[k] += g
                for k in total:
                    total[k] /= len(batch)
                adam_step(model.params, total, state)
            history.append(float(np.mean(losses)))
            logger.info("epoch %d/%d loss %.5f", epoch + 1, config.epochs, history[-1])
            if on_epoch is not None:
                on_epoch(epoch, history[-1])
    return TrainResult(model, history, state)


def foreground_probability(model: Model, img: np.ndarray, threads: int = 1, dtype=np.float32) -> np.ndarray:
    x = prepare_input(img, model.arch.in_channels)
    blocks, tiling = partition_blocks(x, model.arch.block)

    def run(b):
        probs, _ = forward(model, b, dtype)
        return probs[..., FOREGROUND]

    with threadpool_limits(limits=1, user_api="blas"):
        maps = _map_ordered(run, blocks, threads)
    return stitch_blocks(maps, tiling)


def infer(model: Model, img: np.ndarray, threads: int = 1, dtype=np.float32) -> np.ndarray:
    """Binary map of any-size image; ties at probability 0.5 go to foreground."""
    return foreground_probability(model, img, threads, dtype) >= 0.5
