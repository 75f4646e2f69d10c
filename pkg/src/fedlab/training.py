"""Mini-batch SGD over pre-stacked arrays, shared by clients and centralized baselines."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import ModelConfig, ParamVector, forward, model_backward, sample_inputs, softmax_xent
from .optim import SgdConfig, sgd_step


@dataclass
class ArrayData:
    X: np.ndarray
    y: np.ndarray
    G: np.ndarray | None = None

    def __len__(self):
        return self.y.size

    @classmethod
    def from_samples(cls, samples: Sequence, cfg: ModelConfig) -> "ArrayData":
        X, G = sample_inputs(samples, cfg)
        return cls(X, np.array([s.label for s in samples], dtype=np.int64), G)

    def take(self, idx):
        return self.X[idx], self.y[idx], None if self.G is None else self.G[idx]


# hook(params, X, G, cache) -> (extra loss, extra readout gradient or None,
#                               extra parameter gradient values or None)
Hook = Callable[[ParamVector, np.ndarray, np.ndarray | None, object], tuple]


def batch_step(params: ParamVector, cfg: ModelConfig, X, y, G, lr: float,
               hook: Hook | None = None):
    """One SGD step on a mean-reduced batch loss; returns ``(params, loss)``."""
    cache = forward(params, cfg, X, G)
    losses, _ = softmax_xent(cache.logits, y)
    B = y.size
    loss = float(losses.mean())
    dread = extra = None
    if hook is not None:
        extra_loss, dread, extra = hook(params, X, G, cache)
        loss += extra_loss
    grad = model_backward(cache, y, params, cfg, dreadout=dread, scale=1.0 / B)
    if extra is not None:
        grad = grad.with_values(grad.values + extra)
    return sgd_step(params, grad, SgdConfig(lr)), loss


def run_sgd(params: ParamVector, cfg: ModelConfig, data: ArrayData, lr: float, epochs: int,
            batch_size: int, rng: np.random.Generator, hook: Hook | None = None):
    """Shuffled mini-batch SGD; returns ``(params, mean batch loss)``."""
    n = len(data)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            X, y, G = data.take(idx)
            params, loss = batch_step(params, cfg, X, y, G, lr, hook)
            losses.append(loss)
    return params, float(np.mean(losses)) if losses else 0.0
