"""SGD with momentum, global-norm clipping, and per-epoch cosine annealing."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericalError


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Anneal from base_lr at epoch 0 to 0 at the final epoch."""
    if total_epochs <= 1:
        return base_lr
    frac = min(epoch, total_epochs - 1) / (total_epochs - 1)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


class SGD:
    """Momentum SGD: clip by global norm first, then decay + momentum update."""

    def __init__(self, named_params, lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0, grad_clip: float | None = None,
                 total_epochs: int = 1):
        if lr <= 0:
            raise NumericalError("learning rate must be positive")
        if grad_clip is not None and grad_clip <= 0:
            raise NumericalError("grad_clip must be positive")
        self.named_params = list(named_params)
        self.base_lr = lr
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.total_epochs = total_epochs
        self.epoch = 0
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def set_epoch(self, epoch: int):
        self.epoch = epoch
        self.lr = cosine_lr(self.base_lr, epoch, self.total_epochs)

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None

    def step(self):
        scale = 1.0
        if self.grad_clip is not None:
            norm = global_grad_norm(p for _, p in self.named_params)
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
        for name, p in self.named_params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            g = g * scale
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= (self.lr * v).astype(p.data.dtype)

    def state_dict(self) -> dict:
        return {
            "velocity": {k: v.copy() for k, v in self.velocity.items()},
            "epoch": self.epoch,
            "lr": self.lr,
            "base_lr": self.base_lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "grad_clip": self.grad_clip,
            "total_epochs": self.total_epochs,
        }

    def load_state_dict(self, state: dict):
        for k, v in state["velocity"].items():
            if k in self.velocity:
                self.velocity[k] = v.copy()
        self.epoch = state["epoch"]
        self.lr = state["lr"]
        self.base_lr = state["base_lr"]
        self.momentum = state["momentum"]
        self.weight_decay = state["weight_decay"]
        self.grad_clip = state["grad_clip"]
        self.total_epochs = state["total_epochs"]
