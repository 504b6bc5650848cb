"""SGD and Adam over lists of numpy parameter arrays.

``step`` never mutates its inputs; it returns fresh arrays so a training
loop can keep earlier snapshots around (checksums, ablations, replay).
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, NumericError


def _check_finite(grads, names):
    for g, name in zip(grads, names):
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name}")


class SGD:
    """``p <- p - lr * (g + weight_decay * p)``."""

    kind = "sgd"

    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.t = 0

    def step(self, params: list, grads: list, names: list | None = None) -> list:
        names = names or [f"param{i}" for i in range(len(params))]
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        _check_finite(grads, names)
        out = []
        for p, g, name in zip(params, grads, names):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p
            out.append(p - self.lr * g)
        self.t += 1
        return out


class Adam:
    """Bias-corrected Adam with decoupled weight decay."""

    kind = "adam"

    def __init__(self, lr: float, weight_decay: float = 0.0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: list | None = None
        self.v: list | None = None
        self.t = 0

    def step(self, params: list, grads: list, names: list | None = None) -> list:
        names = names or [f"param{i}" for i in range(len(params))]
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        _check_finite(grads, names)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape or self.m[i].shape != p.shape:
                raise ValueError(f"shape mismatch for {names[i]}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p = p - self.lr * self.weight_decay * p
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


def make_optimizer(kind: str, lr: float, weight_decay: float = 0.0):
    if kind == "sgd":
        return SGD(lr, weight_decay)
    if kind == "adam":
        return Adam(lr, weight_decay)
    raise ConfigError(f"unknown optimizer {kind!r}; expected 'sgd' or 'adam'")
