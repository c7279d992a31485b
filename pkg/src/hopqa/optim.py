"""Optimizers (Adam, AdaDelta), gradient clipping and weight averaging.

All state is keyed by parameter name, so results do not depend on
registration order; the global-norm clip sums squared norms with an
exactly-rounded accumulator for the same reason.
"""

from __future__ import annotations

import contextlib
import math
from typing import Mapping

import numpy as np

from .autodiff import NumericError, Tensor


def clip_global_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint 2-norm is at most ``max_norm``.

    Returns the pre-clip norm. fsum keeps the reduction exact, hence
    invariant to parameter ordering."""
    sumsqs = []
    for t in params.values():
        if t.grad is not None:
            sumsqs.append(float((t.grad.astype(np.float64) ** 2).sum()))
    norm = math.sqrt(math.fsum(sumsqs))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad = t.grad * scale
    return norm


class Adam:
    """Adam with bias correction."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in self.params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(f"adam: non-finite gradient for parameter {name!r}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> tuple[dict[str, np.ndarray], dict[str, str]]:
        out: dict[str, np.ndarray] = {}
        for n in self.params:
            out[f"m.{n}"] = self.m[n]
            out[f"v.{n}"] = self.v[n]
        return out, {"optimizer": "adam", "step": str(self.step_count)}

    def load_state_arrays(self, arrays: dict[str, np.ndarray], meta: dict[str, str]) -> None:
        self.step_count = int(meta.get("step", "0"))
        for n in self.params:
            self.m[n] = arrays[f"m.{n}"].astype(self.m[n].dtype)
            self.v[n] = arrays[f"v.{n}"].astype(self.v[n].dtype)


class AdaDelta:
    """AdaDelta; the learning rate scales the RMS-ratio update."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1.0,
                 rho: float = 0.95, eps: float = 1e-6):
        self.params = dict(params)
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.step_count = 0
        self.sq_grad = {n: np.zeros_like(t.data) for n, t in self.params.items()}
        self.sq_update = {n: np.zeros_like(t.data) for n, t in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(f"adadelta: non-finite gradient for parameter {name!r}")
            self.sq_grad[name] = self.rho * self.sq_grad[name] + (1.0 - self.rho) * (g * g)
            delta = -np.sqrt((self.sq_update[name] + self.eps)
                             / (self.sq_grad[name] + self.eps)) * g
            self.sq_update[name] = self.rho * self.sq_update[name] + (1.0 - self.rho) * (delta * delta)
            p.data = p.data + self.lr * delta

    def state_arrays(self) -> tuple[dict[str, np.ndarray], dict[str, str]]:
        out: dict[str, np.ndarray] = {}
        for n in self.params:
            out[f"sq_grad.{n}"] = self.sq_grad[n]
            out[f"sq_update.{n}"] = self.sq_update[n]
        return out, {"optimizer": "adadelta", "step": str(self.step_count)}

    def load_state_arrays(self, arrays: dict[str, np.ndarray], meta: dict[str, str]) -> None:
        self.step_count = int(meta.get("step", "0"))
        for n in self.params:
            self.sq_grad[n] = arrays[f"sq_grad.{n}"].astype(self.sq_grad[n].dtype)
            self.sq_update[n] = arrays[f"sq_update.{n}"].astype(self.sq_update[n].dtype)


def make_optimizer(kind: str, params: Mapping[str, Tensor], lr: float):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "adadelta":
        return AdaDelta(params, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")


class EmaWeights:
    """Exponential moving average of parameter values.

    The shadow starts equal to the parameters; evaluation swaps the shadow
    in and restores the live weights afterwards."""

    def __init__(self, params: Mapping[str, Tensor], decay: float = 0.999):
        if not 0.0 < decay < 1.0:
            raise ValueError("ema decay must be in (0, 1)")
        self.params = dict(params)
        self.decay = decay
        self.shadow = {n: t.data.copy() for n, t in self.params.items()}

    def update(self) -> None:
        d = self.decay
        for n, t in self.params.items():
            self.shadow[n] = d * self.shadow[n] + (1.0 - d) * t.data

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: a.copy() for n, a in self.shadow.items()}

    @contextlib.contextmanager
    def swapped(self):
        saved = {n: t.data for n, t in self.params.items()}
        for n, t in self.params.items():
            t.data = self.shadow[n]
        try:
            yield
        finally:
            for n, t in self.params.items():
                t.data = saved[n]
