"""Optimisers and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class TrainingError(RuntimeError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class SGD:
    def __init__(self, lr: float):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr

    def step(self, params: dict, grads: dict):
        for name, g in grads.items():
            params[name] -= self.lr * g


class Adam:
    """Bias-corrected Adam without weight decay."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(spec):
    if isinstance(spec, (SGD, Adam)):
        return spec
    spec = dict(spec)
    name = spec.pop("name", "adam").lower()
    if name == "sgd":
        return SGD(**spec)
    if name == "adam":
        return Adam(**spec)
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    loss: float
    grad_gap: float | None = None


def flat_gap(approx: dict, exact: dict) -> float:
    """||g_hat - g|| / ||g|| over all trainable parameters."""
    num = math.sqrt(sum(float(np.sum((approx[k] - exact[k]) ** 2)) for k in exact))
    den = math.sqrt(sum(float(np.sum(exact[k] ** 2)) for k in exact))
    return num / den if den > 0 else math.nan


def train(graph, batches, optimizer, steps: int, record_gap: bool = True):
    """Run ``steps`` updates drawing (x, target) pairs from ``batches``.

    With step activations in the graph and ``record_gap`` set, each record
    also carries the relative distance between the approximate gradient and
    the exact one computed on the same batch and parameters.
    """
    optimizer = make_optimizer(optimizer)
    params = graph.trainable_parameters()
    twin = graph.exact_twin() if record_gap and graph.has_step_activations else None
    trace = []
    it = iter(batches)
    for step in range(steps):
        x, target = next(it)
        loss, _ = graph.forward(x, target)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at step {step}", step)
        grads = graph.backward()
        gap = None
        if twin is not None:
            twin.forward(x, target)
            gap = flat_gap(grads, twin.backward())
        trace.append(TraceRecord(step, loss, gap))
        optimizer.step(params, grads)
    return trace
