"""Central finite-difference checks for single nodes and whole graphs."""
from __future__ import annotations

import numpy as np

from ..memledger import MemoryLedger
from .graph import Graph
from .nodes import (
    ActPlain,
    ActStep,
    LayerNorm,
    Linear,
    LoRA,
    LoRAFA,
    LossCE,
    LossMSE,
    MSLayerNorm,
    MSRMSNorm,
    Node,
    Residual,
    RMSNorm,
)


def node_label(node: Node) -> str:
    if isinstance(node, LoRAFA):
        return "lorafa"
    if isinstance(node, LoRA):
        return "lora"
    if isinstance(node, Linear):
        return "linear" if node.trainable else "linear_frozen"
    if isinstance(node, ActStep):
        return {"gelu": "regelu2", "silu": "resilu2"}[node.act.value]
    if isinstance(node, ActPlain):
        return node.act.value
    if isinstance(node, MSRMSNorm):
        return "msrms"
    if isinstance(node, MSLayerNorm):
        return "msln"
    if isinstance(node, RMSNorm):
        return "rms"
    if isinstance(node, LayerNorm):
        return "ln"
    if isinstance(node, Residual):
        return "residual"
    if isinstance(node, LossMSE):
        return "mse"
    if isinstance(node, LossCE):
        return "ce"
    return node.kind


def rel_error(a, b) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-300:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


class _Ctx:
    def __init__(self, node, target=None, skip=None):
        self.store = {}
        self.target = target
        self.skip_value = skip
        self.act_bits = 16
        self.norm_bits = 32
        self.input_key = f"{node.name}:input"
        self.next_saves_input = False
        self.next_input_key = None
        self.ledger = MemoryLedger()

    def save(self, role, value, bits, num_elements=None, shared_key=None, owner=True):
        self.store[role] = value

    def note(self, key, value):
        pass


def _surrogate_forward(node, x, ctx):
    """Forward whose exact derivative the node's backward is meant to return."""
    if isinstance(node, ActStep):
        c = node.levels.thresholds
        w = np.diff(node.levels.levels)
        return sum(wi * np.maximum(x - ci, 0.0) for wi, ci in zip(w, c))
    return node.forward(x, _Ctx(node, ctx.target, ctx.skip_value))


def check_node(node: Node, x, rng, target=None, skip=None, step: float = 1e-6) -> float:
    """Max relative error between backward and central differences of <forward, R>.

    Covers the input and every trainable parameter. Step activations are
    checked against the ReLU combination they differentiate, so ``x`` should
    keep clear of the thresholds.
    """
    ctx = _Ctx(node, target, skip)
    y = node.forward(x, ctx)
    R = rng.standard_normal(np.shape(y)) if np.ndim(y) else 1.0
    gx, pgrads = node.backward(ctx.store, R if np.ndim(y) else 1.0)

    def f():
        return float(np.sum(_surrogate_forward(node, x, ctx) * R))

    def fd(arr):
        out = np.zeros_like(arr, dtype=float)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            fp = f()
            arr[idx] = orig - step
            fm = f()
            arr[idx] = orig
            out[idx] = (fp - fm) / (2 * step)
        return out

    errors = [rel_error(gx, fd(x))]
    for name in sorted(node.trainable):
        errors.append(rel_error(pgrads[name], fd(node.params[name])))
    return max(errors)


def check_graph(graph: Graph, x, target, step: float = 1e-6) -> float:
    """Relative error of the whole trainable-gradient set against finite differences."""
    graph.forward(x, target)
    grads = graph.backward()
    params = graph.trainable_parameters()
    analytic, numeric = [], []
    for name, arr in params.items():
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            fp, _ = graph.forward(x, target)
            arr[idx] = orig - step
            fm, _ = graph.forward(x, target)
            arr[idx] = orig
            numeric.append((fp - fm) / (2 * step))
            analytic.append(grads[name][idx])
    graph._saved = None
    if not analytic:
        return 0.0
    return rel_error(np.array(analytic), np.array(numeric))


def _random_input(node, shape, rng, margin=1e-3):
    x = rng.standard_normal(shape)
    if isinstance(node, ActStep):
        c = node.levels.thresholds
        # scale so the outer thresholds are exercised, then nudge off each kink
        x *= max(1.0, float(np.max(np.abs(c))) * 0.75)
        for ci in c:
            close = np.abs(x - ci) < margin
            x[close] += np.where(x[close] >= ci, margin, -margin)
    return x


def check_node_kinds(graph: Graph, trials: int = 50, seed: int = 0, tokens: int = 3, step: float = 1e-6):
    """Per node kind in ``graph``, the worst relative error over ``trials`` random inputs.

    Each trial re-draws inputs and upstream weights and, for nodes with
    parameters, perturbs a copy of the parameters so checks do not depend on
    the initial values (LoRA's zero B, identity affines).
    """
    rng = np.random.default_rng(seed)
    widths = _input_widths(graph)
    worst = {}
    for node, in_w in zip(graph.all_nodes, widths):
        label = node_label(node)
        for _ in range(trials):
            trial = _perturbed_copy(node, rng)
            x = _random_input(trial, (tokens, in_w), rng)
            target = skip = None
            if isinstance(trial, LossCE):
                target = rng.integers(0, in_w, tokens)
            elif isinstance(trial, LossMSE):
                target = rng.standard_normal((tokens, in_w))
            elif isinstance(trial, Residual):
                skip = rng.standard_normal((tokens, in_w))
            err = check_node(trial, x, rng, target, skip, step)
            worst[label] = max(worst.get(label, 0.0), err)
    return worst


def _perturbed_copy(node, rng):
    import copy

    clone = copy.copy(node)
    clone.params = {k: v.astype(np.float64) + 0.1 * rng.standard_normal(v.shape) for k, v in node.params.items()}
    clone.trainable = set(node.trainable)
    return clone


def _input_widths(graph: Graph):
    # walk the chain once with a dummy batch to learn each node's input width
    widths = []
    first = graph.nodes[0]
    if isinstance(first, (Linear, LoRA)):
        w = first.params["W"].shape[1]
    else:
        raise ValueError("graph must start with a linear layer to infer its input width")
    for node in graph.all_nodes:
        widths.append(w)
        if isinstance(node, (Linear, LoRA)):
            w = node.params["W"].shape[0]
    return widths
