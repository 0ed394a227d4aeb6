"""Build graphs from the JSON model config."""
from __future__ import annotations

import copy

import numpy as np

from .. import _jsonio
from ..approximator import coeffile
from ..approximator.functions import ActivationKind
from ..norm import AffineParams, merge_ln, merge_rms
from ..stepgrad import StepLevels
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
    Residual,
    RMSNorm,
)


class ConfigError(ValueError):
    pass


ACTIVATIONS = {"gelu": ("gelu", False), "silu": ("silu", False),
               "regelu2": ("gelu", True), "resilu2": ("silu", True)}
NORMS = ("ln", "msln", "rms", "msrms")

DEFAULT_CONFIG = {
    "input_dim": 8,
    "output_dim": 1,
    "precision": 64,
    "storage_bits": {"activation": 16, "norm": 32},
    "eps": 1e-6,
    "layers": [
        {"type": "linear", "out": 64},
        {"type": "activation", "kind": "gelu"},
        {"type": "norm", "kind": "ln"},
        {"type": "linear", "out": 64},
        {"type": "activation", "kind": "gelu"},
        {"type": "norm", "kind": "ln"},
        {"type": "linear", "out": 1},
    ],
    "loss": "mse",
    "task": {"name": "regression", "n_samples": 65536, "teacher_width": 32, "noise": 0.1, "teacher": "tanh"},
    "steps": 2000,
    "batch_size": 64,
    "optimizer": {"name": "adam", "lr": 0.001},
}

# every node kind once, small enough for exhaustive finite differences
TOY_BLOCK_CONFIG = {
    "input_dim": 6,
    "output_dim": 3,
    "precision": 64,
    "layers": [
        {"type": "linear", "out": 8},
        {"type": "norm", "kind": "ln", "affine_trainable": True},
        {"type": "lora", "out": 8, "rank": 2},
        {"type": "activation", "kind": "gelu"},
        {"type": "norm", "kind": "msln"},
        {"type": "linear", "out": 8},
        {"type": "activation", "kind": "regelu2"},
        {"type": "residual", "from": 2},
        {"type": "norm", "kind": "rms", "affine_trainable": True},
        {"type": "lorafa", "out": 8, "rank": 2},
        {"type": "activation", "kind": "silu"},
        {"type": "norm", "kind": "msrms"},
        {"type": "linear", "out": 8, "trainable": False},
        {"type": "activation", "kind": "resilu2"},
        {"type": "linear", "out": 3},
    ],
    "loss": "ce",
    "task": {"name": "spiral", "n_samples": 256},
    "steps": 200,
    "batch_size": 32,
    "optimizer": {"name": "adam", "lr": 0.01},
}


def load_config(path) -> dict:
    try:
        data = _jsonio.load(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or "layers" not in data:
        raise ConfigError("config must be an object with a 'layers' list")
    return data


def load_levels(path) -> tuple[StepLevels, str | None]:
    """Step levels from a coefficient file, or from an explicit
    {"thresholds": [...], "levels": [...]} file. Returns (levels, activation)."""
    data = _jsonio.load(path)
    if "levels" in data:
        return StepLevels(data["thresholds"], data["levels"]), data.get("activation")
    params = coeffile.from_dict(data)
    return StepLevels.from_params(params), params.activation.value


def _dtype(config):
    bits = int(config.get("precision", 64))
    if bits not in (32, 64):
        raise ConfigError("precision must be 32 or 64")
    return np.float64 if bits == 64 else np.float32


def apply_overrides(config: dict, activation=None, norm=None) -> dict:
    config = copy.deepcopy(config)
    for layer in config["layers"]:
        if layer.get("type") == "activation" and activation is not None:
            layer["kind"] = activation
        if layer.get("type") == "norm" and norm is not None:
            layer["kind"] = norm
    return config


def build_graph(config: dict, seed: int = 0, coefficients: dict | None = None) -> Graph:
    """Instantiate parameters (drawn in layer order from ``seed``) and nodes.

    Activation and norm choices draw no random numbers, so two configs that
    differ only in those choices start from identical weights.
    ``coefficients`` maps 'gelu'/'silu' to a coefficient or levels file used
    by step activations; the bundled coefficients are the fallback.
    """
    coefficients = coefficients or {}
    dtype = _dtype(config)
    rng = np.random.default_rng(seed)
    eps = float(config.get("eps", 1e-6))
    width = int(config.get("input_dim", 0))
    if width <= 0:
        raise ConfigError("input_dim must be positive")
    layers = config["layers"]
    if not isinstance(layers, list) or not layers:
        raise ConfigError("layers must be a non-empty list")

    nodes = []
    widths = []  # output width of each node
    for i, spec in enumerate(layers):
        kind = spec.get("type")
        name = spec.get("name", f"{i}:{kind}")
        if kind in ("linear", "lora", "lorafa"):
            out = int(spec["out"])
            W = (rng.standard_normal((out, width)) / np.sqrt(width)).astype(dtype)
            if kind == "linear":
                node = Linear(W, np.zeros(out, dtype=dtype), trainable=spec.get("trainable", True), name=name)
            else:
                r = int(spec.get("rank", 2))
                b = (0.01 * rng.standard_normal(out)).astype(dtype)
                A = (rng.standard_normal((r, width)) / np.sqrt(width)).astype(dtype)
                B = np.zeros((out, r), dtype=dtype)
                cls = LoRA if kind == "lora" else LoRAFA
                try:
                    node = cls(W, b, A, B, name=name)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from exc
            width = out
        elif kind == "activation":
            act = spec.get("kind", "gelu")
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}; expected one of {sorted(ACTIVATIONS)}")
            base, step = ACTIVATIONS[act]
            if step:
                node = ActStep(base, _levels_for(base, spec, coefficients), name=name)
            else:
                node = ActPlain(base, name=name)
        elif kind == "norm":
            nk = spec.get("kind", "ln")
            if nk not in NORMS:
                raise ConfigError(f"unknown norm {nk!r}; expected one of {NORMS}")
            n_eps = float(spec.get("eps", eps))
            trainable = bool(spec.get("affine_trainable", False))
            if nk == "ln":
                node = LayerNorm(width, n_eps, spec.get("alpha"), spec.get("beta"), trainable, dtype, name=name)
            elif nk == "rms":
                node = RMSNorm(width, n_eps, spec.get("alpha"), trainable, dtype, name=name)
            else:
                if trainable:
                    raise ConfigError(f"{name}: memory-sharing norms carry no affine; it is merged forward")
                node = MSLayerNorm(n_eps, name=name) if nk == "msln" else MSRMSNorm(n_eps, name=name)
                node._pending_affine = (nk, spec.get("alpha"), spec.get("beta"))
        elif kind == "residual":
            src = int(spec.get("from", -1))
            if not -1 <= src < i:
                raise ConfigError(f"{name}: residual source {src} must be an earlier layer or -1")
            src_width = config["input_dim"] if src == -1 else widths[src]
            if src_width != width:
                raise ConfigError(f"{name}: cannot add width {src_width} to width {width}")
            node = Residual(src, name=name)
        else:
            raise ConfigError(f"layer {i}: unknown type {kind!r}")
        nodes.append(node)
        widths.append(width)

    _merge_affines(nodes)

    loss_kind = config.get("loss", "mse")
    if loss_kind == "mse":
        loss = LossMSE(name="loss")
    elif loss_kind == "ce":
        loss = LossCE(name="loss")
    else:
        raise ConfigError(f"unknown loss {loss_kind!r}")
    bits = config.get("storage_bits", {})
    try:
        return Graph(nodes, loss, act_bits=int(bits.get("activation", 16)), norm_bits=int(bits.get("norm", 32)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _levels_for(base, spec, coefficients):
    path = spec.get("coefficients") or coefficients.get(base)
    if path is None:
        return StepLevels.from_params(coeffile.shipped(base, "primitive"))
    levels, act = load_levels(path)
    if act is not None and ActivationKind.parse(act).value != base:
        raise ConfigError(f"coefficient file {path} was fitted to {act}, not {base}")
    return levels


def _merge_affines(nodes):
    for i, node in enumerate(nodes):
        pending = getattr(node, "_pending_affine", None)
        if pending is None:
            continue
        del node._pending_affine
        nk, alpha, beta = pending
        if alpha is None and beta is None:
            continue
        nxt = nodes[i + 1] if i + 1 < len(nodes) else None
        if not isinstance(nxt, Linear):
            raise ConfigError(f"{node.name}: a non-identity affine can only be merged into a following linear")
        W, b = nxt.params["W"], nxt.params["b"]
        p = W.shape[1]
        alpha = np.ones(p) if alpha is None else np.asarray(alpha, dtype=float)
        if nk == "msln":
            beta = np.zeros(p) if beta is None else np.asarray(beta, dtype=float)
            merged = merge_ln(W, b, AffineParams(alpha, beta))
        else:
            merged = merge_rms(W, b, alpha)
        nxt.params["W"] = merged.W.astype(W.dtype)
        nxt.params["b"] = merged.b.astype(b.dtype)
