"""Minimal reverse-mode tape over dense arrays."""
from .config import DEFAULT_CONFIG, TOY_BLOCK_CONFIG, ConfigError, apply_overrides, build_graph, load_config
from .data import minibatches, regression_task, spiral_task
from .graph import Graph, GraphStateError
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
from .train import SGD, Adam, TraceRecord, TrainingError, flat_gap, make_optimizer, train

__all__ = [
    "ActPlain", "ActStep", "Adam", "ConfigError", "DEFAULT_CONFIG", "Graph", "GraphStateError",
    "LayerNorm", "Linear", "LoRA", "LoRAFA", "LossCE", "LossMSE", "MSLayerNorm", "MSRMSNorm",
    "Node", "RMSNorm", "Residual", "SGD", "TOY_BLOCK_CONFIG", "TraceRecord", "TrainingError",
    "apply_overrides", "build_graph", "flat_gap", "load_config", "make_optimizer", "minibatches",
    "regression_task", "spiral_task", "train",
]
