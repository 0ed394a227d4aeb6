"""One training run from a config: data, graph, loop, final evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, build_graph
from .data import minibatches, regression_task, spiral_task
from .train import train


@dataclass
class RunResult:
    graph: object
    trace: list
    final_loss: float  # over the whole dataset after the last update
    ledger: object  # ledger of one training batch


def make_task(config: dict, seed: int):
    task = dict(config.get("task", {"name": "regression"}))
    name = task.pop("name", "regression")
    if name == "regression":
        return regression_task(seed, in_dim=config["input_dim"], out_dim=config.get("output_dim", 1), **task)
    if name == "spiral":
        if config["input_dim"] < 2:
            raise ConfigError("spiral task needs input_dim >= 2")
        X, y = spiral_task(seed, **task)
        if config["input_dim"] > 2:
            # pad with noise features so any input width can be fed
            rng = np.random.default_rng(seed + 1)
            X = np.hstack([X, 0.1 * rng.standard_normal((X.shape[0], config["input_dim"] - 2))])
        return X, y
    raise ConfigError(f"unknown task {name!r}")


def run(config: dict, seed: int = 0, steps: int | None = None, coefficients=None, record_gap=True) -> RunResult:
    try:
        graph = build_graph(config, seed=seed, coefficients=coefficients)
        X, y = make_task(config, seed)
    except TypeError as exc:
        raise ConfigError(f"bad task settings: {exc}") from exc
    steps = int(config.get("steps", 2000) if steps is None else steps)
    batches = minibatches(X, y, int(config.get("batch_size", 64)), seed)
    trace = train(graph, batches, config.get("optimizer", {"name": "adam", "lr": 1e-3}), steps, record_gap)
    ledger = graph.ledger
    final, _ = graph.forward(X, y)
    graph._saved = None
    if ledger is None:
        ledger = graph.ledger
    return RunResult(graph, trace, final, ledger)
