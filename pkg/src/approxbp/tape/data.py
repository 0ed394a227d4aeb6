"""Fixed-seed synthetic tasks."""
from __future__ import annotations

import numpy as np

from ..approximator.functions import gelu


def regression_task(seed=0, n_samples=65536, in_dim=8, out_dim=1, teacher_width=32, noise=0.1,
                    teacher="tanh", dtype=np.float64):
    """Targets from a random one-hidden-layer teacher plus Gaussian noise.

    The default tanh teacher keeps the comparison between student activations
    neutral: a GELU teacher is exactly representable by a GELU student only.
    """
    if teacher not in ("tanh", "gelu"):
        raise ValueError(f"teacher must be 'tanh' or 'gelu', got {teacher!r}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_samples, in_dim))
    W1 = rng.standard_normal((teacher_width, in_dim)) / np.sqrt(in_dim)
    b1 = 0.1 * rng.standard_normal(teacher_width)
    W2 = rng.standard_normal((out_dim, teacher_width)) / np.sqrt(teacher_width)
    hidden = X @ W1.T + b1
    hidden = np.tanh(hidden) if teacher == "tanh" else gelu(hidden)
    y = hidden @ W2.T + noise * rng.standard_normal((n_samples, out_dim))
    return X.astype(dtype), y.astype(dtype)


def spiral_task(seed=0, n_samples=1024, turns=1.5, noise=0.1, dtype=np.float64):
    """Two interleaved spirals in the plane, labels 0/1."""
    rng = np.random.default_rng(seed)
    n0 = n_samples // 2
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n_samples - n0, dtype=np.int64)])
    t = np.sqrt(rng.random(n_samples)) * turns * 2 * np.pi
    sign = np.where(labels == 0, 1.0, -1.0)
    X = np.stack([sign * t * np.cos(t), sign * t * np.sin(t)], axis=1) / (turns * 2 * np.pi)
    X += noise * rng.standard_normal(X.shape) / (turns * 2)
    return X.astype(dtype), labels


def minibatches(X, y, batch_size, seed=0):
    """Endless stream of shuffled minibatches, reshuffled every epoch."""
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    batch_size = min(batch_size, n)
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            idx = order[start:start + batch_size]
            yield X[idx], y[idx]
