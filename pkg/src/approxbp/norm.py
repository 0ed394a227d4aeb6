"""LayerNorm / RMSNorm and their memory-sharing variants.

The memory-sharing forms keep the normalised output ``y`` and one ``sigma``
per token instead of the input. Because the centring projection H satisfies
H y = y, the input gradient is recoverable from ``y`` alone:

    dx = (center(g) - y * <y, g> / p) / sigma        (LayerNorm)
    dx = (g - y * <y, g> / p) / sigma                (RMSNorm)

The affine (alpha, beta) is folded into the next linear layer first
(:func:`merge_ln`, :func:`merge_rms`) so the norm itself has no parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class AffineParams:
    alpha: np.ndarray
    beta: np.ndarray

    @classmethod
    def identity(cls, p: int) -> "AffineParams":
        return cls(np.ones(p), np.zeros(p))

    def __post_init__(self):
        if np.shape(self.alpha) != np.shape(self.beta) or np.ndim(self.alpha) != 1:
            raise ValueError("alpha and beta must be vectors of equal length")


@dataclass(frozen=True)
class SavedNormState:
    y: np.ndarray
    sigma: np.ndarray
    centered: bool
    shared: bool = False


@dataclass(frozen=True)
class MergedLinear:
    W: np.ndarray
    b: np.ndarray


def _check_2d(x):
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"expected a [tokens, features] array, got shape {x.shape}")
    if x.shape[1] < 2:
        raise ValueError("normalised dimension must be at least 2")
    return x


def _normalize(x, eps, centered):
    x = _check_2d(x)
    if eps <= 0:
        raise ValueError("eps must be positive")
    z = x - x.mean(axis=1, keepdims=True) if centered else x
    sigma = np.sqrt(np.mean(z * z, axis=1) + eps)
    return z / sigma[:, None], sigma


def ln_forward(x, affine: AffineParams | None = None, eps: float = DEFAULT_EPS):
    y, _ = _normalize(x, eps, centered=True)
    if affine is None:
        return y
    return y * affine.alpha + affine.beta


def rms_forward(x, alpha=None, eps: float = DEFAULT_EPS):
    y, _ = _normalize(x, eps, centered=False)
    if alpha is None:
        return y
    alpha = alpha.alpha if isinstance(alpha, AffineParams) else alpha
    return y * alpha


def _textbook_backward(x, alpha, eps, upstream, centered):
    # differentiate through mean, variance and the affine one step at a time
    x = _check_2d(x)
    p = x.shape[1]
    mu = x.mean(axis=1, keepdims=True) if centered else 0.0
    z = x - mu
    var = np.mean(z * z, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = z * inv
    g = np.asarray(upstream)
    grad_alpha = np.sum(g * xhat, axis=0)
    grad_beta = np.sum(g, axis=0)
    gx_hat = g * alpha
    grad_var = np.sum(gx_hat * z, axis=1, keepdims=True) * -0.5 * inv ** 3
    grad_z = gx_hat * inv + grad_var * 2.0 * z / p
    if centered:
        grad_x = grad_z - grad_z.mean(axis=1, keepdims=True)
    else:
        grad_x = grad_z
    return grad_x, grad_alpha, grad_beta


def ln_backward_oracle(x, affine: AffineParams | None, eps, upstream):
    """Reference LayerNorm backward: (grad_x, grad_alpha, grad_beta)."""
    alpha = np.ones(np.shape(x)[1]) if affine is None else affine.alpha
    return _textbook_backward(x, alpha, eps, upstream, centered=True)


def rms_backward_oracle(x, alpha, eps, upstream):
    """Reference RMSNorm backward: (grad_x, grad_alpha)."""
    alpha = np.ones(np.shape(x)[1]) if alpha is None else alpha
    gx, ga, _ = _textbook_backward(x, alpha, eps, upstream, centered=False)
    return gx, ga


def msln_forward(x, eps: float = DEFAULT_EPS, shared: bool = False):
    y, sigma = _normalize(x, eps, centered=True)
    return y, SavedNormState(y, sigma, centered=True, shared=shared)


def msrms_forward(x, eps: float = DEFAULT_EPS, shared: bool = False):
    y, sigma = _normalize(x, eps, centered=False)
    return y, SavedNormState(y, sigma, centered=False, shared=shared)


def ms_backward(state: SavedNormState, upstream):
    g = np.asarray(upstream)
    y = state.y
    if g.shape != y.shape:
        raise ValueError(f"upstream shape {g.shape} does not match saved output {y.shape}")
    p = y.shape[1]
    proj = np.sum(y * g, axis=1, keepdims=True) / p
    if state.centered:
        g = g - g.mean(axis=1, keepdims=True)
    return (g - y * proj) / state.sigma[:, None]


def msln_backward(state: SavedNormState, upstream):
    return ms_backward(state, upstream)


def msrms_backward(state: SavedNormState, upstream):
    return ms_backward(state, upstream)


def merge_ln(W, b, affine: AffineParams) -> MergedLinear:
    """Fold LayerNorm's affine into the next linear: W diag(alpha), W beta + b."""
    W = np.asarray(W)
    b = np.asarray(b)
    if W.ndim != 2 or W.shape[1] != len(affine.alpha) or b.shape != (W.shape[0],):
        raise ValueError(f"cannot merge affine of size {len(affine.alpha)} into W {W.shape}, b {b.shape}")
    return MergedLinear(W * affine.alpha[None, :], W @ affine.beta + b)


def merge_rms(W, b, alpha) -> MergedLinear:
    alpha = alpha.alpha if isinstance(alpha, AffineParams) else np.asarray(alpha)
    W = np.asarray(W)
    b = np.asarray(b)
    if W.ndim != 2 or W.shape[1] != len(alpha) or b.shape != (W.shape[0],):
        raise ValueError(f"cannot merge alpha of size {len(alpha)} into W {W.shape}, b {b.shape}")
    return MergedLinear(W * alpha[None, :], b.copy())
