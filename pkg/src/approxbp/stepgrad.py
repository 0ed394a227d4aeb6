"""ReGELU2 / ReSiLU2 kernels.

Forward is the exact activation. The only state kept for backward is one
2-bit segment code per element (packed four to a byte, least significant
bits first) together with the constant step levels of the fitted ReLU
combination.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .approximator.functions import (
    ActivationKind,
    CombinationParams,
    activation,
    activation_grad,
    segment_codes,
)


class LevelsError(ValueError):
    pass


@dataclass(frozen=True)
class StepLevels:
    thresholds: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        s = np.asarray(self.levels, dtype=float)
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "levels", s)
        self.validate()

    def validate(self):
        t, s = self.thresholds, self.levels
        if t.ndim != 1 or s.ndim != 1 or len(s) != len(t) + 1:
            raise LevelsError(f"need len(levels) == len(thresholds) + 1, got {len(s)} and {len(t)}")
        k = math.log2(len(s))
        if k != int(k):
            raise LevelsError(f"number of levels must be a power of two, got {len(s)}")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(s)):
            raise LevelsError("thresholds and levels must be finite")
        if np.any(np.diff(t) <= 0):
            raise LevelsError("thresholds must be strictly increasing")
        if s[0] != 0.0:
            raise LevelsError(f"first level must be 0 (left of every threshold), got {float(s[0])!r}")
        if s[-1] != 1.0:
            raise LevelsError(f"last level must be 1 (right of every threshold), got {float(s[-1])!r}")

    @property
    def k(self) -> int:
        return int(math.log2(len(self.levels)))

    @classmethod
    def from_params(cls, params: CombinationParams) -> "StepLevels":
        return cls(params.thresholds, params.levels)


@dataclass(frozen=True)
class PackedCodes:
    data: np.ndarray  # uint8
    num_elements: int
    k: int = 2
    shape: tuple = None

    @property
    def nbytes(self) -> int:
        return int(self.data.size)


def pack(codes, k: int = 2) -> PackedCodes:
    """Pack integer codes < 2**k into bytes, element j at bit k*(j % (8//k)) of byte j*k//8."""
    if k not in (1, 2, 4, 8):
        raise ValueError(f"packing supports k in (1, 2, 4, 8), got {k}")
    arr = np.asarray(codes)
    flat = arr.reshape(-1).astype(np.int64, copy=False)
    if flat.size and (flat.min() < 0 or flat.max() >= 1 << k):
        raise ValueError(f"codes must lie in [0, {1 << k}) for k={k}")
    per_byte = 8 // k
    n = flat.size
    padded = np.zeros(-(-n // per_byte) * per_byte, dtype=np.uint8)
    padded[:n] = flat
    lanes = padded.reshape(-1, per_byte)
    out = np.zeros(lanes.shape[0], dtype=np.uint8)
    for lane in range(per_byte):
        out |= lanes[:, lane] << np.uint8(k * lane)
    return PackedCodes(out, n, k, arr.shape)


def unpack(packed: PackedCodes) -> np.ndarray:
    k = packed.k
    per_byte = 8 // k
    mask = np.uint8((1 << k) - 1)
    lanes = np.empty((packed.data.size, per_byte), dtype=np.uint8)
    for lane in range(per_byte):
        lanes[:, lane] = (packed.data >> np.uint8(k * lane)) & mask
    codes = lanes.reshape(-1)[: packed.num_elements]
    if packed.shape is not None:
        codes = codes.reshape(packed.shape)
    return codes


def forward_encode(kind, levels: StepLevels, x):
    """Exact activation of x plus packed segment codes.

    Returns (output, codes, n_nonfinite). NaN inputs get code 0 (every
    comparison is false) and are counted rather than raised.
    """
    kind = ActivationKind.parse(kind)
    x = np.asarray(x)
    out = activation(kind, x)
    codes = segment_codes(levels.thresholds, x)
    n_bad = int(x.size - np.count_nonzero(np.isfinite(x)))
    return out, pack(codes, levels.k), n_bad


def backward(codes, levels: StepLevels, upstream):
    """grad_in = levels[code] * upstream. ``codes`` may be packed or a plain array."""
    upstream = np.asarray(upstream)
    if isinstance(codes, PackedCodes):
        if codes.num_elements != upstream.size:
            raise ValueError(f"codes hold {codes.num_elements} elements but upstream has {upstream.size}")
        codes = unpack(codes)
    codes = np.asarray(codes)
    if codes.size != upstream.size:
        raise ValueError(f"codes hold {codes.size} elements but upstream has {upstream.size}")
    return levels.levels[codes.reshape(upstream.shape)].astype(upstream.dtype, copy=False) * upstream


class UndefinedGap(float):
    """NaN-valued marker returned when the exact gradient vanishes."""

    def __new__(cls):
        return super().__new__(cls, math.nan)

    def __repr__(self):
        return "UndefinedGap()"


UNDEFINED = UndefinedGap()


def gradient_gap(kind, levels: StepLevels, x, upstream) -> float:
    """||(step - dh)(x) * g|| / ||dh(x) * g|| at one activation layer."""
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if x.shape != upstream.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {upstream.shape}")
    exact = activation_grad(kind, x) * upstream
    approx = levels.levels[segment_codes(levels.thresholds, x)] * upstream
    denom = np.linalg.norm(exact)
    if denom == 0.0:
        return UNDEFINED
    return float(np.linalg.norm(approx - exact) / denom)
