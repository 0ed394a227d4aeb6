"""Reference activations, the ReLU combination and its step derivative."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ActivationKind(enum.Enum):
    GELU = "gelu"
    SILU = "silu"

    @classmethod
    def parse(cls, value) -> "ActivationKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown activation {value!r}; expected 'gelu' or 'silu'") from None


class ObjectiveMode(enum.Enum):
    PRIMITIVE = "primitive"
    DERIVATIVE = "derivative"

    @classmethod
    def parse(cls, value) -> "ObjectiveMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown objective mode {value!r}") from None


# Unchecked array kernels. The step kernels call these directly so that their
# forward output is produced by exactly the same arithmetic as the plain path.

def gelu(x):
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * (_INV_SQRT_2PI * np.exp(-0.5 * x * x))


def silu(x):
    return x * expit(x)


def silu_grad(x):
    s = expit(x)
    return s + x * s * (1.0 - s)


_FORWARD = {ActivationKind.GELU: gelu, ActivationKind.SILU: silu}
_GRAD = {ActivationKind.GELU: gelu_grad, ActivationKind.SILU: silu_grad}


def activation(kind, x):
    """Elementwise primitive without input checks (NaN propagates)."""
    return _FORWARD[ActivationKind.parse(kind)](np.asarray(x, dtype=float) if np.isscalar(x) else x)


def activation_grad(kind, x):
    return _GRAD[ActivationKind.parse(kind)](np.asarray(x, dtype=float) if np.isscalar(x) else x)


def _check_finite(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("reference activation is defined for finite inputs only")
    return arr


def _unwrap(out, like):
    return float(out) if np.ndim(like) == 0 else out


def reference_eval(kind, x):
    """GELU(x) = x * Phi(x) or SiLU(x) = x * sigmoid(x); raises on non-finite input."""
    arr = _check_finite(x)
    return _unwrap(_FORWARD[ActivationKind.parse(kind)](arr), x)


def reference_deriv(kind, x):
    arr = _check_finite(x)
    return _unwrap(_GRAD[ActivationKind.parse(kind)](arr), x)


# Scalar versions on the stdlib erfc; used by the adaptive quadrature.

def _gelu_scalar(x: float) -> float:
    return 0.5 * x * math.erfc(-x / math.sqrt(2.0))


def _gelu_grad_scalar(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0)) + x * _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def _sigmoid_scalar(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _silu_scalar(x: float) -> float:
    return x * _sigmoid_scalar(x)


def _silu_grad_scalar(x: float) -> float:
    s = _sigmoid_scalar(x)
    return s + x * s * (1.0 - s)


SCALAR_FORWARD = {ActivationKind.GELU: _gelu_scalar, ActivationKind.SILU: _silu_scalar}
SCALAR_GRAD = {ActivationKind.GELU: _gelu_grad_scalar, ActivationKind.SILU: _silu_grad_scalar}


@dataclass(frozen=True)
class TailInterval:
    A: float
    B: float
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.A < 0 < self.B:
            raise ValueError(f"tail interval must straddle zero, got [{self.A}, {self.B}]")


def tail_interval(kind, epsilon: float = 1e-8) -> TailInterval:
    """Symmetric [A, B] whose two outer tails of the squared fit error sum below epsilon.

    GELU: B = sqrt(-2 ln eps).  SiLU: B = -2 ln(eps / 2).
    """
    kind = ActivationKind.parse(kind)
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if kind is ActivationKind.GELU:
        B = math.sqrt(-2.0 * math.log(epsilon))
    else:
        B = -2.0 * math.log(epsilon / 2.0)
    return TailInterval(-B, B, epsilon)


@dataclass(frozen=True)
class CombinationParams:
    """Weights ``a`` and thresholds ``c`` of a sum of 2^k - 1 shifted ReLUs.

    The last ReLU gets weight ``1 - sum(a)`` so the slope to the right of every
    threshold is exactly one.
    """

    a: tuple
    c: tuple
    k: int = 2
    objective_mode: ObjectiveMode = ObjectiveMode.PRIMITIVE
    objective_value: float = float("nan")
    interval: tuple = (float("nan"), float("nan"))
    epsilon_tail: float = 1e-8
    activation: ActivationKind | None = None
    seed: int | None = None
    _weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        c = tuple(float(v) for v in self.c)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "objective_mode", ObjectiveMode.parse(self.objective_mode))
        if self.activation is not None:
            object.__setattr__(self, "activation", ActivationKind.parse(self.activation))
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        n = 2 ** self.k
        if len(a) != n - 2 or len(c) != n - 1:
            raise ValueError(
                f"k={self.k} needs {n - 2} weights and {n - 1} thresholds, got {len(a)} and {len(c)}"
            )
        if not all(np.isfinite(a)) or not all(np.isfinite(c)):
            raise ValueError("weights and thresholds must be finite")
        if any(c[i] >= c[i + 1] for i in range(len(c) - 1)):
            raise ValueError(f"thresholds must be strictly increasing, got {c}")
        w = np.empty(n - 1)
        w[:-1] = a
        w[-1] = 1.0 - sum(a)
        w.setflags(write=False)
        object.__setattr__(self, "_weights", w)

    @property
    def weights(self) -> np.ndarray:
        """All 2^k - 1 ReLU weights, the implied last one included."""
        return self._weights

    @property
    def thresholds(self) -> np.ndarray:
        return np.array(self.c)

    @property
    def levels(self) -> np.ndarray:
        """Slope on each of the 2^k segments; first is 0, last is exactly 1."""
        s = np.zeros(len(self.c) + 1)
        s[1:] = np.cumsum(self._weights)
        s[-1] = 1.0
        return s

    def with_fit(self, **changes) -> "CombinationParams":
        fields = dict(
            a=self.a, c=self.c, k=self.k, objective_mode=self.objective_mode,
            objective_value=self.objective_value, interval=self.interval,
            epsilon_tail=self.epsilon_tail, activation=self.activation, seed=self.seed,
        )
        fields.update(changes)
        return CombinationParams(**fields)


def combo_eval(params: CombinationParams, x):
    """sum_i w_i * max(x - c_i, 0), elementwise."""
    arr = np.asarray(x, dtype=float)
    out = np.zeros_like(arr)
    for w, ci in zip(params.weights, params.c):
        out = out + w * np.maximum(arr - ci, 0.0)
    return _unwrap(out, x)


def segment_codes(thresholds, x) -> np.ndarray:
    """Number of thresholds strictly below each x; NaN maps to 0."""
    arr = np.asarray(x)
    code = np.zeros(arr.shape, dtype=np.uint8)
    for ci in thresholds:
        code += arr > ci
    return code


def combo_deriv(params: CombinationParams, x):
    """Return (slope level, segment code) of the combination at x."""
    code = segment_codes(params.c, x)
    level = params.levels[code]
    if np.ndim(x) == 0:
        return float(level), int(code)
    return level, code


def constraint_residual(params: CombinationParams) -> float:
    """sum_i w_i c_i; zero means the combination tends to x - 0 on the right."""
    return float(np.dot(params.weights, params.c))


# Coefficients obtained by simulated annealing, copied to full precision.
PUBLISHED = {
    ("gelu", "primitive"): (
        (-0.04922261145617846, 1.0979632065417297),
        (-3.1858810036855245, -0.001178821281161997, 3.190832613414926),
    ),
    ("silu", "primitive"): (
        (-0.04060357190528599, 1.080925428529668),
        (-6.3050461001646445, -0.0008684942046214787, 6.325815242089708),
    ),
    ("gelu", "derivative"): (
        (0.32465931184406527, 0.34812875668739607),
        (-0.4535743722857079, -0.0010587205574873046, 0.4487575313884231),
    ),
}


def published_params(kind="gelu", mode="primitive", epsilon: float = 1e-8) -> CombinationParams:
    kind = ActivationKind.parse(kind)
    mode = ObjectiveMode.parse(mode)
    key = (kind.value, mode.value)
    if key not in PUBLISHED:
        raise KeyError(f"no published coefficients for {kind.value}/{mode.value}")
    a, c = PUBLISHED[key]
    iv = tail_interval(kind, epsilon)
    return CombinationParams(
        a=a, c=c, k=2, objective_mode=mode, interval=(iv.A, iv.B),
        epsilon_tail=epsilon, activation=kind,
    )
