"""L2 fit objectives between an activation and its ReLU combination.

Two evaluators live here:

* :func:`objective` integrates the squared error with adaptive Simpson,
  splitting the domain at every threshold so each panel is smooth.
* :class:`FastObjective` evaluates the same integral through precomputed
  moment tables. It is what the annealer calls two hundred thousand times per
  restart; tests hold it to the quadrature result.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .functions import (
    SCALAR_FORWARD,
    SCALAR_GRAD,
    ActivationKind,
    CombinationParams,
    ObjectiveMode,
    activation,
    activation_grad,
)


class QuadratureError(ArithmeticError):
    """Adaptive Simpson hit its depth limit; ``partial`` holds the best estimate."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-12, max_depth: int = 48) -> float:
    """Integrate f over [a, b] to absolute tolerance ``tol``.

    Raises QuadratureError (carrying the partial sum) if any branch needs more
    than ``max_depth`` bisections.
    """
    if b == a:
        return 0.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    failed = [False]

    def recurse(a, m, b, fa, fm, fb, whole, tol, depth):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm = f(lm)
        frm = f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        delta = left + right - whole
        if abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        if depth >= max_depth:
            failed[0] = True
            return left + right + delta / 15.0
        return (recurse(a, lm, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
                + recurse(m, rm, b, fm, frm, fb, right, 0.5 * tol, depth + 1))

    value = recurse(a, m, b, fa, fm, fb, whole, tol, 0)
    if failed[0]:
        raise QuadratureError(f"adaptive Simpson did not converge within depth {max_depth}", value)
    return value


def _panels(c, A: float, B: float):
    pts = [A] + sorted(ci for ci in c if A < ci < B) + [B]
    return [(pts[i], pts[i + 1]) for i in range(len(pts) - 1) if pts[i + 1] > pts[i]]


def objective(kind, params: CombinationParams, mode="primitive", interval=None,
              tol: float = 1e-12, max_depth: int = 48) -> float:
    """Squared L2 distance over [A, B] between the activation and the combination.

    ``mode='primitive'`` compares the functions, ``mode='derivative'`` their
    derivatives. ``interval`` is a TailInterval or an (A, B) pair; it defaults
    to the one stored on ``params``.
    """
    kind = ActivationKind.parse(kind)
    mode = ObjectiveMode.parse(mode)
    if interval is None:
        interval = params.interval
    A, B = (interval.A, interval.B) if hasattr(interval, "A") else (float(interval[0]), float(interval[1]))
    if not B >= A:
        raise ValueError(f"empty interval [{A}, {B}]")
    if B == A:
        return 0.0

    w = params.weights
    c = params.c
    panels = _panels(c, A, B)
    width = B - A
    total = 0.0
    for lo, hi in panels:
        mid = 0.5 * (lo + hi)
        # on a panel the combination is a single line slope * x + offset
        slope = 0.0
        offset = 0.0
        for wi, ci in zip(w, c):
            if ci < mid:
                slope += wi
                offset -= wi * ci
        if mode is ObjectiveMode.PRIMITIVE:
            h = SCALAR_FORWARD[kind]

            def f(x, h=h, slope=slope, offset=offset):
                d = h(x) - (slope * x + offset)
                return d * d
        else:
            dh = SCALAR_GRAD[kind]

            def f(x, dh=dh, slope=slope):
                d = dh(x) - slope
                return d * d

        total += adaptive_simpson(f, lo, hi, tol * (hi - lo) / width, max_depth)
    return float(total)


def simpson_reference(kind, params: CombinationParams, mode="primitive", interval=None,
                      n_points: int = 10_000_000) -> float:
    """Composite Simpson on a fixed grid of about ``n_points`` nodes.

    Independent cross-check for :func:`objective`; uses the vectorised
    activation kernels and a uniform mesh (one mesh per threshold panel so the
    step derivative never straddles a node).
    """
    kind = ActivationKind.parse(kind)
    mode = ObjectiveMode.parse(mode)
    if interval is None:
        interval = params.interval
    A, B = (interval.A, interval.B) if hasattr(interval, "A") else (float(interval[0]), float(interval[1]))
    if B == A:
        return 0.0
    w = params.weights
    c = np.asarray(params.c)
    total = 0.0
    for lo, hi in _panels(params.c, A, B):
        n = max(2, int(n_points * (hi - lo) / (B - A)))
        n += n % 2
        x = np.linspace(lo, hi, n + 1)
        active = c < 0.5 * (lo + hi)
        if mode is ObjectiveMode.PRIMITIVE:
            approx = np.zeros_like(x)
            for wi, ci, on in zip(w, c, active):
                if on:
                    approx += wi * (x - ci)
            y = (activation(kind, x) - approx) ** 2
        else:
            y = (activation_grad(kind, x) - float(np.sum(w[active]))) ** 2
        step = (hi - lo) / n
        total += step / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())
    return float(total)


# --------------------------------------------------------------------------
# Moment-table evaluator
#
# With r = h - relu and q = combo - relu (both vanish far from the origin),
#   int (h - combo)^2 = int r^2 - 2 int r q + int q^2.
# q is piecewise linear with kinks at the thresholds and 0, so int q^2 is
# closed form and int r q only needs R0(t) = int_t^B r and R1(t) = int_t^B x r,
# which are tabulated on a grid containing 0 and interpolated with cubic
# Hermite (their derivatives -r and -x r are known exactly).
#
# For derivatives, rho = dh - step(0) and the combination's step minus
# step(0) is piecewise constant; int rho over a panel is a difference of
# h - relu at its ends.

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)
_KIND_CODE = {ActivationKind.GELU: 0, ActivationKind.SILU: 1}


def _residual_fn(kind, x):
    return activation(kind, x) - np.maximum(x, 0.0)


def _cell_integrals(fn, grid):
    lo, hi = grid[:-1], grid[1:]
    half = 0.5 * (hi - lo)
    x = 0.5 * (hi + lo)[:, None] + half[:, None] * _GL_NODES[None, :]
    return (fn(x) * _GL_WEIGHTS[None, :]).sum(axis=1) * half


@njit(cache=True)
def _h_minus_relu(kind, x):
    if kind == 0:
        ax = abs(x)
        return -ax * 0.5 * math.erfc(ax / math.sqrt(2.0))
    ax = abs(x)
    return -ax / (1.0 + math.exp(ax))


@njit(cache=True)
def _interp(grid, F, dF, t):
    n = grid.shape[0] - 1
    if t <= grid[0]:
        return F[0]
    if t >= grid[n]:
        return F[n]
    dt = (grid[n] - grid[0]) / n
    j = int((t - grid[0]) / dt)
    if j > n - 1:
        j = n - 1
    while j > 0 and t < grid[j]:
        j -= 1
    while j < n - 1 and t > grid[j + 1]:
        j += 1
    h = grid[j + 1] - grid[j]
    s = (t - grid[j]) / h
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    return h00 * F[j] + h10 * h * dF[j] + h01 * F[j + 1] + h11 * h * dF[j + 1]


@njit(cache=True)
def _breakpoints(c, A, B):
    pts = np.empty(c.shape[0] + 3)
    pts[0] = A
    pts[1] = B
    pts[2] = 0.0
    for i in range(c.shape[0]):
        v = c[i]
        if v < A:
            v = A
        elif v > B:
            v = B
        pts[3 + i] = v
    pts.sort()
    return pts


@njit(cache=True)
def _primitive_fast(w, c, A, B, const, grid, R0, dR0, R1, dR1):
    pts = _breakpoints(c, A, B)
    total = const
    for p in range(pts.shape[0] - 1):
        lo = pts[p]
        hi = pts[p + 1]
        if hi <= lo:
            continue
        m = 0.5 * (lo + hi)
        slope = 0.0
        qm = 0.0
        for i in range(c.shape[0]):
            if c[i] < m:
                slope += w[i]
                qm += w[i] * (m - c[i])
        if m > 0.0:
            slope -= 1.0
            qm -= m
        L = hi - lo
        r0 = _interp(grid, R0, dR0, lo) - _interp(grid, R0, dR0, hi)
        r1 = _interp(grid, R1, dR1, lo) - _interp(grid, R1, dR1, hi)
        total += slope * slope * L * L * L / 12.0 + qm * qm * L
        total -= 2.0 * (slope * (r1 - m * r0) + qm * r0)
    return float(total)


@njit(cache=True)
def _derivative_fast(w, c, A, B, const, kind):
    pts = _breakpoints(c, A, B)
    total = const
    for p in range(pts.shape[0] - 1):
        lo = pts[p]
        hi = pts[p + 1]
        if hi <= lo:
            continue
        m = 0.5 * (lo + hi)
        s = 0.0
        for i in range(c.shape[0]):
            if c[i] < m:
                s += w[i]
        if m > 0.0:
            s -= 1.0
        total += s * s * (hi - lo) - 2.0 * s * (_h_minus_relu(kind, hi) - _h_minus_relu(kind, lo))
    return float(total)


@njit(cache=True)
def _evaluate(x, mode, kind, A, B, const, grid, R0, dR0, R1, dR1):
    # x = [a_1 .. a_{n-2}, c_1 .. c_{n-1}]; c must already be sorted
    n_c = (x.shape[0] + 1) // 2
    n_a = n_c - 1
    w = np.empty(n_c)
    tail = 1.0
    for i in range(n_a):
        w[i] = x[i]
        tail -= x[i]
    w[n_a] = tail
    c = x[n_a:]
    if mode == 0:
        return _primitive_fast(w, c, A, B, const, grid, R0, dR0, R1, dR1)
    return _derivative_fast(w, c, A, B, const, kind)


class FastObjective:
    """Table-driven evaluator of :func:`objective` for a fixed kind, mode and interval."""

    def __init__(self, kind, mode, interval, cells_per_unit: int = 1024):
        self.kind = ActivationKind.parse(kind)
        self.mode = ObjectiveMode.parse(mode)
        A, B = (interval.A, interval.B) if hasattr(interval, "A") else (float(interval[0]), float(interval[1]))
        if not A < 0 < B:
            raise ValueError("fast objective needs an interval straddling zero")
        self.A, self.B = A, B
        left = np.linspace(A, 0.0, int(math.ceil(-A * cells_per_unit)) + 1)
        right = np.linspace(0.0, B, int(math.ceil(B * cells_per_unit)) + 1)
        self.grid = np.concatenate([left[:-1], right])
        kind = self.kind
        grid = self.grid
        if self.mode is ObjectiveMode.PRIMITIVE:
            r = lambda x: _residual_fn(kind, x)  # noqa: E731
            cells0 = _cell_integrals(r, grid)
            cells1 = _cell_integrals(lambda x: x * r(x), grid)
            self.const = float(_cell_integrals(lambda x: r(x) ** 2, grid).sum())
            self.R0 = np.concatenate([np.cumsum(cells0[::-1])[::-1], [0.0]])
            self.R1 = np.concatenate([np.cumsum(cells1[::-1])[::-1], [0.0]])
            self.dR0 = -r(grid)
            self.dR1 = -grid * r(grid)
        else:
            rho = lambda x: activation_grad(kind, x) - (x > 0)  # noqa: E731
            self.const = float(_cell_integrals(lambda x: rho(x) ** 2, grid).sum())
            self.R0 = self.dR0 = self.R1 = self.dR1 = np.zeros(1)
        # non-uniform spacing only from forcing 0 onto the grid; _interp searches locally
        self._args = (
            0 if self.mode is ObjectiveMode.PRIMITIVE else 1,
            _KIND_CODE[kind], A, B, self.const, self.grid,
            self.R0, self.dR0, self.R1, self.dR1,
        )

    def __call__(self, x) -> float:
        """Objective at the packed vector [a..., c...] (c sorted)."""
        return float(_evaluate(np.asarray(x, dtype=float), *self._args))

    def params_value(self, params: CombinationParams) -> float:
        return self(np.concatenate([params.a, params.c]))
