"""Simulated annealing fit of the ReLU combination."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .functions import ActivationKind, CombinationParams, ObjectiveMode, tail_interval
from .objective import FastObjective, _evaluate, objective

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class SAConfig:
    restarts: int = 10
    iterations: int = 200_000
    initial_temperature: float = 1.0
    cooling_ratio: float = 0.995
    cooling_interval: int = 100
    scale_initial: float = 0.5
    scale_final: float = 1e-3
    seed: int = 0
    polish: bool = True
    constrained: bool | None = None

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.cooling_ratio < 1.0:
            raise ValueError("cooling ratio must lie in (0, 1)")
        if self.initial_temperature <= 0 or self.scale_initial <= 0 or self.scale_final <= 0:
            raise ValueError("temperature and proposal scales must be positive")


# thresholds step on the interval's scale; weights use the raw proposal scale
_THRESHOLD_STEP = 1.0 / 6.0


@njit(cache=True)
def _complete(x, n_a, constrained):
    """Sort the thresholds and, if constrained, solve the first weight from
    sum_i w_i c_i = 0. Returns False when the thresholds are not distinct.

    The constraint is linear in the weights and its coefficient on a_0 is
    c_0 - c_last, which never vanishes for distinct thresholds.
    """
    n = x.shape[0]
    x[n_a:] = np.sort(x[n_a:])
    for j in range(n_a, n - 1):
        if x[j + 1] <= x[j]:
            return False
    if constrained:
        cl = x[n - 1]
        acc = cl
        for i in range(1, n_a):
            acc += x[i] * (x[n_a + i] - cl)
        x[0] = -acc / (x[n_a] - cl)
        if not math.isfinite(x[0]):
            return False
    return True


@njit(cache=True)
def _inside(x, n_a, A, B):
    for j in range(n_a, x.shape[0]):
        if not A < x[j] < B:
            return False
    return True


@njit(cache=True)
def _anneal(x0, normals, uniforms, t0, ratio, interval, s0, s1, constrained,
            mode, kind, A, B, const, grid, R0, dR0, R1, dR1):
    n_iter = normals.shape[0]
    n_a = (x0.shape[0] - 1) // 2
    x = x0.copy()
    fx = _evaluate(x, mode, kind, A, B, const, grid, R0, dR0, R1, dR1)
    best = x.copy()
    fbest = fx
    decay = math.log(s1 / s0) / max(n_iter - 1, 1)
    c_step = B * _THRESHOLD_STEP
    cand = np.empty_like(x)
    for it in range(n_iter):
        temp = t0 * ratio ** (it // interval)
        scale = s0 * math.exp(decay * it)
        for j in range(x.shape[0]):
            cand[j] = x[j] + scale * normals[it, j] * (c_step if j >= n_a else 1.0)
        # thresholds outside [A, B] would only add flat directions
        if not _complete(cand, n_a, constrained) or not _inside(cand, n_a, A, B):
            continue
        fc = _evaluate(cand, mode, kind, A, B, const, grid, R0, dR0, R1, dR1)
        if not math.isfinite(fc):
            continue
        # log scale keeps the schedule independent of the objective's magnitude
        if fc <= fx or uniforms[it] < math.exp(-(math.log(fc) - math.log(fx)) / temp):
            x[:] = cand
            fx = fc
            if fx < fbest:
                fbest = fx
                best[:] = x
    return best, fbest


def _initial_point(rng, n_a, B, constrained):
    # redraw until the thresholds are separated
    while True:
        c = np.sort(rng.uniform(-B, B, n_a + 1))
        a = rng.uniform(-1.0, 1.0, n_a)
        x = np.concatenate([a, c])
        if np.all(np.diff(c) >= 1e-3) and _complete(x, n_a, constrained):
            return x


def _run_restart(fast: FastObjective, config: SAConfig, restart: int, n_a: int, constrained: bool):
    rng = np.random.default_rng(config.seed + restart)
    x0 = _initial_point(rng, n_a, fast.B, constrained)
    normals = rng.standard_normal((config.iterations, x0.size))
    uniforms = rng.random(config.iterations)
    x, fx = _anneal(
        x0, normals, uniforms, config.initial_temperature, config.cooling_ratio,
        config.cooling_interval, config.scale_initial, config.scale_final, constrained,
        *fast._args,
    )
    if config.polish and math.isfinite(fx):
        skip = 1 if constrained else 0

        def expand(v):
            full = np.concatenate([[0.0], v]) if constrained else v.copy()
            ok = _complete(full, n_a, constrained) and _inside(full, n_a, fast.A, fast.B)
            return full if ok else None

        def f(v):
            full = expand(v)
            if full is None:
                return math.inf
            val = fast(full)
            return val if math.isfinite(val) else math.inf

        res = minimize(f, x[skip:], method="Nelder-Mead",
                       options={"xatol": 1e-13, "fatol": 1e-17, "maxiter": 20_000, "maxfev": 40_000})
        if res.fun < fx:
            x = expand(res.x)
            fx = float(res.fun)
    return x, float(fx)


def fit(kind, k: int = 2, mode="primitive", config: SAConfig | None = None,
        epsilon: float = 1e-8) -> CombinationParams:
    """Fit a 2^k - 1 ReLU combination to GELU or SiLU (or to their derivative).

    Each restart anneals from its own seed (``config.seed + restart``) and is
    polished with Nelder-Mead; the best one is re-scored with adaptive
    quadrature. Thresholds stay inside the tail interval. In primitive mode
    the first weight is solved from the zero-residual constraint unless
    ``config.constrained`` is False; the unconstrained optimum of the
    truncated integral drifts a few 1e-4 off it.
    """
    kind = ActivationKind.parse(kind)
    mode = ObjectiveMode.parse(mode)
    config = config or SAConfig()
    if k < 2:
        raise ValueError("k must be at least 2")
    interval = tail_interval(kind, epsilon)
    fast = FastObjective(kind, mode, interval)
    n_a = 2 ** k - 2
    constrained = config.constrained
    if constrained is None:
        constrained = mode is ObjectiveMode.PRIMITIVE

    best_x, best_f = None, math.inf
    for r in range(config.restarts):
        x, fx = _run_restart(fast, config, r, n_a, bool(constrained))
        log.info("restart %d: objective %.6g", r, fx)
        if fx < best_f:
            best_x, best_f = x, fx
    if best_x is None:
        raise FitError("every restart produced a non-finite objective")

    params = CombinationParams(
        a=best_x[:n_a], c=best_x[n_a:], k=k, objective_mode=mode,
        interval=(interval.A, interval.B), epsilon_tail=epsilon,
        activation=kind, seed=config.seed,
    )
    return params.with_fit(objective_value=objective(kind, params, mode, interval))
