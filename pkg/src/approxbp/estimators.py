"""scikit-learn style wrappers around the fitter and the tape."""
from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .approximator import SAConfig, combo_eval, fit, objective
from .approximator.functions import activation
from .tape.config import apply_overrides, build_graph
from .tape.data import minibatches
from .tape.train import train


class ReLUCombinationFitter(BaseEstimator):
    """Fits the ReLU combination to an activation; ``transform``-free, use ``predict``.

    ``fit`` ignores its arguments apart from the optional ``X``/``y`` sklearn
    passes around: the target function is the activation itself.
    """

    def __init__(self, activation="gelu", k=2, mode="primitive", epsilon=1e-8, restarts=10,
                 iterations=200_000, seed=0):
        self.activation = activation
        self.k = k
        self.mode = mode
        self.epsilon = epsilon
        self.restarts = restarts
        self.iterations = iterations
        self.seed = seed

    def fit(self, X=None, y=None):
        cfg = SAConfig(restarts=self.restarts, iterations=self.iterations, seed=self.seed)
        self.params_ = fit(self.activation, k=self.k, mode=self.mode, config=cfg, epsilon=self.epsilon)
        self.a_ = np.asarray(self.params_.a)
        self.c_ = np.asarray(self.params_.c)
        self.objective_ = self.params_.objective_value
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        x = np.asarray(X, dtype=float)
        return combo_eval(self.params_, x)

    def score(self, X=None, y=None):
        """Negative fit objective (higher is better, as sklearn expects)."""
        check_is_fitted(self, "params_")
        return -objective(self.activation, self.params_, self.mode)

    def residual(self, X):
        """Pointwise activation minus approximation."""
        x = np.asarray(X, dtype=float)
        return activation(self.params_.activation, x) - self.predict(x)


class TapeMLPRegressor(RegressorMixin, BaseEstimator):
    """Small MLP trained on the tape, with a choice of activation and norm kernels."""

    def __init__(self, hidden=64, depth=2, activation="gelu", norm="ln", steps=2000, batch_size=64,
                 lr=1e-3, seed=0, coefficients=None):
        self.hidden = hidden
        self.depth = depth
        self.activation = activation
        self.norm = norm
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.coefficients = coefficients

    def _config(self, n_in, n_out):
        layers = []
        for _ in range(self.depth):
            layers += [{"type": "linear", "out": self.hidden}, {"type": "activation"}, {"type": "norm"}]
        layers.append({"type": "linear", "out": n_out})
        cfg = {"input_dim": n_in, "output_dim": n_out, "layers": layers, "loss": "mse"}
        return apply_overrides(cfg, self.activation, self.norm)

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self._single = y.ndim == 1
        Y = y.reshape(len(y), -1)
        self.n_features_in_ = X.shape[1]
        self.graph_ = build_graph(self._config(X.shape[1], Y.shape[1]), seed=self.seed,
                                  coefficients=copy.copy(self.coefficients))
        batches = minibatches(X, Y, self.batch_size, self.seed)
        self.trace_ = train(self.graph_, batches, {"name": "adam", "lr": self.lr}, self.steps)
        self.loss_curve_ = [r.loss for r in self.trace_]
        return self

    def predict(self, X):
        check_is_fitted(self, "graph_")
        X = check_array(X, dtype=np.float64)
        h = X
        for node in self.graph_.nodes:
            h = node.forward(h, _NullContext())
        return h[:, 0] if self._single else h


class _NullContext:
    act_bits = 16
    norm_bits = 32
    input_key = next_input_key = None
    next_saves_input = False
    skip_value = None
    target = None

    def save(self, *args, **kwargs):
        pass

    def note(self, *args):
        pass
