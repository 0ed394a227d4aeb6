"""Layer nodes for the reverse-mode tape.

Nodes hold parameters only. Whatever backward needs is handed to
``ctx.save`` during forward, which both stores it and books it in the memory
ledger; backward receives exactly that dict and nothing else.
"""
from __future__ import annotations

import numpy as np

from .. import norm as _norm
from .. import stepgrad
from ..approximator.functions import ActivationKind, activation, activation_grad


class Node:
    kind = "node"
    saves_input = False

    def __init__(self, name=None):
        self.name = name or self.kind
        self.params = {}
        self.trainable = set()

    def forward(self, x, ctx):
        raise NotImplementedError

    def backward(self, saved, g):
        """Return (grad wrt input, {param name: grad})."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Linear(Node):
    kind = "linear"

    def __init__(self, W, b=None, trainable=True, name=None):
        super().__init__(name)
        W = np.asarray(W)
        self.params["W"] = W
        self.params["b"] = np.zeros(W.shape[0], dtype=W.dtype) if b is None else np.asarray(b)
        if trainable:
            self.trainable = {"W", "b"}
        self.saves_input = bool(trainable)

    @property
    def in_features(self):
        return self.params["W"].shape[1]

    @property
    def out_features(self):
        return self.params["W"].shape[0]

    def forward(self, x, ctx):
        W, b = self.params["W"], self.params["b"]
        if x.shape[-1] != W.shape[1]:
            raise ValueError(f"{self.name}: input has {x.shape[-1]} features, W expects {W.shape[1]}")
        if self.saves_input:
            ctx.save("input", x, ctx.act_bits, shared_key=ctx.input_key)
        else:
            # frozen: dx = g W needs nothing, booked as an explicit zero
            ctx.save("input", None, ctx.act_bits, num_elements=0)
        return x @ W.T + b

    def backward(self, saved, g):
        W = self.params["W"]
        grads = {}
        if self.saves_input:
            x = saved["input"]
            grads["W"] = g.T @ x
            grads["b"] = g.sum(axis=0)
        return g @ W, grads


class LoRA(Node):
    """Frozen W plus trainable low-rank B @ A."""

    kind = "lora"
    saves_input = True

    def __init__(self, W, b, A, B, name=None):
        super().__init__(name)
        self.params.update(W=np.asarray(W), b=np.asarray(b), A=np.asarray(A), B=np.asarray(B))
        r = self.params["A"].shape[0]
        out, inp = self.params["W"].shape
        if self.params["A"].shape != (r, inp) or self.params["B"].shape != (out, r):
            raise ValueError(f"{self.name}: A must be (r, {inp}) and B ({out}, r)")
        if not 1 <= r <= min(out, inp):
            raise ValueError(f"{self.name}: rank {r} out of range")
        self.trainable = {"A", "B"}

    @property
    def rank(self):
        return self.params["A"].shape[0]

    def forward(self, x, ctx):
        p = self.params
        if x.shape[-1] != p["W"].shape[1]:
            raise ValueError(f"{self.name}: input has {x.shape[-1]} features, W expects {p['W'].shape[1]}")
        ax = x @ p["A"].T
        ctx.save("input", x, ctx.act_bits, shared_key=ctx.input_key)
        ctx.save("down", ax, ctx.act_bits)
        return x @ p["W"].T + ax @ p["B"].T + p["b"]

    def backward(self, saved, g):
        p = self.params
        x, ax = saved["input"], saved["down"]
        gb = g @ p["B"]
        grads = {"B": g.T @ ax, "A": gb.T @ x}
        return g @ p["W"] + gb @ p["A"], grads


class LoRAFA(LoRA):
    """LoRA with A frozen too: only A x is kept for backward."""

    kind = "lorafa"
    saves_input = False

    def __init__(self, W, b, A, B, name=None):
        super().__init__(W, b, A, B, name)
        self.trainable = {"B"}

    def forward(self, x, ctx):
        p = self.params
        if x.shape[-1] != p["W"].shape[1]:
            raise ValueError(f"{self.name}: input has {x.shape[-1]} features, W expects {p['W'].shape[1]}")
        ax = x @ p["A"].T
        ctx.save("down", ax, ctx.act_bits)
        return x @ p["W"].T + ax @ p["B"].T + p["b"]

    def backward(self, saved, g):
        p = self.params
        ax = saved["down"]
        return g @ p["W"] + (g @ p["B"]) @ p["A"], {"B": g.T @ ax}


class ActPlain(Node):
    kind = "activation"

    def __init__(self, act, name=None):
        super().__init__(name)
        self.act = ActivationKind.parse(act)

    def forward(self, x, ctx):
        ctx.save("input", x, ctx.act_bits)
        return activation(self.act, x)

    def backward(self, saved, g):
        return activation_grad(self.act, saved["input"]) * g, {}


class ActStep(Node):
    """Exact activation forward, step-function backward from 2-bit codes."""

    kind = "activation"

    def __init__(self, act, levels: stepgrad.StepLevels, name=None):
        super().__init__(name)
        self.act = ActivationKind.parse(act)
        self.levels = levels

    def forward(self, x, ctx):
        y, codes, n_bad = stepgrad.forward_encode(self.act, self.levels, x)
        ctx.save("codes", codes, self.levels.k, num_elements=codes.num_elements)
        ctx.note("nonfinite", n_bad)
        return y

    def backward(self, saved, g):
        return stepgrad.backward(saved["codes"], self.levels, g), {}


class LayerNorm(Node):
    kind = "norm"

    def __init__(self, p, eps=_norm.DEFAULT_EPS, alpha=None, beta=None, affine_trainable=False,
                 dtype=np.float64, name=None):
        super().__init__(name)
        self.eps = eps
        self.params["alpha"] = np.ones(p, dtype=dtype) if alpha is None else np.asarray(alpha, dtype=dtype)
        self.params["beta"] = np.zeros(p, dtype=dtype) if beta is None else np.asarray(beta, dtype=dtype)
        if affine_trainable:
            self.trainable = {"alpha", "beta"}

    def forward(self, x, ctx):
        ctx.save("input", x, ctx.norm_bits)
        return _norm.ln_forward(x, _norm.AffineParams(self.params["alpha"], self.params["beta"]), self.eps)

    def backward(self, saved, g):
        gx, ga, gb = _norm.ln_backward_oracle(
            saved["input"], _norm.AffineParams(self.params["alpha"], self.params["beta"]), self.eps, g)
        return gx, {k: v for k, v in (("alpha", ga), ("beta", gb)) if k in self.trainable}


class RMSNorm(Node):
    kind = "norm"

    def __init__(self, p, eps=_norm.DEFAULT_EPS, alpha=None, affine_trainable=False,
                 dtype=np.float64, name=None):
        super().__init__(name)
        self.eps = eps
        self.params["alpha"] = np.ones(p, dtype=dtype) if alpha is None else np.asarray(alpha, dtype=dtype)
        if affine_trainable:
            self.trainable = {"alpha"}

    def forward(self, x, ctx):
        ctx.save("input", x, ctx.norm_bits)
        return _norm.rms_forward(x, self.params["alpha"], self.eps)

    def backward(self, saved, g):
        gx, ga = _norm.rms_backward_oracle(saved["input"], self.params["alpha"], self.eps, g)
        return gx, ({"alpha": ga} if self.trainable else {})


class MSLayerNorm(Node):
    """Affine-free LayerNorm keeping (y, sigma); y is shared with the next
    layer when that layer stores its input anyway."""

    kind = "norm"
    centered = True

    def __init__(self, eps=_norm.DEFAULT_EPS, name=None):
        super().__init__(name)
        self.eps = eps

    def forward(self, x, ctx):
        fwd = _norm.msln_forward if self.centered else _norm.msrms_forward
        y, state = fwd(x, self.eps, shared=ctx.next_saves_input)
        ctx.save("sigma", state.sigma, 32)
        # kept at activation width: when shared this is the very buffer the next layer stores
        ctx.save("output", y, ctx.act_bits, shared_key=ctx.next_input_key if state.shared else None,
                 owner=False)
        ctx.save("state", state, 0, num_elements=0)
        return y

    def backward(self, saved, g):
        return _norm.ms_backward(saved["state"], g), {}


class MSRMSNorm(MSLayerNorm):
    centered = False


class Residual(Node):
    """Adds the output of an earlier node (index ``skip``; -1 is the graph input)."""

    kind = "residual"

    def __init__(self, skip: int, name=None):
        super().__init__(name)
        self.skip = int(skip)

    def forward(self, x, ctx):
        return x + ctx.skip_value

    def backward(self, saved, g):
        return g, {}


class LossMSE(Node):
    kind = "loss"

    def forward(self, pred, ctx):
        target = np.asarray(ctx.target, dtype=pred.dtype)
        if target.shape != pred.shape:
            target = target.reshape(pred.shape)
        diff = pred - target
        ctx.save("diff", diff, ctx.act_bits)
        return np.mean(diff * diff)

    def backward(self, saved, g):
        diff = saved["diff"]
        return (2.0 / diff.size) * diff * g, {}


class LossCE(Node):
    kind = "loss"

    def forward(self, logits, ctx):
        labels = np.asarray(ctx.target).astype(np.int64).reshape(-1)
        if labels.shape[0] != logits.shape[0]:
            raise ValueError("one label per row of logits is required")
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        logp = shifted - logz[:, None]
        probs = np.exp(logp)
        ctx.save("probs", probs, ctx.act_bits)
        ctx.save("labels", labels, 32)
        return -np.mean(logp[np.arange(labels.size), labels])

    def backward(self, saved, g):
        probs, labels = saved["probs"], saved["labels"]
        grad = probs.copy()
        grad[np.arange(labels.size), labels] -= 1.0
        return grad * (g / labels.size), {}
