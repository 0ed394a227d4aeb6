"""Chain graphs with residual skips, executed forward then swept in reverse."""
from __future__ import annotations

import numpy as np

from ..memledger import MemoryLedger
from .nodes import ActPlain, ActStep, Node, Residual


class GraphStateError(RuntimeError):
    pass


class _SaveContext:
    """Per-node view handed to ``Node.forward``."""

    def __init__(self, graph, index, ledger, store, target, skip_value):
        self.graph = graph
        self.node = graph.nodes[index] if index < len(graph.nodes) else graph.loss
        self.ledger = ledger
        self.store = store
        self.target = target
        self.skip_value = skip_value
        self.act_bits = graph.act_bits
        self.norm_bits = graph.norm_bits
        self.input_key = f"{self.node.name}:input"
        nxt = graph.nodes[index + 1] if index + 1 < len(graph.nodes) else None
        self.next_saves_input = bool(nxt is not None and nxt.saves_input)
        self.next_input_key = f"{nxt.name}:input" if nxt is not None else None
        self.notes = {}

    def save(self, role, value, bits, num_elements=None, shared_key=None, owner=True):
        if num_elements is None:
            num_elements = np.size(value)
        self.store[role] = value
        if bits:
            self.ledger.add(self.node.name, self.node.kind, role, bits, num_elements, shared_key, owner)

    def note(self, key, value):
        self.notes[key] = value


class Graph:
    """A chain of nodes ending in a loss.

    ``act_bits`` and ``norm_bits`` are the declared storage widths used by the
    ledger; arithmetic runs in the arrays' own dtype.
    """

    def __init__(self, nodes, loss: Node, act_bits: int = 16, norm_bits: int = 32):
        self.nodes = list(nodes)
        self.loss = loss
        if act_bits not in (16, 32, 64) or norm_bits not in (16, 32, 64):
            raise ValueError("storage widths must be 16, 32 or 64 bits")
        self.act_bits = act_bits
        self.norm_bits = norm_bits
        names = [n.name for n in self.all_nodes]
        if len(set(names)) != len(names):
            raise ValueError(f"node names must be unique: {names}")
        for i, node in enumerate(self.nodes):
            if isinstance(node, Residual) and not -1 <= node.skip < i:
                raise ValueError(f"{node.name}: skip index {node.skip} must point to an earlier node")
        self._saved = None
        self.ledger = None
        self.nonfinite = 0

    @property
    def all_nodes(self):
        return self.nodes + [self.loss]

    def parameters(self) -> dict:
        return {f"{n.name}.{k}": v for n in self.all_nodes for k, v in n.params.items()}

    def trainable_parameters(self) -> dict:
        return {f"{n.name}.{k}": n.params[k] for n in self.all_nodes for k in sorted(n.trainable)}

    def forward(self, x, target):
        """Run the chain, returning (loss, ledger)."""
        ledger = MemoryLedger()
        saved = []
        outputs = []
        h = np.asarray(x)
        graph_input = h
        self.nonfinite = 0
        for i, node in enumerate(self.nodes):
            skip = None
            if isinstance(node, Residual):
                skip = graph_input if node.skip == -1 else outputs[node.skip]
            store = {}
            ctx = _SaveContext(self, i, ledger, store, None, skip)
            h = node.forward(h, ctx)
            self.nonfinite += ctx.notes.get("nonfinite", 0)
            saved.append(store)
            outputs.append(h)
        store = {}
        ctx = _SaveContext(self, len(self.nodes), ledger, store, target, None)
        loss = float(self.loss.forward(h, ctx))
        saved.append(store)
        self._saved = saved
        self.ledger = ledger
        return loss, ledger

    def backward(self, scale: float = 1.0) -> dict:
        """Reverse sweep; returns gradients of every trainable parameter."""
        if self._saved is None:
            raise GraphStateError("backward called before forward (or twice for one forward)")
        saved, self._saved = self._saved, None
        grads = {}
        g, pg = self.loss.backward(saved[-1], scale)
        self._collect(self.loss, pg, grads)
        pending = {}  # node index -> extra gradient arriving through skips
        for i in range(len(self.nodes) - 1, -1, -1):
            if i in pending:
                g = g + pending.pop(i)
            node = self.nodes[i]
            gx, pg = node.backward(saved[i], g)
            self._collect(node, pg, grads)
            if isinstance(node, Residual):
                pending[node.skip] = pending.get(node.skip, 0) + g
            g = gx
        if -1 in pending:
            g = g + pending.pop(-1)
        self.input_grad = g
        return grads

    @staticmethod
    def _collect(node, pg, grads):
        for k in sorted(node.trainable):
            grads[f"{node.name}.{k}"] = pg[k]

    def exact_twin(self) -> "Graph":
        """Same parameters, with every step activation swapped for the exact one."""
        nodes = [ActPlain(n.act, name=n.name) if isinstance(n, ActStep) else n for n in self.nodes]
        return Graph(nodes, self.loss, self.act_bits, self.norm_bits)

    @property
    def has_step_activations(self) -> bool:
        return any(isinstance(n, ActStep) for n in self.nodes)

    def loss_and_grads(self, x, target, scale=1.0):
        loss, _ = self.forward(x, target)
        return loss, self.backward(scale)
