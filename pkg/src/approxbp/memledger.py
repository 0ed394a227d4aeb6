"""Byte accounting of saved-for-backward buffers.

Two sources feed the same report format: the ledger a :class:`~approxbp.tape.Graph`
fills while executing forward, and :func:`analytic_block`, a closed-form
model of one ViT / LLaMA transformer block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import _jsonio


@dataclass(frozen=True)
class LedgerEntry:
    node: str
    kind: str
    role: str
    bits_per_element: int
    num_elements: int
    shared_key: str | None = None
    owner: bool = True

    @property
    def bytes(self) -> int:
        return math.ceil(self.bits_per_element * self.num_elements / 8)


@dataclass
class MemoryLedger:
    entries: list = field(default_factory=list)

    def add(self, node, kind, role, bits_per_element, num_elements, shared_key=None, owner=True):
        entry = LedgerEntry(node, kind, role, int(bits_per_element), int(num_elements), shared_key, owner)
        self.entries.append(entry)
        return entry

    def charged(self):
        """Entries that count toward totals, one per shared key.

        A shared buffer is charged to the first entry that claims ownership,
        or to its first reference if nobody does.
        """
        chosen = {}
        for i, e in enumerate(self.entries):
            if e.shared_key is None:
                continue
            prev = chosen.get(e.shared_key)
            if prev is None or (e.owner and not self.entries[prev].owner):
                chosen[e.shared_key] = i
        keep = set(chosen.values())
        return [e for i, e in enumerate(self.entries) if e.shared_key is None or i in keep]

    def total_bytes(self, kind=None) -> int:
        return sum(e.bytes for e in self.charged() if kind is None or e.kind == kind)

    def per_kind(self) -> dict:
        out = {}
        for e in self.charged():
            out[e.kind] = out.get(e.kind, 0) + e.bytes
        return out

    def per_node(self) -> dict:
        out = {}
        for e in self.charged():
            out[e.node] = out.get(e.node, 0) + e.bytes
        for e in self.entries:
            out.setdefault(e.node, 0)
        return out

    def shared_savings(self) -> int:
        return sum(e.bytes for e in self.entries) - self.total_bytes()

    def report(self) -> dict:
        return make_report(self.per_kind(), self.shared_savings())


def make_report(per_kind: dict, shared_savings: int = 0, **extra) -> dict:
    total = sum(per_kind.values())
    percent = {k: (100.0 * v / total if total else 0.0) for k, v in per_kind.items()}
    report = {"per_kind": dict(per_kind), "shared_savings": int(shared_savings),
              "total": int(total), "percent": percent}
    report.update(extra)
    return report


def format_table(report: dict, title: str | None = None) -> str:
    rows = [(k, str(v), f"{report['percent'][k]:.2f}") for k, v in report["per_kind"].items()]
    rows.append(("total", str(report["total"]), "100.00" if report["total"] else "0.00"))
    head = ("kind", "bytes", "percent")
    widths = [max(len(r[i]) for r in rows + [head]) for i in range(3)]
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{head[0]:<{widths[0]}}  {head[1]:>{widths[1]}}  {head[2]:>{widths[2]}}")
    lines.append("-" * (sum(widths) + 4))
    for name, b, pct in rows:
        if name == "total":
            lines.append("-" * (sum(widths) + 4))
        lines.append(f"{name:<{widths[0]}}  {b:>{widths[1]}}  {pct:>{widths[2]}}")
    if report.get("shared_savings"):
        lines.append(f"shared buffers saved {report['shared_savings']} bytes")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# analytic transformer block

class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BlockSpec:
    arch: str = "custom"
    hidden: int = 768
    tokens: int = 197
    batch: int = 1
    expansion: float = 4.0
    heads: int = 12
    norm_bits: int = 32
    act_bits: int = 16
    attention: str = "flash"
    gating: str = "none"
    activation: str = "gelu"
    norm: str = "ln"

    def __post_init__(self):
        for name in ("hidden", "tokens", "batch", "heads", "norm_bits", "act_bits"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.expansion <= 0:
            raise ConfigError("expansion factor must be positive")
        if self.attention != "flash":
            raise ConfigError(f"only flash attention storage is modelled, got {self.attention!r}")
        if self.gating not in ("none", "swiglu"):
            raise ConfigError(f"gating must be 'none' or 'swiglu', got {self.gating!r}")
        if self.activation not in ("gelu", "silu"):
            raise ConfigError(f"activation must be 'gelu' or 'silu', got {self.activation!r}")
        if self.norm not in ("ln", "rms"):
            raise ConfigError(f"norm must be 'ln' or 'rms', got {self.norm!r}")

    @property
    def ffn(self) -> int:
        return int(round(self.expansion * self.hidden))

    @classmethod
    def from_dict(cls, data: dict) -> "BlockSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown block spec fields: {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


# LLaMA-13B: hidden 5120, FFN 13824 (expansion 2.7), 40 heads.
PRESETS = {
    "vit-b": BlockSpec(arch="vit-b", hidden=768, tokens=197, batch=1, expansion=4.0, heads=12,
                       gating="none", activation="gelu", norm="ln"),
    "llama-13b": BlockSpec(arch="llama-13b", hidden=5120, tokens=2048, batch=1, expansion=2.7,
                           heads=40, gating="swiglu", activation="silu", norm="rms"),
}

SCHEMES = ("baseline", "ours")

# operator -> category used for aggregate percentages
OPERATOR_KIND = {
    "norm1": "norm", "norm2": "norm",
    "qkv": "linear", "attn_proj": "linear", "fc1": "linear", "fc2": "linear",
    "gate_up": "linear", "down": "linear",
    "attention": "attention", "act": "activation", "mul": "elementwise",
}


def resolve_spec(arch) -> BlockSpec:
    if isinstance(arch, BlockSpec):
        return arch
    if isinstance(arch, dict):
        return BlockSpec.from_dict(arch)
    key = str(arch).lower()
    if key in PRESETS:
        return PRESETS[key]
    if key.endswith(".json"):
        try:
            return BlockSpec.from_dict(_jsonio.load(arch))
        except FileNotFoundError as exc:
            raise ConfigError(f"block spec file not found: {arch}") from exc
    raise ConfigError(f"unsupported architecture {arch!r}; expected vit-b, llama-13b or a .json spec")


def analytic_block(spec, scheme: str = "baseline") -> dict:
    """Saved-for-backward bytes of each operator in one transformer block.

    Every linear keeps its 16-bit input. Flash attention keeps q, k, v, its
    output and a float32 log-sum-exp per head and token. Baseline norms keep
    their float32 input and the activation keeps its 16-bit input; the
    ``ours`` scheme keeps 2-bit codes for the activation and only one float32
    sigma per token for each norm, whose output lives in the next linear.
    """
    spec = resolve_spec(spec)
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    ours = scheme == "ours"
    tokens = spec.batch * spec.tokens
    c = spec.hidden
    f = spec.ffn

    def nbytes(bits, n):
        return math.ceil(bits * n / 8)

    act = spec.act_bits
    norm_bytes = nbytes(32, tokens) if ours else nbytes(spec.norm_bits, tokens * c)
    ops = {
        "norm1": norm_bytes,
        "qkv": nbytes(act, tokens * c),
        "attention": 4 * nbytes(act, tokens * c) + nbytes(32, tokens * spec.heads),
        "attn_proj": nbytes(act, tokens * c),
        "norm2": norm_bytes,
    }
    act_bytes = nbytes(2, tokens * f) if ours else nbytes(act, tokens * f)
    if spec.gating == "swiglu":
        ops["gate_up"] = nbytes(act, tokens * c)
        ops["act"] = act_bytes
        ops["mul"] = 2 * nbytes(act, tokens * f)
        ops["down"] = nbytes(act, tokens * f)
    else:
        ops["fc1"] = nbytes(act, tokens * c)
        ops["act"] = act_bytes
        ops["fc2"] = nbytes(act, tokens * f)

    unit = nbytes(16, tokens * c)
    per_kind = {}
    for op, b in ops.items():
        per_kind[OPERATOR_KIND[op]] = per_kind.get(OPERATOR_KIND[op], 0) + b
    total = sum(ops.values())
    return {
        "arch": spec.arch,
        "scheme": scheme,
        "spec": spec.to_dict(),
        "unit_bytes": unit,
        "per_operator": ops,
        "units": {op: b / unit for op, b in ops.items()},
        "operator_percent": {op: 100.0 * b / total for op, b in ops.items()},
        **make_report(per_kind),
    }

