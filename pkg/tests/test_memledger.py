import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from approxbp.memledger import (
    PRESETS,
    BlockSpec,
    ConfigError,
    LedgerEntry,
    MemoryLedger,
    analytic_block,
    format_table,
    resolve_spec,
)


def test_entry_bytes_round_up():
    assert LedgerEntry("n", "activation", "codes", 2, 5).bytes == 2
    assert LedgerEntry("n", "linear", "input", 16, 3).bytes == 6


def test_shared_key_charged_once_to_owner():
    led = MemoryLedger()
    led.add("norm", "norm", "output", 16, 100, shared_key="lin:input", owner=False)
    led.add("lin", "linear", "input", 16, 100, shared_key="lin:input")
    led.add("norm", "norm", "sigma", 32, 10)
    assert led.per_node() == {"norm": 40, "lin": 200}
    assert led.total_bytes() == 240
    assert led.shared_savings() == 200


def test_unclaimed_shared_key_charged_to_first():
    led = MemoryLedger()
    led.add("a", "norm", "output", 16, 10, shared_key="k", owner=False)
    led.add("b", "norm", "output", 16, 10, shared_key="k", owner=False)
    assert led.per_node() == {"a": 20, "b": 0}


@given(st.lists(st.tuples(st.integers(1, 64), st.integers(0, 10_000), st.booleans()), max_size=30))
def test_report_totals_consistent(entries):
    led = MemoryLedger()
    for i, (bits, n, shared) in enumerate(entries):
        led.add(f"n{i}", "kind" + str(i % 3), "r", bits, n, shared_key="s" if shared else None)
    rep = led.report()
    assert rep["total"] == sum(rep["per_kind"].values()) == led.total_bytes()
    assert rep["total"] + rep["shared_savings"] == sum(e.bytes for e in led.entries)


def test_vit_composition():
    rep = analytic_block("vit-b")
    u = rep["units"]
    assert u["act"] == 4.0 and u["norm1"] == 2.0 and u["fc2"] == 4.0
    pct = rep["operator_percent"]
    gelu = pct["act"]
    ln = pct["norm1"] + pct["norm2"]
    assert gelu == pytest.approx(21.02, abs=0.01)
    assert ln == pytest.approx(21.02, abs=0.01)
    assert abs(gelu - 21.05) <= 2 and abs(ln - 21.05) <= 2


def test_llama_composition():
    rep = analytic_block("llama-13b")
    pct = rep["operator_percent"]
    assert pct["act"] == pytest.approx(12.376, abs=0.01)
    assert pct["norm1"] + pct["norm2"] == pytest.approx(18.335, abs=0.01)


@pytest.mark.parametrize("arch", ["vit-b", "llama-13b"])
def test_ours_scheme(arch):
    base = analytic_block(arch, "baseline")
    ours = analytic_block(arch, "ours")
    assert base["per_operator"]["act"] == 8 * ours["per_operator"]["act"]
    assert ours["total"] < base["total"]
    assert 1 - ours["total"] / base["total"] >= 0.20
    # only the activation and norm rows change
    for op, b in base["per_operator"].items():
        if op not in ("act", "norm1", "norm2"):
            assert ours["per_operator"][op] == b


def test_custom_spec_file(tmp_path):
    spec = PRESETS["vit-b"].to_dict()
    spec.update(arch="tiny", hidden=64, tokens=10)
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(spec))
    rep = analytic_block(str(path))
    assert rep["arch"] == "tiny" and rep["unit_bytes"] == 2 * 64 * 10


@pytest.mark.parametrize("bad", [
    {"hidden": 0}, {"gating": "geglu"}, {"activation": "relu"}, {"norm": "bn"},
    {"attention": "naive"}, {"expansion": -1.0}, {"unknown": 1},
])
def test_block_spec_validation(bad):
    with pytest.raises(ConfigError):
        BlockSpec.from_dict(bad)


def test_unknown_arch_and_scheme(tmp_path):
    with pytest.raises(ConfigError):
        resolve_spec("gpt-5")
    with pytest.raises(ConfigError):
        resolve_spec(str(tmp_path / "missing.json"))
    with pytest.raises(ConfigError):
        analytic_block("vit-b", "magic")


def test_format_table_lists_every_kind():
    rep = analytic_block("vit-b")
    text = format_table(rep, "vit")
    for kind in rep["per_kind"]:
        assert kind in text
    assert text.endswith("\n") and "total" in text
