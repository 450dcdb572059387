from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from npesim.energy import (
    DEFAULT_TABLE,
    EVC_EVENT,
    LEAKAGE,
    UNITS_PER_PJ,
    EnergyLedger,
    EnergyMeter,
    format_pj,
    kernel_breakdown,
    kernel_energy,
    kernel_energy_units,
    load_energy_table,
    pj_to_units,
)
from npesim.errors import ConfigError
from npesim.isa import Mnemonic, assemble

# per-instruction costs in pJ, written out independently of the package
COST = {"MLD": 3.7, "MST": 3.9, "ADD": 1.4, "SUB": 1.4, "MUL": 1.4, "DIV": 1.4, "GTH": 1.2, "MAX": 1.2,
        "ABS": 1.1, "RND": 1.4, "EVC": 0.5}
EVENT = 1.1


def test_default_table_values():
    for name, pj in COST.items():
        assert DEFAULT_TABLE.instruction_pj(Mnemonic[name]) == pytest.approx(pj)
    assert DEFAULT_TABLE.evc_event == pj_to_units("1.1")
    assert DEFAULT_TABLE.leakage_per_cycle == pj_to_units("0.06")
    assert DEFAULT_TABLE.per_bit["noc"] == 6562  # 65.62 fJ/b is exact in ledger units


def test_kernel_energy_is_an_instruction_sum():
    k = assemble("MLD R0, A1, 0\nGTH R2, R0, R1\nMUL R3, R2, R0\nSUB R0, R0, R3\nMST A1, R0, 1\nEVC R2\n")
    want = sum(COST[i.mnemonic.value] for i in k)
    assert kernel_energy(k, 0) == pytest.approx(want)
    assert kernel_energy(k, 1) == pytest.approx(want + EVENT)
    assert kernel_energy(k, Fraction(1, 4)) == pytest.approx(want + EVENT / 4)
    with pytest.raises(ValueError):
        kernel_energy(k, 2)


def test_amortized_loads():
    k = assemble("MLD R1, A1, 1\nMLD R0, A0, 0\nADD R0, R0, R1\nMST A0, R0, 1\n")
    units = kernel_energy_units(k, amortize={0: Fraction(1, 4)})
    assert units == pj_to_units("3.7") / 4 + pj_to_units("3.7") + pj_to_units("1.4") + pj_to_units("3.9")


def test_breakdown_sums_to_total():
    k = assemble("MLD R0, A1, 1\nMLD R1, A2, 0\nADD R1, R0, R1\nMST A2, R1, 1\n")
    rows = kernel_breakdown(k)
    assert [r[0] for r in rows] == ["MLD", "ADD", "MST"]
    assert rows[0][1] == 2
    assert sum(r[2] for r in rows) == pytest.approx(kernel_energy(k))


charges = st.lists(st.tuples(st.sampled_from(["ADD", "MLD", EVC_EVENT, LEAKAGE]), st.integers(0, 10 ** 6),
                             st.integers(0, 10 ** 7)), max_size=40)


@given(charges, st.randoms())
def test_ledger_total_is_exact_under_reordering(items, rnd):
    a = EnergyLedger()
    for c in items:
        a.charge(*c)
    shuffled = list(items)
    rnd.shuffle(shuffled)
    b = EnergyLedger()
    for c in shuffled:
        b.charge(*c)
    assert a.total == b.total == sum(n * u for _, n, u in items)
    assert a.summary() == b.summary()
    assert a.dynamic == sum(n * u for c, n, u in items if c != LEAKAGE)


def test_ledger_rejects_negative_charges():
    with pytest.raises(ValueError):
        EnergyLedger().charge("ADD", -1, 5)


def test_meter_charges():
    meter = EnergyMeter()
    assert meter.charge_instruction(Mnemonic.EVC, event_generated=True) == pytest.approx(0.5 + EVENT)
    assert meter.charge_leakage(10) == pytest.approx(0.6)
    assert meter.charge_transfer("sram", 16) == pytest.approx(16 * 0.2)
    assert meter.charge_riscv(2, 1) == pytest.approx(2 * 11.6 + 10.0)
    assert meter.ledger.counts()[EVC_EVENT] == 1
    with pytest.raises(ConfigError):
        meter.charge_transfer("disk", 1)


def test_cost_table_overrides():
    t = load_energy_table("# scaled adder\nADD = 2.8\nleakage = 0\nsram = 100\nSYNOP_INT4_FULL_4 = 3\n")
    assert t.instruction_pj(Mnemonic.ADD) == pytest.approx(2.8)
    assert t.instruction_pj(Mnemonic.SUB) == pytest.approx(1.4)
    assert t.leakage_per_cycle == 0
    assert t.per_bit["sram"] == pj_to_units("0.1")
    assert t.synop_constants[("int4_full", 4)] == 3 * UNITS_PER_PJ


def test_cost_table_round_trips_through_text():
    assert load_energy_table(DEFAULT_TABLE.to_config()) == DEFAULT_TABLE
    assert DEFAULT_TABLE.scaled(3).digest() != DEFAULT_TABLE.digest()


@pytest.mark.parametrize("text", ["ADD 1.4", "ADD = x", "ADD = -1", "FOO = 1", "ADD = 1\nadd = 2", "ADD = inf"])
def test_cost_table_errors(text):
    with pytest.raises(ConfigError):
        load_energy_table(text)


def test_exact_rendering():
    assert format_pj(pj_to_units("12.7")) == "12.7"
    assert format_pj(6562) == "0.06562"
