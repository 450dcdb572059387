"""Per-instruction, per-bit and leakage energy accounting.

Energies are held as integers in units of 1e-5 pJ (0.01 fJ). Every default
constant, including the 65.62 fJ/b NoC figure, is an exact integer in these
units, so ledger sums never round.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Iterable, Mapping

from .errors import ConfigError
from .isa import Mnemonic, MicroKernel

UNITS_PER_PJ = 100_000
LEAKAGE = "leakage"
EVC_EVENT = "EVC_EVENT"

_DEFAULT_PJ = {
    Mnemonic.ADD: "1.4", Mnemonic.SUB: "1.4", Mnemonic.MUL: "1.4", Mnemonic.DIV: "1.4",
    Mnemonic.ADD_I8X2: "1.2",
    Mnemonic.GTH: "1.2", Mnemonic.MAX: "1.2", Mnemonic.MIN: "1.2",
    Mnemonic.EQL: "1.1", Mnemonic.ABS: "1.1",
    Mnemonic.AND: "1.1", Mnemonic.ORR: "1.1",
    Mnemonic.SHL: "1.2", Mnemonic.SHR: "1.2",
    Mnemonic.I2F: "1.1", Mnemonic.RND: "1.4",
    Mnemonic.EVC: "0.5",
    Mnemonic.MLD: "3.7", Mnemonic.MST: "3.9",
}

# fJ per bit
_DEFAULT_PER_BIT = {"register_file": "12.0", "sram": "200", "noc": "65.62", "hbm": "7000"}

# measured full-integer synaptic-op energies; no instruction sum reproduces them
_DEFAULT_SYNOP_CONSTANTS = {("int4_full", 1): "5.63", ("int4_full", 4): "2.78"}


def pj_to_units(value) -> int:
    try:
        d = Decimal(str(value))
    except InvalidOperation:
        raise ConfigError(f"not a number: {value!r}") from None
    if not d.is_finite():
        raise ConfigError(f"not a finite number: {value!r}")
    return int((d * UNITS_PER_PJ).to_integral_value())


def fj_to_units(value) -> int:
    return pj_to_units(Decimal(str(value)) / 1000)


def units_to_pj(units) -> float:
    return float(Fraction(units) / UNITS_PER_PJ)


def format_pj(units) -> str:
    """Exact decimal rendering of an energy in pJ."""
    q = Fraction(units) / UNITS_PER_PJ
    if q.denominator == 1 or UNITS_PER_PJ % q.denominator == 0:
        d = Decimal(q.numerator) / Decimal(q.denominator)
        s = format(d.quantize(Decimal(1).scaleb(-5)).normalize(), "f")
        return s
    return f"{float(q):.9g}"


@dataclass(frozen=True)
class EnergyTable:
    instruction: Mapping[Mnemonic, int]
    evc_event: int
    riscv_instruction: int
    riscv_data_access: int
    per_bit: Mapping[str, int]
    leakage_per_cycle: int
    synop_constants: Mapping[tuple[str, int], int]

    @classmethod
    def default(cls) -> "EnergyTable":
        return cls(
            instruction={m: pj_to_units(v) for m, v in _DEFAULT_PJ.items()},
            evc_event=pj_to_units("1.1"),
            riscv_instruction=pj_to_units("11.6"),
            riscv_data_access=pj_to_units("10.0"),
            per_bit={k: fj_to_units(v) for k, v in _DEFAULT_PER_BIT.items()},
            leakage_per_cycle=pj_to_units("0.06"),
            synop_constants={k: pj_to_units(v) for k, v in _DEFAULT_SYNOP_CONSTANTS.items()},
        )

    def instruction_units(self, m: Mnemonic) -> int:
        try:
            return self.instruction[m]
        except KeyError:
            raise ConfigError(f"no energy entry for {m}") from None

    def instruction_pj(self, m: Mnemonic) -> float:
        return units_to_pj(self.instruction_units(m))

    def scaled(self, factor: int) -> "EnergyTable":
        """Every entry multiplied by an integer factor."""
        f = int(factor)
        return replace(
            self,
            instruction={m: u * f for m, u in self.instruction.items()},
            evc_event=self.evc_event * f,
            riscv_instruction=self.riscv_instruction * f,
            riscv_data_access=self.riscv_data_access * f,
            per_bit={k: u * f for k, u in self.per_bit.items()},
            leakage_per_cycle=self.leakage_per_cycle * f,
            synop_constants={k: u * f for k, u in self.synop_constants.items()},
        )

    def to_config(self) -> str:
        lines = [f"{m.value} = {format_pj(u)}" for m, u in sorted(self.instruction.items(), key=lambda kv: kv[0].value)]
        lines.append(f"{EVC_EVENT} = {format_pj(self.evc_event)}")
        lines.append(f"RISCV = {format_pj(self.riscv_instruction)}")
        lines.append(f"RISCV_DATA = {format_pj(self.riscv_data_access)}")
        lines.append(f"LEAKAGE = {format_pj(self.leakage_per_cycle)}")
        for lvl, u in sorted(self.per_bit.items()):
            lines.append(f"{lvl} = {format_pj(u * 1000)}")
        for (mode, events), u in sorted(self.synop_constants.items()):
            lines.append(f"SYNOP_{mode.upper()}_{events} = {format_pj(u)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_config().encode()).hexdigest()[:16]


DEFAULT_TABLE = EnergyTable.default()


def load_energy_table(text: str, base: EnergyTable | None = None) -> EnergyTable:
    """Parse ``key = value`` overrides on top of the default table.

    Keys: mnemonics (pJ), ``EVC_EVENT``, ``RISCV``, ``RISCV_DATA``,
    ``LEAKAGE`` (pJ per cycle), memory levels ``register_file``/``sram``/
    ``noc``/``hbm`` (fJ/b), and ``SYNOP_INT4_FULL_1``/``_4`` (pJ).
    """
    base = base or DEFAULT_TABLE
    instruction = dict(base.instruction)
    per_bit = dict(base.per_bit)
    synop = dict(base.synop_constants)
    scalars = {
        "EVC_EVENT": base.evc_event,
        "RISCV": base.riscv_instruction,
        "RISCV_DATA": base.riscv_data_access,
        "LEAKAGE": base.leakage_per_cycle,
    }
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"cost table line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        ukey = key.upper()
        if ukey in seen:
            raise ConfigError(f"cost table line {lineno}: duplicate key '{key}'")
        seen.add(ukey)
        try:
            number = Decimal(value)
        except InvalidOperation:
            raise ConfigError(f"cost table line {lineno}: '{value}' is not a number") from None
        if not number.is_finite() or number < 0:
            raise ConfigError(f"cost table line {lineno}: '{key}' must be a non-negative number")
        if ukey in Mnemonic.__members__:
            instruction[Mnemonic[ukey]] = pj_to_units(number)
        elif ukey in scalars:
            scalars[ukey] = pj_to_units(number)
        elif key.lower() in per_bit:
            per_bit[key.lower()] = fj_to_units(number)
        elif ukey.startswith("SYNOP_INT4_FULL_") and ukey.rsplit("_", 1)[1] in ("1", "4"):
            synop[("int4_full", int(ukey.rsplit("_", 1)[1]))] = pj_to_units(number)
        else:
            raise ConfigError(f"cost table line {lineno}: unknown key '{key}'")
    return EnergyTable(
        instruction=instruction,
        evc_event=scalars["EVC_EVENT"],
        riscv_instruction=scalars["RISCV"],
        riscv_data_access=scalars["RISCV_DATA"],
        per_bit=per_bit,
        leakage_per_cycle=scalars["LEAKAGE"],
        synop_constants=synop,
    )


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerEntry:
    category: str
    count: int
    unit: int

    @property
    def subtotal(self) -> int:
        return self.count * self.unit


@dataclass
class EnergyLedger:
    """Append-only list of charges."""

    entries: list[LedgerEntry] = field(default_factory=list)

    def charge(self, category: str, count: int, unit: int) -> int:
        if count < 0 or unit < 0:
            raise ValueError("ledger charges must be non-negative")
        if count:
            self.entries.append(LedgerEntry(category, int(count), int(unit)))
        return int(count) * int(unit)

    def extend(self, other: "EnergyLedger") -> None:
        self.entries.extend(other.entries)

    def merged(self, *others: "EnergyLedger") -> "EnergyLedger":
        out = EnergyLedger(list(self.entries))
        for o in others:
            out.extend(o)
        return out

    @property
    def total(self) -> int:
        return sum(e.subtotal for e in self.entries)

    @property
    def total_pj(self) -> float:
        return units_to_pj(self.total)

    @property
    def dynamic(self) -> int:
        return sum(e.subtotal for e in self.entries if e.category != LEAKAGE)

    @property
    def dynamic_pj(self) -> float:
        return units_to_pj(self.dynamic)

    def summary(self) -> list[LedgerEntry]:
        """Entries folded by (category, unit), sorted by category."""
        folded: Counter = Counter()
        for e in self.entries:
            folded[(e.category, e.unit)] += e.count
        return [LedgerEntry(c, n, u) for (c, u), n in sorted(folded.items())]

    def counts(self) -> dict[str, int]:
        out: Counter = Counter()
        for e in self.entries:
            out[e.category] += e.count
        return dict(out)


class EnergyMeter:
    """Charges energy from a table into a ledger."""

    def __init__(self, table: EnergyTable | None = None, ledger: EnergyLedger | None = None):
        self.table = table or DEFAULT_TABLE
        self.ledger = ledger if ledger is not None else EnergyLedger()

    def charge_instruction(self, m: Mnemonic, event_generated: bool = False, count: int = 1) -> float:
        units = self.ledger.charge(m.value, count, self.table.instruction_units(m))
        if m is Mnemonic.EVC and event_generated:
            units += self.ledger.charge(EVC_EVENT, count, self.table.evc_event)
        return units_to_pj(units)

    def charge_leakage(self, cycles: int) -> float:
        if cycles < 0:
            raise ValueError("cycles must be non-negative")
        return units_to_pj(self.ledger.charge(LEAKAGE, cycles, self.table.leakage_per_cycle))

    def charge_transfer(self, level: str, bits: int) -> float:
        if level not in self.table.per_bit:
            raise ConfigError(f"unknown memory level '{level}'")
        return units_to_pj(self.ledger.charge(level, bits, self.table.per_bit[level]))

    def charge_riscv(self, instructions: int, data_accesses: int = 0) -> float:
        u = self.ledger.charge("RISCV", instructions, self.table.riscv_instruction)
        u += self.ledger.charge("RISCV_DATA", data_accesses, self.table.riscv_data_access)
        return units_to_pj(u)


def kernel_energy_units(
    kernel: MicroKernel | Iterable,
    event_rate: Fraction | float = 1,
    table: EnergyTable | None = None,
    amortize: Mapping[int, Fraction] | None = None,
) -> Fraction:
    """Expected energy of one iteration, in ledger units (exact)."""
    table = table or DEFAULT_TABLE
    rate = Fraction(event_rate)
    if not 0 <= rate <= 1:
        raise ValueError("event rate must lie in [0, 1]")
    amortize = amortize or {}
    total = Fraction(0)
    for idx, ins in enumerate(kernel):
        share = Fraction(amortize.get(idx, 1))
        total += share * table.instruction_units(ins.mnemonic)
        if ins.mnemonic is Mnemonic.EVC:
            total += rate * table.evc_event
    return total


def kernel_energy(kernel, event_rate=1, table=None, amortize=None) -> float:
    """Per-iteration energy of a micro-kernel in pJ."""
    return float(kernel_energy_units(kernel, event_rate, table, amortize) / UNITS_PER_PJ)


def kernel_breakdown(kernel: MicroKernel, event_rate=1, table=None) -> list[tuple[str, int, float]]:
    """(mnemonic, occurrences, pJ) per distinct mnemonic, in first-use order."""
    table = table or DEFAULT_TABLE
    rows: dict[str, list] = {}
    for ins in kernel:
        m = ins.mnemonic
        row = rows.setdefault(m.value, [m.value, 0, Fraction(0)])
        row[1] += 1
        row[2] += table.instruction_units(m)
        if m is Mnemonic.EVC:
            row[2] += Fraction(event_rate) * table.evc_event
    return [(name, n, float(u / UNITS_PER_PJ)) for name, n, u in rows.values()]
