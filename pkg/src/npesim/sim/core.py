"""One simulated core: data memory, NPE array, kernel launches and energy books."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..bf16 import PackMode, bf16_to_float, round_to_bf16
from ..energy import DEFAULT_TABLE, LEAKAGE, EnergyLedger, EnergyTable, units_to_pj
from ..engine import Launcher, NpeArray, RunResult
from ..isa import MicroKernel
from ..memory import DEFAULT_CAPACITY_BITS, DataMemory, MemoryMap, Symbol


@dataclass
class SimOutcome:
    outputs: list
    total_energy_pj: float
    per_kernel_energy_pj: dict[str, float]
    event_counts: dict[str, int]
    final_states: dict[str, np.ndarray]
    kernel_iterations: dict[str, int]
    cycles: int
    ledger: EnergyLedger
    extra: dict = field(default_factory=dict)

    @property
    def leakage_pj(self) -> float:
        return self.per_kernel_energy_pj.get(LEAKAGE, 0.0)


class Core:
    """Bookkeeping wrapper used by the network simulations.

    Host transfers (``write``/``read``) model the controller filling or
    draining memory and are not charged. Every kernel launch is charged to
    the ledger of its kernel name.
    """

    def __init__(self, table: EnergyTable | None = None, lanes: int = 8,
                 capacity_bits: int = DEFAULT_CAPACITY_BITS, backend: str = "compiled"):
        self.table = table or DEFAULT_TABLE
        self.mem = DataMemory(capacity_bits)
        self.map = MemoryMap(self.mem.size)
        self.npe = NpeArray(lanes)
        self.backend = backend
        self._charges: dict[str, Counter] = {}
        self.kernel_iterations: Counter = Counter()
        self.cycles = 0
        self._launchers: dict = {}

    # -- memory -----------------------------------------------------------

    def alloc(self, name: str, count: int, mode: PackMode | str = PackMode.BF16) -> Symbol:
        return self.map.alloc(name, count, mode)

    def sym(self, name: str) -> Symbol:
        return self.map[name]

    def addr(self, name: str, offset: int = 0) -> int:
        return self.map[name].address + offset

    def write(self, name: str, values, offset: int = 0) -> None:
        """Host write of float values (rounded to BF16) or raw uint16 patterns."""
        arr = np.asarray(values)
        bits = arr.ravel() if arr.dtype == np.uint16 else round_to_bf16(arr.astype(np.float64).ravel())
        s = self.map[name]
        if offset + bits.size > s.words:
            raise ValueError(f"write of {bits.size} words at {offset} overflows '{name}'")
        self.mem.poke(s.address + offset, bits)

    def fill(self, name: str, bits: int = 0) -> None:
        s = self.map[name]
        self.mem.words[s.address:s.end] = bits

    def read_bits(self, name: str) -> np.ndarray:
        s = self.map[name]
        return self.mem.peek(s.address, s.words)

    def read(self, name: str) -> np.ndarray:
        return bf16_to_float(self.read_bits(name))

    # -- execution --------------------------------------------------------

    def launcher(self, kernel: MicroKernel, addr_mode=None, addr_stride=None, shared=()) -> Launcher:
        key = (kernel, tuple(sorted((addr_mode or {}).items())), tuple(sorted((addr_stride or {}).items())),
               frozenset(shared))
        if key not in self._launchers:
            self._launchers[key] = Launcher(kernel, addr_mode, addr_stride, shared, backend=self.backend)
        return self._launchers[key]

    def _book(self, name: str, result: RunResult) -> RunResult:
        folded = self._charges.setdefault(name, Counter())
        for e in result.ledger.entries:
            folded[(e.category, e.unit)] += e.count
        self.kernel_iterations[name] += result.iterations
        self.cycles += result.cycles
        return result

    def launch(self, launcher: Launcher, addr_init, iterations, constants=None, event_base=0,
               label: str | None = None) -> RunResult:
        result = launcher.run(self.mem, self.npe, addr_init, iterations, constants, event_base,
                              table=self.table)
        return self._book(label or launcher.kernel.name, result)

    def account_elided(self, launcher: Launcher, iterations, label: str | None = None) -> RunResult:
        """Book launches skipped because they provably change nothing."""
        result = launcher.account(self.mem, self.npe, iterations, table=self.table)
        return self._book(label or launcher.kernel.name, result)

    # -- reporting --------------------------------------------------------

    @property
    def ledgers(self) -> dict[str, EnergyLedger]:
        """One folded ledger per kernel label."""
        out = {}
        for name in sorted(self._charges):
            led = EnergyLedger()
            for (category, unit), count in sorted(self._charges[name].items()):
                led.charge(category, count, unit)
            out[name] = led
        return out

    def dynamic_units(self, name: str) -> int:
        return sum(c * u for (cat, u), c in self._charges.get(name, {}).items() if cat != LEAKAGE)

    @property
    def ledger(self) -> EnergyLedger:
        out = EnergyLedger()
        for led in self.ledgers.values():
            out.extend(led)
        return out

    def per_kernel_pj(self) -> dict[str, float]:
        """Dynamic energy per kernel plus one aggregated leakage entry."""
        out: dict[str, float] = {}
        leak = 0
        for name, led in self.ledgers.items():
            out[name] = units_to_pj(led.dynamic)
            leak += led.total - led.dynamic
        out[LEAKAGE] = units_to_pj(leak)
        return out

    def outcome(self, outputs, event_counts, final_states, **extra) -> SimOutcome:
        ledger = self.ledger
        return SimOutcome(
            outputs=outputs,
            total_energy_pj=ledger.total_pj,
            per_kernel_energy_pj=self.per_kernel_pj(),
            event_counts=dict(event_counts),
            final_states=final_states,
            kernel_iterations=dict(self.kernel_iterations),
            cycles=self.cycles,
            ledger=ledger,
            extra=extra,
        )
