"""Loop-buffer execution of micro-kernels on a SIMD array of NPEs.

A launch replays one kernel for ``iterations`` logical elements. Element ``t``
runs on lane ``t % lanes`` in batch ``t // lanes``; inside a batch every
instruction is issued to all active lanes before the next one (lockstep).
Address register ``An`` seen by instruction ``k`` of element ``t`` is::

    init[n] + stride[n] * (t * incs[n] + incs_before_k[n])

where ``incs[n]`` counts auto-incrementing accesses through ``An`` in the
kernel. Addresses are in element units of the register's access mode, so an
int4 weight pointer advances one nibble per step.

Two interchangeable backends exist: a compiled one (numba) for real runs and
a plain numpy one that can also emit an instruction trace.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from numba import njit

from .bf16 import PackedWord, Value16, encode, round_to_bf16
from .energy import DEFAULT_TABLE, EVC_EVENT, LEAKAGE, EnergyLedger, EnergyTable
from .errors import ConfigError, InvalidOperandError, MemoryBoundsError, UnboundRegisterError
from .isa import NUM_ADDRESS_REGISTERS, NUM_REGISTERS, Mnemonic, MicroKernel, alu, format_instruction
from .memory import AccessStats, DataMemory, MemoryLevel

DEFAULT_LANES = 8

_OPS = list(Mnemonic)
_OPCODE = {m: i for i, m in enumerate(_OPS)}
OP_ADD, OP_SUB, OP_MUL, OP_DIV = (_OPCODE[m] for m in (Mnemonic.ADD, Mnemonic.SUB, Mnemonic.MUL, Mnemonic.DIV))
OP_I8X2 = _OPCODE[Mnemonic.ADD_I8X2]
OP_GTH, OP_MAX, OP_MIN, OP_EQL, OP_ABS = (
    _OPCODE[m] for m in (Mnemonic.GTH, Mnemonic.MAX, Mnemonic.MIN, Mnemonic.EQL, Mnemonic.ABS)
)
OP_AND, OP_ORR, OP_SHL, OP_SHR = (_OPCODE[m] for m in (Mnemonic.AND, Mnemonic.ORR, Mnemonic.SHL, Mnemonic.SHR))
OP_I2F, OP_RND = _OPCODE[Mnemonic.I2F], _OPCODE[Mnemonic.RND]
OP_EVC, OP_MLD, OP_MST = _OPCODE[Mnemonic.EVC], _OPCODE[Mnemonic.MLD], _OPCODE[Mnemonic.MST]

ERR_SHIFT = 1


class AddrMode(enum.IntEnum):
    """How an address register walks memory."""

    WORD = 0       # one 16-bit word per element
    INT8 = 1       # one int8 lane per element, two per word
    INT4 = 2       # one int4 lane per element, four per word
    INT4_PAIR = 3  # two adjacent int4 lanes per element, widened to an int8x2 word

    @property
    def per_word(self) -> int:
        return (1, 2, 4, 2)[self.value]

    @classmethod
    def parse(cls, value) -> "AddrMode":
        if isinstance(value, AddrMode):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ConfigError(f"unknown address mode '{value}'") from None
        return cls(int(value))


def as_bits(value) -> int:
    """Bit pattern of a register operand.

    ``Value16``/``PackedWord``/``np.uint16`` are taken as raw patterns; any
    other number is rounded to BF16.
    """
    if isinstance(value, (Value16, PackedWord)):
        return value.bits
    if isinstance(value, np.uint16):
        return int(value)
    return encode(float(value))


def _bits_array(value, n: int) -> np.ndarray:
    if isinstance(value, np.ndarray) and value.ndim == 1:
        if value.dtype == np.uint16:
            out = value
        else:
            out = round_to_bf16(value.astype(np.float64))
        if out.size != n:
            raise ConfigError(f"constant array has {out.size} entries for {n} launches")
        return out
    return np.full(n, as_bits(value), dtype=np.uint16)


@dataclass(frozen=True)
class AerEvent:
    source: int
    payload: Value16

    @property
    def value(self) -> float:
        return float(self.payload)


class NpeArray:
    """Per-lane register files and address registers."""

    def __init__(self, lane_count: int = DEFAULT_LANES, num_registers: int = NUM_REGISTERS,
                 num_address_registers: int = NUM_ADDRESS_REGISTERS):
        if lane_count < 1:
            raise ConfigError("lane count must be positive")
        if not 1 <= num_registers <= NUM_REGISTERS:
            raise ConfigError(f"register count must lie in 1-{NUM_REGISTERS}")
        self.lane_count = lane_count
        self.num_registers = num_registers
        self.registers = np.zeros((lane_count, NUM_REGISTERS), dtype=np.uint16)
        self.addr_regs = np.zeros((lane_count, num_address_registers), dtype=np.int64)
        self.const_regs: dict[int, int] = {}

    def preload(self, reg: int, value) -> None:
        """Write a constant into ``reg`` of every lane (not charged)."""
        self._check_reg(reg)
        bits = as_bits(value)
        self.registers[:, reg] = bits
        self.const_regs[reg] = bits

    def _check_reg(self, reg: int) -> None:
        if not 0 <= reg < self.num_registers:
            raise InvalidOperandError(f"register R{reg} outside R0-R{self.num_registers - 1}")

    # single-lane instruction primitives ---------------------------------

    def exec_mld(self, addr_reg: int, dst: int, auto_inc: bool, mem: DataMemory,
                 lane: int = 0, stride: int = 1) -> None:
        self._check_reg(dst)
        addr = int(self.addr_regs[lane, addr_reg])
        self.registers[lane, dst] = mem.read_word(addr)
        if auto_inc:
            self.addr_regs[lane, addr_reg] += stride

    def exec_mst(self, addr_reg: int, src: int, auto_inc: bool, mem: DataMemory,
                 lane: int = 0, stride: int = 1) -> None:
        self._check_reg(src)
        addr = int(self.addr_regs[lane, addr_reg])
        mem.write_word(addr, int(self.registers[lane, src]))
        if auto_inc:
            self.addr_regs[lane, addr_reg] += stride

    def exec_evc(self, src: int, iteration: int, lane: int = 0, meter=None) -> AerEvent | None:
        bits = int(self.registers[lane, src])
        event = None if bits & 0x7FFF == 0 else AerEvent(iteration, Value16(bits))
        if meter is not None:
            meter.charge_instruction(Mnemonic.EVC, event_generated=event is not None)
        return event


@dataclass(frozen=True)
class LoopPlan:
    kernel: MicroKernel
    iterations: int
    addr_init: Mapping[int, int] = field(default_factory=dict)
    addr_stride: Mapping[int, int] = field(default_factory=dict)
    addr_mode: Mapping[int, AddrMode | str] = field(default_factory=dict)
    constants: Mapping[int, object] = field(default_factory=dict)
    event_base: int = 0
    shared: frozenset = frozenset()

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")


@dataclass
class RunResult:
    cycles: int
    iterations: int
    event_sources: np.ndarray
    event_payloads: np.ndarray
    launch_event_offsets: np.ndarray
    ledger: EnergyLedger
    mem_stats: AccessStats
    instruction_counts: dict
    trace: list[str] | None = None

    @property
    def events(self) -> list[AerEvent]:
        return [AerEvent(int(s), Value16(int(p))) for s, p in zip(self.event_sources, self.event_payloads)]

    @property
    def event_count(self) -> int:
        return int(self.event_sources.size)

    @property
    def energy_pj(self) -> float:
        return self.ledger.total_pj

    @property
    def dynamic_pj(self) -> float:
        return self.ledger.dynamic_pj

    @property
    def ledger_delta(self) -> EnergyLedger:
        return self.ledger


# ---------------------------------------------------------------------------
# compiled backend


@njit(cache=True)
def _dec(bits, f32, u32):
    u32[0] = np.uint32(bits) << np.uint32(16)
    return np.float64(f32[0])


@njit(cache=True)
def _enc(x, f32, u32):
    # float64 -> float32 is round-to-nearest-even; the second rounding to 8
    # mantissa bits is innocuous for results of bf16 operands
    f32[0] = np.float32(x)
    u = np.int64(u32[0])
    if x != x:
        return np.uint16(((u >> 31) << 15) | 0x7FC0)
    return np.uint16(((u + 0x7FFF + ((u >> 16) & 1)) >> 16) & 0xFFFF)


@njit(cache=True)
def _sext(v, width):
    if v >= (1 << (width - 1)):
        return v - (1 << width)
    return v


@njit(cache=True, error_model="numpy")
def _alu_scalar(op, a, b, f32, u32):
    if op <= OP_DIV:
        fa = _dec(a, f32, u32)
        fb = _dec(b, f32, u32)
        if op == OP_ADD:
            r = fa + fb
        elif op == OP_SUB:
            r = fa - fb
        elif op == OP_MUL:
            r = fa * fb
        else:
            r = fa / fb
        return _enc(r, f32, u32), 0
    if op == OP_I8X2:
        ai = np.int64(a)
        bi = np.int64(b)
        out = 0
        for lane in range(2):
            x = _sext((ai >> (8 * lane)) & 0xFF, 8) + _sext((bi >> (8 * lane)) & 0xFF, 8)
            if x > 127:
                x = 127
            elif x < -128:
                x = -128
            out |= (x & 0xFF) << (8 * lane)
        return np.uint16(out), 0
    if op == OP_ABS:
        return np.uint16(a & 0x7FFF), 0
    if op == OP_EQL:
        return np.uint16(0x3F80 if a == b else 0), 0
    if op == OP_GTH or op == OP_MAX or op == OP_MIN:
        fa = _dec(a, f32, u32)
        fb = _dec(b, f32, u32)
        if op == OP_GTH:
            return np.uint16(0x3F80 if fa > fb else 0), 0
        if op == OP_MAX:
            return (a if fa > fb else b), 0
        return (a if fa < fb else b), 0
    if op == OP_AND:
        return np.uint16(a & b), 0
    if op == OP_ORR:
        return np.uint16(a | b), 0
    if op == OP_SHL or op == OP_SHR:
        if b > 15:
            return np.uint16(0), ERR_SHIFT
        if op == OP_SHL:
            return np.uint16((np.int64(a) << np.int64(b)) & 0xFFFF), 0
        return np.uint16(np.int64(a) >> np.int64(b)), 0
    if op == OP_I2F:
        return _enc(np.float64(_sext(np.int64(a), 16)), f32, u32), 0
    # RND: ties away from zero
    x = _dec(a, f32, u32)
    return _enc(np.copysign(np.floor(np.abs(x) + 0.5), x), f32, u32), 0


@njit(cache=True)
def _load(words, mode, addr):
    """Returns (register bits, physical word index)."""
    if mode == 0:
        return words[addr], addr
    if mode == 1:
        w = addr >> 1
        v = _sext((np.int64(words[w]) >> (8 * (addr & 1))) & 0xFF, 8)
        return np.uint16(v & 0xFFFF), w
    if mode == 2:
        w = addr >> 2
        v = _sext((np.int64(words[w]) >> (4 * (addr & 3))) & 0xF, 4)
        return np.uint16(v & 0xFFFF), w
    w = addr >> 1
    shift = 8 * (addr & 1)
    lo = _sext((np.int64(words[w]) >> shift) & 0xF, 4)
    hi = _sext((np.int64(words[w]) >> (shift + 4)) & 0xF, 4)
    return np.uint16((lo & 0xFF) | ((hi & 0xFF) << 8)), w


@njit(cache=True, error_model="numpy")
def _run_compiled(code, modes, strides, incs, before, words, addr_init, const_idx, const_val,
                  iters, ev_base, regs, exec_counts, phys_reads, ev_src, ev_pay, ev_offsets):
    f32 = np.zeros(1, np.float32)
    u32 = f32.view(np.uint32)
    n_instr = code.shape[0]
    lanes = regs.shape[0]
    last_word = np.empty(n_instr, np.int64)
    nev = 0
    err = 0
    for launch in range(iters.shape[0]):
        for c in range(const_idx.shape[0]):
            for j in range(lanes):
                regs[j, const_idx[c]] = const_val[launch, c]
        total = iters[launch]
        for k in range(n_instr):
            last_word[k] = -1
        for t0 in range(0, total, lanes):
            active = min(lanes, total - t0)
            for k in range(n_instr):
                op = code[k, 0]
                d = code[k, 1]
                a = code[k, 2]
                b = code[k, 3]
                exec_counts[k] += active
                if op == OP_MLD:
                    base = addr_init[launch, a]
                    step = strides[a]
                    for j in range(active):
                        addr = base + step * ((t0 + j) * incs[a] + before[k, a])
                        bits, w = _load(words, modes[a], addr)
                        regs[j, d] = bits
                        if modes[a] != 0 and w != last_word[k]:
                            phys_reads[k] += 1
                            last_word[k] = w
                elif op == OP_MST:
                    base = addr_init[launch, d]
                    step = strides[d]
                    for j in range(active):
                        addr = base + step * ((t0 + j) * incs[d] + before[k, d])
                        words[addr] = regs[j, a]
                elif op == OP_EVC:
                    for j in range(active):
                        p = regs[j, a]
                        if p & 0x7FFF:
                            ev_src[nev] = ev_base[launch] + t0 + j
                            ev_pay[nev] = p
                            nev += 1
                else:
                    for j in range(active):
                        r, e = _alu_scalar(op, regs[j, a], regs[j, b], f32, u32)
                        regs[j, d] = r
                        err |= e
        ev_offsets[launch + 1] = nev
    return nev, err


# ---------------------------------------------------------------------------


def _as_launch_array(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.int64)
    if arr.ndim == 0:
        arr = np.full(n, int(arr), dtype=np.int64)
    if arr.shape != (n,):
        raise ConfigError(f"{name} has shape {arr.shape}; expected ({n},)")
    return arr


@njit(cache=True)
def _bounds(init, iters, regs, strides, incs, lo_b, hi_b, per, mem_size):
    # addresses are linear in t, so the extremes sit at t = 0 or t = last
    for i in range(regs.size):
        n = regs[i]
        s = strides[n]
        emin = np.int64(0)
        emax = np.int64(0)
        seen = False
        for launch in range(iters.size):
            if iters[launch] <= 0:
                continue
            span = (iters[launch] - 1) * incs[n]
            for off in (lo_b[i], hi_b[i], span + lo_b[i], span + hi_b[i]):
                a = init[launch, n] + s * off
                if not seen:
                    emin = a
                    emax = a
                    seen = True
                else:
                    emin = min(emin, a)
                    emax = max(emax, a)
        if seen:
            if emin < 0:
                return n, emin
            if emax // per[i] >= mem_size:
                return n, emax
    return -1, 0


class Launcher:
    """A kernel bound to fixed address modes and strides, ready to run."""

    def __init__(self, kernel: MicroKernel, addr_mode: Mapping[int, object] | None = None,
                 addr_stride: Mapping[int, int] | None = None, shared: Iterable[int] = (),
                 backend: str = "compiled"):
        if backend not in ("compiled", "python"):
            raise ConfigError(f"unknown backend '{backend}'")
        self.kernel = kernel
        self.backend = backend
        self.shared = frozenset(shared)
        n_areg = NUM_ADDRESS_REGISTERS
        self.modes = np.zeros(n_areg, dtype=np.int64)
        self.strides = np.ones(n_areg, dtype=np.int64)
        for reg, mode in (addr_mode or {}).items():
            self.modes[reg] = AddrMode.parse(mode)
        for reg, stride in (addr_stride or {}).items():
            self.strides[reg] = int(stride)
        code = np.zeros((len(kernel), 5), dtype=np.int64)
        self.incs = np.zeros(n_areg, dtype=np.int64)
        self.before = np.zeros((len(kernel), n_areg), dtype=np.int64)
        for k, ins in enumerate(kernel):
            self.before[k] = self.incs
            code[k, 0] = _OPCODE[ins.mnemonic]
            code[k, 1] = ins.dst if ins.dst is not None else 0
            code[k, 2] = ins.src_a if ins.src_a is not None else 0
            code[k, 3] = ins.src_b if ins.src_b is not None else 0
            code[k, 4] = int(ins.auto_inc)
            if ins.mnemonic is Mnemonic.MST and self.modes[ins.dst] != AddrMode.WORD:
                raise ConfigError(f"MST through A{ins.dst} needs word addressing")
            if ins.auto_inc:
                self.incs[ins.address_register] += 1
        self.code = code
        self._uses = {}
        for k, ins in enumerate(kernel):
            n = ins.address_register
            if n is not None:
                self._uses.setdefault(n, []).append(k)
        self.inputs = kernel.input_registers
        self.n_evc = kernel.count(Mnemonic.EVC)
        # static pieces of bounds checking and settling
        self._used = np.array(sorted(self._uses), dtype=np.int64)
        self._lo_b = np.array([self.before[self._uses[n], n].min() for n in self._used], dtype=np.int64)
        self._hi_b = np.array([self.before[self._uses[n], n].max() for n in self._used], dtype=np.int64)
        self._per = np.array([AddrMode(int(self.modes[n])).per_word for n in self._used], dtype=np.int64)
        self._mnemonics = tuple(dict.fromkeys(kernel.mnemonics))
        # per instruction: mnemonic slot, 0 read / 1 write / -1 no access, shared, packed load
        self._static = [(self._mnemonics.index(ins.mnemonic),
                         {Mnemonic.MLD: 0, Mnemonic.MST: 1}.get(ins.mnemonic, -1),
                         int(ins.address_register in self.shared),
                         ins.mnemonic is Mnemonic.MLD and self.modes[ins.src_a] != AddrMode.WORD)
                        for ins in kernel]
        self._units: tuple = (None, [])

    # -- validation -------------------------------------------------------

    def _check_bounds(self, addr_init: np.ndarray, iters: np.ndarray, mem_size: int) -> None:
        if not self._used.size:
            return
        bad, where = _bounds(addr_init, iters, self._used, self.strides, self.incs, self._lo_b, self._hi_b,
                             self._per, mem_size)
        if bad >= 0:
            raise MemoryBoundsError(
                f"kernel '{self.kernel.name}': A{bad} reaches element {where} outside memory of {mem_size} words"
            )

    def _constants(self, npe: NpeArray, constants, n: int) -> tuple[np.ndarray, np.ndarray]:
        merged: dict[int, np.ndarray] = {r: np.full(n, v, dtype=np.uint16) for r, v in npe.const_regs.items()}
        for reg, value in (constants or {}).items():
            npe._check_reg(reg)
            merged[reg] = _bits_array(value, n)
        missing = sorted(self.inputs - set(merged))
        if missing:
            regs = ", ".join(f"R{r}" for r in missing)
            raise UnboundRegisterError(f"kernel '{self.kernel.name}' reads unbound register(s) {regs}")
        idx = np.array(sorted(merged), dtype=np.int64)
        val = np.zeros((n, idx.size), dtype=np.uint16)
        for c, r in enumerate(idx):
            val[:, c] = merged[int(r)]
        return idx, val

    # -- execution --------------------------------------------------------

    def run(self, mem: DataMemory, npe: NpeArray, addr_init, iterations, constants=None,
            event_base=0, table: EnergyTable | None = None, trace: bool = False) -> RunResult:
        """Execute one or more launches back to back.

        ``addr_init`` is a mapping ``{reg: address}`` (values may be per-launch
        arrays) or an ``(launches, 8)`` array. ``iterations`` and ``event_base``
        are scalars or per-launch arrays.
        """
        table = table or DEFAULT_TABLE
        if isinstance(addr_init, np.ndarray) and addr_init.ndim == 2:
            n = addr_init.shape[0]
            init = addr_init.astype(np.int64, copy=False)
        else:
            n = np.asarray(iterations).size
            init = np.zeros((n, NUM_ADDRESS_REGISTERS), dtype=np.int64)
            for reg, value in (addr_init or {}).items():
                init[:, reg] = _as_launch_array(value, n, f"A{reg} init")
        iters = _as_launch_array(iterations, n, "iterations")
        if (iters < 0).any():
            raise ConfigError("iterations must be non-negative")
        bases = _as_launch_array(event_base, n, "event base")
        missing = sorted(set(self._uses) - set(range(NUM_ADDRESS_REGISTERS)))
        if missing:
            raise ConfigError(f"address register(s) {missing} not available")
        self._check_bounds(init, iters, mem.size)
        const_idx, const_val = self._constants(npe, constants, n)

        n_instr = len(self.kernel)
        exec_counts = np.zeros(n_instr, dtype=np.int64)
        phys = np.zeros(n_instr, dtype=np.int64)
        cap = int(iters.sum()) * self.n_evc
        ev_src = np.zeros(cap, dtype=np.int64)
        ev_pay = np.zeros(cap, dtype=np.uint16)
        offsets = np.zeros(n + 1, dtype=np.int64)
        lines = [] if trace else None
        if self.backend == "compiled" and not trace:
            nev, err = _run_compiled(self.code, self.modes, self.strides, self.incs, self.before,
                                     mem.words, init, const_idx, const_val, iters, bases,
                                     npe.registers, exec_counts, phys, ev_src, ev_pay, offsets)
        else:
            nev, err = _run_python(self, mem.words, init, const_idx, const_val, iters, bases,
                                   npe.registers, exec_counts, phys, ev_src, ev_pay, offsets, lines)
        if err & ERR_SHIFT:
            raise InvalidOperandError(f"kernel '{self.kernel.name}': shift amount outside [0, 15]")
        ev_src, ev_pay = ev_src[:nev], ev_pay[:nev]
        if self.n_evc > 1:
            # lockstep order is (batch, instruction, lane); report iteration order
            for launch in range(n):
                sl = slice(offsets[launch], offsets[launch + 1])
                order = np.argsort(ev_src[sl], kind="stable")
                ev_src[sl], ev_pay[sl] = ev_src[sl][order], ev_pay[sl][order]

        # final logical address of every register, mirrored to all lanes
        if n:
            npe.addr_regs[:, :] = init[-1] + self.strides * self.incs * iters[-1]
        return self._settle(mem, npe.lane_count, iters, exec_counts, phys, nev, ev_src, ev_pay,
                            offsets, table, lines)

    def account(self, mem: DataMemory, npe: NpeArray, iterations, table: EnergyTable | None = None) -> RunResult:
        """Charge launches that are known to leave memory unchanged, without running them.

        Only kernels with word addressing and no event capture qualify; the
        charges are identical to a real run.
        """
        if self.n_evc or (self.modes != AddrMode.WORD).any():
            raise ConfigError(f"kernel '{self.kernel.name}' cannot be accounted without running")
        iters = np.atleast_1d(np.asarray(iterations, dtype=np.int64))
        exec_counts = np.full(len(self.kernel), int(iters.sum()), dtype=np.int64)
        return self._settle(mem, npe.lane_count, iters, exec_counts, np.zeros_like(exec_counts), 0,
                            np.zeros(0, np.int64), np.zeros(0, np.uint16),
                            np.zeros(iters.size + 1, np.int64), table or DEFAULT_TABLE, None)

    def _settle(self, mem, lanes, iters, exec_counts, phys, nev, ev_src, ev_pay, offsets, table,
                lines) -> RunResult:
        cycles = len(self.kernel) * int(((iters + lanes - 1) // lanes).sum())
        executed = exec_counts.tolist()
        phys_l = phys.tolist()
        n_m = len(self._mnemonics)
        by_mnemonic = [0] * n_m
        run_counts = [0] * n_m
        moved = [[0, 0], [0, 0]]  # local / shared -> [reads, writes]
        mem_shared = mem.level is MemoryLevel.SHARED
        for k, (slot, kind, on_shared, packed) in enumerate(self._static):
            # packed loads are charged per physical word read
            n_acc = phys_l[k] if packed else executed[k]
            by_mnemonic[slot] += n_acc
            run_counts[slot] += executed[k]
            if kind >= 0:
                moved[on_shared or mem_shared][kind] += n_acc
        stats = AccessStats()
        stats.add(mem.level, reads=moved[0][0], writes=moved[0][1])
        stats.add(MemoryLevel.SHARED, reads=moved[1][0], writes=moved[1][1])
        if self._units[0] is not table:
            self._units = (table, [table.instruction_units(m) for m in self._mnemonics])
        ledger = EnergyLedger()
        for m, c, unit in zip(self._mnemonics, by_mnemonic, self._units[1]):
            ledger.charge(m.value, c, unit)
        ledger.charge(EVC_EVENT, nev, table.evc_event)
        hbm_words = sum(moved[1])
        if hbm_words:
            ledger.charge("hbm", hbm_words * 16, table.per_bit["hbm"])
        ledger.charge(LEAKAGE, cycles, table.leakage_per_cycle)
        for lvl, n in stats.reads.items():
            mem.stats.add(lvl, reads=n)
        for lvl, n in stats.writes.items():
            mem.stats.add(lvl, writes=n)
        return RunResult(
            cycles=cycles,
            iterations=int(iters.sum()),
            event_sources=ev_src,
            event_payloads=ev_pay,
            launch_event_offsets=offsets,
            ledger=ledger,
            mem_stats=stats,
            instruction_counts=dict(zip(self._mnemonics, run_counts)),
            trace=lines,
        )


def _unpack_load(words: np.ndarray, mode: int, addr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if mode == AddrMode.WORD:
        return words[addr], addr
    if mode == AddrMode.INT8:
        w = addr >> 1
        v = (words[w].astype(np.int64) >> (8 * (addr & 1))) & 0xFF
        v = np.where(v >= 128, v - 256, v)
        return (v & 0xFFFF).astype(np.uint16), w
    if mode == AddrMode.INT4:
        w = addr >> 2
        v = (words[w].astype(np.int64) >> (4 * (addr & 3))) & 0xF
        v = np.where(v >= 8, v - 16, v)
        return (v & 0xFFFF).astype(np.uint16), w
    w = addr >> 1
    shift = 8 * (addr & 1)
    lo = (words[w].astype(np.int64) >> shift) & 0xF
    hi = (words[w].astype(np.int64) >> (shift + 4)) & 0xF
    lo = np.where(lo >= 8, lo - 16, lo)
    hi = np.where(hi >= 8, hi - 16, hi)
    return ((lo & 0xFF) | ((hi & 0xFF) << 8)).astype(np.uint16), w


def _run_python(launcher: Launcher, words, addr_init, const_idx, const_val, iters, ev_base, regs,
                exec_counts, phys, ev_src, ev_pay, offsets, lines) -> tuple[int, int]:
    """Reference interpreter, one numpy ALU call per instruction per batch."""
    kernel = launcher.kernel
    lanes = regs.shape[0]
    nev = 0
    for launch in range(iters.size):
        regs[:, const_idx] = const_val[launch]
        total = int(iters[launch])
        last_word = [-1] * len(kernel)
        for t0 in range(0, total, lanes):
            active = min(lanes, total - t0)
            t = np.arange(t0, t0 + active, dtype=np.int64)
            for k, ins in enumerate(kernel):
                m = ins.mnemonic
                exec_counts[k] += active
                n = ins.address_register
                if n is not None:
                    addr = addr_init[launch, n] + launcher.strides[n] * (t * launcher.incs[n] + launcher.before[k, n])
                if m is Mnemonic.MLD:
                    mode = int(launcher.modes[n])
                    bits, w = _unpack_load(words, mode, addr)
                    regs[:active, ins.dst] = bits
                    if mode != AddrMode.WORD:
                        for wi in w:
                            if wi != last_word[k]:
                                phys[k] += 1
                                last_word[k] = int(wi)
                    result = bits
                elif m is Mnemonic.MST:
                    for j in range(active):
                        words[addr[j]] = regs[j, ins.src_a]
                    result = regs[:active, ins.src_a]
                elif m is Mnemonic.EVC:
                    result = regs[:active, ins.src_a]
                    for j in range(active):
                        if result[j] & 0x7FFF:
                            ev_src[nev] = ev_base[launch] + t0 + j
                            ev_pay[nev] = result[j]
                            nev += 1
                else:
                    b = regs[:active, ins.src_b] if ins.src_b is not None else None
                    try:
                        result = alu(m, regs[:active, ins.src_a], b)
                    except InvalidOperandError:
                        return nev, ERR_SHIFT
                    regs[:active, ins.dst] = result
                if lines is not None:
                    text = format_instruction(ins)
                    for j in range(active):
                        where = f" @{int(addr[j])}" if n is not None else ""
                        lines.append(f"{launch}:{t0 + j}:{k} {text}{where} -> {int(result[j]):#06x}")
        offsets[launch + 1] = nev
    return nev, 0


def run_loop(plan: LoopPlan, mem: DataMemory, npe: NpeArray, energy: EnergyTable | None = None,
             backend: str = "compiled", trace: bool = False) -> RunResult:
    """Run one loop plan as a single launch."""
    launcher = Launcher(plan.kernel, plan.addr_mode, plan.addr_stride, plan.shared, backend=backend)
    return launcher.run(mem, npe, dict(plan.addr_init), plan.iterations, plan.constants,
                        plan.event_base, table=energy, trace=trace)


def format_trace(result: RunResult) -> str:
    return "\n".join(result.trace or []) + ("\n" if result.trace else "")
