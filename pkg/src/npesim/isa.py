"""NPE instruction set: mnemonics, operand shapes, lane semantics, assembler.

Assembly text holds one instruction per line::

    MLD R0, A1, 1      // load weight, post-increment A1
    ADD R1, R0, R1
    MST A2, R1, 1
    EVC R2

The parenthesised form used in hand-written listings (``MLD(R0, ADD1, 1)``)
is accepted too, with ``ADDn`` read as address register ``An``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .bf16 import (
    BF16_ONE,
    BF16_ZERO,
    PackedWord,
    PackMode,
    Value16,
    bf16_to_float,
    pack_lanes,
    round_to_bf16,
    unpack_lanes,
)
from .errors import AssemblyError, InvalidOperandError

NUM_REGISTERS = 64
NUM_ADDRESS_REGISTERS = 8
LOOP_BUFFER_CAPACITY = 32


class Mnemonic(enum.Enum):
    ADD = "ADD"
    SUB = "SUB"
    MUL = "MUL"
    DIV = "DIV"
    ADD_I8X2 = "ADD_I8X2"
    GTH = "GTH"
    MAX = "MAX"
    MIN = "MIN"
    EQL = "EQL"
    ABS = "ABS"
    AND = "AND"
    ORR = "ORR"
    SHL = "SHL"
    SHR = "SHR"
    I2F = "I2F"
    RND = "RND"
    EVC = "EVC"
    MLD = "MLD"
    MST = "MST"

    def __str__(self) -> str:
        return self.value


ARITH = frozenset({Mnemonic.ADD, Mnemonic.SUB, Mnemonic.MUL, Mnemonic.DIV})
COMPARE = frozenset({Mnemonic.GTH, Mnemonic.MAX, Mnemonic.MIN, Mnemonic.EQL, Mnemonic.ABS})
BITWISE = frozenset({Mnemonic.AND, Mnemonic.ORR, Mnemonic.SHL, Mnemonic.SHR})
CONVERT = frozenset({Mnemonic.I2F, Mnemonic.RND})
UNARY = frozenset({Mnemonic.ABS, Mnemonic.I2F, Mnemonic.RND})
MEMORY = frozenset({Mnemonic.MLD, Mnemonic.MST})


@dataclass(frozen=True)
class Instruction:
    """One decoded NPE instruction.

    Operand slots by shape:

    * ``MLD``: ``dst`` register, ``src_a`` address register, ``auto_inc``
    * ``MST``: ``dst`` address register, ``src_a`` register, ``auto_inc``
    * ``EVC``: ``src_a`` register
    * unary ops: ``dst``, ``src_a``
    * everything else: ``dst``, ``src_a``, ``src_b``
    """

    mnemonic: Mnemonic
    dst: int | None = None
    src_a: int | None = None
    src_b: int | None = None
    auto_inc: bool = False

    def __post_init__(self):
        m = self.mnemonic
        if m is Mnemonic.EVC:
            _need(self, src_a=True, dst=False, src_b=False)
            _reg(self.src_a, NUM_REGISTERS, "R")
        elif m is Mnemonic.MLD:
            _need(self, dst=True, src_a=True, src_b=False)
            _reg(self.dst, NUM_REGISTERS, "R")
            _reg(self.src_a, NUM_ADDRESS_REGISTERS, "A")
        elif m is Mnemonic.MST:
            _need(self, dst=True, src_a=True, src_b=False)
            _reg(self.dst, NUM_ADDRESS_REGISTERS, "A")
            _reg(self.src_a, NUM_REGISTERS, "R")
        else:
            _need(self, dst=True, src_a=True, src_b=m not in UNARY)
            for r in (self.dst, self.src_a, self.src_b):
                if r is not None:
                    _reg(r, NUM_REGISTERS, "R")
        if self.auto_inc and m not in MEMORY:
            raise InvalidOperandError(f"{m} takes no auto-increment flag")

    @property
    def address_register(self) -> int | None:
        if self.mnemonic is Mnemonic.MLD:
            return self.src_a
        if self.mnemonic is Mnemonic.MST:
            return self.dst
        return None

    def reads(self) -> tuple[int, ...]:
        m = self.mnemonic
        if m is Mnemonic.MLD:
            return ()
        if m in (Mnemonic.MST, Mnemonic.EVC) or m in UNARY:
            return (self.src_a,)
        return (self.src_a, self.src_b)

    def writes(self) -> int | None:
        if self.mnemonic in (Mnemonic.MST, Mnemonic.EVC):
            return None
        return self.dst

    def __str__(self) -> str:
        return format_instruction(self)


def _need(ins: Instruction, **present: bool) -> None:
    for slot, wanted in present.items():
        has = getattr(ins, slot) is not None
        if has != wanted:
            state = "requires" if wanted else "does not take"
            raise InvalidOperandError(f"{ins.mnemonic} {state} operand '{slot}'")


def _reg(index: int, limit: int, prefix: str) -> None:
    if not isinstance(index, (int, np.integer)) or not 0 <= index < limit:
        raise InvalidOperandError(f"register {prefix}{index} out of range {prefix}0-{prefix}{limit - 1}")


@dataclass(frozen=True)
class MicroKernel:
    """A loop-buffer program. ``bindings`` names the constant registers."""

    name: str
    instructions: tuple[Instruction, ...]
    bindings: Mapping[int, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))
        object.__setattr__(self, "bindings", dict(self.bindings))
        if not self.instructions:
            raise AssemblyError(f"kernel '{self.name}' is empty")
        if len(self.instructions) > LOOP_BUFFER_CAPACITY:
            raise AssemblyError(
                f"kernel '{self.name}' has {len(self.instructions)} instructions; "
                f"loop buffer holds {LOOP_BUFFER_CAPACITY}"
            )

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)

    @property
    def mnemonics(self) -> tuple[Mnemonic, ...]:
        return tuple(i.mnemonic for i in self.instructions)

    @property
    def input_registers(self) -> frozenset[int]:
        """Registers read before any write: they must be preloaded constants."""
        written: set[int] = set()
        inputs: set[int] = set()
        for ins in self.instructions:
            inputs.update(r for r in ins.reads() if r not in written)
            w = ins.writes()
            if w is not None:
                written.add(w)
        return frozenset(inputs)

    @property
    def written_registers(self) -> frozenset[int]:
        return frozenset(w for i in self.instructions if (w := i.writes()) is not None)

    @property
    def loop_carried_registers(self) -> frozenset[int]:
        """Inputs that the kernel also overwrites; iteration n+1 sees iteration n's value."""
        return self.input_registers & self.written_registers

    @property
    def address_registers(self) -> frozenset[int]:
        return frozenset(a for i in self.instructions if (a := i.address_register) is not None)

    def count(self, mnemonic: Mnemonic) -> int:
        return sum(1 for i in self.instructions if i.mnemonic is mnemonic)


# --------------------------------------------------------------------------
# lane semantics (vectorised over uint16 arrays)


def _lane_bits(x) -> np.ndarray:
    return np.asarray(x, dtype=np.uint16)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """RND tie rule. Kept separate so the convention can be switched in one place."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def _sat_add_i8x2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    la = unpack_lanes(a, PackMode.INT8).astype(np.int32)
    lb = unpack_lanes(b, PackMode.INT8).astype(np.int32)
    return pack_lanes(np.clip(la + lb, -128, 127), PackMode.INT8)


def alu(mnemonic: Mnemonic, a, b=None) -> np.ndarray:
    """Apply a non-memory instruction lane-wise to raw 16-bit patterns."""
    a = _lane_bits(a)
    m = mnemonic
    if m in ARITH:
        fa, fb = bf16_to_float(a), bf16_to_float(_lane_bits(b))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if m is Mnemonic.ADD:
                r = fa + fb
            elif m is Mnemonic.SUB:
                r = fa - fb
            elif m is Mnemonic.MUL:
                r = fa * fb
            else:
                r = fa / fb
        # a float64 result rounded again to 8 bits is correctly rounded (53 >= 2*8+2)
        return round_to_bf16(r)
    if m is Mnemonic.ADD_I8X2:
        return _sat_add_i8x2(a, _lane_bits(b))
    if m is Mnemonic.ABS:
        return a & np.uint16(0x7FFF)
    if m in COMPARE:
        b = _lane_bits(b)
        fa, fb = bf16_to_float(a), bf16_to_float(b)
        if m is Mnemonic.GTH:
            return np.where(fa > fb, BF16_ONE, BF16_ZERO).astype(np.uint16)
        if m is Mnemonic.EQL:
            return np.where(a == b, BF16_ONE, BF16_ZERO).astype(np.uint16)
        if m is Mnemonic.MAX:
            return np.where(fa > fb, a, b)
        return np.where(fa < fb, a, b)
    if m in BITWISE:
        b = _lane_bits(b)
        if m is Mnemonic.AND:
            return a & b
        if m is Mnemonic.ORR:
            return a | b
        if (b > 15).any():
            raise InvalidOperandError(f"{m} shift amount outside [0, 15]")
        shift = b.astype(np.uint32)
        if m is Mnemonic.SHL:
            return ((a.astype(np.uint32) << shift) & 0xFFFF).astype(np.uint16)
        return (a.astype(np.uint32) >> shift).astype(np.uint16)
    if m is Mnemonic.I2F:
        return round_to_bf16(a.view(np.int16).astype(np.float64))
    if m is Mnemonic.RND:
        return round_to_bf16(round_half_away(bf16_to_float(a)))
    raise InvalidOperandError(f"{m} is not a lane operation")


# scalar entry points ------------------------------------------------------


def exec_arith(m: Mnemonic, a: Value16, b: Value16) -> Value16:
    if m not in ARITH:
        raise InvalidOperandError(f"{m} is not an arithmetic op")
    return Value16(int(alu(m, a.bits, b.bits)))


def exec_arith_i8x2(a: PackedWord, b: PackedWord) -> PackedWord:
    if a.mode is not PackMode.INT8 or b.mode is not PackMode.INT8:
        raise InvalidOperandError("dual-INT8 arithmetic needs two int8x2 words")
    return PackedWord(int(alu(Mnemonic.ADD_I8X2, a.bits, b.bits)), PackMode.INT8)


def exec_compare(m: Mnemonic, a: Value16, b: Value16 | None = None) -> Value16:
    if m not in COMPARE:
        raise InvalidOperandError(f"{m} is not a compare op")
    other = b.bits if b is not None else 0
    return Value16(int(alu(m, a.bits, other)))


def exec_bitwise(m: Mnemonic, a: int, b: int) -> int:
    if m not in BITWISE:
        raise InvalidOperandError(f"{m} is not a bit-wise op")
    if m in (Mnemonic.SHL, Mnemonic.SHR) and not 0 <= b <= 15:
        raise InvalidOperandError(f"shift amount {b} outside [0, 15]")
    return int(alu(m, a & 0xFFFF, b & 0xFFFF))


def exec_convert(m: Mnemonic, a) -> Value16:
    if m is Mnemonic.I2F:
        if not -32768 <= int(a) <= 32767:
            raise InvalidOperandError(f"I2F operand {a} does not fit a 16-bit lane")
        return Value16(int(alu(m, np.int16(a).view(np.uint16))))
    if m is Mnemonic.RND:
        return Value16(int(alu(m, a.bits)))
    raise InvalidOperandError(f"{m} is not a conversion op")


# --------------------------------------------------------------------------
# assembler

_COMMENT = re.compile(r"//.*$")
_PAREN_FORM = re.compile(r"^\s*([A-Za-z0-9_]+)\s*\((.*)\)\s*$")
_PLAIN_FORM = re.compile(r"^\s*([A-Za-z0-9_]+)\s*(.*?)\s*$")
_REG = re.compile(r"^R(\d+)$", re.IGNORECASE)
_AREG = re.compile(r"^(?:A|ADD)(\d+)$", re.IGNORECASE)


def _operand_columns(raw_line: str, operands_text: str, tokens: list[str]) -> list[int]:
    base = raw_line.find(operands_text) if operands_text else 0
    cols, cursor = [], 0
    for tok in tokens:
        pos = operands_text.find(tok, cursor)
        cols.append(base + pos + 1)
        cursor = pos + len(tok)
    return cols


def _parse_reg(tok: str, pattern: re.Pattern, limit: int, kind: str, line: int, col: int) -> int:
    m = pattern.match(tok)
    if not m:
        raise AssemblyError(f"expected {kind}, got '{tok}'", line, col)
    idx = int(m.group(1))
    if idx >= limit:
        raise AssemblyError(f"{kind} '{tok}' out of range (limit {limit})", line, col)
    return idx


def _parse_line(raw: str, lineno: int) -> Instruction | None:
    text = _COMMENT.sub("", raw)
    if not text.strip():
        return None
    m = _PAREN_FORM.match(text) or _PLAIN_FORM.match(text)
    name, operand_text = m.group(1), m.group(2)
    name_col = raw.find(name) + 1
    try:
        mnemonic = Mnemonic(name.upper())
    except ValueError:
        raise AssemblyError(f"unknown mnemonic '{name}'", lineno, name_col) from None
    tokens = [t.strip() for t in operand_text.split(",")] if operand_text.strip() else []
    if any(not t for t in tokens):
        raise AssemblyError("empty operand", lineno, name_col)
    cols = _operand_columns(raw, operand_text, tokens)

    def reg(i):
        return _parse_reg(tokens[i], _REG, NUM_REGISTERS, "register", lineno, cols[i])

    def areg(i):
        return _parse_reg(tokens[i], _AREG, NUM_ADDRESS_REGISTERS, "address register", lineno, cols[i])

    def flag(i):
        if tokens[i] not in ("0", "1"):
            raise AssemblyError(f"auto-increment flag must be 0 or 1, got '{tokens[i]}'", lineno, cols[i])
        return tokens[i] == "1"

    if mnemonic is Mnemonic.EVC:
        expected = 1
    elif mnemonic in MEMORY:
        expected = 3
    elif mnemonic in UNARY:
        expected = 2
    else:
        expected = 3
    if len(tokens) != expected:
        raise AssemblyError(
            f"{mnemonic} takes {expected} operands, got {len(tokens)}", lineno, name_col
        )
    if mnemonic is Mnemonic.EVC:
        return Instruction(mnemonic, src_a=reg(0))
    if mnemonic is Mnemonic.MLD:
        return Instruction(mnemonic, dst=reg(0), src_a=areg(1), auto_inc=flag(2))
    if mnemonic is Mnemonic.MST:
        return Instruction(mnemonic, dst=areg(0), src_a=reg(1), auto_inc=flag(2))
    if mnemonic in UNARY:
        return Instruction(mnemonic, dst=reg(0), src_a=reg(1))
    return Instruction(mnemonic, dst=reg(0), src_a=reg(1), src_b=reg(2))


def assemble(text: str, name: str = "kernel") -> MicroKernel:
    """Parse micro-kernel source into a validated :class:`MicroKernel`."""
    instructions = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        ins = _parse_line(raw, lineno)
        if ins is not None:
            instructions.append(ins)
    if not instructions:
        raise AssemblyError(f"kernel '{name}' is empty")
    return MicroKernel(name, tuple(instructions))


def format_instruction(ins: Instruction) -> str:
    m = ins.mnemonic
    if m is Mnemonic.EVC:
        return f"EVC R{ins.src_a}"
    if m is Mnemonic.MLD:
        return f"MLD R{ins.dst}, A{ins.src_a}, {int(ins.auto_inc)}"
    if m is Mnemonic.MST:
        return f"MST A{ins.dst}, R{ins.src_a}, {int(ins.auto_inc)}"
    if m in UNARY:
        return f"{m} R{ins.dst}, R{ins.src_a}"
    return f"{m} R{ins.dst}, R{ins.src_a}, R{ins.src_b}"


def disassemble(kernel: MicroKernel | Iterable[Instruction]) -> str:
    return "\n".join(format_instruction(i) for i in kernel) + "\n"
