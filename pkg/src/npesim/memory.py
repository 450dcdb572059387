"""Data memory, access statistics and memory images.

Words are 16 bits. Packed integer words hold two int8 or four int4 lanes
(lane 0 in the least significant bits). Reading lanes of the same word
back-to-back costs one physical read.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bf16 import PackMode, unpack_lanes
from .errors import ConfigError, MemoryBoundsError

DEFAULT_CAPACITY_BITS = 2_000_000
WORD_BITS = 16


class MemoryLevel(enum.Enum):
    REGISTER_FILE = "register_file"
    LOCAL_SRAM = "sram"
    SHARED = "hbm"


@dataclass
class AccessStats:
    reads: dict[MemoryLevel, int] = field(default_factory=dict)
    writes: dict[MemoryLevel, int] = field(default_factory=dict)

    def add(self, level: MemoryLevel, reads: int = 0, writes: int = 0) -> None:
        if reads:
            self.reads[level] = self.reads.get(level, 0) + int(reads)
        if writes:
            self.writes[level] = self.writes.get(level, 0) + int(writes)

    def bits_moved(self, level: MemoryLevel) -> int:
        return WORD_BITS * (self.reads.get(level, 0) + self.writes.get(level, 0))

    def merged(self, other: "AccessStats") -> "AccessStats":
        out = AccessStats(dict(self.reads), dict(self.writes))
        for lvl, n in other.reads.items():
            out.add(lvl, reads=n)
        for lvl, n in other.writes.items():
            out.add(lvl, writes=n)
        return out

    def as_dict(self) -> dict:
        levels = sorted(set(self.reads) | set(self.writes), key=lambda l: l.value)
        return {
            lvl.value: {
                "reads": self.reads.get(lvl, 0),
                "writes": self.writes.get(lvl, 0),
                "bits_moved": self.bits_moved(lvl),
            }
            for lvl in levels
        }


class DataMemory:
    """Zero-initialised word-addressed memory with access counters.

    ``peek``/``poke`` are host-side (controller) transfers and are not
    counted; ``read_word``/``write_word``/``read_packed`` model NPE accesses.
    """

    def __init__(self, capacity_bits: int = DEFAULT_CAPACITY_BITS,
                 level: MemoryLevel = MemoryLevel.LOCAL_SRAM):
        if capacity_bits < WORD_BITS:
            raise ConfigError("memory must hold at least one word")
        self.capacity_bits = capacity_bits
        self.level = level
        self.words = np.zeros(capacity_bits // WORD_BITS, dtype=np.uint16)
        self.stats = AccessStats()
        self._open_word: int | None = None

    @property
    def size(self) -> int:
        return self.words.size

    def _check(self, addr: int, count: int = 1) -> None:
        if addr < 0 or addr + count > self.size:
            raise MemoryBoundsError(
                f"address range [{addr}, {addr + count}) outside memory of {self.size} words"
            )

    def read_word(self, addr: int) -> int:
        self._check(addr)
        self.stats.add(self.level, reads=1)
        self._open_word = None
        return int(self.words[addr])

    def write_word(self, addr: int, bits: int) -> None:
        self._check(addr)
        self.stats.add(self.level, writes=1)
        self._open_word = None
        self.words[addr] = bits & 0xFFFF

    def read_packed(self, addr: int, mode: PackMode | str, lane: int) -> int:
        """Return one signed lane of the word at ``addr``.

        A physical read is charged only when ``addr`` differs from the word
        the previous packed read fetched.
        """
        mode = PackMode(mode)
        if mode is PackMode.BF16:
            raise ConfigError("read_packed needs an integer packing mode")
        if not 0 <= lane < mode.lanes:
            raise MemoryBoundsError(f"lane {lane} outside 0-{mode.lanes - 1} for {mode.value}")
        self._check(addr)
        if self._open_word != addr:
            self.stats.add(self.level, reads=1)
            self._open_word = addr
        return int(unpack_lanes(self.words[addr], mode)[lane])

    def peek(self, addr: int, count: int = 1) -> np.ndarray:
        self._check(addr, count)
        return self.words[addr:addr + count].copy()

    def poke(self, addr: int, bits) -> None:
        bits = np.asarray(bits, dtype=np.uint16).ravel()
        self._check(addr, bits.size)
        self.words[addr:addr + bits.size] = bits


@dataclass(frozen=True)
class Symbol:
    name: str
    address: int
    count: int
    mode: PackMode = PackMode.BF16

    @property
    def words(self) -> int:
        return -(-self.count // self.mode.lanes)

    @property
    def end(self) -> int:
        return self.address + self.words

    @property
    def element_address(self) -> int:
        """Start address in lane units, as an address register in this mode sees it."""
        return self.address * self.mode.lanes


class MemoryMap:
    """Bump allocator plus symbol table for one memory."""

    def __init__(self, capacity_words: int):
        self.capacity_words = capacity_words
        self.symbols: dict[str, Symbol] = {}
        self._next = 0

    def alloc(self, name: str, count: int, mode: PackMode | str = PackMode.BF16) -> Symbol:
        if name in self.symbols:
            raise ConfigError(f"symbol '{name}' already allocated")
        sym = Symbol(name, self._next, int(count), PackMode(mode))
        if sym.end > self.capacity_words:
            raise MemoryBoundsError(
                f"allocating '{name}' ({sym.words} words) exceeds capacity of {self.capacity_words} words"
            )
        self.symbols[name] = sym
        self._next = sym.end
        return sym

    def __getitem__(self, name: str) -> Symbol:
        return self.symbols[name]

    @property
    def used_words(self) -> int:
        return self._next

    def manifest(self) -> str:
        lines = ["# name address count mode"]
        for s in self.symbols.values():
            lines.append(f"{s.name} {s.address} {s.count} {s.mode.value}")
        return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> dict[str, Symbol]:
    symbols = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ConfigError(f"manifest line {lineno}: expected 'name address count mode'")
        name, addr, count, mode = parts
        try:
            symbols[name] = Symbol(name, int(addr), int(count), PackMode(mode))
        except ValueError as exc:
            raise ConfigError(f"manifest line {lineno}: {exc}") from None
    return symbols


def manifest_path(image: Path) -> Path:
    return image.with_suffix(image.suffix + ".manifest")


def save_image(path: str | Path, words, symbols: MemoryMap | dict[str, Symbol]) -> None:
    """Write raw little-endian words plus the sidecar manifest."""
    path = Path(path)
    np.asarray(words, dtype="<u2").tofile(path)
    table = symbols.symbols if isinstance(symbols, MemoryMap) else symbols
    mm = MemoryMap(len(np.asarray(words)))
    for s in table.values():
        mm.symbols[s.name] = s
    manifest_path(path).write_text(mm.manifest())


def load_image(path: str | Path) -> tuple[np.ndarray, dict[str, Symbol]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"memory image not found: {path}")
    words = np.fromfile(path, dtype="<u2").astype(np.uint16)
    mpath = manifest_path(path)
    if not mpath.exists():
        raise FileNotFoundError(f"memory image manifest not found: {mpath}")
    symbols = parse_manifest(mpath.read_text())
    for s in symbols.values():
        if s.end > words.size:
            raise ConfigError(f"symbol '{s.name}' runs past the end of image {path}")
    return words, symbols


def load_symbol(path: str | Path, name: str) -> tuple[np.ndarray, Symbol]:
    words, symbols = load_image(path)
    if name not in symbols:
        raise ConfigError(f"symbol '{name}' not in manifest of {path}")
    s = symbols[name]
    return words[s.address:s.end].copy(), s
