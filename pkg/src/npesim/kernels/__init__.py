"""Built-in micro-kernels and the quantized / multi-event synaptic-op variants.

Register conventions follow the hand-written listings: A1 and A2 (A3 where
needed) walk the per-element arrays, and the ``bindings`` of each kernel name
the registers that must be preloaded before a launch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from ..bf16 import PackMode, Value16, encode
from ..energy import DEFAULT_TABLE, UNITS_PER_PJ, EnergyTable, kernel_energy_units
from ..engine import AddrMode
from ..errors import ConfigError
from ..isa import Instruction, Mnemonic, MicroKernel

M = Mnemonic


def _op(m: Mnemonic, dst=None, a=None, b=None) -> Instruction:
    return Instruction(m, dst, a, b)


def _mld(dst, areg, inc):
    return Instruction(M.MLD, dst, areg, None, bool(inc))


def _mst(areg, src, inc):
    return Instruction(M.MST, areg, src, None, bool(inc))


def _evc(src):
    return Instruction(M.EVC, src_a=src)


@dataclass(frozen=True)
class KernelParams:
    """Numeric constants the kernels read from preloaded registers."""

    vth: float = 1.0
    q: float = 1.0
    eta: float = 0.01
    beta: float = 0.9
    a1: float = 1.0

    def __post_init__(self):
        if not self.q > 0:
            raise ConfigError("q must be positive")
        if not 0 <= self.beta <= 1:
            raise ConfigError("beta must lie in [0, 1]")
        if not self.a1 > 0:
            raise ConfigError("a1 must be positive")

    def values(self) -> dict[str, Value16]:
        return {
            "vth": Value16(encode(self.vth)),
            "q": Value16(encode(self.q)),
            "eta": Value16(encode(self.eta)),
            "beta": Value16(encode(self.beta)),
            "one_minus_beta": Value16(encode(1.0 - self.beta)),
            "a1_half": Value16(encode(self.a1 / 2)),
            "inv_a1": Value16(encode(1.0 / self.a1)),
            "zero": Value16(0),
            "scale": Value16(encode(1.0)),
        }


# names bound at launch time rather than from KernelParams
RUNTIME_BINDINGS = frozenset({"o_in", "trace_out", "eta_i"})


def constants_for(kernel: MicroKernel, params: KernelParams | None = None, **runtime) -> dict[int, Value16]:
    """Register -> value map for a launch of ``kernel``."""
    values = (params or KernelParams()).values()
    values.update({k: v if isinstance(v, Value16) else Value16(encode(v)) for k, v in runtime.items()})
    out = {}
    for reg, name in kernel.bindings.items():
        if name not in values:
            raise ConfigError(f"kernel '{kernel.name}' needs a value for '{name}'")
        out[reg] = values[name]
    return out


# -- spike integration / generation ----------------------------------------


def build_if_integration() -> MicroKernel:
    # A1: weights w_ij (auto-increment), A2: states v_i
    return MicroKernel("if_integration", (
        _mld(0, 1, 1),
        _mld(1, 2, 0),
        _op(M.ADD, 1, 0, 1),
        _mst(2, 1, 1),
    ))


def build_if_generation() -> MicroKernel:
    # A1: states v_i
    return MicroKernel("if_generation", (
        _mld(0, 1, 0),
        _op(M.GTH, 2, 0, 1),
        _op(M.MUL, 3, 2, 0),
        _op(M.SUB, 0, 0, 3),
        _mst(1, 0, 1),
        _evc(2),
    ), bindings={1: "vth"})


# -- sigma-delta --------------------------------------------------------------


def build_sd_sigma() -> MicroKernel:
    # A1: weights, A2: sigma states z_i
    return MicroKernel("sd_sigma", (
        _mld(0, 1, 1),
        _mld(1, 2, 0),
        _op(M.MUL, 3, 0, 2),
        _op(M.ADD, 1, 1, 3),
        _mst(2, 1, 1),
    ), bindings={2: "o_in"})


def build_sd_delta(as_printed: bool = False) -> MicroKernel:
    """Delta evaluation with ReLU and quantization step ``q`` in R3.

    The hand listing writes the difference into R3, which also holds ``q``;
    from the second iteration on every lane would divide by the previous
    delta. The default kernel writes the difference to R4 instead (same
    instruction mix, same energy). ``as_printed=True`` returns the literal
    version so tools can show the loop-carried hazard.
    """
    diff = 3 if as_printed else 4
    # A1: sigma states z_i, A2: quantized activations f(z_i[k-1])
    return MicroKernel("sd_delta_as_printed" if as_printed else "sd_delta", (
        _mld(0, 1, 1),
        _mld(1, 2, 0),
        _op(M.MAX, 0, 0, 2),
        _op(M.DIV, 0, 0, 3),
        _op(M.RND, 0, 0),
        _op(M.MUL, 0, 0, 3),
        _op(M.SUB, diff, 0, 1),
        _mst(2, 0, 1),
        _evc(diff),
    ), bindings={2: "zero", 3: "q"})


# -- Hebbian --------------------------------------------------------------------


def build_hebbian_weight() -> MicroKernel:
    # A1: weights w_ij of one post neuron i, A2: input traces
    return MicroKernel("hebbian_weight", (
        _mld(0, 1, 0),
        _mld(1, 2, 1),
        _op(M.MUL, 1, 1, 2),
        _op(M.MUL, 1, 1, 3),
        _op(M.ADD, 0, 0, 1),
        _mst(1, 0, 1),
    ), bindings={2: "trace_out", 3: "eta"})


def build_trace_update() -> MicroKernel:
    # A1: traces, A2: spikes of the current step
    return MicroKernel("trace_update", (
        _mld(0, 1, 0),
        _mld(1, 2, 1),
        _op(M.MUL, 0, 0, 2),
        _op(M.MUL, 1, 1, 3),
        _op(M.ADD, 0, 0, 1),
        _mst(1, 0, 1),
    ), bindings={2: "beta", 3: "one_minus_beta"})


# -- e-prop -------------------------------------------------------------------


def build_eprop_eligibility() -> MicroKernel:
    # A1: eligibilities e_ij, A2: input trace, A3: membrane states v_i
    return MicroKernel("eprop_eligibility", (
        _mld(0, 1, 0),
        _mld(1, 2, 1),
        _mld(2, 3, 1),
        _op(M.SUB, 2, 2, 3),
        _op(M.ABS, 2, 2),
        _op(M.GTH, 2, 4, 2),
        _op(M.MUL, 2, 2, 5),
        _op(M.MUL, 2, 2, 1),
        _op(M.ADD, 0, 0, 2),
        _mst(1, 0, 1),
    ), bindings={3: "vth", 4: "a1_half", 5: "inv_a1"})


def build_eprop_weight() -> MicroKernel:
    # A1: weights, A2: eligibilities, A3: accumulated feedback error per neuron
    return MicroKernel("eprop_weight", (
        _mld(0, 1, 0),
        _mld(1, 2, 1),
        _mld(2, 3, 1),
        _op(M.MUL, 1, 3, 1),
        _op(M.MUL, 2, 2, 1),
        _op(M.SUB, 0, 0, 2),
        _mst(1, 0, 1),
    ), bindings={3: "eta"})


BUILDERS = {
    "if_integration": build_if_integration,
    "if_generation": build_if_generation,
    "sd_sigma": build_sd_sigma,
    "sd_delta": build_sd_delta,
    "hebbian_weight": build_hebbian_weight,
    "trace_update": build_trace_update,
    "eprop_eligibility": build_eprop_eligibility,
    "eprop_weight": build_eprop_weight,
}
KERNEL_NAMES = tuple(BUILDERS)


# -- synaptic-op variants ---------------------------------------------------------

WEIGHT_MODES = ("bf16", "int8", "int4", "int4_full")
EVENT_COUNTS = (1, 4)
SCALE_REG = 15


@dataclass(frozen=True)
class SynOpConfig:
    weight_mode: str = "bf16"
    events: int = 1
    state_mode: str | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"unknown weight mode '{self.weight_mode}'")
        if self.events not in EVENT_COUNTS:
            raise ConfigError(f"events per iteration must be one of {EVENT_COUNTS}")
        full = self.weight_mode == "int4_full"
        state = self.state_mode or ("int8" if full else "bf16")
        if state not in ("bf16", "int8"):
            raise ConfigError(f"unknown state mode '{state}'")
        if full != (state == "int8"):
            raise ConfigError("int8 states go with fully integer int4 weights, and only with them")
        if full and self.scale != 1.0:
            raise ConfigError("fully integer mode has no weight scale")
        if self.scale <= 0 or not math.log2(self.scale).is_integer():
            raise ConfigError("weight scale must be a positive power of two")
        object.__setattr__(self, "state_mode", state)

    @classmethod
    def parse(cls, text: str) -> "SynOpConfig":
        """From ``<mode>:<events>`` or ``synop:<mode>:<events>``."""
        parts = text.split(":")
        if parts[0] == "synop":
            parts = parts[1:]
        if len(parts) != 2:
            raise ConfigError(f"expected 'synop:<mode>:<events>', got '{text}'")
        mode = parts[0].replace("-", "_")
        try:
            events = int(parts[1])
        except ValueError:
            raise ConfigError(f"bad event count in '{text}'") from None
        return cls(mode, events)

    @property
    def name(self) -> str:
        return f"synop:{self.weight_mode}:{self.events}"


@dataclass(frozen=True)
class SynOpPlan:
    """A synaptic-op kernel together with how its cost is spread over synops.

    Each iteration handles one neuron (a neuron pair in fully integer mode)
    for ``config.events`` input events: the state lives behind ``state_reg``
    and event ``e``'s weight row behind ``weight_regs[e]``.
    """

    config: SynOpConfig
    kernel: MicroKernel
    amortize: Mapping[int, Fraction]
    synops_per_iteration: int
    state_reg: int
    weight_regs: tuple[int, ...]
    addr_mode: Mapping[int, AddrMode] = field(default_factory=dict)

    @property
    def neurons_per_iteration(self) -> int:
        return 2 if self.config.weight_mode == "int4_full" else 1

    def derived_units(self, table: EnergyTable | None = None) -> Fraction:
        """Instruction-sum energy per synaptic op, in ledger units."""
        return kernel_energy_units(self.kernel, 1, table, self.amortize) / self.synops_per_iteration

    def derived_pj(self, table: EnergyTable | None = None) -> float:
        return float(self.derived_units(table) / UNITS_PER_PJ)

    @property
    def uses_constant(self) -> bool:
        return self.config.weight_mode == "int4_full"

    def energy_pj(self, table: EnergyTable | None = None) -> float:
        """Reported energy per synaptic op.

        Fully integer cells come from the cost table's measured constants;
        all other cells are instruction sums.
        """
        table = table or DEFAULT_TABLE
        if self.uses_constant:
            key = ("int4_full", self.config.events)
            return table.synop_constants[key] / UNITS_PER_PJ
        return self.derived_pj(table)


_WEIGHT_ADDR = {"int8": AddrMode.INT8, "int4": AddrMode.INT4, "int4_full": AddrMode.INT4_PAIR}


def build_synop(config: SynOpConfig | str) -> SynOpPlan:
    if isinstance(config, str):
        config = SynOpConfig.parse(config)
    mode, events = config.weight_mode, config.events
    if mode == "bf16" and events == 1:
        k = build_if_integration()
        kernel = MicroKernel(config.name, k.instructions)
        return SynOpPlan(config, kernel, {}, 1, state_reg=2, weight_regs=(1,))

    weight_regs = tuple(range(1, events + 1))
    addr_mode = {a: _WEIGHT_ADDR[mode] for a in weight_regs} if mode != "bf16" else {}
    ins: list[Instruction] = []
    amortize: dict[int, Fraction] = {}
    bindings: dict[int, str] = {}
    lanes = {"bf16": 1, "int8": 2, "int4": 4, "int4_full": 2}[mode]

    def weight(e: int) -> None:
        reg = weight_regs[e]
        amortize[len(ins)] = Fraction(1, lanes)
        ins.append(_mld(reg, reg, 1))
        if mode in ("int8", "int4"):
            ins.append(_op(M.I2F, reg, reg))
            if config.scale != 1.0:
                bindings[SCALE_REG] = "scale"
                ins.append(_op(M.MUL, reg, reg, SCALE_REG))
        ins.append(_op(M.ADD_I8X2 if mode == "int4_full" else M.ADD, 0, 0, reg))

    if events == 1:
        # weight first so the packed load can be amortized
        weight(0)
        ins.insert(len(ins) - 1, _mld(0, 0, 0))
    else:
        ins.append(_mld(0, 0, 0))
        for e in range(events):
            weight(e)
    ins.append(_mst(0, 0, 1))
    kernel = MicroKernel(config.name, tuple(ins), bindings=bindings)
    per_iter = events * (2 if mode == "int4_full" else 1)
    return SynOpPlan(config, kernel, amortize, per_iter, state_reg=0, weight_regs=weight_regs,
                     addr_mode=addr_mode)


def synop_grid(table: EnergyTable | None = None) -> list[dict]:
    """Every (weight mode, events) cell with its reported and derived energy."""
    rows = []
    for mode in WEIGHT_MODES:
        for events in EVENT_COUNTS:
            plan = build_synop(SynOpConfig(mode, events))
            rows.append({
                "mode": mode,
                "events": events,
                "pj_per_synop": plan.energy_pj(table),
                "derived_pj": plan.derived_pj(table),
                "source": "constant" if plan.uses_constant else "instruction-sum",
            })
    return rows


# -- weight quantization ------------------------------------------------------------


def quantize_weights(weights, mode: str | PackMode) -> tuple[np.ndarray, float]:
    """Symmetric per-tensor quantization with a power-of-two scale.

    Returns integer weights in ``[-qmax, qmax]`` and the scale so that
    ``ints * scale`` approximates ``weights``. Weights that already are
    in-range integers keep scale 1.
    """
    pm = PackMode(mode if not isinstance(mode, str) else mode.replace("_full", ""))
    if pm is PackMode.BF16:
        raise ConfigError("quantization needs an integer mode")
    w = np.asarray(weights, dtype=np.float64)
    qmax = pm.lane_range[1]
    peak = float(np.abs(w).max()) if w.size else 0.0
    scale = 1.0
    if peak > 0:
        scale = 2.0 ** math.ceil(math.log2(peak / qmax))
        if np.all(w == np.round(w)) and peak <= qmax:
            scale = 1.0
    ints = np.clip(np.round(w / scale), -qmax, qmax).astype(np.int64)
    return ints, scale


def pack_rows(ints: np.ndarray, mode: str | PackMode) -> tuple[np.ndarray, int]:
    """Pack each row of an integer matrix into whole words.

    Returns the flat word array and the number of words per row; every row
    starts on a word boundary.
    """
    from ..bf16 import pack_lanes

    pm = PackMode(mode if not isinstance(mode, str) else mode.replace("_full", ""))
    ints = np.atleast_2d(np.asarray(ints, dtype=np.int64))
    rows, cols = ints.shape
    per_row = -(-cols // pm.lanes)
    padded = np.zeros((rows, per_row * pm.lanes), dtype=np.int64)
    padded[:, :cols] = ints
    words = pack_lanes(padded.reshape(rows, per_row, pm.lanes), pm)
    return words.reshape(-1), per_row


# -- lookup -------------------------------------------------------------------------


def get_kernel(name: str) -> MicroKernel:
    if name.startswith("synop:"):
        return build_synop(name).kernel
    if name == "sd_delta_as_printed":
        return build_sd_delta(as_printed=True)
    try:
        return BUILDERS[name]()
    except KeyError:
        known = ", ".join(KERNEL_NAMES + ("synop:<mode>:<events>",))
        raise ConfigError(f"unknown kernel '{name}' (known: {known})") from None


def kernel_pj(name: str, event_rate=1, table: EnergyTable | None = None) -> float:
    """Per-iteration energy of a named kernel; per synaptic op for synop kernels."""
    if name.startswith("synop:"):
        return build_synop(name).energy_pj(table)
    from ..energy import kernel_energy

    return kernel_energy(get_kernel(name), event_rate, table)
