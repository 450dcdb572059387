"""Feed-forward IF and sigma-delta networks on one core."""

from __future__ import annotations

import numpy as np

from ..bf16 import PackMode, encode
from ..energy import EnergyTable, units_to_pj
from ..errors import ConfigError
from ..kernels import (
    SCALE_REG,
    SynOpConfig,
    build_if_generation,
    build_sd_delta,
    build_sd_sigma,
    build_synop,
    pack_rows,
    quantize_weights,
)
from .core import Core, SimOutcome
from .encoding import delta_events, quantize_activation, to_bits
from .spec import NetworkSpec


class SynapseBlock:
    """A dense weight block stored source-major, integrated through synop kernels."""

    def __init__(self, core: Core, name: str, weights: np.ndarray, config: SynOpConfig):
        if config.weight_mode == "int4_full":
            raise ConfigError("fully integer int4 synapses need int8 states; networks keep BF16 states")
        self.core = core
        self.n_in, self.n_out = weights.shape
        mode = config.weight_mode
        if mode == "bf16":
            self.sym = core.alloc(name, self.n_in * self.n_out)
            core.write(name, weights)
            self.row_elems = self.n_out
            self.effective = weights
            self.scale = 1.0
        else:
            if config.scale != 1.0:
                scale = config.scale
                hi = PackMode(mode).lane_range[1]
                ints = np.clip(np.round(weights / scale), -hi, hi).astype(np.int64)
            else:
                ints, scale = quantize_weights(weights, mode)
            words, per_row = pack_rows(ints, mode)
            lanes = PackMode(mode).lanes
            self.sym = core.alloc(name, self.n_in * per_row * lanes, mode)
            core.mem.poke(self.sym.address, words)
            self.row_elems = per_row * lanes
            self.effective = ints * scale
            self.scale = scale
        self.config = SynOpConfig(mode, config.events, scale=self.scale)
        self.multi = build_synop(self.config)
        self.single = build_synop(SynOpConfig(mode, 1, scale=self.scale))
        self._launch_multi = core.launcher(self.multi.kernel, self.multi.addr_mode)
        self._launch_single = core.launcher(self.single.kernel, self.single.addr_mode)

    def row_address(self, j) -> np.ndarray:
        j = np.asarray(j, dtype=np.int64)
        return self.sym.element_address + j * self.row_elems

    def _consts(self, plan):
        if SCALE_REG in plan.kernel.bindings:
            return {SCALE_REG: np.uint16(encode(self.scale))}
        return None

    def integrate(self, events: np.ndarray, state_addr: int, label: str) -> None:
        """Accumulate the weight rows of ``events`` (arrival order) into the states."""
        events = np.asarray(events, dtype=np.int64)
        if events.size == 0:
            return
        e = self.config.events
        n_multi = (events.size // e) * e if e > 1 else 0
        if n_multi:
            groups = events[:n_multi].reshape(-1, e)
            init = np.zeros((groups.shape[0], 8), dtype=np.int64)
            init[:, self.multi.state_reg] = state_addr
            for slot, reg in enumerate(self.multi.weight_regs):
                init[:, reg] = self.row_address(groups[:, slot])
            self.core.launch(self._launch_multi, init, self.n_out, self._consts(self.multi), label=label)
        rest = events[n_multi:]
        if rest.size:
            init = np.zeros((rest.size, 8), dtype=np.int64)
            init[:, self.single.state_reg] = state_addr
            init[:, self.single.weight_regs[0]] = self.row_address(rest)
            self.core.launch(self._launch_single, init, self.n_out, self._consts(self.single), label=label)


def _check_chain(spec: NetworkSpec, model: str) -> None:
    for i, layer in enumerate(spec.layers[1:], 1):
        if layer.neuron != model:
            raise ConfigError(f"layer {i} uses '{layer.neuron}' neurons; this run needs {model}")
        spec.forward(i)
    if len(spec.layers) < 2:
        raise ConfigError("network needs at least one neuron layer")
    extra = [p for p in spec.projections if p.kind != "forward" or p.dst != p.src + 1]
    if extra:
        raise ConfigError("only forward projections between consecutive layers are supported here")


def run_if_network(spec: NetworkSpec, input_spikes, table: EnergyTable | None = None,
                   backend: str = "compiled", record: bool = False) -> SimOutcome:
    """Run a chain of IF layers for ``len(input_spikes)`` steps.

    Each step integrates the incoming events layer by layer, then evaluates
    every neuron of that layer; its spikes feed the next layer in the same step.
    """
    _check_chain(spec, "IF")
    spikes = np.asarray(input_spikes)
    if spikes.ndim != 2 or spikes.shape[1] != spec.layers[0].size:
        raise ConfigError(f"input spikes must have shape (steps, {spec.layers[0].size})")
    core = Core(table, spec.lanes, backend=backend)
    n_layers = len(spec.layers)
    blocks, states = {}, {}
    for l in range(1, n_layers):
        blocks[l] = SynapseBlock(core, f"w{l}", spec.forward(l).weights, spec.synop)
        states[l] = core.alloc(f"v{l}", spec.layers[l].size)
    gen = core.launcher(build_if_generation())
    vth = np.uint16(encode(spec.params.vth))
    outputs, log = [], []
    counts = {"input": 0}
    for k in range(spikes.shape[0]):
        events = np.flatnonzero(spikes[k])
        counts["input"] += events.size
        step_out = []
        for l in range(1, n_layers):
            blocks[l].integrate(events, states[l].address, "if_integration")
            res = core.launch(gen, {1: states[l].address}, spec.layers[l].size, {1: vth})
            events = res.event_sources.copy()
            counts[f"layer{l}"] = counts.get(f"layer{l}", 0) + events.size
            step_out.append(events)
        outputs.append(step_out)
        if record:
            log.append([core.read(f"v{l}") for l in range(1, n_layers)])
    finals = {f"v{l}": core.read(f"v{l}") for l in range(1, n_layers)}
    extra = {"trajectory": log} if record else {}
    return core.outcome(outputs, counts, finals,
                        effective_weights={l: b.effective for l, b in blocks.items()}, **extra)


def run_sd_network(spec: NetworkSpec, frames, table: EnergyTable | None = None,
                   backend: str = "compiled", record: bool = False) -> SimOutcome:
    """Run a chain of sigma-delta layers over a frame stream.

    The host quantizes each input frame and sends the non-zero changes as
    events. Sigma integration runs per event and fan-out; delta evaluation
    runs on every ``spec.delta_every``-th frame.
    """
    _check_chain(spec, "SD")
    if spec.synop != SynOpConfig():
        raise ConfigError("sigma-delta layers use BF16 weights with one event per iteration")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != spec.layers[0].size:
        raise ConfigError(f"frames must have shape (frames, {spec.layers[0].size})")
    core = Core(table, spec.lanes, backend=backend)
    n_layers = len(spec.layers)
    q = np.uint16(encode(spec.params.q))
    sigma = core.launcher(build_sd_sigma())
    delta = core.launcher(build_sd_delta())
    for l in range(1, n_layers):
        p = spec.forward(l)
        core.alloc(f"w{l}", p.weights.size)
        core.write(f"w{l}", p.weights)
        core.alloc(f"z{l}", spec.layers[l].size)
        core.alloc(f"a{l}", spec.layers[l].size)
    prev_in = np.zeros(spec.layers[0].size, dtype=np.uint16)
    outputs, frame_sigma_pj, log = [], [], []
    counts = {"input": 0}
    for f, frame in enumerate(frames):
        before_units = core.dynamic_units("sd_sigma")
        cur_in = quantize_activation(to_bits(frame), q)
        idx, payload = delta_events(prev_in, cur_in)
        prev_in = cur_in
        counts["input"] += idx.size
        evaluate = (f + 1) % spec.delta_every == 0
        acts = []
        for l in range(1, n_layers):
            m = spec.layers[l].size
            w_base = core.addr(f"w{l}")
            if idx.size:
                core.launch(sigma, {1: w_base + idx * m, 2: np.full(idx.size, core.addr(f"z{l}"))},
                            np.full(idx.size, m), {2: payload})
            if evaluate:
                res = core.launch(delta, {1: core.addr(f"z{l}"), 2: core.addr(f"a{l}")}, m,
                                  {2: 0.0, 3: np.uint16(q)})
                idx, payload = res.event_sources.copy(), res.event_payloads.copy()
            else:
                idx, payload = np.zeros(0, np.int64), np.zeros(0, np.uint16)
            counts[f"layer{l}"] = counts.get(f"layer{l}", 0) + idx.size
            acts.append(core.read(f"a{l}"))
        outputs.append(acts)
        if record:
            log.append(([core.read(f"z{l}") for l in range(1, n_layers)], acts))
        frame_sigma_pj.append(units_to_pj(core.dynamic_units("sd_sigma") - before_units))
    finals = {}
    for l in range(1, n_layers):
        finals[f"z{l}"] = core.read(f"z{l}")
        finals[f"a{l}"] = core.read(f"a{l}")
    extra = {"trajectory": log} if record else {}
    return core.outcome(outputs, counts, finals, frame_sigma_pj=frame_sigma_pj, **extra)
