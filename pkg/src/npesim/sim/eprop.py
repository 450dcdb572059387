"""Online e-prop learning for one dense IF layer.

The first ``n_outputs`` neurons are the readout. On a supervised step the
error of readout k is ``y_k = s_k - target_k``; each non-zero error is an
event that the sigma kernel spreads through feedback row ``b_k`` into a
per-neuron error accumulator, after which every synapse takes its weight
step. Each step runs, in order: input trace, input integration, eligibility
update (membrane potentials before reset), spike generation, and, when
supervised, error feedback and weight update.

Memory layout is source-major: ``W`` and ``E`` are (inputs, neurons) and a
row is contiguous, so input j's eligibilities run over all neurons with the
input trace held fixed (stride 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bf16 import BF16_ONE, encode
from ..energy import EnergyTable
from ..errors import ConfigError
from ..kernels import (
    build_eprop_eligibility,
    build_eprop_weight,
    build_if_generation,
    build_if_integration,
    build_sd_sigma,
    build_trace_update,
)
from .core import Core, SimOutcome
from .spec import NetworkSpec


@dataclass(frozen=True)
class EpropConfig:
    n_inputs: int
    n_neurons: int
    n_outputs: int | None = None
    vth: float = 1.0
    eta: float = 0.01
    beta: float = 0.9
    a1: float = 1.0
    lanes: int = 8

    def __post_init__(self):
        if self.n_inputs <= 0 or self.n_neurons <= 0:
            raise ConfigError("layer sizes must be positive")
        if not 0 < self.outputs <= self.n_neurons:
            raise ConfigError("readout size must lie in [1, n_neurons]")
        if not self.a1 > 0:
            raise ConfigError("a1 must be positive")
        if not 0 <= self.beta <= 1:
            raise ConfigError("beta must lie in [0, 1]")

    @property
    def outputs(self) -> int:
        return self.n_neurons if self.n_outputs is None else self.n_outputs

    @property
    def readout(self) -> np.ndarray:
        return np.arange(self.outputs)

    @property
    def constants(self) -> dict[str, int]:
        return {
            "vth": encode(self.vth),
            "eta": encode(self.eta),
            "beta": encode(self.beta),
            "one_minus_beta": encode(1.0 - self.beta),
            "a1_half": encode(self.a1 / 2),
            "inv_a1": encode(1.0 / self.a1),
        }

    @classmethod
    def from_spec(cls, spec: NetworkSpec) -> "EpropConfig":
        if spec.learning != "eprop":
            raise ConfigError("spec does not use e-prop learning")
        if len(spec.layers) != 2 or spec.layers[1].neuron != "IF":
            raise ConfigError("e-prop networks have one input and one IF layer")
        unknown = set(spec.options) - {"outputs"}
        if unknown:
            raise ConfigError(f"unknown e-prop option(s): {', '.join(sorted(unknown))}")
        p = spec.params
        return cls(spec.layers[0].size, spec.layers[1].size, spec.options.get("outputs"),
                   vth=p.vth, eta=p.eta, beta=p.beta, a1=p.a1, lanes=spec.lanes)


def _spec_weights(spec: NetworkSpec, cfg: EpropConfig):
    w = spec.forward(1).weights
    fb = [p for p in spec.projections if p.kind == "feedback"]
    if not fb:
        return w, np.eye(cfg.n_neurons)[: cfg.outputs]
    if len(fb) > 1 or (fb[0].src, fb[0].dst) != (1, 1):
        raise ConfigError("e-prop takes one feedback block from layer 1 to layer 1")
    return w, fb[0].weights[: cfg.outputs]


def run_eprop_training(spec: NetworkSpec | EpropConfig, inputs, targets, supervised=None,
                       weights=None, feedback=None, table: EnergyTable | None = None,
                       backend: str = "compiled", record: bool = False) -> SimOutcome:
    """Run the labelled stream ``inputs`` (steps, N) with ``targets`` (steps, K).

    ``supervised`` marks the steps that carry a teaching signal (all by
    default). With a NetworkSpec the weights come from its forward block and
    the feedback rows from an optional 1->1 feedback block (identity rows
    otherwise); with an EpropConfig they are passed in.
    """
    if isinstance(spec, NetworkSpec):
        cfg = EpropConfig.from_spec(spec)
        w0, b = _spec_weights(spec, cfg)
    else:
        cfg = spec
        w0 = weights
        b = np.eye(cfg.n_neurons)[: cfg.outputs] if feedback is None else feedback
    n, m, kout = cfg.n_inputs, cfg.n_neurons, cfg.outputs
    if w0 is None or np.shape(w0) != (n, m):
        raise ConfigError(f"weights must have shape ({n}, {m})")
    if np.shape(b) != (kout, m):
        raise ConfigError(f"feedback must have shape ({kout}, {m})")
    inputs = np.asarray(inputs).astype(bool)
    steps = inputs.shape[0]
    if inputs.ndim != 2 or inputs.shape[1] != n:
        raise ConfigError(f"inputs must have shape (steps, {n})")
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (steps, kout):
        raise ConfigError(f"targets must have shape ({steps}, {kout})")
    sup = np.ones(steps, dtype=bool) if supervised is None else np.asarray(supervised, dtype=bool)
    if sup.shape != (steps,):
        raise ConfigError("supervised mask needs one entry per step")

    core = Core(table, cfg.lanes, backend=backend)
    W = core.alloc("w", n * m)
    E = core.alloc("e", n * m)
    B = core.alloc("b", kout * m)
    v = core.alloc("v", m)
    fb = core.alloc("fb", m)
    tin = core.alloc("trace_in", n)
    sin = core.alloc("s_in", n)
    core.write("w", w0)
    core.write("b", b)
    c = {k: np.uint16(x) for k, x in cfg.constants.items()}
    trace = core.launcher(build_trace_update())
    integ = core.launcher(build_if_integration())
    elig = core.launcher(build_eprop_eligibility(), addr_stride={2: 0})
    gen = core.launcher(build_if_generation())
    sigma = core.launcher(build_sd_sigma())
    upd = core.launcher(build_eprop_weight())
    k_trace = {2: c["beta"], 3: c["one_minus_beta"]}
    k_elig = {3: c["vth"], 4: c["a1_half"], 5: c["inv_a1"]}
    rows = np.arange(n)
    words = core.mem.words
    outputs, log = [], []
    counts = {"input": 0, "output": 0, "error": 0}
    for k in range(steps):
        ev = np.flatnonzero(inputs[k])
        counts["input"] += ev.size
        # input spikes delivered into memory by the event interface
        words[sin.address:sin.end] = 0
        words[sin.address + ev] = BF16_ONE
        core.launch(trace, {1: tin.address, 2: sin.address}, n, k_trace)
        if ev.size:
            core.launch(integ, {1: W.address + ev * m, 2: np.full(ev.size, v.address)}, np.full(ev.size, m))
        core.launch(elig, {1: E.address + rows * m, 2: tin.address + rows, 3: np.full(n, v.address)},
                    np.full(n, m), k_elig)
        out = core.launch(gen, {1: v.address}, m, {1: c["vth"]}).event_sources.copy()
        counts["output"] += out.size
        if sup[k]:
            s = np.zeros(m)
            s[out] = 1.0
            y = s[cfg.readout] - targets[k]
            err = np.flatnonzero(y)
            counts["error"] += err.size
            core.fill("fb")
            if err.size:
                core.launch(sigma, {1: B.address + err * m, 2: np.full(err.size, fb.address)},
                            np.full(err.size, m), {2: y[err]})
            core.launch(upd, {1: W.address + rows * m, 2: E.address + rows * m, 3: np.full(n, fb.address)},
                        np.full(n, m), {3: c["eta"]})
        outputs.append(out)
        if record:
            log.append({"spikes": out, "v": core.read("v"), "trace_in": core.read("trace_in"),
                        "e": core.read("e").reshape(n, m), "w": core.read("w").reshape(n, m),
                        "fb": core.read("fb")})
    finals = {"w": core.read("w").reshape(n, m), "e": core.read("e").reshape(n, m), "v": core.read("v"),
              "trace_in": core.read("trace_in")}
    extra = {"trajectory": log} if record else {}
    return core.outcome(outputs, counts, finals, supervised_steps=int(sup.sum()), **extra)
