"""Unsupervised Hebbian learning of digit features.

Architecture (one population of M IF neurons fed by N input pixels):

* forward block ``W`` (M x N), learned by the Hebbian weight kernel;
* fixed lateral inhibition ``-inhibition`` between all pairs of neurons,
  carried by the previous step's output spikes (recurrent block);
* a learned top-down block ``W_fb`` (M x N) that the output spikes drive into
  N reconstruction accumulators (feedback block).

Within one step: integrate input, recurrent and feedback events, evaluate the
neurons, update input and output traces, then update both learned blocks with
the fresh traces. Between samples the host rescales each forward row to a
per-neuron gain that homeostasis nudges toward equal firing, and rescales
feedback rows to unit length. Classification labels every neuron with the
class it answers most on a labelling set and predicts the class with the
highest mean spike count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bf16 import BF16_NEG_ZERO, BF16_ONE, bf16_to_float, encode, round_to_bf16
from ..energy import EnergyTable
from ..errors import ConfigError
from ..kernels import build_hebbian_weight, build_if_generation, build_if_integration, build_trace_update
from .core import Core, SimOutcome
from .encoding import poisson_encode


@dataclass(frozen=True)
class HebbianConfig:
    n_inputs: int = 64
    n_neurons: int = 100
    steps: int = 100
    vth: float = 20.0
    inhibition: float = 40.0
    eta: float = 0.01
    beta: float = 0.9
    norm: float = 0.3
    gamma: float = 0.5
    w_max: float = 1.0
    feedback: bool = True
    clip: float | None = None
    lanes: int = 8

    def __post_init__(self):
        if self.n_inputs <= 0 or self.n_neurons <= 0:
            raise ConfigError("layer sizes must be positive")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if not 0 <= self.beta <= 1:
            raise ConfigError("beta must lie in [0, 1]")

    @classmethod
    def from_spec(cls, spec) -> "HebbianConfig":
        """Read sizes and constants from a NetworkSpec with Hebbian learning."""
        if spec.learning != "hebbian":
            raise ConfigError("spec does not use Hebbian learning")
        if len(spec.layers) != 2 or spec.layers[1].neuron != "IF":
            raise ConfigError("Hebbian networks have one input and one IF layer")
        opts = dict(spec.options)
        fields = set(cls.__dataclass_fields__)
        unknown = set(opts) - fields
        if unknown:
            raise ConfigError(f"unknown Hebbian option(s): {', '.join(sorted(unknown))}")
        return cls(n_inputs=spec.layers[0].size, n_neurons=spec.layers[1].size,
                   steps=spec.time_steps, vth=spec.params.vth, eta=spec.params.eta,
                   beta=spec.params.beta, lanes=spec.lanes, **opts)

    @property
    def constants(self) -> dict[str, int]:
        return {
            "vth": encode(self.vth),
            "eta": encode(self.eta),
            "beta": encode(self.beta),
            "one_minus_beta": encode(1.0 - self.beta),
            "inhibition": encode(-self.inhibition),
        }


def bf16_round(x) -> np.ndarray:
    return bf16_to_float(round_to_bf16(x))


def initial_weights(cfg: HebbianConfig, rng: np.random.Generator, rnd=bf16_round):
    """Forward weights, feedback weights and per-neuron gains."""
    w = rng.uniform(0.0, cfg.w_max, (cfg.n_neurons, cfg.n_inputs))
    gain = np.full(cfg.n_neurons, cfg.norm)
    w = rescale_rows(rnd(w), gain, rnd)
    fb = np.zeros((cfg.n_neurons, cfg.n_inputs))
    return w, fb, gain


def rescale_rows(w: np.ndarray, target, rnd=bf16_round) -> np.ndarray:
    """Scale each row to the given L2 norm; all-zero rows are left alone."""
    n = np.linalg.norm(w, axis=1)
    factor = np.where(n > 0, np.asarray(target, dtype=np.float64) / np.where(n > 0, n, 1.0), 1.0)
    return rnd(w * factor[:, None])


def homeostasis(cfg: HebbianConfig, w, fb, gain, counts, rnd=bf16_round):
    """Host-side housekeeping after one training sample."""
    total = counts.sum()
    gain = gain * np.exp(cfg.gamma * (total / cfg.n_neurons - counts) / max(total, 1))
    gain = gain * (cfg.norm / gain.mean())
    w = rescale_rows(w, gain, rnd)
    if cfg.clip is not None:
        w = rnd(np.clip(w, -cfg.clip, cfg.clip))
    fb = rescale_rows(fb, 1.0, rnd)
    return w, fb, gain


def inhibition_matrix(cfg: HebbianConfig) -> np.ndarray:
    """Source-major recurrent block as BF16 patterns, zero diagonal."""
    m = cfg.n_neurons
    r = np.full((m, m), cfg.constants["inhibition"], dtype=np.uint16)
    np.fill_diagonal(r, 0)
    return r


class CoreHebbianNet:
    """The network laid out in one core's data memory and run through kernels."""

    def __init__(self, cfg: HebbianConfig, table: EnergyTable | None = None, backend: str = "compiled",
                 elide: bool = True):
        self.cfg = cfg
        self.elide = elide
        m, n = cfg.n_neurons, cfg.n_inputs
        self.core = core = Core(table, cfg.lanes, backend=backend)
        self.w = core.alloc("w", m * n)
        self.fb = core.alloc("w_fb", m * n) if cfg.feedback else None
        self.r = core.alloc("r", m * m)
        self.v = core.alloc("v", m)
        self.x = core.alloc("x", n) if cfg.feedback else None
        self.tin = core.alloc("trace_in", n)
        self.tout = core.alloc("trace_out", m)
        self.sin = core.alloc("s_in", n)
        self.sout = core.alloc("s_out", m)
        core.write("r", inhibition_matrix(cfg))
        integ = build_if_integration()
        # forward weights are neuron-major, so an input event walks a column
        self.integ_col = core.launcher(integ, addr_stride={1: n})
        self.integ = core.launcher(integ)
        self.gen = core.launcher(build_if_generation())
        self.trace = core.launcher(build_trace_update())
        self.heb = core.launcher(build_hebbian_weight())
        c = cfg.constants
        self.k_vth = {1: np.uint16(c["vth"])}
        self.k_trace = {2: np.uint16(c["beta"]), 3: np.uint16(c["one_minus_beta"])}
        self.eta_bits = np.uint16(c["eta"])
        self._may_elide = False
        self.log: list | None = None  # set to a list to record per-step states

    rnd = staticmethod(bf16_round)

    # weights live in core memory between samples
    def get_weights(self) -> tuple[np.ndarray, np.ndarray]:
        m, n = self.cfg.n_neurons, self.cfg.n_inputs
        w = self.core.read("w").reshape(m, n)
        fb = self.core.read("w_fb").reshape(m, n) if self.fb else np.zeros((m, n))
        return w, fb

    def set_weights(self, w: np.ndarray, fb: np.ndarray) -> None:
        self.core.write("w", w)
        if self.fb:
            self.core.write("w_fb", fb)
        self._check_elision()

    def _check_elision(self) -> None:
        # a zero output trace leaves a row unchanged unless the row holds -0
        # (-0 + +0 = +0) or eta is negative
        bits = [self.core.read_bits("w")] + ([self.core.read_bits("w_fb")] if self.fb else [])
        self._may_elide = (self.elide and not (int(self.eta_bits) & 0x8000)
                           and not any((b == BF16_NEG_ZERO).any() for b in bits))

    def present(self, spikes: np.ndarray, learn: bool) -> np.ndarray:
        cfg, core = self.cfg, self.core
        m, n = cfg.n_neurons, cfg.n_inputs
        words = core.mem.words
        for name in ("v", "trace_in", "trace_out") + (("x",) if self.fb else ()):
            core.fill(name)
        counts = np.zeros(m, dtype=np.int64)
        prev = np.zeros(0, dtype=np.int64)
        if learn:
            self._check_elision()
        for k in range(spikes.shape[0]):
            ev = np.flatnonzero(spikes[k])
            if ev.size:
                core.launch(self.integ_col, {1: self.w.address + ev, 2: np.full(ev.size, self.v.address)},
                            np.full(ev.size, m))
            if prev.size:
                core.launch(self.integ, {1: self.r.address + prev * m, 2: np.full(prev.size, self.v.address)},
                            np.full(prev.size, m))
                if self.fb:
                    core.launch(self.integ, {1: self.fb.address + prev * n,
                                             2: np.full(prev.size, self.x.address)},
                                np.full(prev.size, n))
            out = core.launch(self.gen, {1: self.v.address}, m, self.k_vth).event_sources.copy()
            counts[out] += 1
            if learn:
                self._learn(ev, out, words)
            if self.log is not None:
                self.log.append({"spikes": out, "v": core.read("v"), "trace_in": core.read("trace_in"),
                                 "trace_out": core.read("trace_out")})
            prev = out
        return counts

    def _learn(self, ev, out, words) -> None:
        cfg, core = self.cfg, self.core
        m, n = cfg.n_neurons, cfg.n_inputs
        # spike vectors delivered into memory by the event interface
        words[self.sin.address:self.sin.end] = 0
        words[self.sin.address + ev] = BF16_ONE
        words[self.sout.address:self.sout.end] = 0
        words[self.sout.address + out] = BF16_ONE
        core.launch(self.trace, {1: self.tin.address, 2: self.sin.address}, n, self.k_trace)
        core.launch(self.trace, {1: self.tout.address, 2: self.sout.address}, m, self.k_trace)
        tout = words[self.tout.address:self.tout.end]
        rows = np.flatnonzero(tout) if self._may_elide else np.arange(m)
        blocks = [self.w] + ([self.fb] if self.fb else [])
        if rows.size:
            addr = np.concatenate([b.address + rows * n for b in blocks])
            core.launch(self.heb, {1: addr, 2: np.full(addr.size, self.tin.address)},
                        np.full(addr.size, n), {2: np.tile(tout[rows], len(blocks)), 3: self.eta_bits})
        idle = (m - rows.size) * len(blocks)
        if idle:
            core.account_elided(self.heb, np.full(idle, n))


@dataclass
class HebbianResult:
    accuracy: float
    outcome: SimOutcome | None
    labels: np.ndarray
    responses: np.ndarray
    total_spikes: int
    energy_per_step_pj: float


def split_indices(n_samples: int, rng: np.random.Generator, n_train: int, n_label: int, n_test: int):
    if n_train + n_test > n_samples:
        raise ConfigError(f"need {n_train + n_test} samples, dataset has {n_samples}")
    if n_label > n_train:
        raise ConfigError("labelling set is drawn from the training set")
    perm = rng.permutation(n_samples)
    train = perm[:n_train]
    return train, train[n_train - n_label:], perm[n_train:n_train + n_test]


def step_energy_pj(cfg: HebbianConfig, input_rate: float, output_rate: float,
                   table: EnergyTable | None = None) -> float:
    """Expected energy of one learning time step from kernel counts.

    ``input_rate``/``output_rate`` are mean events per step.
    """
    from ..energy import kernel_energy

    kernels = {name: build() for name, build in (
        ("integ", build_if_integration), ("gen", build_if_generation),
        ("trace", build_trace_update), ("heb", build_hebbian_weight))}
    e = {k: kernel_energy(v, 1, table) for k, v in kernels.items()}
    e_gen_idle = kernel_energy(kernels["gen"], 0, table)
    m, n = cfg.n_neurons, cfg.n_inputs
    fan_back = m + (n if cfg.feedback else 0)
    blocks = 2 if cfg.feedback else 1
    return (input_rate * m * e["integ"]
            + output_rate * fan_back * e["integ"]
            + m * e_gen_idle + output_rate * (e["gen"] - e_gen_idle)
            + (n + m) * e["trace"]
            + blocks * n * m * e["heb"])


def run_hebbian_training(cfg: HebbianConfig, dataset, seed: int = 0, n_train: int = 600,
                         n_label: int = 300, n_test: int = 400, backend: str = "core",
                         table: EnergyTable | None = None, net=None) -> HebbianResult:
    """Train on ``n_train`` samples, label neurons, report held-out accuracy.

    ``backend`` is ``"core"`` (kernels on the simulated core) or ``"bf16"`` /
    ``"wide"`` (the dense reference in emulated BF16 or float64).
    """
    x, y = dataset
    if x.ndim != 2 or x.shape[1] != cfg.n_inputs or len(x) != len(y):
        raise ConfigError(f"dataset must be (samples, {cfg.n_inputs}) images with one label each")
    rng = np.random.default_rng(seed)
    train, label_set, test = split_indices(len(x), rng, n_train, n_label, n_test)
    if net is None:
        if backend == "core":
            net = CoreHebbianNet(cfg, table)
        else:
            from .reference import HebbianReference

            net = HebbianReference(cfg, precision=backend)
    w, fb, gain = initial_weights(cfg, rng, net.rnd)
    net.set_weights(w, fb)
    total_spikes = 0
    in_events = 0
    for i in train:
        spikes = poisson_encode(x[i], cfg.steps, rng)
        in_events += int(spikes.sum())
        counts = net.present(spikes, learn=True)
        total_spikes += int(counts.sum())
        w, fb = net.get_weights()
        w, fb, gain = homeostasis(cfg, w, fb, gain, counts, net.rnd)
        net.set_weights(w, fb)
    train_steps = max(len(train) * cfg.steps, 1)
    energy = step_energy_pj(cfg, in_events / train_steps, total_spikes / train_steps, table)

    responses = np.zeros((cfg.n_neurons, 10))
    per_class = np.zeros(10)
    for i in label_set:
        counts = net.present(poisson_encode(x[i], cfg.steps, rng), learn=False)
        responses[:, y[i]] += counts
        per_class[y[i]] += 1
    labels = np.argmax(responses / np.maximum(per_class, 1), axis=1)
    correct = 0
    for i in test:
        counts = net.present(poisson_encode(x[i], cfg.steps, rng), learn=False)
        scores = np.array([counts[labels == c].mean() if (labels == c).any() else 0.0 for c in range(10)])
        correct += int(np.argmax(scores) == y[i])
    outcome = None
    if isinstance(net, CoreHebbianNet):
        w, fb = net.get_weights()
        outcome = net.core.outcome([], {"output": total_spikes}, {"w": w, "w_fb": fb})
    return HebbianResult(
        accuracy=correct / max(len(test), 1),
        outcome=outcome,
        labels=labels,
        responses=responses,
        total_spikes=total_spikes,
        energy_per_step_pj=energy,
    )
