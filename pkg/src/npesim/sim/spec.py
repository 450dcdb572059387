"""Network descriptions and their JSON form.

Example::

    {
      "layers": [{"size": 4, "neuron": "input"}, {"size": 3, "neuron": "IF"}],
      "projections": [
        {"kind": "forward", "from": 0, "to": 1,
         "weights": {"uniform": [0.0, 1.0], "seed": 3}}
      ],
      "params": {"vth": 1.0},
      "synop": "bf16:1",
      "time_steps": 10
    }

Weight blocks are ``(source size, target size)`` matrices. Besides inline
``values`` and seeded ``uniform``/``normal`` draws, a block may name a
symbol in a memory image: ``{"image": "w.bin", "symbol": "w01"}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..bf16 import bf16_to_float
from ..errors import ConfigError
from ..kernels import KernelParams, SynOpConfig
from ..memory import load_symbol

NEURON_MODELS = ("input", "IF", "SD")
PROJECTION_KINDS = ("forward", "recurrent", "feedback")
LEARNING_RULES = ("none", "hebbian", "eprop")


@dataclass(frozen=True)
class LayerSpec:
    size: int
    neuron: str = "IF"


@dataclass
class Projection:
    kind: str
    src: int
    dst: int
    weights: np.ndarray


@dataclass
class NetworkSpec:
    layers: list[LayerSpec]
    projections: list[Projection] = field(default_factory=list)
    learning: str = "none"
    params: KernelParams = field(default_factory=KernelParams)
    synop: SynOpConfig = field(default_factory=SynOpConfig)
    time_steps: int = 1
    delta_every: int = 1
    lanes: int = 8
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.layers:
            raise ConfigError("network has no layers")
        for i, layer in enumerate(self.layers):
            if layer.size <= 0:
                raise ConfigError(f"layer {i} size must be positive")
            if layer.neuron not in NEURON_MODELS:
                raise ConfigError(f"layer {i}: unknown neuron model '{layer.neuron}'")
        if self.layers[0].neuron != "input":
            raise ConfigError("layer 0 must be the input layer")
        if any(layer.neuron == "input" for layer in self.layers[1:]):
            raise ConfigError("only layer 0 may be an input layer")
        for p in self.projections:
            if p.kind not in PROJECTION_KINDS:
                raise ConfigError(f"unknown projection kind '{p.kind}'")
            for idx in (p.src, p.dst):
                if not 0 <= idx < len(self.layers):
                    raise ConfigError(f"projection refers to missing layer {idx}")
            want = (self.layers[p.src].size, self.layers[p.dst].size)
            if p.weights.shape != want:
                raise ConfigError(
                    f"{p.kind} projection {p.src}->{p.dst}: weights {p.weights.shape}, expected {want}"
                )
        if self.learning not in LEARNING_RULES:
            raise ConfigError(f"unknown learning rule '{self.learning}'")
        if self.time_steps < 0:
            raise ConfigError("time_steps must be non-negative")
        if self.delta_every < 1:
            raise ConfigError("delta_every must be at least 1")
        if self.lanes < 1:
            raise ConfigError("lanes must be positive")

    @property
    def neuron_model(self) -> str:
        return self.layers[1].neuron if len(self.layers) > 1 else "input"

    def forward(self, dst: int) -> Projection:
        for p in self.projections:
            if p.kind == "forward" and p.dst == dst:
                return p
        raise ConfigError(f"no forward projection into layer {dst}")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | str = ".") -> "NetworkSpec":
        base_dir = Path(base_dir)
        try:
            layers = [LayerSpec(int(l["size"]), str(l.get("neuron", "IF"))) for l in doc["layers"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad 'layers' entry: {exc}") from None
        projections = []
        for i, p in enumerate(doc.get("projections", [])):
            try:
                src, dst = int(p["from"]), int(p["to"])
            except (KeyError, TypeError, ValueError):
                raise ConfigError(f"projection {i}: needs integer 'from' and 'to'") from None
            if not (0 <= src < len(layers) and 0 <= dst < len(layers)):
                raise ConfigError(f"projection {i} refers to missing layer")
            shape = (layers[src].size, layers[dst].size)
            w = _weights(p.get("weights"), shape, base_dir, f"projection {i}")
            projections.append(Projection(str(p.get("kind", "forward")), src, dst, w))
        known = {"layers", "projections", "learning", "params", "synop", "time_steps",
                 "delta_every", "lanes", "seed", "options", "name"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown spec field(s): {', '.join(sorted(unknown))}")
        try:
            params = KernelParams(**doc.get("params", {}))
        except TypeError as exc:
            raise ConfigError(f"bad 'params': {exc}") from None
        return cls(
            layers=layers,
            projections=projections,
            learning=str(doc.get("learning", "none")),
            params=params,
            synop=SynOpConfig.parse(doc.get("synop", "bf16:1")),
            time_steps=int(doc.get("time_steps", 1)),
            delta_every=int(doc.get("delta_every", 1)),
            lanes=int(doc.get("lanes", 8)),
            seed=int(doc.get("seed", 0)),
            options=dict(doc.get("options", {})),
        )


def _weights(desc, shape: tuple[int, int], base_dir: Path, where: str) -> np.ndarray:
    if desc is None:
        raise ConfigError(f"{where}: missing 'weights'")
    if "values" in desc:
        w = np.asarray(desc["values"], dtype=np.float64)
        if w.shape != shape:
            raise ConfigError(f"{where}: weights {w.shape}, expected {shape}")
        return w
    if "uniform" in desc or "normal" in desc:
        rng = np.random.default_rng(int(desc.get("seed", 0)))
        if "uniform" in desc:
            lo, hi = desc["uniform"]
            return rng.uniform(lo, hi, shape)
        mu, sigma = desc["normal"]
        return rng.normal(mu, sigma, shape)
    if "image" in desc:
        path = base_dir / desc["image"]
        if not path.exists():
            raise FileNotFoundError(f"{where}: weight image not found: {path}")
        bits, sym = load_symbol(path, desc["symbol"])
        if sym.count != shape[0] * shape[1]:
            raise ConfigError(f"{where}: symbol '{sym.name}' holds {sym.count} values, expected {shape[0] * shape[1]}")
        return bf16_to_float(bits).reshape(shape)
    raise ConfigError(f"{where}: weights need 'values', 'uniform', 'normal' or 'image'")


def load_spec(path: str | Path) -> NetworkSpec:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"network spec not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return NetworkSpec.from_dict(doc, path.parent)
