"""Network-level simulation on one core."""

from .core import Core, SimOutcome
from .data import load_dataset, load_digits_builtin, load_digits_csv
from .encoding import delta_events, poisson_encode, quantize_activation
from .eprop import EpropConfig, run_eprop_training
from .hebbian import CoreHebbianNet, HebbianConfig, HebbianResult, run_hebbian_training, step_energy_pj
from .networks import SynapseBlock, run_if_network, run_sd_network
from .spec import LayerSpec, NetworkSpec, Projection, load_spec

__all__ = [
    "Core",
    "CoreHebbianNet",
    "EpropConfig",
    "HebbianConfig",
    "HebbianResult",
    "LayerSpec",
    "NetworkSpec",
    "Projection",
    "SimOutcome",
    "SynapseBlock",
    "delta_events",
    "load_dataset",
    "load_digits_builtin",
    "load_digits_csv",
    "load_spec",
    "poisson_encode",
    "quantize_activation",
    "run_eprop_training",
    "run_hebbian_training",
    "run_if_network",
    "run_sd_network",
    "step_energy_pj",
]
