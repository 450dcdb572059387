import json

import numpy as np
import pytest

from npesim.bf16 import bf16_to_float, encode, round_to_bf16
from npesim.errors import ConfigError
from npesim.memory import MemoryMap, save_image
from npesim.sim import load_spec
from npesim.sim.data import load_dataset, load_digits_csv
from npesim.sim.encoding import delta_events, poisson_encode, quantize_activation, to_bits
from npesim.sim.spec import NetworkSpec

BASE = {
    "layers": [{"size": 4, "neuron": "input"}, {"size": 3, "neuron": "IF"}],
    "projections": [{"kind": "forward", "from": 0, "to": 1, "weights": {"uniform": [0.0, 1.0], "seed": 3}}],
    "params": {"vth": 1.5},
    "synop": "int8:4",
    "time_steps": 10,
}


def _spec(**changes):
    doc = json.loads(json.dumps(BASE))
    doc.update(changes)
    return doc


def test_spec_from_dict():
    spec = NetworkSpec.from_dict(_spec())
    assert spec.neuron_model == "IF"
    assert spec.params.vth == 1.5
    assert spec.synop.name == "synop:int8:4"
    w = spec.forward(1).weights
    assert w.shape == (4, 3)
    assert np.array_equal(w, NetworkSpec.from_dict(_spec()).forward(1).weights)


@pytest.mark.parametrize("changes", [
    {"layers": [{"size": 4, "neuron": "IF"}]},
    {"layers": [{"size": 0, "neuron": "input"}]},
    {"layers": [{"size": 4, "neuron": "input"}, {"size": 3, "neuron": "LIF"}]},
    {"projections": [{"kind": "forward", "from": 0, "to": 5, "weights": {"values": []}}]},
    {"projections": [{"kind": "forward", "from": 0, "to": 1, "weights": {"values": [[1.0]]}}]},
    {"projections": [{"kind": "forward", "from": 0, "to": 1}]},
    {"projections": [{"kind": "sideways", "from": 0, "to": 1, "weights": {"uniform": [0, 1]}}]},
    {"params": {"tau": 2.0}},
    {"learning": "backprop"},
    {"synop": "int3:1"},
    {"lanes": 0},
    {"colour": "red"},
])
def test_spec_errors(changes):
    with pytest.raises(ConfigError):
        NetworkSpec.from_dict(_spec(**changes))


def test_spec_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_spec(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text('{"layers": [')
    with pytest.raises(ConfigError, match="line 1"):
        load_spec(bad)


def test_spec_weights_from_memory_image(tmp_path):
    mm = MemoryMap(16)
    mm.alloc("w01", 12)
    words = np.zeros(16, dtype=np.uint16)
    words[:12] = round_to_bf16(np.arange(12) / 4)
    save_image(tmp_path / "w.bin", words, mm)
    doc = _spec(projections=[{"kind": "forward", "from": 0, "to": 1,
                              "weights": {"image": "w.bin", "symbol": "w01"}}])
    (tmp_path / "net.json").write_text(json.dumps(doc))
    spec = load_spec(tmp_path / "net.json")
    assert np.array_equal(spec.forward(1).weights, (np.arange(12) / 4).reshape(4, 3))
    doc["projections"][0]["weights"]["image"] = "nope.bin"
    (tmp_path / "net.json").write_text(json.dumps(doc))
    with pytest.raises(FileNotFoundError):
        load_spec(tmp_path / "net.json")


def test_poisson_encoding_rates():
    x = np.array([0.0, 0.25, 1.0])
    s = poisson_encode(x, 4000, 1)
    assert s.shape == (4000, 3)
    assert s[:, 0].sum() == 0 and s[:, 2].all()
    assert abs(s[:, 1].mean() - 0.25) < 0.03
    assert np.array_equal(s, poisson_encode(x, 4000, 1))
    with pytest.raises(ConfigError):
        poisson_encode([1.5], 3)


def test_quantize_activation_and_delta_events():
    x = to_bits([-1.0, 0.1, 0.125, 0.3, 1.0])
    got = bf16_to_float(quantize_activation(x, encode(0.25)))
    assert list(got) == [0.0, 0.0, 0.25, 0.25, 1.0]
    idx, pay = delta_events(to_bits([0.0, 0.25, 1.0]), to_bits([0.0, 0.5, 0.75]))
    assert list(idx) == [1, 2]
    assert list(bf16_to_float(pay)) == [0.25, -0.25]


def test_builtin_digits():
    x, y = load_dataset()
    assert x.shape == (1797, 64) and x.max() == 1.0
    assert set(y) == set(range(10))


def test_digits_csv(tmp_path):
    rows = [",".join(["p%d" % i for i in range(64)] + ["label"])]
    rows += [",".join(["16"] * 64 + ["3"]), ",".join(["0"] * 64 + ["7"])]
    path = tmp_path / "d.csv"
    path.write_text("\n".join(rows) + "\n")
    x, y = load_digits_csv(path)
    assert x.shape == (2, 64) and list(y) == [3, 7] and x[0, 0] == 1.0
    path.write_text("1,2,3\n")
    with pytest.raises(ConfigError):
        load_digits_csv(path)
    path.write_text(",".join(["0"] * 64 + ["12"]) + "\n")
    with pytest.raises(ConfigError):
        load_digits_csv(path)
    with pytest.raises(FileNotFoundError):
        load_digits_csv(tmp_path / "none.csv")
