import numpy as np
import pytest

from npesim.bf16 import bf16_to_float, round_to_bf16
from npesim.energy import kernel_energy
from npesim.errors import ConfigError
from npesim.kernels import KernelParams, SynOpConfig, build_if_generation, build_if_integration
from npesim.sim import LayerSpec, NetworkSpec, Projection, run_if_network, run_sd_network
from npesim.sim.reference import if_reference, sd_dense_reference

from toy_networks import _smooth_frames

Q_SWEEP = (0.0625, 0.125, 0.25, 0.5, 1.0)


def if_spec(sizes, weights, synop="bf16:1", vth=1.0, lanes=8):
    layers = [LayerSpec(sizes[0], "input")] + [LayerSpec(s, "IF") for s in sizes[1:]]
    proj = [Projection("forward", i, i + 1, w) for i, w in enumerate(weights)]
    return NetworkSpec(layers, proj, params=KernelParams(vth=vth), synop=SynOpConfig.parse(synop), lanes=lanes)


def sd_spec(sizes, weights, q, delta_every=1):
    layers = [LayerSpec(sizes[0], "input")] + [LayerSpec(s, "SD") for s in sizes[1:]]
    proj = [Projection("forward", i, i + 1, w) for i, w in enumerate(weights)]
    return NetworkSpec(layers, proj, params=KernelParams(q=q), delta_every=delta_every)


def _if_setup(seed, sizes=(20, 12, 5)):
    rng = np.random.default_rng(seed)
    ws = [rng.normal(0.2, 0.5, (a, b)) for a, b in zip(sizes, sizes[1:])]
    spikes = rng.random((40, sizes[0])) < 0.2
    return ws, spikes


def test_if_counts_and_energy_follow_closed_form():
    sizes = (20, 12, 5)
    ws, spikes = _if_setup(0, sizes)
    out = run_if_network(if_spec(sizes, ws), spikes)
    fan = [spikes.sum() * sizes[1], sum(len(s[0]) for s in out.outputs) * sizes[2]]
    assert out.kernel_iterations["if_integration"] == sum(fan)
    assert out.kernel_iterations["if_generation"] == len(spikes) * (sizes[1] + sizes[2])
    events = out.event_counts["layer1"] + out.event_counts["layer2"]
    want = (sum(fan) * kernel_energy(build_if_integration())
            + len(spikes) * (sizes[1] + sizes[2]) * kernel_energy(build_if_generation(), 0)
            + events * 1.1)
    assert out.ledger.dynamic_pj == pytest.approx(want)
    assert out.total_energy_pj == pytest.approx(want + out.leakage_pj)


def test_if_matches_bf16_reference_with_quantized_weights():
    sizes = (20, 12, 5)
    ws, spikes = _if_setup(1, sizes)
    out = run_if_network(if_spec(sizes, ws, "int8:4"), spikes)
    eff = [out.extra["effective_weights"][l] for l in (1, 2)]
    states, outs = if_reference(eff, 1.0, spikes)
    assert all(np.array_equal(a, b) for oa, ob in zip(out.outputs, outs) for a, b in zip(oa, ob))
    assert np.array_equal(out.final_states["v2"], states[-1][1])


@pytest.mark.parametrize("mode", ["bf16", "int8", "int4"])
def test_multi_event_mode_is_bit_equal_to_single_event(mode):
    sizes = (30, 16, 6)
    ws, spikes = _if_setup(2, sizes)
    multi = run_if_network(if_spec(sizes, ws, f"{mode}:4"), spikes)
    single = run_if_network(if_spec(sizes, ws, f"{mode}:1"), spikes)
    for key in ("v1", "v2"):
        assert np.array_equal(round_to_bf16(multi.final_states[key]), round_to_bf16(single.final_states[key]))
    assert multi.total_energy_pj < single.total_energy_pj


def test_lane_count_does_not_change_results_or_dynamic_energy():
    sizes = (16, 8, 4)
    ws, spikes = _if_setup(3, sizes)
    runs = [run_if_network(if_spec(sizes, ws, lanes=lanes), spikes) for lanes in (1, 3, 8, 32)]
    for r in runs[1:]:
        assert np.array_equal(r.final_states["v2"], runs[0].final_states["v2"])
        assert r.ledger.dynamic == runs[0].ledger.dynamic
    assert runs[0].cycles > runs[-1].cycles


def test_if_input_validation():
    ws, spikes = _if_setup(4)
    with pytest.raises(ConfigError):
        run_if_network(if_spec((20, 12, 5), ws), spikes[:, :5])
    with pytest.raises(ConfigError):
        run_if_network(sd_spec((20, 12, 5), ws, 0.25), spikes)
    with pytest.raises(ConfigError):
        run_if_network(if_spec((20, 12, 5), ws, "int4_full:1"), spikes)


def _exact_sd(seed, frames=30):
    # quarter-step weights and inputs keep every partial sum exact in BF16
    rng = np.random.default_rng(seed)
    sizes = (8, 8, 6)
    ws = [rng.integers(-2, 3, (a, b)) / 4 for a, b in zip(sizes, sizes[1:])]
    return sizes, ws, _smooth_frames(rng, frames, sizes[0])


@pytest.mark.parametrize("seed", range(5))
def test_sd_equals_dense_quantized_network(seed):
    sizes, ws, frames = _exact_sd(seed)
    out = run_sd_network(sd_spec(sizes, ws, 0.25), frames)
    dense = sd_dense_reference(ws, 0.25, frames)
    for got, want in zip(out.outputs, dense):
        for a, b in zip(got, want):
            assert np.array_equal(round_to_bf16(a), round_to_bf16(b))


def test_sd_events_shrink_as_q_grows():
    rng = np.random.default_rng(0)
    sizes = (32, 24, 10)
    ws = [rng.normal(0.0, 0.5, (a, b)) for a, b in zip(sizes, sizes[1:])]
    frames = _smooth_frames(rng, 50, sizes[0])
    totals = [sum(run_sd_network(sd_spec(sizes, ws, q), frames).event_counts.values()) for q in Q_SWEEP]
    assert all(a >= b for a, b in zip(totals, totals[1:]))


def test_repeated_frames_cost_no_sigma_energy():
    rng = np.random.default_rng(1)
    sizes = (16, 12, 4)
    ws = [rng.normal(0.0, 0.5, (a, b)) for a, b in zip(sizes, sizes[1:])]
    frames = np.repeat(rng.random((1, sizes[0])), 6, axis=0)
    out = run_sd_network(sd_spec(sizes, ws, 0.25), frames)
    assert out.extra["frame_sigma_pj"][0] > 0
    assert out.extra["frame_sigma_pj"][1:] == [0.0] * 5


def test_sd_delta_every_defers_evaluation():
    rng = np.random.default_rng(2)
    sizes = (10, 6)
    ws = [rng.normal(0.0, 0.5, (10, 6))]
    frames = _smooth_frames(rng, 9, 10)
    out = run_sd_network(sd_spec(sizes, ws, 0.25, delta_every=3), frames)
    assert out.kernel_iterations["sd_delta"] == 3 * 6
    assert out.event_counts["layer1"] == sum(
        np.count_nonzero(bf16_to_float(round_to_bf16(a[0])) != bf16_to_float(round_to_bf16(b[0])))
        for a, b in zip([[np.zeros(6)]] + out.outputs[2::3][:-1], out.outputs[2::3]))


def test_sd_rejects_packed_synapses():
    rng = np.random.default_rng(3)
    spec = sd_spec((4, 3), [rng.random((4, 3))], 0.25)
    spec.synop = SynOpConfig("int8", 1)
    with pytest.raises(ConfigError):
        run_sd_network(spec, rng.random((2, 4)))
