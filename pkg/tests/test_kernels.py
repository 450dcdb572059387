import math
from fractions import Fraction

import numpy as np
import pytest

from npesim.bf16 import PackMode, bf16_to_float, encode, pack_lanes, round_to_bf16, unpack_lanes
from npesim.engine import Launcher, NpeArray
from npesim.errors import ConfigError
from npesim.kernels import (
    KernelParams,
    SynOpConfig,
    build_eprop_eligibility,
    build_eprop_weight,
    build_hebbian_weight,
    build_sd_delta,
    build_sd_sigma,
    build_synop,
    build_trace_update,
    constants_for,
    get_kernel,
    kernel_pj,
    pack_rows,
    quantize_weights,
    synop_grid,
)
from npesim.memory import DataMemory

from oracles import round_rne

N = 37


def R(x):
    """Element-wise BF16 rounding through the rational oracle."""
    return np.array([float(round_rne(Fraction(float(v)))) for v in np.ravel(x)]).reshape(np.shape(x))


def bf(rng, n, scale=1.0):
    return bf16_to_float(round_to_bf16(rng.normal(0.0, scale, n)))


def rnd_away(x):
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def _mem(*arrays):
    mem = DataMemory(16 * 1024)
    addr = []
    for i, a in enumerate(arrays):
        mem.poke(i * 128, round_to_bf16(a))
        addr.append(i * 128)
    return mem, addr


def _get(mem, addr, n=N):
    return bf16_to_float(mem.peek(addr, n))


def test_sd_sigma():
    rng = np.random.default_rng(1)
    w, z = bf(rng, N), bf(rng, N)
    o = float(bf(rng, 1)[0])
    mem, (aw, az) = _mem(w, z)
    Launcher(build_sd_sigma()).run(mem, NpeArray(), {1: aw, 2: az}, N, {2: o})
    assert np.array_equal(_get(mem, az), R(z + R(w * o)))


@pytest.mark.parametrize("q", [0.25, 0.3, 1.0])
def test_sd_delta(q):
    rng = np.random.default_rng(2)
    z, prev = bf(rng, N, 2.0), bf(rng, N)
    mem, (az, aa) = _mem(z, prev)
    k = build_sd_delta()
    res = Launcher(k).run(mem, NpeArray(), {1: az, 2: aa}, N, constants_for(k, KernelParams(q=q)))
    qb = float(bf16_to_float(encode(q)))
    new = R(R(rnd_away(R(np.maximum(z, 0) / qb))) * qb)
    assert np.array_equal(_get(mem, aa), new)
    diff = R(new - prev)
    assert list(res.event_sources) == list(np.flatnonzero(diff != 0))
    assert np.array_equal(bf16_to_float(res.event_payloads), diff[diff != 0])


def test_listing_as_printed_overwrites_q():
    # the listing's R3 reuse turns q into the previous difference after one iteration
    z = np.array([1.0, 2.0, 3.0, 4.0])
    prev = np.zeros(4)
    fixed, printed = build_sd_delta(), build_sd_delta(as_printed=True)
    out = []
    for k in (fixed, printed):
        mem, (az, aa) = _mem(z, prev)
        Launcher(k).run(mem, NpeArray(1), {1: az, 2: aa}, 4, constants_for(k, KernelParams(q=0.5)))
        out.append(_get(mem, aa, 4))
    assert np.array_equal(out[0], z)
    assert not np.array_equal(out[1], z)
    assert kernel_pj("sd_delta") == kernel_pj("sd_delta_as_printed")


def test_hebbian_weight():
    rng = np.random.default_rng(3)
    w, tin = bf(rng, N), np.abs(bf(rng, N))
    tout, eta = 0.6875, 0.01
    mem, (aw, at) = _mem(w, tin)
    Launcher(build_hebbian_weight()).run(mem, NpeArray(), {1: aw, 2: at}, N, {2: tout, 3: eta})
    eb = float(bf16_to_float(encode(eta)))
    assert np.array_equal(_get(mem, aw), R(w + R(R(tin * tout) * eb)))


def test_trace_update():
    rng = np.random.default_rng(4)
    t = np.abs(bf(rng, N))
    s = (rng.random(N) < 0.3).astype(float)
    mem, (at, as_) = _mem(t, s)
    k = build_trace_update()
    Launcher(k).run(mem, NpeArray(), {1: at, 2: as_}, N, constants_for(k, KernelParams(beta=0.9)))
    beta = float(bf16_to_float(encode(0.9)))
    omb = float(bf16_to_float(encode(0.1)))
    assert np.array_equal(_get(mem, at), R(R(t * beta) + R(s * omb)))


def test_eprop_eligibility():
    rng = np.random.default_rng(5)
    e, v = bf(rng, N), bf(rng, N, 1.0) + 1.0
    v = bf16_to_float(round_to_bf16(v))
    tin = 0.40625
    mem, (ae, at, av) = _mem(e, np.array([tin]), v)
    k = build_eprop_eligibility()
    Launcher(k, addr_stride={2: 0}).run(mem, NpeArray(), {1: ae, 2: at, 3: av}, N,
                                        constants_for(k, KernelParams(vth=1.0, a1=1.0)))
    gate = (0.5 > np.abs(R(v - 1.0))).astype(float)
    assert np.array_equal(_get(mem, ae), R(e + R(R(gate * 1.0) * tin)))


def test_eprop_weight():
    rng = np.random.default_rng(6)
    w, e, fb = bf(rng, N), bf(rng, N), bf(rng, N)
    mem, (aw, ae, af) = _mem(w, e, fb)
    Launcher(build_eprop_weight()).run(mem, NpeArray(), {1: aw, 2: ae, 3: af}, N, {3: 0.125})
    assert np.array_equal(_get(mem, aw), R(w - R(fb * R(0.125 * e))))


@pytest.mark.parametrize("mode,events", [(m, e) for m in ("int8", "int4") for e in (1, 4)])
def test_integer_synops_widen_and_scale(mode, events):
    rng = np.random.default_rng(7)
    pm = PackMode(mode)
    lo, hi = pm.lane_range
    ints = rng.integers(lo, hi + 1, (events, N))
    words, per_row = pack_rows(ints, mode)
    state = bf(rng, N)
    plan = build_synop(SynOpConfig(mode, events, scale=0.25))
    mem = DataMemory(16 * 1024)
    mem.poke(0, words)
    mem.poke(500, round_to_bf16(state))
    init = {0: 500}
    for e, reg in enumerate(plan.weight_regs):
        init[reg] = e * per_row * pm.lanes
    Launcher(plan.kernel, plan.addr_mode).run(mem, NpeArray(), init, N, {15: 0.25})
    want = state
    for e in range(events):
        want = R(want + R(ints[e] * 0.25))
    assert np.array_equal(_get(mem, 500), want)


@pytest.mark.parametrize("events", [1, 4])
def test_full_integer_synop_saturates_int8_states(events):
    rng = np.random.default_rng(8)
    pairs = 8
    w = rng.integers(-8, 8, (events, 2 * pairs))
    state = rng.integers(-128, 128, 2 * pairs)
    words, per_row = pack_rows(w, "int4")
    plan = build_synop(SynOpConfig("int4_full", events))
    mem = DataMemory(16 * 1024)
    mem.poke(0, words)
    mem.poke(500, pack_lanes(state.reshape(pairs, 2), PackMode.INT8))
    init = {0: 500}
    for e, reg in enumerate(plan.weight_regs):
        init[reg] = e * per_row * 2  # element pairs
    Launcher(plan.kernel, plan.addr_mode).run(mem, NpeArray(), init, pairs)
    want = state.copy()
    for e in range(events):
        want = np.clip(want + w[e], -128, 127)
    got = unpack_lanes(mem.peek(500, pairs), PackMode.INT8).reshape(-1)
    assert np.array_equal(got, want)


# instruction costs in pJ, written out independently
MLD, MST, ADD, I2F, I8X2 = 3.7, 3.9, 1.4, 1.1, 1.2


def test_synop_grid_closed_forms():
    want = {
        ("bf16", 1): MLD * 2 + ADD + MST,
        ("bf16", 4): (MLD + MST + 4 * (MLD + ADD)) / 4,
        ("int8", 1): MLD / 2 + I2F + ADD + MLD + MST,
        ("int8", 4): (MLD + MST + 4 * (MLD / 2 + I2F + ADD)) / 4,
        ("int4", 1): MLD / 4 + I2F + ADD + MLD + MST,
        ("int4", 4): (MLD + MST + 4 * (MLD / 4 + I2F + ADD)) / 4,
        ("int4_full", 1): (MLD / 2 + I8X2 + MLD + MST) / 2,
        ("int4_full", 4): (MLD + MST + 4 * (MLD / 2 + I8X2)) / 8,
    }
    for row in synop_grid():
        assert row["derived_pj"] == pytest.approx(want[(row["mode"], row["events"])])
        if row["mode"] == "int4_full":
            assert row["source"] == "constant"
            assert row["pj_per_synop"] == {1: 5.63, 4: 2.78}[row["events"]]
        else:
            assert row["pj_per_synop"] == pytest.approx(row["derived_pj"])


def test_synop_config_validation():
    with pytest.raises(ConfigError):
        SynOpConfig("int2", 1)
    with pytest.raises(ConfigError):
        SynOpConfig("bf16", 2)
    with pytest.raises(ConfigError):
        SynOpConfig("int8", 1, scale=0.3)
    with pytest.raises(ConfigError):
        SynOpConfig("int4_full", 1, scale=0.5)
    with pytest.raises(ConfigError):
        SynOpConfig.parse("synop:int8")
    assert SynOpConfig.parse("int4-full:4").name == "synop:int4_full:4"


def test_quantize_weights():
    rng = np.random.default_rng(9)
    w = rng.normal(0.0, 0.3, (5, 7))
    for mode in ("int8", "int4"):
        ints, scale = quantize_weights(w, mode)
        assert math.log2(scale).is_integer()
        assert np.abs(ints).max() <= PackMode(mode).lane_range[1]
        assert np.abs(ints * scale - w).max() <= scale / 2
    ints, scale = quantize_weights(np.array([[1.0, -3.0]]), "int4")
    assert scale == 1.0 and list(ints[0]) == [1, -3]
    with pytest.raises(ConfigError):
        quantize_weights(w, "bf16")


def test_pack_rows_pads_to_words():
    words, per_row = pack_rows(np.array([[1, 2, 3], [4, 5, 6]]), "int4")
    assert per_row == 1
    assert list(unpack_lanes(words, PackMode.INT4)[1]) == [4, 5, 6, 0]


def test_kernel_lookup_and_bindings():
    with pytest.raises(ConfigError):
        get_kernel("nope")
    k = build_sd_sigma()
    with pytest.raises(ConfigError):
        constants_for(k)
    assert constants_for(k, o_in=0.5)[2].bits == encode(0.5)
    with pytest.raises(ConfigError):
        KernelParams(q=0)
