import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npesim.bf16 import BF16_ONE, encode, round_to_bf16
from npesim.energy import LEAKAGE
from npesim.engine import AddrMode, Launcher, LoopPlan, NpeArray, format_trace, run_loop
from npesim.errors import ConfigError, InvalidOperandError, MemoryBoundsError, UnboundRegisterError
from npesim.isa import assemble
from npesim.kernels import KERNEL_NAMES, build_if_generation, build_if_integration, build_synop, get_kernel
from npesim.memory import DataMemory, MemoryLevel

REGION = 512  # words per address register region
SYNOPS = ("synop:bf16:4", "synop:int8:1", "synop:int8:4", "synop:int4:1", "synop:int4:4",
          "synop:int4_full:1", "synop:int4_full:4")


def _setup(name, seed):
    rng = np.random.default_rng(seed)
    if name.startswith("synop:"):
        plan = build_synop(name)
        kernel, modes = plan.kernel, dict(plan.addr_mode)
    else:
        kernel, modes = get_kernel(name), {}
    mem = DataMemory(16 * REGION * 8)
    mem.words[:] = round_to_bf16(rng.normal(0.0, 2.0, mem.size))
    launches = int(rng.integers(1, 4))
    iters = rng.integers(0, 40, launches)
    init = np.zeros((launches, 8), dtype=np.int64)
    for reg in kernel.address_registers:
        per = AddrMode(modes.get(reg, AddrMode.WORD)).per_word
        init[:, reg] = (reg * REGION + rng.integers(0, 64, launches)) * per
    consts = {r: round_to_bf16(rng.normal(0.0, 1.0, launches)) for r in kernel.input_registers}
    return kernel, modes, mem, init, iters, consts


def _run(name, seed, backend, lanes=8):
    kernel, modes, mem, init, iters, consts = _setup(name, seed)
    res = Launcher(kernel, modes, backend=backend).run(mem, NpeArray(lanes), init, iters, consts)
    return res, mem


@pytest.mark.parametrize("name", KERNEL_NAMES + SYNOPS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_compiled_matches_python_interpreter(name, seed):
    a, mem_a = _run(name, seed, "compiled")
    b, mem_b = _run(name, seed, "python")
    assert np.array_equal(mem_a.words, mem_b.words)
    assert np.array_equal(a.event_sources, b.event_sources)
    assert np.array_equal(a.event_payloads, b.event_payloads)
    assert a.ledger.summary() == b.ledger.summary()
    assert a.instruction_counts == b.instruction_counts
    assert a.cycles == b.cycles


@pytest.mark.parametrize("name", KERNEL_NAMES + SYNOPS)
@given(lanes=st.integers(1, 16), seed=st.integers(0, 2 ** 16))
def test_energy_and_results_do_not_depend_on_lane_count(name, lanes, seed):
    ref, mem_ref = _run(name, seed, "compiled", 8)
    res, mem = _run(name, seed, "compiled", lanes)
    assert np.array_equal(mem.words, mem_ref.words)
    assert np.array_equal(res.event_sources, ref.event_sources)
    assert res.ledger.dynamic == ref.ledger.dynamic


@given(lanes=st.integers(1, 16), iters=st.lists(st.integers(0, 100), min_size=1, max_size=5))
def test_cycle_count(lanes, iters):
    kernel = build_if_integration()
    mem = DataMemory(16 * 4096)
    n = len(iters)
    init = {1: np.arange(n) * 200, 2: np.full(n, 3000)}
    res = Launcher(kernel).run(mem, NpeArray(lanes), init, np.array(iters))
    assert res.cycles == len(kernel) * sum(-(-i // lanes) for i in iters)
    assert res.iterations == sum(iters)
    assert res.ledger.counts().get(LEAKAGE, 0) == res.cycles


def test_integration_semantics():
    mem = DataMemory(16 * 64)
    w = [0.5, 0.25, -1.0, 2.0]
    mem.poke(0, round_to_bf16(np.array(w)))
    mem.poke(10, round_to_bf16(np.array([1.0, 1.0, 1.0, 1.0])))
    plan = LoopPlan(build_if_integration(), 4, addr_init={1: 0, 2: 10})
    run_loop(plan, mem, NpeArray())
    assert list(mem.peek(10, 4)) == list(round_to_bf16(np.array([1.5, 1.25, 0.0, 3.0])))


def test_generation_events_and_reset():
    mem = DataMemory(16 * 64)
    v = np.array([0.5, 1.0, 1.5, -2.0, 3.0])
    mem.poke(0, round_to_bf16(v))
    res = run_loop(LoopPlan(build_if_generation(), 5, addr_init={1: 0}, constants={1: 1.0}, event_base=100),
                   mem, NpeArray(2))
    assert list(res.event_sources) == [102, 104]
    assert all(e.payload.bits == BF16_ONE for e in res.events)
    assert list(mem.peek(0, 5)) == list(round_to_bf16(np.array([0.5, 1.0, 0.0, -2.0, 0.0])))
    assert res.ledger.counts()["EVC_EVENT"] == 2


def test_events_come_back_in_iteration_order():
    k = assemble("MLD R0, A1, 1\nEVC R0\nEVC R1\n")
    mem = DataMemory(16 * 64)
    mem.poke(0, round_to_bf16(np.ones(10)))
    res = Launcher(k).run(mem, NpeArray(4), {1: 0}, 10, {1: np.uint16(BF16_ONE)})
    assert list(res.event_sources) == sorted(res.event_sources)
    assert res.event_count == 20


def test_packed_loads_are_charged_per_physical_word():
    plan = build_synop("synop:int4:1")
    mem = DataMemory(16 * 256)
    res = Launcher(plan.kernel, plan.addr_mode).run(mem, NpeArray(), {0: 100, 1: 0}, 8)
    assert res.instruction_counts[plan.kernel.instructions[0].mnemonic] == 16  # executed MLDs
    # 8 state loads plus 2 weight words
    assert res.ledger.counts()["MLD"] == 10
    assert res.mem_stats.reads[MemoryLevel.LOCAL_SRAM] == 10


def test_zero_stride_holds_address():
    k = assemble("MLD R0, A1, 1\nMLD R1, A2, 1\nADD R0, R0, R1\nMST A3, R0, 1\n")
    mem = DataMemory(16 * 64)
    mem.poke(0, round_to_bf16(np.arange(4.0)))
    mem.poke(10, round_to_bf16(np.array([10.0])))
    Launcher(k, addr_stride={2: 0}).run(mem, NpeArray(), {1: 0, 2: 10, 3: 20}, 4)
    assert list(mem.peek(20, 4)) == list(round_to_bf16(np.arange(4.0) + 10))


def test_shared_registers_charge_hbm():
    k = build_if_integration()
    mem = DataMemory(16 * 64)
    res = Launcher(k, shared={1}).run(mem, NpeArray(), {1: 0, 2: 30}, 4)
    assert res.ledger.counts()["hbm"] == 4 * 16
    assert res.mem_stats.reads[MemoryLevel.SHARED] == 4


def test_bounds_are_checked_before_running():
    mem = DataMemory(16 * 32)
    before = mem.words.copy()
    with pytest.raises(MemoryBoundsError):
        Launcher(build_if_integration()).run(mem, NpeArray(), {1: 0, 2: 20}, 16)
    with pytest.raises(MemoryBoundsError):
        Launcher(build_if_integration()).run(mem, NpeArray(), {1: -1, 2: 0}, 1)
    assert np.array_equal(mem.words, before)


def test_unbound_constant_register():
    with pytest.raises(UnboundRegisterError):
        Launcher(build_if_generation()).run(DataMemory(16 * 8), NpeArray(), {1: 0}, 1)


def test_preloaded_constants_are_used():
    npe = NpeArray()
    npe.preload(1, 1.0)
    mem = DataMemory(16 * 8)
    mem.poke(0, [encode(2.0)])
    res = Launcher(build_if_generation()).run(mem, npe, {1: 0}, 1)
    assert res.event_count == 1


def test_store_needs_word_addressing():
    with pytest.raises(ConfigError):
        Launcher(build_if_integration(), addr_mode={2: "int8"})


def test_shift_range_error_in_both_backends():
    k = assemble("SHL R0, R1, R2\n")
    for backend in ("compiled", "python"):
        with pytest.raises(InvalidOperandError):
            Launcher(k, backend=backend).run(DataMemory(16 * 8), NpeArray(), {}, 1,
                                              {1: np.uint16(1), 2: np.uint16(16)})


def test_bad_configuration():
    with pytest.raises(ConfigError):
        NpeArray(0)
    with pytest.raises(ConfigError):
        Launcher(build_if_integration(), backend="gpu")
    with pytest.raises(ConfigError):
        Launcher(build_if_integration()).run(DataMemory(16 * 8), NpeArray(), {1: 0, 2: 4}, -1)


def test_trace_lists_every_lane_step():
    mem = DataMemory(16 * 16)
    res = Launcher(build_if_integration()).run(mem, NpeArray(), {1: 0, 2: 8}, 2, trace=True)
    text = format_trace(res)
    assert len(text.splitlines()) == 2 * 4
    assert text.splitlines()[0].startswith("0:0:0 MLD R0, A1, 1 @0")
