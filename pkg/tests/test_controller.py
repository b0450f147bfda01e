import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hammersim.addrmap import MappingConfig, row_address
from hammersim.controller import ControllerConfig, MemoryController, splitmix64, splitmix64_array
from hammersim.cpu import MemoryRequest, RequestKind, generate_stream, profile_for
from hammersim.device import ALL_ONES, BOOT_MODE_REGISTERS
from hammersim.protocol import Op
from hammersim.testbed import System
from hammersim.timing import TimingParams

CFG = MappingConfig()
P = TimingParams()


def addr(bank, row, col=0):
    return row_address(CFG, bank, row, col)


def ops(cmds):
    return [(c.op.value, c.row) if c.op is Op.ACT else c.op.value for _, c, _ in cmds]


def read(t, a):
    return MemoryRequest(t, RequestKind.FLUSH_READ, a)


def test_alternating_rows():
    mc = MemoryController()
    out = []
    for i, r in enumerate([1, 3, 1, 3]):
        out += mc.submit(read(i * 100_000, addr(0, r)))
    assert ops(out) == [("ACT", 1), "RD", "PRE", ("ACT", 3), "RD", "PRE", ("ACT", 1), "RD",
                        "PRE", ("ACT", 3), "RD"]


def test_row_hits():
    mc = MemoryController()
    out = []
    for i in range(5):
        out += mc.submit(read(i * 10_000, addr(0, 7, i)))
    assert ops(out) == [("ACT", 7)] + ["RD"] * 5


def test_idle_only_refreshes():
    mc = MemoryController()
    out = mc.drain(10 * P.t_refi)
    assert [c.op for _, c, _ in out] == [Op.REF] * 10
    assert [t for t, _, _ in out] == [k * P.t_refi for k in range(1, 11)]


def test_refresh_cadence_with_multiplier():
    mc = MemoryController(ControllerConfig(refresh_multiplier=2))
    out = mc.drain(10 * P.t_refi)
    assert [t for t, _, _ in out] == [k * 2 * P.t_refi for k in range(1, 6)]


def test_prea_before_ref():
    mc = MemoryController()
    mc.submit(read(P.t_refi - 1000, addr(0, 1)))
    out = mc.drain(P.t_refi)
    assert [c.op for _, c, _ in out] == [Op.PREA, Op.REF]


def test_config_limits():
    with pytest.raises(ValueError):
        ControllerConfig(refresh_multiplier=4)
    with pytest.raises(ValueError):
        ControllerConfig(page_policy="closed")
    with pytest.raises(ValueError):
        ControllerConfig(ecc=True)


@given(st.integers(0, ALL_ONES), st.integers(0, (1 << 34) - 8))
def test_scramble_self_inverse(word, pa):
    mc = MemoryController(ControllerConfig(scrambling=True))
    assert mc.scramble(mc.scramble(word, pa), pa) == word


def test_scramble_disabled_identity():
    assert MemoryController().scramble(0x1234, 0x8000) == 0x1234


def test_scrambled_population():
    mc = MemoryController(ControllerConfig(scrambling=True))
    ones = 0
    for row in range(16):
        ones += int(np.bitwise_count(mc.stored_row(0, row, ALL_ONES)).sum())
    assert ones / (16 * 1024 * 64) == pytest.approx(0.5, abs=0.01)


def test_stored_row_matches_scalar_keystream():
    mc = MemoryController(ControllerConfig(scrambling=True))
    row = mc.stored_row(2, 0x11410, ALL_ONES)
    for col in (0, 5, 1023):
        assert int(row[col]) == mc.scramble(ALL_ONES, addr(2, 0x11410, col))


def test_splitmix_vectorized():
    xs = np.arange(50, dtype=np.uint64)
    assert [int(v) for v in splitmix64_array(xs)] == [splitmix64(int(x)) for x in range(50)]


def test_boot_and_alert_restore_registers(vendor1):
    mc = MemoryController()
    assert [c.payload for _, c, _ in mc.boot(0)] == list(BOOT_MODE_REGISTERS[:7])
    assert mc.recalibrations == []
    mc.on_alert(100)
    mc.on_alert(200)
    assert len(mc.recalibrations) == 2


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(["clflushopt-pair", "clflush-pair", "load-clflushopt",
                        "store-clflushopt", "uncached-load-pair"]),
       st.integers(0, 1000), st.integers(1, 3))
def test_command_stream_legal(vendor1, name, seed, windows):
    """The device raises on any illegal command, so a clean run proves legality."""
    sys_ = System(vendor1, seed=seed, banks=[0])
    prof = profile_for(name, "skylake")
    sys_.run(generate_stream(prof, (sys_.address(0, 1), sys_.address(0, 3)),
                             windows * P.t_refi, seed=seed), until=(windows + 1) * P.t_refi)
    acts = [r.t for r in sys_.device_trace if r.cmd.op is Op.ACT]
    assert all(b - a >= P.t_rc for a, b in zip(acts, acts[1:]))
    refs = [r.t for r in sys_.device_trace if r.cmd.op is Op.REF]
    assert refs == [k * P.t_refi for k in range(1, len(refs) + 1)]
