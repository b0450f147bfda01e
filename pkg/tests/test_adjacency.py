import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hammersim.adjacency import (AdjacencyMap, Entry, GroupReversedPlane, Kind, LinearPlane,
                                 PairPermutedPlane, SegmentPlane, diff_maps, entries_from_planes,
                                 linear_map, synthetic_bank, vendor1_map, vendor2_map)

W, HL, HH = Kind.WHOLE, Kind.HALF_LOW, Kind.HALF_HIGH

# Aggressor -> {victim: kind} for the 16 surveyed rows of vendor #1.
VENDOR1_TABLE = {
    0x11408: {0x11409: W, 0x11407: HL, 0x11417: HH},
    0x11409: {0x11408: W, 0x1140A: W},
    0x1140A: {0x11409: W, 0x1140B: W},
    0x1140B: {0x1140C: W, 0x1140A: W},
    0x1140C: {0x1140B: W, 0x1140D: W},
    0x1140D: {0x1140C: W, 0x1140E: W},
    0x1140E: {0x1140D: W, 0x1140F: W},
    0x1140F: {0x1140E: W, 0x11410: HL, 0x11400: HH},
    0x11410: {0x11411: W, 0x1140F: HL, 0x1141F: HH},
    0x11411: {0x11412: W, 0x11410: W},
    0x11412: {0x11411: W, 0x11413: W},
    0x11413: {0x11414: W, 0x11412: W},
    0x11414: {0x11413: W, 0x11415: W},
    0x11415: {0x11414: W, 0x11416: W},
    0x11416: {0x11415: W, 0x11417: W},
    0x11417: {0x11416: W, 0x11418: HL, 0x11408: HH},
}


def as_dict(amap, row):
    return {e.victim: e.kind for e in amap.victims(row)}


@pytest.mark.parametrize("aggr", sorted(VENDOR1_TABLE))
def test_vendor1_table(aggr, vendor1):
    assert as_dict(vendor1.adjacency, aggr) == VENDOR1_TABLE[aggr]
    assert as_dict(vendor1_map(), aggr) == VENDOR1_TABLE[aggr]


def test_vendor1_bank_edge():
    m = vendor1_map()
    r0 = m.entries(0)
    assert {(e.victim, e.kind) for e in r0 if not e.is_edge} == {(1, W), (0xF, HH)}
    assert [e for e in r0 if e.is_edge] == [Entry(None, HL)]
    assert as_dict(m, 7) == {6: W, 8: HL, 0x7F8: HH}
    assert as_dict(m, 8) == {9: W, 7: HL, 0x17: HH}
    for r in range(1, 7):
        assert as_dict(m, r) == {r - 1: W, r + 1: W}


def test_vendor2_topology(vendor2):
    d = as_dict(vendor2.adjacency, 0x11411)
    assert d[0x11410] is W
    assert d[0x11412].is_half and d[0x11408].is_half
    assert d[0x11412] is not d[0x11408]
    assert as_dict(vendor2.adjacency, 0x11410)[0x11411] is W


def test_vendor1_densities(vendor1):
    m = vendor1.adjacency
    dens = {e.victim: e.density for e in m.victims(0x11410)}
    assert dens == {0x11411: 0.777, 0x1140F: 0.405, 0x1141F: 0.377}
    assert {e.victim: e.density for e in m.victims(0x11411)} == {0x11412: 0.770, 0x11410: 0.767}


def test_linear_map():
    m = linear_map(100)
    assert as_dict(m, 50) == {49: W, 51: W}
    assert m.entries(0) == [Entry(1, W), Entry(None, W)]


def test_entries_from_planes_markers():
    assert entries_from_planes([5], [5, 9]) == [Entry(5, W), Entry(9, HH), Entry(None, HL)]
    assert entries_from_planes([], []) == [Entry(None, W)] * 2


def test_planes_are_bijective_orders():
    for plane in (GroupReversedPlane(4096), PairPermutedPlane(4096), LinearPlane(4096)):
        for r in range(0, 4096, 37):
            for n in plane.neighbors(r):
                assert r in plane.neighbors(n)


def test_segment_plane():
    p = SegmentPlane(((0, 2, 1), (3, 4)))
    assert p.neighbors(2) == (0, 1)
    assert p.neighbors(1) == (2,)
    assert p.neighbors(3) == (4,)


def test_row_bounds():
    with pytest.raises(IndexError):
        linear_map(10).entries(10)


def test_json_round_trip(vendor1):
    m = vendor1.adjacency
    back = AdjacencyMap.loads(m.dumps())
    rows = range(0x11400, 0x11420)
    assert diff_maps(back, m, rows) == []
    assert back.densities == m.densities


def test_restricted_round_trip():
    m = vendor2_map()
    rows = range(0x11400, 0x11440)
    r = m.restricted(rows)
    assert diff_maps(r, m, rows) == []
    assert diff_maps(AdjacencyMap.loads(r.dumps()), m, rows) == []


def test_diff_detects_missing_half():
    m = linear_map(100)
    ex = {5: [Entry(4, W)]}
    other = AdjacencyMap(100, m.low, m.high, explicit=ex)
    d = diff_maps(other, m, [5])
    assert d == [("truth-only", 5, 6, W)]
    assert diff_maps(m, m, range(100)) == []


@pytest.mark.parametrize("amap", [vendor1_map(), vendor2_map(), linear_map(1 << 17)])
def test_whole_symmetry(amap):
    assert amap.check_symmetry(range(0x11400, 0x11800)) == []


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_synthetic_bank_invariants(seed):
    bank = synthetic_bank(np.random.default_rng(seed))
    m = bank.adjacency
    rows = range(m.rows_per_bank)
    assert m.check_symmetry(rows) == []
    for r in rows:
        es = m.entries(r)
        # two slots per plane, each filled by a neighbor or an edge marker
        low = sum(1 for e in es if e.kind is not HH)
        high = sum(1 for e in es if e.kind is not HL)
        assert low == 2 and high == 2
        seen = [(e.victim, e.kind) for e in es if not e.is_edge]
        assert len(seen) == len(set(seen))
        for e in es:
            if e.victim is not None:
                assert 0 < e.density < 1
    # parking rows never touch target rows
    dummy = bank.dummy_row
    assert not {e.victim for e in m.victims(dummy)} & set(bank.targets)
