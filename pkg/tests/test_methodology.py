import json

import pytest

from hammersim.adjacency import linear_map
from hammersim.methodology import (DEFAULT_WINDOW, MissingAdjacency, TestPlan, batches,
                                   exit_code, footprint, format_hms, probe_act_rate,
                                   projected_bank_time, run_bank_test, run_row_test,
                                   test_passes as passes_for, write_summary)
from hammersim.profiles import with_adjacency
from hammersim.timing import PS_PER_MS

ROWS = list(range(0x11400, 0x11420))


def test_passes_whole_row(vendor1):
    assert passes_for(vendor1, 0x11412) == [(0x11411, 0x11413)]


def test_passes_half_row(vendor1):
    # 0x11410: low half sits between 0x1140F/0x11411, high half between 0x1141F/0x11411
    assert passes_for(vendor1, 0x11410) == [(0x1140F, 0x11411), (0x11411, 0x1141F)]


def test_passes_missing(vendor1):
    prof = with_adjacency(vendor1, vendor1.adjacency.restricted(range(10)))
    with pytest.raises(MissingAdjacency):
        passes_for(prof, 50)


def test_batches_disjoint(vendor1):
    groups = batches(vendor1, ROWS, 4)
    assert sorted(r for g in groups for r in g) == ROWS
    for g in groups:
        assert len(g) <= 4
        fps = [footprint(vendor1, r) for r in g]
        for i in range(len(fps)):
            for j in range(i + 1, len(fps)):
                assert not fps[i] & fps[j]


def test_plan_validation(vendor1):
    with pytest.raises(ValueError):
        TestPlan(vendor1, window=64 * PS_PER_MS)
    with pytest.raises(ValueError):
        TestPlan(vendor1, parallel_banks=17)
    with pytest.raises(ValueError):
        TestPlan(vendor1, banks=(16,))
    with pytest.raises(ValueError):
        TestPlan(vendor1, batch_size=0)


def test_probe_rate(vendor1):
    rate = probe_act_rate(TestPlan(vendor1))
    assert rate == pytest.approx(80, abs=1)
    fast = probe_act_rate(TestPlan(vendor1, refresh_multiplier=3.5))
    assert fast == pytest.approx(3.5 * rate, rel=0.05)


def test_nominal_refresh_passes(vendor1):
    res = run_bank_test(TestPlan(vendor1, rows=ROWS))
    assert res.all_passed and exit_code(res) == 0


def test_extended_interval_fails(vendor1):
    res = run_bank_test(TestPlan(vendor1, rows=ROWS, refresh_multiplier=3.5))
    assert len(res.failed) == len(ROWS) and exit_code(res) == 2
    r = res.failed[0]
    assert r.flip_count == len(r.flips) > 0


def test_single_row_matches_bank(vendor1):
    plan = TestPlan(vendor1, rows=[0x11410], refresh_multiplier=3.5)
    assert run_row_test(plan, 0x11410).flip_count == run_bank_test(plan).rows[0].flip_count


def test_batched_equals_unbatched(vendor1):
    plan = dict(profile=vendor1, rows=ROWS, refresh_multiplier=3.5)
    assert run_bank_test(TestPlan(batch_size=4, **plan)).key() == \
        run_bank_test(TestPlan(batch_size=1, **plan)).key()


def test_parallel_equals_serial(vendor1):
    plan = TestPlan(vendor1, rows=ROWS[:6], banks=(0, 1, 2), refresh_multiplier=3.5)
    assert run_bank_test(plan, workers=3).key() == run_bank_test(plan, workers=1).key()


def test_linear_map_single_pass(vendor1):
    prof = with_adjacency(vendor1, linear_map(vendor1.rows_per_bank))
    assert passes_for(prof, 100) == [(99, 101)]


def test_projection():
    s = projected_bank_time()
    assert format_hms(s) == "11h36m"
    assert projected_bank_time(1, DEFAULT_WINDOW) == 0.128


def test_outputs(tmp_path, vendor1):
    res = run_bank_test(TestPlan(vendor1, rows=ROWS[:3], refresh_multiplier=3.5))
    res.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "bank,row,pass,flip_count" and lines[1].startswith("0,0x11400,0,")
    write_summary(res, tmp_path / "s.json")
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["failed"] == 3 and s["projected_bank_time"] == "11h36m"
    npasses = sum(len(passes_for(vendor1, r)) for r in ROWS[:3])
    assert s["simulated_test_time_s"] == pytest.approx(0.128 * npasses)
