"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from hammersim.adjacency import synthetic_bank
from hammersim.cpu import default_catalog
from hammersim.device import ALL_ONES, DATA_PATTERNS, DramDevice
from hammersim.inference import infer_map, survey_rows, verify_map
from hammersim.injector import ProtocolScript, Scenario, run_protocol
from hammersim.methodology import TestPlan, format_hms, projected_bank_time, run_bank_test
from hammersim.profiles import synthetic_profile
from hammersim.protocol import (ADDR_BITS, DES, NUM_BANKS, NUM_COLUMNS, PREA, REF, Command,
                                Op, apply_a14_fault, decode, encode)
from hammersim.testbed import characterize
from hammersim.timing import PS_PER_S, TimingParams, optimal_act_rate

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def report(n, title, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail
    return report


# 1 ---------------------------------------------------------------------------

def test_c01_protocol(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    n = 10_000
    bank = rng.integers(0, NUM_BANKS, n)
    row = rng.integers(0, 1 << ADDR_BITS, n)
    col = rng.integers(0, NUM_COLUMNS, n)
    ap = rng.integers(0, 2, n).astype(bool)
    mrs = rng.integers(0, 8, n)
    payload = rng.integers(0, 1 << 14, n)
    bad = 0
    for i in range(n):
        b, c, a = int(bank[i]), int(col[i]), bool(ap[i])
        for cmd in (Command.act(b, int(row[i])), Command.rd(b, c, a), Command.wr(b, c, a),
                    Command.pre(b), Command.mrs(int(mrs[i]), int(payload[i])), REF, PREA, DES):
            bad += decode(encode(cmd)) != cmd

    def faulted(cmd):
        return decode(apply_a14_fault(encode(cmd), True))
    table = [faulted(REF).op is Op.MRS, faulted(PREA).op is Op.PREA]
    for b in range(NUM_BANKS):
        for c in (0, NUM_COLUMNS - 1):
            for a in (False, True):
                table.append(faulted(Command.rd(b, c, a)) == Command.wr(b, c, a))
                table.append(faulted(Command.wr(b, c, a)) == Command.wr(b, c, a))
        table.append(faulted(Command.pre(b)) == Command.pre(b))
        for r in (0, 1 << 14, 0x11411, 0x15411, (1 << ADDR_BITS) - 1):
            table.append(faulted(Command.act(b, r)) == Command.act(b, r & ~(1 << 14)))
    dt = time.perf_counter() - t0
    ok = bad == 0 and all(table) and dt < 1
    verdict(1, "protocol round-trip and A14 table", ok,
            f"{bad} round-trip mismatches over {8 * n} commands, "
            f"{len(table) - sum(table)} table mismatches, {dt:.2f}s")


# 2 ---------------------------------------------------------------------------

def test_c02_optimal_rate(verdict):
    r = float(optimal_act_rate(TimingParams()))
    verdict(2, "optimal ACT rate", abs(r - 167.3) <= 0.5, f"{r:.2f} ACTs/tREFI")


# 3 ---------------------------------------------------------------------------

def test_c03_near_optimal(verdict):
    t0 = time.perf_counter()
    c = characterize("clflushopt-pair", windows=100)
    dt = time.perf_counter() - t0
    med = float(np.median(c.acts))
    within = c.cdf.fraction_within(46_700, 100)
    rest = c.cdf.deltas[np.abs(c.cdf.deltas - 46_700) > 100]
    rest_ok = bool(np.all((rest >= 56_700) & (rest <= 66_700)))
    ok = abs(med - 159) <= 2 and within >= 0.85 and rest_ok and dt < 5
    verdict(3, "clflushopt-pair near optimal", ok,
            f"median {med:.0f} ACTs/tREFI, {100 * within:.1f}% of deltas at 46.7ns, "
            f"{len(rest)} others all +10-20ns: {rest_ok}, {dt:.2f}s")


# 4 ---------------------------------------------------------------------------

def test_c04_other_sequences(verdict):
    t0 = time.perf_counter()
    flush = float(np.median(characterize("clflush-pair").acts))
    lc = characterize("load-clflushopt")
    lc_rate = float(np.median(lc.acts))
    hits = lc.stats.hit_fraction
    mode = characterize("uncached-load-pair").cdf.mode()
    dt = time.perf_counter() - t0
    ok = (abs(flush - 110) <= 3 and abs(lc_rate - 112) <= 3 and abs(hits - 0.33) <= 0.02
          and abs(mode - 110_000) <= 1_000 and dt < 10)
    verdict(4, "clflush, load+clflushopt, uncached", ok,
            f"clflush-pair {flush:.0f}, load-clflushopt {lc_rate:.0f} with "
            f"{100 * hits:.1f}% hits, uncached mode {mode / 1000:.0f}ns, {dt:.2f}s")


# 5 ---------------------------------------------------------------------------

def test_c05_rank(verdict):
    t0 = time.perf_counter()
    cat = default_catalog()
    rates = {n: float(np.median(characterize(n, windows=100).acts)) for n in cat.names()}
    by_body = {cat.sequence(n).body: n for n in cat.names()}
    broken = []
    for n in cat.names():
        s = cat.sequence(n)
        if s.has_fence:
            free = by_body.get(s.fence_free().body)
            if free is None or rates[n] > rates[free]:
                broken.append(n)
    best = max(rates, key=rates.get)
    dt = time.perf_counter() - t0
    ok = best == "clflushopt-pair" and not broken and dt < 30
    verdict(5, "sequence ranking", ok,
            f"best {best} ({rates[best]:.0f}), fence violations {broken or 'none'}, "
            f"{len(rates)} sequences, {dt:.1f}s")


# 6 ---------------------------------------------------------------------------

def test_c06_injection(verdict, vendor1):
    t0 = time.perf_counter()
    r = run_protocol(ProtocolScript(), Scenario(vendor1, aggressors=(0x11411,)))
    dt = time.perf_counter() - t0
    ok = (r.device_refs_in_hold == 0 and r.controller_alerts_steps_2_to_6 == 0
          and r.recalibrations_after_tap >= 1 and r.registers_restored and dt < 5)
    verdict(6, "injection protocol", ok,
            f"device REFs in hold {r.device_refs_in_hold} (controller sent "
            f"{r.controller_refs_in_hold}), alerts {r.controller_alerts_steps_2_to_6}, "
            f"recalibrations {r.recalibrations_after_tap}, registers restored "
            f"{r.registers_restored}, {dt:.2f}s")


# 7 ---------------------------------------------------------------------------

def test_c07_vendor1(verdict, vendor1):
    t0 = time.perf_counter()
    a = run_protocol(ProtocolScript(), Scenario(vendor1, aggressors=(0x11411,))).flips
    b = run_protocol(ProtocolScript(), Scenario(vendor1, aggressors=(0x11410,))).flips
    dt = time.perf_counter() - t0
    d = {k[1]: rf.density for k, rf in a.rows.items()}
    e = {k[1]: rf.density for k, rf in b.rows.items()}
    lo, hi = b.get(0, 0x1140F).bit_counts, b.get(0, 0x1141F).bit_counts
    ok = (all(0.73 <= d.get(v, 0) <= 0.80 for v in (0x11410, 0x11412))
          and all(x < 0.01 for k, x in d.items() if k not in (0x11410, 0x11412))
          and abs(e.get(0x11411, 0) - 0.777) <= 0.03
          and abs(e.get(0x1140F, 0) - 0.405) <= 0.03 and lo[32:].sum() == 0
          and abs(e.get(0x1141F, 0) - 0.377) <= 0.03 and hi[:32].sum() == 0
          and all(x < 0.01 for k, x in e.items() if k not in (0x11411, 0x1140F, 0x1141F))
          and dt < 60)
    verdict(7, "vendor1 adjacency densities", ok,
            f"0x11411 -> 0x11410 {100 * d.get(0x11410, 0):.1f}%, 0x11412 "
            f"{100 * d.get(0x11412, 0):.1f}%; 0x11410 -> 0x11411 {100 * e.get(0x11411, 0):.1f}%, "
            f"0x1140F {100 * e.get(0x1140F, 0):.1f}% (bits 32-63: {int(lo[32:].sum())}), "
            f"0x1141F {100 * e.get(0x1141F, 0):.1f}% (bits 0-31: {int(hi[:32].sum())}), {dt:.2f}s")


# 8 ---------------------------------------------------------------------------

def test_c08_patterns(verdict, vendor1):
    t0 = time.perf_counter()
    target = {"ones": 0.797, "two-thirds": 0.57, "one-third": 0.299, "zeros": 0.038}
    got = {}
    for name in target:
        sc = Scenario(vendor1, aggressors=(0x100,), victim_pattern=DATA_PATTERNS[name],
                      inspect_rows=[0x101])
        got[name] = run_protocol(ProtocolScript(), sc).flips.density(0, 0x101)
    dt = time.perf_counter() - t0
    vals = list(got.values())
    ok = (all(abs(got[k] - target[k]) <= 0.03 for k in target)
          and all(x > y for x, y in zip(vals, vals[1:])) and dt < 60)
    verdict(8, "data-pattern curve", ok,
            ", ".join(f"{k} {100 * v:.1f}%" for k, v in got.items()) + f", {dt:.2f}s")


# 9 ---------------------------------------------------------------------------

def test_c09_retention(verdict, vendor1):
    t0 = time.perf_counter()
    dev = DramDevice(vendor1, seed=0, banks=[0])
    dev.fill_bank(0, ALL_ONES)
    dev.resolve_flips(elapsed_without_refresh=15 * PS_PER_S)
    rows = vendor1.rows_per_bank
    counts = np.array(list(dev.inspect(0, sorted(dev.dirty_rows(0)),
                                       lambda _: ALL_ONES).per_row().values()))
    one, two = np.sum(counts == 1) / rows, np.sum(counts == 2) / rows
    dt = time.perf_counter() - t0
    ok = (rows >= 1000 and counts.max(initial=0) <= 2 and abs(one - 0.033) <= 0.01
          and abs(two - 0.007) <= 0.005 and dt < 30)
    verdict(9, "retention baseline", ok,
            f"{rows} rows, max {counts.max(initial=0)} flips/row, one-flip "
            f"{100 * one:.2f}%, two-flip {100 * two:.2f}%, {dt:.2f}s")


# 10 --------------------------------------------------------------------------

def test_c10_inference_oracle(verdict):
    t0 = time.perf_counter()
    failures = []
    for seed in range(100):
        bank = synthetic_bank(np.random.default_rng(seed))
        prof = synthetic_profile(bank)
        reps = survey_rows(prof, 0, list(bank.targets), dummy_row=bank.dummy_row, seed=seed)
        inferred, _ = infer_map(reps, prof.rows_per_bank)
        if verify_map(inferred, bank.adjacency, bank.targets):
            failures.append(seed)
    dt = time.perf_counter() - t0
    ok = not failures and dt < 300
    verdict(10, "inference on 100 synthetic maps", ok,
            f"{100 - len(failures)}/100 exact, failing seeds {failures or 'none'}, {dt:.0f}s")


# 11 --------------------------------------------------------------------------

def test_c11_word_statistics(verdict, vendor1):
    t0 = time.perf_counter()
    rep = run_protocol(ProtocolScript(), Scenario(vendor1, aggressors=(0x11414,),
                                                  inspect_rows=[0x11413])).flips
    wc = rep.get(0, 0x11413).word_counts
    share = float(np.mean((wc >= 40) & (wc <= 60)))
    dt = time.perf_counter() - t0
    ok = share >= 0.95 and abs(wc.mean() - 47.6) <= 2 and dt < 30
    verdict(11, "whole-row word statistics", ok,
            f"{100 * share:.1f}% of words with 40-60 flips, mean {wc.mean():.2f}, {dt:.2f}s")


# 12 --------------------------------------------------------------------------

def test_c12_methodology(verdict, vendor1):
    rows = list(range(0x11400, 0x11420))
    base = dict(profile=vendor1, rows=rows, refresh_multiplier=3.5)
    batched = run_bank_test(TestPlan(batch_size=4, **base)).key()
    single = run_bank_test(TestPlan(batch_size=1, **base)).key()
    multi = TestPlan(banks=(0, 1, 2), **base)
    par = run_bank_test(multi, workers=3).key()
    ser = run_bank_test(multi, workers=1).key()
    hms = format_hms(projected_bank_time())
    failed = sum(1 for k in single if not k[2])
    ok = batched == single and par == ser and hms == "11h36m" and failed > 0
    verdict(12, "methodology equivalences", ok,
            f"batched==unbatched {batched == single} ({failed}/{len(single)} rows failing), "
            f"parallel==serial {par == ser}, projection {hms}")
