"""Production row testing with refresh left on.

Each tested row is seeded with 1s, its physical neighbors with 0s, and the
neighbors are hammered double-sided for a 128 ms window.  A row fails if
any of its bits reads back as 0.

Simulating 128 ms of commands per row is far too slow, so a short
command-level probe measures how many ACTs each aggressor gets per refresh
interval, and the per-cell outcome over the whole window follows from a
two-state Markov chain (see :func:`hammersim.device.markov_flip_probability`).
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .adjacency import Kind
from .analyzer import acts_per_trefi
from .controller import ControllerConfig
from .cpu import generate_stream, profile_for
from .device import (ALL_ONES, NUM_COLUMNS, WORD_BITS, DramDevice, bits_from_words,
                     markov_flip_probability, popcount, saturation, words_from_bits)
from .profiles import DeviceProfile
from .testbed import System
from .timing import PS_PER_MS, PS_PER_S, TimingParams, refresh_interval

DEFAULT_WINDOW = 128 * PS_PER_MS
# Row tests in the reference bank used for the wall-clock projection.
REFERENCE_ROW_TESTS = 326_250


class MissingAdjacency(KeyError):
    pass


@dataclass(frozen=True)
class TestPlan:
    profile: DeviceProfile
    banks: tuple = (0,)
    rows: Sequence[int] = range(0)
    window: int = DEFAULT_WINDOW
    victim_pattern: int = ALL_ONES
    aggressor_pattern: int = 0
    batch_size: int = 1
    parallel_banks: int = 8
    refresh_multiplier: float = 1
    sequence: str = "clflushopt-pair"
    arch: str = "skylake"
    seed: int = 0
    probe_intervals: int = 6
    params: TimingParams = TimingParams()

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.window < 2 * self.params.refresh_window:
            raise ValueError("test window must cover at least two refresh windows")
        if not 1 <= self.parallel_banks <= self.profile.banks:
            raise ValueError("parallel_banks must lie in [1, bank count]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for b in self.banks:
            if not 0 <= b < self.profile.banks:
                raise ValueError(f"bank {b} not present")

    @property
    def interval(self) -> int:
        return refresh_interval(self.params, self.refresh_multiplier)

    @property
    def intervals(self) -> int:
        return self.window // self.interval


@dataclass
class RowResult:
    bank: int
    row: int
    passed: bool
    flip_count: int
    passes: int
    flips: list = field(default_factory=list)  # (word, bit) of 1->0 flips


@dataclass
class TestResult:
    rows: list
    simulated_time_ps: int = 0

    __test__ = False

    @property
    def failed(self) -> list:
        return [r for r in self.rows if not r.passed]

    @property
    def all_passed(self) -> bool:
        return not self.failed

    def key(self) -> list:
        """Comparable form: (bank, row, pass, flip_count, flips)."""
        return [(r.bank, r.row, r.passed, r.flip_count, tuple(r.flips)) for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bank", "row", "pass", "flip_count"])
            for r in self.rows:
                w.writerow([r.bank, f"0x{r.row:05x}", int(r.passed), r.flip_count])

    def summary(self, window: int = DEFAULT_WINDOW) -> dict:
        proj = projected_bank_time(REFERENCE_ROW_TESTS, window)
        return {"rows_tested": len(self.rows), "failed": len(self.failed),
                "passed": len(self.rows) - len(self.failed),
                "failed_rows": [[r.bank, f"0x{r.row:05x}", r.flip_count] for r in self.failed],
                "simulated_test_time_s": self.simulated_time_ps / PS_PER_S,
                "projected_bank_time_s": proj, "projected_bank_time": format_hms(proj)}


def projected_bank_time(row_tests: int = REFERENCE_ROW_TESTS, window: int = DEFAULT_WINDOW) -> float:
    """Seconds to test a bank of ``row_tests`` row tests at ``window`` each."""
    return row_tests * window / PS_PER_S


def format_hms(seconds: float) -> str:
    m = int(round(seconds / 60))
    return f"{m // 60}h{m % 60:02d}m"


# -- adjacency helpers --------------------------------------------------------

def test_passes(profile: DeviceProfile, row: int) -> list[tuple]:
    """Aggressor sets: one per bit-half whose neighbors differ, else a single pass."""
    adj = profile.adjacency
    if not adj.has_row(row):
        raise MissingAdjacency(f"no adjacency entry for row 0x{row:05x}")
    low, high = adj.plane_neighbors(row)
    passes = [tuple(sorted(low))]
    if set(high) != set(low):
        passes.append(tuple(sorted(high)))
    return [p for p in passes if p]


def footprint(profile: DeviceProfile, row: int) -> set:
    rows = {row}
    for p in test_passes(profile, row):
        rows.update(p)
    return rows


def batches(profile: DeviceProfile, rows: Sequence[int], size: int) -> list[list[int]]:
    """Greedy groups of at most ``size`` rows with pairwise disjoint footprints."""
    out: list = []
    for r in rows:
        fp = footprint(profile, r)
        for grp in out:
            if len(grp[0]) < size and not (grp[1] & fp):
                grp[0].append(r)
                grp[1].update(fp)
                break
        else:
            out.append(([r], set(fp)))
    return [g[0] for g in out]


# -- rate probe ---------------------------------------------------------------

_PROBE_CACHE: dict = {}


def probe_act_rate(plan: TestPlan) -> float:
    """Mean ACTs per aggressor per refresh interval, from a short command simulation.

    The hammer loop alternates between two rows, so each gets half the
    bank's ACTs whether the partner is a second aggressor or a far dummy row.
    """
    key = (plan.profile.vendor, plan.sequence, plan.arch, plan.refresh_multiplier,
           plan.probe_intervals, plan.seed, plan.params)
    if key in _PROBE_CACHE:
        return _PROBE_CACHE[key]
    sys_ = System(plan.profile, controller=ControllerConfig(refresh_multiplier=plan.refresh_multiplier),
                  params=plan.params, banks=[0], capture_controller=False)
    a, b = 1, 3
    addrs = (sys_.address(0, a), sys_.address(0, b))
    prof = profile_for(plan.sequence, plan.arch)
    horizon = (plan.probe_intervals + 1) * plan.interval + 1
    sys_.run(generate_stream(prof, addrs, horizon, seed=plan.seed), until=horizon)
    counts = acts_per_trefi(sys_.device_trace, bank=0)
    rate = float(np.mean(counts)) / 2
    _PROBE_CACHE[key] = rate
    return rate


# -- row tests ------------------------------------------------------------------

def _pass_flip_probs(plan: TestPlan, victim: int, aggressors: tuple) -> np.ndarray:
    """(2 halves, 2 seeded bits) -> probability a cell reads back flipped."""
    profile = plan.profile
    rate = probe_act_rate(plan)
    dose = [0.0, 0.0]
    strength = [[0.0, 0.0], [0.0, 0.0]]  # [half][bit]
    for a in aggressors:
        for e in profile.adjacency.victims(a):
            if e.victim != victim:
                continue
            halves = (0, 1) if e.kind is Kind.WHOLE else ((0,) if e.kind is Kind.HALF_LOW else (1,))
            for h in halves:
                dose[h] += rate
                for bit in (0, 1):
                    strength[h][bit] = max(strength[h][bit],
                                           profile.cell_strength(a, victim, e.kind, bit))
    out = np.zeros((2, 2))
    for h in (0, 1):
        sat = saturation(dose[h], profile.act_threshold, profile.n0)
        p0, p1 = strength[h][0] * sat, strength[h][1] * sat
        out[h, 1] = markov_flip_probability(p1, p0, plan.intervals)
        out[h, 0] = markov_flip_probability(p0, p1, plan.intervals)
    return out


def _apply_pass(plan: TestPlan, dev: DramDevice, bank: int, victim: int, aggressors: tuple,
                index: int) -> None:
    probs = _pass_flip_probs(plan, victim, aggressors)
    if not probs.any():
        return
    cells = dev.cells[bank]
    bits = bits_from_words(cells.read_row(victim))
    p = np.empty(bits.shape)
    for h, cols in ((0, slice(0, 32)), (1, slice(32, 64))):
        p[:, cols] = np.where(bits[:, cols], probs[h, 1], probs[h, 0])
    rng = np.random.default_rng([plan.seed, bank, victim, index, 0x7E57])
    flip = rng.random(bits.shape) < p
    if flip.any():
        cells.make_dense(victim)[:] ^= words_from_bits(flip)


def _seed(plan: TestPlan, dev: DramDevice, bank: int, rows: Sequence[int]) -> None:
    for r in rows:
        dev.write_row(bank, r, plan.victim_pattern)
        for p in test_passes(plan.profile, r):
            for a in p:
                dev.write_row(bank, a, plan.aggressor_pattern)


def _check(plan: TestPlan, dev: DramDevice, bank: int, row: int, passes: int) -> RowResult:
    expected = np.full(NUM_COLUMNS, plan.victim_pattern, dtype=np.uint64)
    lost = expected & ~dev.read_row(bank, row)  # bits that were 1 and now read 0
    n = int(popcount(lost).sum())
    flips = []
    if n:
        for w in np.nonzero(lost)[0]:
            x = int(lost[w])
            while x:
                b = (x & -x).bit_length() - 1
                flips.append((int(w), b))
                x &= x - 1
    return RowResult(bank, row, n == 0, n, passes, flips)


def run_row_test(plan: TestPlan, row: int, bank: int = 0,
                 device: Optional[DramDevice] = None) -> RowResult:
    dev = device or DramDevice(plan.profile, plan.seed, banks=[bank])
    passes = test_passes(plan.profile, row)
    _seed(plan, dev, bank, [row])
    for i, aggr in enumerate(passes):
        _apply_pass(plan, dev, bank, row, aggr, i)
    return _check(plan, dev, bank, row, len(passes))


def _bank_job(args) -> tuple[list, int]:
    plan, bank = args
    dev = DramDevice(plan.profile, plan.seed, banks=[bank])
    results, sim = [], 0
    for grp in batches(plan.profile, list(plan.rows), plan.batch_size):
        _seed(plan, dev, bank, grp)
        npass = {}
        for r in grp:
            passes = test_passes(plan.profile, r)
            npass[r] = len(passes)
            for i, aggr in enumerate(passes):
                _apply_pass(plan, dev, bank, r, aggr, i)
                sim += plan.window
        # a single check covers the whole batch
        results += [_check(plan, dev, bank, r, npass[r]) for r in grp]
    results.sort(key=lambda r: r.row)
    return results, sim


def run_bank_test(plan: TestPlan, workers: Optional[int] = None) -> TestResult:
    """Test ``plan.rows`` in every bank of the plan; banks may run in parallel.

    Results are ordered by (bank, row) whatever order the workers finish in.
    """
    workers = min(plan.parallel_banks, len(plan.banks)) if workers is None else workers
    jobs = [(plan, b) for b in plan.banks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            outs = list(ex.map(_bank_job, jobs))
    else:
        outs = [_bank_job(j) for j in jobs]
    rows = sorted((r for res, _ in outs for r in res), key=lambda r: (r.bank, r.row))
    return TestResult(rows, sum(s for _, s in outs))


def exit_code(result: TestResult) -> int:
    return 0 if result.all_passed else 2


def write_summary(result: TestResult, path, window: int = DEFAULT_WINDOW) -> None:
    with open(path, "w") as fh:
        json.dump(result.summary(window), fh, indent=1)
        fh.write("\n")
