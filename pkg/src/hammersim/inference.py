"""Reverse-engineer row adjacency from single-sided hammering with refresh suppressed."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

from .adjacency import AdjacencyMap, Kind, diff_maps, entries_from_planes
from .device import ROW_BITS, FlipReport
from .injector import ProtocolScript, Scenario, run_protocol
from .timing import PS_PER_S

# Surveys only need saturation, so a short simulated hold is enough.
SURVEY_SCRIPT = ProtocolScript(hold=2 * 7_812_500, hold_equivalent=15 * PS_PER_S)


class AmbiguousSupport(ValueError):
    """Flips are neither spread over both halves nor confined to one."""


class AdjacencyVerdict(NamedTuple):
    victim: int
    kind: Kind
    density: float


@dataclass(frozen=True)
class Thresholds:
    noise: float = 0.01          # rows below this density are ignored
    purity: float = 0.99         # share of flips in one half that makes a half row
    whole_max_share: float = 0.75  # larger half's share still read as a whole row

    def __post_init__(self):
        if not 0 <= self.noise < 1:
            raise ValueError("noise threshold must lie in [0, 1)")
        if not 0.5 <= self.whole_max_share < self.purity <= 1:
            raise ValueError("need 0.5 <= whole_max_share < purity <= 1")


def hammer_survey(profile, bank: int, aggressor_row: int, window: Optional[int] = None,
                  dummy_row: Optional[int] = None, inspect_rows: Optional[Sequence[int]] = None,
                  seed: int = 0, sequence: str = "store-clflushopt",
                  script: Optional[ProtocolScript] = None) -> FlipReport:
    """Hammer one row single-sided through the injection protocol; return the flips.

    ``window`` overrides the simulated hold time; the hold still stands for
    15 s without refresh.
    """
    script = script or SURVEY_SCRIPT
    if window is not None:
        script = ProtocolScript(hold=window, hold_equivalent=script.hold_equivalent,
                                lead=script.lead)
    sc = Scenario(profile, aggressors=(aggressor_row,), bank=bank, dummy_row=dummy_row,
                  sequence=sequence, inspect_rows=inspect_rows, seed=seed)
    return run_protocol(script, sc).flips


def classify(report: FlipReport, thresholds: Thresholds = Thresholds(),
             bank: Optional[int] = None) -> list[AdjacencyVerdict]:
    out = []
    for (b, row), rf in sorted(report.rows.items()):
        if bank is not None and b != bank:
            continue
        total = rf.total
        density = total / ROW_BITS
        if density < thresholds.noise or total == 0:
            continue
        bits = rf.bit_counts
        low = int(bits[:32].sum())
        share = max(low, total - low) / total
        if share >= thresholds.purity:
            kind = Kind.HALF_LOW if low * 2 > total else Kind.HALF_HIGH
        elif share <= thresholds.whole_max_share:
            kind = Kind.WHOLE
        else:
            raise AmbiguousSupport(f"row 0x{row:05x}: {100 * share:.1f}% of {total} flips in "
                                   f"one half (density {100 * density:.2f}%)")
        out.append(AdjacencyVerdict(row, kind, density))
    return out


def build_map(verdicts: dict, rows_per_bank: int) -> AdjacencyMap:
    """Assemble per-aggressor verdicts into a map, marking unfilled slots as edges.

    Every row has two neighbor slots per bit-half; a slot no victim fills is
    a spare row or the bank edge.
    """
    explicit, densities = {}, {}
    for aggr, vs in verdicts.items():
        low = [v.victim for v in vs if v.kind is not Kind.HALF_HIGH]
        high = [v.victim for v in vs if v.kind is not Kind.HALF_LOW]
        explicit[aggr] = entries_from_planes(low, high)
        for v in vs:
            densities[(aggr, v.victim)] = v.density
    return AdjacencyMap(rows_per_bank, explicit=explicit, densities=densities)


def verify_map(inferred: AdjacencyMap, ground_truth: AdjacencyMap,
               rows: Iterable[int]) -> list[tuple]:
    """Empty list when both maps hold the same (aggressor, victim, kind) entries."""
    return diff_maps(inferred, ground_truth, rows)


def suggest_noise_threshold(densities: Iterable[float], min_gap_decades: float = 1.0,
                            floor: float = 1e-7) -> Optional[float]:
    """Threshold inside the lowest gap of at least ``min_gap_decades`` in the
    log-density histogram, i.e. just above the retention noise (None if no gap)."""
    vals = sorted({d for d in densities if d > floor})
    logs = [math.log10(v) for v in vals]
    for lo, hi in zip(logs, logs[1:]):
        if hi - lo >= min_gap_decades:
            return 10 ** ((lo + hi) / 2)
    return None


def _survey_job(args):
    profile, bank, row, dummy, inspect, seed, sequence, script = args
    return row, hammer_survey(profile, bank, row, dummy_row=dummy, inspect_rows=inspect,
                              seed=seed, sequence=sequence, script=script)


def survey_rows(profile, bank: int, rows: Sequence[int], dummy_row: Optional[int] = None,
                inspect_rows: Optional[Sequence[int]] = None, seed: int = 0,
                sequence: str = "store-clflushopt", script: Optional[ProtocolScript] = None,
                workers: int = 1) -> dict:
    """aggressor row -> FlipReport; surveys are independent so they may run in parallel."""
    inspect = list(rows) if inspect_rows is None else list(inspect_rows)
    jobs = [(profile, bank, r, dummy_row, inspect, seed, sequence, script) for r in rows]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_survey_job, jobs))
    else:
        results = [_survey_job(j) for j in jobs]
    return dict(results)


def infer_map(reports: dict, rows_per_bank: int,
              thresholds: Optional[Thresholds] = None) -> tuple[AdjacencyMap, Thresholds]:
    """Classify every survey and build the map.  With no thresholds given,
    the noise floor is suggested from the observed densities."""
    if thresholds is None:
        dens = [rf.density for rep in reports.values() for rf in rep.rows.values()]
        noise = suggest_noise_threshold(dens)
        thresholds = Thresholds(noise=min(noise, Thresholds().noise)) if noise else Thresholds()
    verdicts = {a: classify(rep, thresholds) for a, rep in sorted(reports.items())}
    return build_map(verdicts, rows_per_bank), thresholds


def write_density_csv(reports: dict, path, thresholds: Thresholds = Thresholds()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["aggressor", "victim", "flips", "density", "low_half_flips",
                    "high_half_flips", "verdict"])
        for aggr, rep in sorted(reports.items()):
            verdict = {v.victim: v.kind.value for v in classify(rep, thresholds)}
            for (bank, row), rf in sorted(rep.rows.items()):
                low = int(rf.bit_counts[:32].sum())
                w.writerow([f"0x{aggr:05x}", f"0x{row:05x}", rf.total, f"{rf.density:.6f}",
                            low, rf.total - low, verdict.get(row, "noise")])
