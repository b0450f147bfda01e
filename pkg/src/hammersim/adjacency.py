"""Row adjacency inside a DRAM device.

Each bank is described by two orderings of its rows, one per 32-bit half of
a word (the *low* plane drives bit positions 0-31, the *high* plane 32-63).
Two rows are whole neighbors when they touch in both planes, and half
neighbors when they touch in only one.  A row at the end of a plane has a
missing slot, reported as a spare-row/bank-edge marker (victim ``None``).
"""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np


class Kind(str, enum.Enum):
    WHOLE = "whole"
    HALF_LOW = "half-low"
    HALF_HIGH = "half-high"

    @property
    def is_half(self) -> bool:
        return self is not Kind.WHOLE


class Entry(NamedTuple):
    victim: Optional[int]  # None marks a spare row / bank edge
    kind: Kind
    density: Optional[float] = None

    @property
    def is_edge(self) -> bool:
        return self.victim is None


class Plane:
    """One ordering of a bank's rows; ``neighbors`` returns 0-2 rows."""

    def neighbors(self, row: int) -> tuple:  # pragma: no cover - interface
        raise NotImplementedError

    def to_dict(self) -> dict:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class LinearPlane(Plane):
    rows: int

    def neighbors(self, row):
        return tuple(r for r in (row - 1, row + 1) if 0 <= r < self.rows)

    def to_dict(self):
        return {"type": "linear"}


@dataclass(frozen=True)
class GroupReversedPlane(Plane):
    """Regions of ``region`` rows split into groups of ``group`` rows.

    Inside a region the groups run in descending order while rows inside a
    group stay ascending, and the order wraps around at the region ends.
    """

    rows: int
    region: int = 2048
    group: int = 8

    def _pos(self, row):
        g, i = divmod(row % self.region, self.group)
        return (self.region // self.group - 1 - g) * self.group + i

    def _row(self, base, pos):
        k, i = divmod(pos % self.region, self.group)
        g = self.region // self.group - 1 - k
        return base + g * self.group + i

    def neighbors(self, row):
        base = row - row % self.region
        p = self._pos(row)
        return (self._row(base, p - 1), self._row(base, p + 1))

    def to_dict(self):
        return {"type": "group-reversed", "region": self.region, "group": self.group}


@dataclass(frozen=True)
class PairPermutedPlane(Plane):
    """Blocks of row pairs visited in a fixed pair order, blocks laid end to end."""

    rows: int
    order: tuple = (0, 1, 2, 3, 4, 8, 9, 10, 11, 12, 13, 14, 15, 5, 6, 7)

    @property
    def block(self):
        return 2 * len(self.order)

    def neighbors(self, row):
        inv = _inverse(self.order)
        base, off = divmod(row, self.block)
        pos = base * self.block + inv[off >> 1] * 2 + (off & 1)
        out = []
        for p in (pos - 1, pos + 1):
            if 0 <= p < self.rows:
                b, o = divmod(p, self.block)
                out.append(b * self.block + self.order[o >> 1] * 2 + (o & 1))
        return tuple(out)

    def to_dict(self):
        return {"type": "pair-permuted", "order": list(self.order)}


@lru_cache(maxsize=None)
def _inverse(order: tuple) -> tuple:
    inv = [0] * len(order)
    for i, p in enumerate(order):
        inv[p] = i
    return tuple(inv)


@dataclass(frozen=True)
class SegmentPlane(Plane):
    """Explicit list of row sequences; rows in no segment have no neighbors."""

    segments: tuple

    def __post_init__(self):
        seen = Counter(r for seg in self.segments for r in seg)
        dup = [r for r, c in seen.items() if c > 1]
        if dup:
            raise ValueError(f"rows appear in more than one plane position: {dup[:5]}")
        index = {}
        for seg in self.segments:
            for i, r in enumerate(seg):
                prev = seg[i - 1] if i > 0 else None
                nxt = seg[i + 1] if i + 1 < len(seg) else None
                index[r] = tuple(x for x in (prev, nxt) if x is not None)
        object.__setattr__(self, "_index", index)

    def neighbors(self, row):
        return self._index.get(row, ())

    def to_dict(self):
        return {"type": "segments", "segments": [list(s) for s in self.segments]}


def plane_from_dict(d: dict, rows: int) -> Plane:
    t = d.get("type", "linear")
    if t == "linear":
        return LinearPlane(rows)
    if t == "group-reversed":
        return GroupReversedPlane(rows, d.get("region", 2048), d.get("group", 8))
    if t == "pair-permuted":
        order = tuple(d["order"])
        if d.get("reversed"):
            order = order[::-1]
        return PairPermutedPlane(rows, order)
    if t == "segments":
        return SegmentPlane(tuple(tuple(int(r) for r in s) for s in d["segments"]))
    raise ValueError(f"unknown plane type {t!r}")


def entries_from_planes(low: Sequence[int], high: Sequence[int]) -> list[Entry]:
    """Combine one row's low- and high-plane neighbors into adjacency entries."""
    L, H = set(low), set(high)
    out = [Entry(v, Kind.WHOLE) for v in sorted(L & H)]
    out += [Entry(v, Kind.HALF_LOW) for v in sorted(L - H)]
    out += [Entry(v, Kind.HALF_HIGH) for v in sorted(H - L)]
    m_low, m_high = 2 - len(L), 2 - len(H)
    both = min(m_low, m_high)
    out += [Entry(None, Kind.WHOLE)] * both
    if m_low > m_high:
        out += [Entry(None, Kind.HALF_LOW)] * (m_low - both)
    elif m_high > m_low:
        out += [Entry(None, Kind.HALF_HIGH)] * (m_high - both)
    return out


def _hex(v: Optional[int]) -> Optional[str]:
    return None if v is None else f"0x{v:05x}"


def _unhex(s) -> Optional[int]:
    if s is None:
        return None
    return int(s, 0) if isinstance(s, str) else int(s)


@dataclass
class AdjacencyMap:
    """Aggressor row -> victim entries for one bank geometry.

    Entries come from a pair of planes, from an explicit table, or both
    (explicit rows override the planes).  ``densities`` holds per-pair flip
    densities keyed by ``(aggressor, victim)``.
    """

    rows_per_bank: int
    low: Optional[Plane] = None
    high: Optional[Plane] = None
    explicit: dict = field(default_factory=dict)
    densities: dict = field(default_factory=dict)

    def __post_init__(self):
        self._cache = {}

    def entries(self, row: int) -> list[Entry]:
        if not 0 <= row < self.rows_per_bank:
            raise IndexError(f"row 0x{row:x} outside bank of {self.rows_per_bank} rows")
        hit = self._cache.get(row)
        if hit is not None:
            return hit
        if row in self.explicit:
            base = list(self.explicit[row])
        elif self.low is not None and self.high is not None:
            base = entries_from_planes(self.low.neighbors(row), self.high.neighbors(row))
        else:
            base = []
        out = []
        for e in base:
            d = self.densities.get((row, e.victim), e.density) if e.victim is not None else None
            out.append(Entry(e.victim, e.kind, d))
        self._cache[row] = out
        return out

    def victims(self, row: int) -> list[Entry]:
        return [e for e in self.entries(row) if not e.is_edge]

    def plane_neighbors(self, row: int) -> tuple[tuple, tuple]:
        """Rows touching ``row`` in the low and the high plane."""
        low, high = [], []
        for e in self.victims(row):
            if e.kind is not Kind.HALF_HIGH:
                low.append(e.victim)
            if e.kind is not Kind.HALF_LOW:
                high.append(e.victim)
        return tuple(low), tuple(high)

    def has_row(self, row: int) -> bool:
        return bool(self.entries(row))

    def triples(self, rows: Iterable[int]) -> Counter:
        """Multiset of (aggressor, victim, kind) over ``rows``; edge victims are None."""
        c = Counter()
        for r in rows:
            for e in self.entries(r):
                c[(r, e.victim, e.kind)] += 1
        return c

    def check_symmetry(self, rows: Iterable[int]) -> list[tuple[int, int]]:
        """Pairs (a, v) where v is a whole neighbor of a but a is not a neighbor of v."""
        bad = []
        for a in rows:
            for e in self.victims(a):
                if e.kind is Kind.WHOLE and a not in {x.victim for x in self.entries(e.victim)}:
                    bad.append((a, e.victim))
        return bad

    def restricted(self, rows: Iterable[int]) -> "AdjacencyMap":
        """Explicit copy holding only ``rows``."""
        ex = {r: [Entry(e.victim, e.kind) for e in self.entries(r)] for r in rows}
        dens = {(r, e.victim): e.density for r in ex for e in self.entries(r)
                if e.victim is not None and e.density is not None}
        return AdjacencyMap(self.rows_per_bank, explicit=ex, densities=dens)

    def to_dict(self) -> dict:
        d: dict = {"rows_per_bank": self.rows_per_bank}
        if self.low is not None:
            d["planes"] = {"low": self.low.to_dict(), "high": self.high.to_dict()}
        if self.explicit:
            d["entries"] = {_hex(r): [[_hex(e.victim), e.kind.value] for e in es]
                            for r, es in sorted(self.explicit.items())}
        if self.densities:
            d["densities"] = [[_hex(a), _hex(v), round(p, 6)]
                              for (a, v), p in sorted(self.densities.items())]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AdjacencyMap":
        rows = int(d["rows_per_bank"])
        low = high = None
        if "planes" in d:
            low = plane_from_dict(d["planes"]["low"], rows)
            high = plane_from_dict(d["planes"]["high"], rows)
        explicit = {}
        for r, es in d.get("entries", {}).items():
            explicit[_unhex(r)] = [Entry(_unhex(v), Kind(k)) for v, k in es]
        densities = {(_unhex(a), _unhex(v)): float(p) for a, v, p in d.get("densities", [])}
        return cls(rows, low, high, explicit, densities)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "AdjacencyMap":
        return cls.from_dict(json.loads(text))


def linear_map(rows: int) -> AdjacencyMap:
    return AdjacencyMap(rows, LinearPlane(rows), LinearPlane(rows))


def vendor1_map(rows: int = 1 << 17) -> AdjacencyMap:
    return AdjacencyMap(rows, LinearPlane(rows), GroupReversedPlane(rows))


def vendor2_map(rows: int = 1 << 17) -> AdjacencyMap:
    base = PairPermutedPlane(rows)
    return AdjacencyMap(rows, base, PairPermutedPlane(rows, base.order[::-1]))


def diff_maps(inferred: AdjacencyMap, truth: AdjacencyMap, rows: Iterable[int]) -> list[tuple]:
    """Entries present in only one map, as (side, aggressor, victim, kind)."""
    rows = list(rows)
    a, b = inferred.triples(rows), truth.triples(rows)
    out = []
    for key in sorted(set(a) | set(b), key=lambda k: (k[0], -1 if k[1] is None else k[1], k[2].value)):
        extra = a[key] - b[key]
        side = "inferred-only" if extra > 0 else "truth-only"
        out += [(side,) + key] * abs(extra)
    return out


@dataclass
class SyntheticBank:
    """A generated bank: ``target_rows`` surveyed rows plus isolated parking rows."""

    adjacency: AdjacencyMap
    target_rows: int
    parking_rows: int

    @property
    def targets(self) -> range:
        return range(self.target_rows)

    @property
    def dummy_row(self) -> int:
        # Parking rows only touch each other, so hammering one never
        # disturbs a target row.
        return self.target_rows + self.parking_rows - 1


def _perturb(seq: list, rng: np.random.Generator, reversals: int, swaps: int) -> list:
    seq = list(seq)
    n = len(seq)
    for _ in range(reversals):
        i = int(rng.integers(0, n - 2))
        j = int(rng.integers(i + 2, min(n, i + 10) + 1))
        seq[i:j] = seq[i:j][::-1]
    for _ in range(swaps):
        i = int(rng.integers(0, n - 1))
        seq[i], seq[i + 1] = seq[i + 1], seq[i]
    return seq


def _split(seq: list, rng: np.random.Generator, gaps: int) -> list:
    cuts = sorted(set(int(c) for c in rng.integers(1, len(seq), size=gaps))) if gaps else []
    out, last = [], 0
    for c in cuts + [len(seq)]:
        out.append(tuple(seq[last:c]))
        last = c
    return out


def synthetic_bank(rng: np.random.Generator, target_rows: int = 64,
                   parking_rows: int = 64, whole=(0.2, 0.8), half=(0.1, 0.4)) -> SyntheticBank:
    """Random map mixing whole rows, half rows and edge gaps over the target rows."""
    low_seq = _perturb(range(target_rows), rng, int(rng.integers(0, 4)), 0)
    high_seq = _perturb(low_seq, rng, int(rng.integers(1, 5)), int(rng.integers(1, 6)))
    low = _split(low_seq, rng, int(rng.integers(0, 3)))
    high = _split(high_seq, rng, int(rng.integers(0, 3)))
    parking = tuple(range(target_rows, target_rows + parking_rows))
    rows = target_rows + parking_rows
    amap = AdjacencyMap(rows, SegmentPlane(tuple(low) + (parking,)),
                        SegmentPlane(tuple(high) + (parking,)))
    for r in range(rows):
        for e in amap.entries(r):
            if e.victim is not None:
                lo, hi = whole if e.kind is Kind.WHOLE else half
                amap.densities[(r, e.victim)] = float(rng.uniform(lo, hi))
    amap._cache.clear()
    return SyntheticBank(amap, target_rows, parking_rows)
