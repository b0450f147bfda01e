"""JEDEC-style timing parameters, refresh scheduling and ACT admission.

All times are integer picoseconds so 46.7 ns and 7812.5 ns are exact.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Optional, Sequence

PS_PER_NS = 1_000
PS_PER_US = 1_000_000
PS_PER_MS = 1_000_000_000
PS_PER_S = 1_000_000_000_000

MAX_REFRESH_MULTIPLIER = Fraction(7, 2)


@dataclass(frozen=True)
class TimingParams:
    t_rc: int = 46_700
    t_refi: int = 7_812_500
    t_rfc: int = 350_000
    refresh_window: int = 64 * PS_PER_MS
    refresh_count: int = 8192

    def __post_init__(self):
        if self.t_rc <= 0:
            raise ValueError("t_rc must be positive")
        if not 0 <= self.t_rfc < self.t_refi:
            raise ValueError("t_rfc must be shorter than t_refi")
        if self.refresh_window != self.t_refi * self.refresh_count:
            raise ValueError(
                f"t_refi ({self.t_refi} ps) must equal refresh_window/refresh_count "
                f"({self.refresh_window}/{self.refresh_count})")

    @classmethod
    def from_mapping(cls, values: dict) -> "TimingParams":
        """Build from a config mapping.  Keys ending in ``_ps`` are picoseconds."""
        kw = {}
        for key in ("t_rc", "t_refi", "t_rfc", "refresh_window"):
            if key + "_ps" in values:
                kw[key] = int(values[key + "_ps"])
        if "refresh_count" in values:
            kw["refresh_count"] = int(values["refresh_count"])
        if "t_refi" in kw and "refresh_window" not in kw:
            kw["refresh_window"] = kw["t_refi"] * kw.get("refresh_count", 8192)
        return cls(**kw)


def optimal_act_rate(p: TimingParams) -> Fraction:
    """ACTs per refresh interval when every ACT is exactly t_rc apart."""
    return Fraction(p.t_refi, p.t_rc)


def per_window_act_bound(p: TimingParams) -> int:
    """Most ACTs one bank can take between two REFs when each REF blocks t_rfc."""
    return (p.t_refi - p.t_rfc) // p.t_rc + 1


@dataclass
class SimClock:
    now: int = 0

    def advance_to(self, t: int) -> int:
        if t < self.now:
            raise ValueError(f"clock cannot move backwards ({t} < {self.now})")
        self.now = t
        return t


def refresh_interval(p: TimingParams, multiplier=1) -> int:
    m = Fraction(multiplier).limit_denominator(1000)
    if not 1 <= m <= MAX_REFRESH_MULTIPLIER:
        raise ValueError(f"refresh multiplier {float(m)} outside [1, 3.5]")
    interval = p.t_refi * m
    if interval.denominator != 1:
        raise ValueError(f"t_refi * {m} is not a whole number of picoseconds")
    return int(interval)


def refresh_events(p: TimingParams, horizon: int,
                   suppressed_windows: Sequence[tuple[int, int]] = (),
                   multiplier=1) -> Iterator[int]:
    """REF start times k*interval for k >= 1 up to and including ``horizon``.

    Times falling in any half-open suppressed window [start, end) are skipped.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    interval = refresh_interval(p, multiplier)
    t = interval
    while t <= horizon:
        if not any(s <= t < e for s, e in suppressed_windows):
            yield t
        t += interval


@dataclass
class RefreshSchedule:
    """Lazily extended list of REF start times with O(log n) window lookup."""

    params: TimingParams = field(default_factory=TimingParams)
    multiplier: float = 1
    starts: list = field(default_factory=list)

    def __post_init__(self):
        self.interval = refresh_interval(self.params, self.multiplier)

    def _extend(self, t: int) -> None:
        nxt = self.starts[-1] + self.interval if self.starts else self.interval
        while nxt <= t + self.interval:
            self.starts.append(nxt)
            nxt += self.interval

    def window_containing(self, t: int) -> Optional[tuple[int, int]]:
        self._extend(t)
        i = bisect.bisect_right(self.starts, t) - 1
        if i >= 0 and t < self.starts[i] + self.params.t_rfc:
            return self.starts[i], self.starts[i] + self.params.t_rfc
        return None

    def next_start(self, t: int) -> int:
        """First REF start time >= t."""
        self._extend(t)
        i = bisect.bisect_left(self.starts, t)
        return self.starts[i]


@dataclass
class BankTiming:
    last_act: Optional[int] = None


def admit_act(bank: BankTiming, requested: int, schedule: RefreshSchedule,
              t_rc: Optional[int] = None) -> int:
    """Earliest legal ACT time at or after ``requested``."""
    t_rc = schedule.params.t_rc if t_rc is None else t_rc
    t = requested
    if bank.last_act is not None:
        t = max(t, bank.last_act + t_rc)
    while True:
        win = schedule.window_containing(t)
        if win is None:
            return t
        t = win[1]


def count_refreshes(times: Iterable[int]) -> int:
    return sum(1 for _ in times)


_UNITS = {"ps": 1, "ns": PS_PER_NS, "us": PS_PER_US, "ms": PS_PER_MS, "s": PS_PER_S}


def parse_duration(text: str, params: Optional[TimingParams] = None) -> int:
    """Parse '15s', '128ms', '46.7ns', '100trefi' into picoseconds."""
    text = text.strip().lower()
    params = params or TimingParams()
    if text.endswith("trefi"):
        return int(Fraction(text[:-5] or "1") * params.t_refi)
    for unit in ("ps", "ns", "us", "ms", "s"):
        if text.endswith(unit):
            value = Fraction(text[: -len(unit)])
            return int(value * _UNITS[unit])
    return int(Fraction(text))
