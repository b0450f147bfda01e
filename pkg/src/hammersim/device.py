"""DRAM device: cell arrays, mode registers and the disturbance/retention fault models.

Cell contents are stored sparsely.  Each bank has a background word, rows
written with a uniform word keep only that word, rows that received
individual writes or Rowhammer flips hold a dense ``uint64[1024]`` array,
and retention flips are kept as per-word XOR patches.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Union

import numpy as np

from .adjacency import Kind
from .profiles import DeviceProfile
from .protocol import (NUM_COLUMNS, NUM_MODE_REGISTERS, Command, Op, ProtocolError,
                       SignalWord, check_parity, decode)
from .timing import PS_PER_S

WORD_BITS = 64
ROW_BITS = NUM_COLUMNS * WORD_BITS
ALL_ONES = (1 << 64) - 1
LOW_HALF = 0x0000_0000_FFFF_FFFF
HIGH_HALF = 0xFFFF_FFFF_0000_0000

# Power-up contents of MR0..MR6.  MR5[2:0] non-zero enables C/A parity.
BOOT_MODE_REGISTERS = (0x0A24, 0x0101, 0x0028, 0x0000, 0x0800, 0x0401, 0x0817, 0x0000)

_SHIFTS = np.arange(WORD_BITS, dtype=np.uint64)


class ProtocolViolation(ProtocolError):
    pass


class DeviceResponse(NamedTuple):
    cmd: Command
    alert: bool = False
    data: Optional[int] = None


def words_from_bits(bits: np.ndarray) -> np.ndarray:
    """(1024, 64) bool, bit 0 first -> uint64[1024]."""
    packed = np.packbits(bits.astype(np.uint8), axis=1, bitorder="little")
    return packed.view("<u8").reshape(-1).astype(np.uint64)


def bits_from_words(words: np.ndarray) -> np.ndarray:
    """uint64[n] -> (n, 64) bool with bit 0 first."""
    return ((words[:, None] >> _SHIFTS) & np.uint64(1)).astype(bool)


def popcount(a: np.ndarray) -> np.ndarray:
    return np.bitwise_count(a)


@dataclass
class RowFlips:
    """Difference between a row's expected and observed contents."""

    bank: int
    row: int
    expected: np.ndarray
    actual: np.ndarray

    @property
    def diff(self) -> np.ndarray:
        return self.expected ^ self.actual

    @property
    def total(self) -> int:
        return int(popcount(self.diff).sum())

    @property
    def density(self) -> float:
        return self.total / ROW_BITS

    @property
    def word_counts(self) -> np.ndarray:
        return popcount(self.diff).astype(np.int64)

    @property
    def bit_counts(self) -> np.ndarray:
        return bits_from_words(self.diff).sum(axis=0).astype(np.int64)

    @property
    def to_zero(self) -> int:
        """Flips of cells that held a 1."""
        return int(popcount(self.diff & self.expected).sum())

    @property
    def to_one(self) -> int:
        return self.total - self.to_zero

    def coordinates(self):
        """Yield (word, bit, direction) with direction '1->0' or '0->1'."""
        d = self.diff
        for w in np.nonzero(d)[0]:
            x, e = int(d[w]), int(self.expected[w])
            while x:
                b = (x & -x).bit_length() - 1
                yield int(w), b, "1->0" if (e >> b) & 1 else "0->1"
                x &= x - 1


@dataclass
class FlipReport:
    """Rows with at least one flipped bit, keyed by (bank, row)."""

    rows: dict = field(default_factory=dict)
    inspected: int = 0

    def add(self, rf: RowFlips) -> None:
        if rf.total:
            self.rows[(rf.bank, rf.row)] = rf

    def get(self, bank: int, row: int) -> Optional[RowFlips]:
        return self.rows.get((bank, row))

    def total(self, bank: Optional[int] = None, row: Optional[int] = None) -> int:
        if row is not None:
            rf = self.rows.get((bank or 0, row))
            return rf.total if rf else 0
        return sum(rf.total for rf in self.rows.values())

    def density(self, bank: int, row: int) -> float:
        rf = self.rows.get((bank, row))
        return rf.density if rf else 0.0

    def per_row(self) -> dict:
        return {k: rf.total for k, rf in sorted(self.rows.items())}

    def merge(self, other: "FlipReport") -> "FlipReport":
        out = FlipReport(dict(self.rows), self.inspected + other.inspected)
        out.rows.update(other.rows)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bank", "row", "word", "bit", "direction"])
            for (bank, row), rf in sorted(self.rows.items()):
                for word, bit, direction in rf.coordinates():
                    w.writerow([bank, f"0x{row:05x}", word, bit, direction])


class BankCells:
    def __init__(self, background: int = 0):
        self.background = background
        self.pattern: dict = {}
        self.dense: dict = {}
        self.patches: dict = {}

    def read_row(self, row: int) -> np.ndarray:
        if row in self.dense:
            out = self.dense[row].copy()
        else:
            out = np.full(NUM_COLUMNS, self.pattern.get(row, self.background), dtype=np.uint64)
        for w, x in self.patches.get(row, {}).items():
            out[w] ^= np.uint64(x)
        return out

    def read_word(self, row: int, col: int) -> int:
        if row in self.dense:
            v = int(self.dense[row][col])
        else:
            v = self.pattern.get(row, self.background)
        return v ^ self.patches.get(row, {}).get(col, 0)

    def write_row(self, row: int, data: Union[int, np.ndarray]) -> None:
        self.patches.pop(row, None)
        if isinstance(data, (int, np.integer)):
            self.dense.pop(row, None)
            self.pattern[row] = int(data) & ALL_ONES
        else:
            arr = np.asarray(data, dtype=np.uint64)
            if arr.shape != (NUM_COLUMNS,):
                raise ValueError(f"row data must have {NUM_COLUMNS} words")
            self.pattern.pop(row, None)
            self.dense[row] = arr.copy()

    def make_dense(self, row: int) -> np.ndarray:
        if row not in self.dense or row in self.patches:
            self.dense[row] = self.read_row(row)
            self.pattern.pop(row, None)
            self.patches.pop(row, None)
        return self.dense[row]

    def write_word(self, row: int, col: int, value: int) -> None:
        if self.read_word(row, col) == value:
            return
        self.make_dense(row)[col] = np.uint64(value)

    def xor_bit(self, row: int, col: int, bit: int) -> None:
        if row in self.dense and row not in self.patches:
            self.dense[row][col] ^= np.uint64(1 << bit)
            return
        p = self.patches.setdefault(row, {})
        p[col] = p.get(col, 0) ^ (1 << bit)

    def touched(self) -> set:
        return set(self.dense) | set(self.patches)

    def is_uniform(self, row: int, value: int) -> bool:
        """True when the row certainly holds ``value`` in every word."""
        return (row not in self.dense and row not in self.patches
                and self.pattern.get(row, self.background) == value)


class DramDevice:
    """One DIMM rank: banks of cells plus the fault models of a :class:`DeviceProfile`."""

    def __init__(self, profile: DeviceProfile, seed: int = 0, banks: Optional[Iterable[int]] = None):
        self.profile = profile
        self.seed = seed
        self.rows = profile.rows_per_bank
        self.bank_ids = tuple(range(profile.banks)) if banks is None else tuple(banks)
        self.cells = {b: BankCells() for b in self.bank_ids}
        self.open_row: dict = {b: None for b in self.bank_ids}
        self.mr = list(BOOT_MODE_REGISTERS)
        self.boot_snapshot = tuple(self.mr)
        # (bank, victim, half) -> [dose, strength for 1-cells, strength for 0-cells]
        self.disturbance: dict = {}
        self.time_scale = 1.0
        self.equiv_elapsed = 0.0  # ps since the last delivered REF, scaled
        self.last_t = 0
        self.epoch = 0
        self.refs_delivered = 0
        self.alerts = 0
        self.command_count = 0
        self._victims: dict = {}
        self._weak: dict = {}

    # -- configuration ----------------------------------------------------
    @property
    def parity_enabled(self) -> bool:
        return bool(self.mr[5] & 0x7)

    def set_time_scale(self, scale: float, t: int) -> None:
        self._advance(t)
        self.time_scale = float(scale)

    def _advance(self, t: int) -> None:
        if t > self.last_t:
            self.equiv_elapsed += (t - self.last_t) * self.time_scale
            self.last_t = t

    def _bank(self, bank: Optional[int]) -> BankCells:
        try:
            return self.cells[bank]
        except KeyError:
            raise ProtocolViolation(f"bank {bank} not present in this device") from None

    def _check_row(self, row: int) -> None:
        if not 0 <= row < self.rows:
            raise IndexError(f"row 0x{row:x} outside [0, 0x{self.rows:x})")

    # -- direct access (test harness) ---------------------------------------
    def read_row(self, bank: int, row: int) -> np.ndarray:
        self._check_row(row)
        return self._bank(bank).read_row(row)

    def write_row(self, bank: int, row: int, data) -> None:
        self._check_row(row)
        self._bank(bank).write_row(row, data)

    def fill_bank(self, bank: int, word: int) -> None:
        self.cells[bank] = BankCells(int(word) & ALL_ONES)

    # -- command interface ---------------------------------------------------
    def apply_signal(self, w: SignalWord, t: int, data: Optional[int] = None) -> DeviceResponse:
        """Sample one bus word: check parity, decode and execute."""
        alert = self.parity_enabled and not check_parity(w)
        cmd = decode(w)
        # A parity failure is reported, but the command still takes effect.
        resp = self.apply_command(cmd, t, data)
        if alert:
            self.alerts += 1
            return DeviceResponse(cmd, True, resp.data)
        return resp

    def apply_command(self, cmd: Command, t: int, data: Optional[int] = None) -> DeviceResponse:
        self._advance(t)
        self.command_count += 1
        op = cmd.op
        if op is Op.ACT:
            self._check_row(cmd.row)
            if self.open_row[cmd.bank] is not None:
                raise ProtocolViolation(f"ACT to bank {cmd.bank} with row "
                                        f"0x{self.open_row[cmd.bank]:x} open")
            self.open_row[cmd.bank] = cmd.row
            self._disturb(cmd.bank, cmd.row)
        elif op is Op.RD or op is Op.WR:
            row = self.open_row.get(cmd.bank)
            if row is None:
                raise ProtocolViolation(f"{op.value} to closed bank {cmd.bank}")
            cells = self._bank(cmd.bank)
            out = None
            if op is Op.RD:
                out = cells.read_word(row, cmd.col)
            else:
                # Nothing drives the data bus when a RD was turned into a WR,
                # so the device latches the idle (all-ones) level.
                cells.write_word(row, cmd.col, ALL_ONES if data is None else data)
            if cmd.auto_precharge:
                self.open_row[cmd.bank] = None
            return DeviceResponse(cmd, False, out)
        elif op is Op.PRE:
            self._bank(cmd.bank)
            self.open_row[cmd.bank] = None
        elif op is Op.PREA:
            for b in self.open_row:
                self.open_row[b] = None
        elif op is Op.REF:
            if any(r is not None for r in self.open_row.values()):
                raise ProtocolViolation("REF with a bank still open")
            self.refresh()
        elif op is Op.MRS:
            self.mr[cmd.reg] = cmd.payload
        return DeviceResponse(cmd)

    # -- disturbance ---------------------------------------------------------
    def _victim_table(self, row: int) -> list:
        hit = self._victims.get(row)
        if hit is None:
            hit = []
            for e in self.profile.adjacency.victims(row):
                s1 = self.profile.cell_strength(row, e.victim, e.kind, 1)
                s0 = self.profile.cell_strength(row, e.victim, e.kind, 0)
                halves = (0, 1) if e.kind is Kind.WHOLE else ((0,) if e.kind is Kind.HALF_LOW else (1,))
                for h in halves:
                    hit.append((e.victim, h, s1, s0))
            self._victims[row] = hit
        return hit

    def _disturb(self, bank: int, row: int) -> None:
        dose = self.time_scale
        dist = self.disturbance
        for victim, half, s1, s0 in self._victim_table(row):
            key = (bank, victim, half)
            d = dist.get(key)
            if d is None:
                dist[key] = [dose, s1, s0]
            else:
                d[0] += dose
                if s1 > d[1]:
                    d[1], d[2] = s1, s0

    def saturation(self, dose: float) -> float:
        return saturation(dose, self.profile.act_threshold, self.profile.n0)

    def _uniforms(self, bank: int, row: int, context: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, bank, row, context])
        return rng.random((NUM_COLUMNS, WORD_BITS))

    def _materialize_disturbance(self) -> set:
        by_row: dict = {}
        for (bank, victim, half), (dose, s1, s0) in self.disturbance.items():
            sat = self.saturation(dose)
            if sat > 0.0:
                by_row.setdefault((bank, victim), []).append((half, sat * s1, sat * s0))
        for (bank, victim), halves in sorted(by_row.items()):
            cells = self.cells[bank]
            words = cells.read_row(victim)
            bits = bits_from_words(words)
            u = self._uniforms(bank, victim, self.epoch)
            flip = np.zeros_like(bits)
            for half, p1, p0 in halves:
                cols = slice(0, 32) if half == 0 else slice(32, 64)
                b = bits[:, cols]
                flip[:, cols] = u[:, cols] < np.where(b, p1, p0)
            if flip.any():
                cells.make_dense(victim)[:] ^= words_from_bits(flip)
        return set(by_row)

    def weak_cells(self, bank: int) -> dict:
        """row -> list of (word, bit) retention-weak cells, sampled once per bank."""
        hit = self._weak.get(bank)
        if hit is not None:
            return hit
        rng = np.random.default_rng([self.seed, bank, 0x5EED])
        n = self.rows
        p0, p1, p2 = self.profile.retention_weak_rows
        n1, n2 = round(p1 * n), round(p2 * n)
        perm = rng.permutation(n)
        weak = {}
        for i, row in enumerate(perm[:n1 + n2]):
            k = 1 if i < n1 else 2
            cells = rng.choice(ROW_BITS, size=k, replace=False)
            weak[int(row)] = [divmod(int(c), WORD_BITS) for c in cells]
        self._weak[bank] = weak
        return weak

    def _materialize_retention(self, elapsed_ps: float) -> None:
        if elapsed_ps < self.profile.retention_threshold_s * PS_PER_S:
            return
        for bank in self.bank_ids:
            cells = self.cells[bank]
            for row, spots in self.weak_cells(bank).items():
                for word, bit in spots:
                    if (cells.read_word(row, word) >> bit) & 1:
                        cells.xor_bit(row, word, bit)

    def resolve_flips(self, elapsed_without_refresh: Optional[float] = None) -> None:
        """Apply pending disturbance and retention flips to the cell arrays.

        ``elapsed_without_refresh`` (ps) overrides the device's own scaled clock.
        """
        elapsed = self.equiv_elapsed if elapsed_without_refresh is None else elapsed_without_refresh
        self._materialize_disturbance()
        self._materialize_retention(elapsed)
        self.disturbance.clear()
        self.epoch += 1

    def refresh(self) -> None:
        self.refs_delivered += 1
        if self.disturbance or self.equiv_elapsed >= self.profile.retention_threshold_s * PS_PER_S:
            self.resolve_flips()
        self.equiv_elapsed = 0.0

    # -- inspection ----------------------------------------------------------
    def inspect(self, bank: int, rows: Iterable[int],
                expected: Callable[[int], Union[int, np.ndarray]]) -> FlipReport:
        """Compare ``rows`` against ``expected(row)`` (a word or a full row)."""
        report = FlipReport()
        cells = self.cells[bank]
        for row in rows:
            report.inspected += 1
            exp = expected(row)
            if isinstance(exp, (int, np.integer)):
                if cells.is_uniform(row, int(exp)):
                    continue
                exp = np.full(NUM_COLUMNS, int(exp), dtype=np.uint64)
            report.add(RowFlips(bank, row, np.asarray(exp, dtype=np.uint64), cells.read_row(row)))
        return report

    def dirty_rows(self, bank: int) -> set:
        return self.cells[bank].touched() | set(self.cells[bank].pattern)


# Seeding patterns for the data-pattern experiments (fraction of ones ~1, 2/3, 1/3, 0).
DATA_PATTERNS = {
    "ones": ALL_ONES,
    "two-thirds": 0xB6DB_6DB6_DB6D_B6DB,
    "one-third": 0x4924_9249_2492_4924,
    "zeros": 0,
}


def parse_pattern(text: str) -> int:
    """A named pattern from DATA_PATTERNS or a hex/decimal 64-bit word."""
    if text in DATA_PATTERNS:
        return DATA_PATTERNS[text]
    v = int(text, 0)
    if not 0 <= v <= ALL_ONES:
        raise ValueError(f"pattern {text!r} does not fit in 64 bits")
    return v


def saturation(dose: float, threshold: float, n0: float) -> float:
    """Fraction of the saturated flip probability reached after ``dose`` ACTs."""
    excess = dose - threshold
    return 0.0 if excess <= 0 else -math.expm1(-excess / n0)


def pattern_fraction(word: int) -> float:
    """Fraction of ones in a 64-bit data pattern."""
    return (word & ALL_ONES).bit_count() / WORD_BITS


def markov_flip_probability(p_b: float, p_other: float, intervals: int) -> float:
    """Chance a cell seeded b reads back flipped after ``intervals`` refresh periods.

    The cell flips b -> 1-b with probability ``p_b`` per period and back with
    ``p_other``; refresh restores whatever value the cell holds.
    """
    s = p_b + p_other
    if s <= 0.0 or intervals <= 0:
        return 0.0
    return p_b / s * (1.0 - (1.0 - s) ** intervals)
