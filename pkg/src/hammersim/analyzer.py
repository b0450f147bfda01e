"""Command-bus trace capture and the two core metrics.

``acts_per_trefi`` counts ACTs between consecutive REFs; ``act_latency_cdf``
collects consecutive ACT-to-ACT deltas.

CSV schema, one command per line after the header ``t_ps,cmd,bg,ba,row,col``:
``row`` and ``col`` are hex, empty when not applicable.  MRS puts the
register number in ``bg``/``ba`` and the payload in ``row``.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional

import numpy as np

from .protocol import DES, PREA, REF, Command, Op

HEADER = ("t_ps", "cmd", "bg", "ba", "row", "col")


class AnalyzerError(Exception):
    pass


class InsufficientRefs(AnalyzerError):
    pass


class InsufficientActs(AnalyzerError):
    pass


class TraceParseError(AnalyzerError, ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class TraceRecord(NamedTuple):
    t: int
    cmd: Command


Trigger = Callable[[TraceRecord], bool]


def any_command(rec: TraceRecord) -> bool:
    return True


def on_op(op: Op, bank: Optional[int] = None) -> Trigger:
    def trig(rec: TraceRecord) -> bool:
        return rec.cmd.op is op and (bank is None or rec.cmd.bank == bank)
    return trig


def on_row(bank: int, row: int) -> Trigger:
    def trig(rec: TraceRecord) -> bool:
        return rec.cmd.op is Op.ACT and rec.cmd.bank == bank and rec.cmd.row == row
    return trig


@dataclass
class Trace:
    """Append-only, time-ordered command capture with an optional start trigger."""

    trigger: Trigger = any_command
    records: list = field(default_factory=list)
    armed: bool = True

    def record(self, t: int, cmd: Command) -> None:
        if self.armed:
            rec = TraceRecord(t, cmd)
            if not self.trigger(rec):
                return
            self.armed = False
        if self.records and t < self.records[-1].t:
            raise AnalyzerError(f"trace records out of order ({t} < {self.records[-1].t})")
        self.records.append(TraceRecord(t, cmd))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def count(self, op: Op, start: int = 0, end: Optional[int] = None) -> int:
        return sum(1 for r in self.records
                   if r.cmd.op is op and r.t >= start and (end is None or r.t < end))

    def between(self, start: int, end: int) -> list:
        return [r for r in self.records if start <= r.t < end]


def capture(records: Iterable[TraceRecord], trigger: Trigger = any_command) -> Trace:
    """Filter an existing stream the way the analyzer's trigger would."""
    tr = Trace(trigger)
    for r in records:
        tr.record(r.t, r.cmd)
    return tr


def acts_per_trefi(trace, bank: Optional[int] = None) -> list[int]:
    """ACT count in every window delimited by two consecutive REFs."""
    counts: list[int] = []
    current = None
    for r in trace:
        op = r.cmd.op
        if op is Op.REF:
            if current is not None:
                counts.append(current)
            current = 0
        elif op is Op.ACT and current is not None and (bank is None or r.cmd.bank == bank):
            current += 1
    if len(counts) < 1:
        raise InsufficientRefs("need at least two REF commands")
    return counts


@dataclass
class LatencyCdf:
    deltas: np.ndarray  # sorted, ps

    def __len__(self) -> int:
        return len(self.deltas)

    def percentile(self, p: float) -> float:
        return float(np.percentile(self.deltas, p))

    def fraction_within(self, center: float, tol: float) -> float:
        return float(np.mean(np.abs(self.deltas - center) <= tol))

    def fraction_in(self, lo: float, hi: float) -> float:
        return float(np.mean((self.deltas >= lo) & (self.deltas <= hi)))

    def mode(self, resolution: int = 1000) -> int:
        """Most common delta after rounding to ``resolution`` ps."""
        bins = np.round(self.deltas / resolution).astype(np.int64)
        values, counts = np.unique(bins, return_counts=True)
        return int(values[np.argmax(counts)]) * resolution

    def cdf_points(self) -> list[tuple[int, float]]:
        values, counts = np.unique(self.deltas, return_counts=True)
        cum = np.cumsum(counts) / len(self.deltas)
        return [(int(v), float(c)) for v, c in zip(values, cum)]


def act_latency_cdf(trace, bank: Optional[int] = None, span_refresh: bool = False) -> LatencyCdf:
    """Sorted deltas between consecutive ACTs.

    By default a pair of ACTs with a REF between them is skipped, since the
    gap then measures the refresh rather than the access sequence.
    """
    deltas = []
    last = None
    acts = 0
    for r in trace:
        op = r.cmd.op
        if op is Op.REF and not span_refresh:
            last = None
        elif op is Op.ACT and (bank is None or r.cmd.bank == bank):
            acts += 1
            if last is not None:
                deltas.append(r.t - last)
            last = r.t
    if acts < 2:
        raise InsufficientActs("need at least two ACT commands")
    return LatencyCdf(np.sort(np.asarray(deltas, dtype=np.int64)))


def summarize(values) -> dict:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return {"n": 0}
    return {"n": int(a.size), "mean": float(a.mean()), "min": float(a.min()),
            "p5": float(np.percentile(a, 5)), "median": float(statistics.median(a.tolist())),
            "p95": float(np.percentile(a, 95)), "max": float(a.max())}


# -- CSV ---------------------------------------------------------------------

def _cmd_name(cmd: Command) -> str:
    if cmd.op in (Op.RD, Op.WR) and cmd.auto_precharge:
        return cmd.op.value + "A"
    return cmd.op.value


def record_to_row(rec: TraceRecord) -> list[str]:
    c = rec.cmd
    bg = ba = row = col = ""
    if c.op is Op.MRS:
        bg, ba, row = str(c.reg >> 2), str(c.reg & 3), f"0x{c.payload:05x}"
    elif c.bank is not None:
        bg, ba = str(c.bank >> 2), str(c.bank & 3)
    if c.op is Op.ACT:
        row = f"0x{c.row:05x}"
    if c.op in (Op.RD, Op.WR):
        col = f"0x{c.col:03x}"
    return [str(rec.t), _cmd_name(c), bg, ba, row, col]


def _int(text: str, line: int, what: str, base: int = 10) -> int:
    if not text:
        raise TraceParseError(line, f"missing {what}")
    try:
        return int(text, base)
    except ValueError:
        raise TraceParseError(line, f"bad {what} {text!r}") from None


def row_to_record(fields: list[str], line: int) -> TraceRecord:
    if len(fields) != len(HEADER):
        raise TraceParseError(line, f"expected {len(HEADER)} fields, got {len(fields)}")
    t_s, name, bg_s, ba_s, row_s, col_s = (f.strip() for f in fields)
    t = _int(t_s, line, "t_ps")
    name = name.upper()
    ap = name in ("RDA", "WRA")
    base = name[:2] if ap else name
    try:
        op = Op(base)
    except ValueError:
        raise TraceParseError(line, f"unknown command {name!r}") from None
    if op is Op.MRS:
        reg = (_int(bg_s, line, "bg") << 2) | _int(ba_s, line, "ba")
        cmd = Command.mrs(reg, _int(row_s, line, "payload", 16))
    elif op in (Op.REF, Op.PREA, Op.DES):
        cmd = {Op.REF: REF, Op.PREA: PREA, Op.DES: DES}[op]
    else:
        bank = (_int(bg_s, line, "bg") << 2) | _int(ba_s, line, "ba")
        if op is Op.ACT:
            cmd = Command.act(bank, _int(row_s, line, "row", 16))
        elif op is Op.PRE:
            cmd = Command.pre(bank)
        else:
            cmd = Command(op, bank=bank, col=_int(col_s, line, "col", 16), auto_precharge=ap)
    return TraceRecord(t, cmd)


def dumps_csv(records: Iterable[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for rec in records:
        w.writerow(record_to_row(rec))
    return buf.getvalue()


def loads_csv(text: str) -> list[TraceRecord]:
    reader = csv.reader(io.StringIO(text))
    out = []
    for i, fields in enumerate(reader, start=1):
        if i == 1:
            if tuple(f.strip() for f in fields) != HEADER:
                raise TraceParseError(1, f"header must be {','.join(HEADER)}")
            continue
        if not fields or (len(fields) == 1 and not fields[0].strip()):
            continue
        rec = row_to_record(fields, i)
        if out and rec.t < out[-1].t:
            raise TraceParseError(i, "records out of time order")
        out.append(rec)
    if not text.strip():
        raise TraceParseError(1, "empty file (header required)")
    return out


def export_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(dumps_csv(trace))


def import_csv(path) -> Trace:
    with open(path, newline="") as fh:
        records = loads_csv(fh.read())
    return Trace(records=records, armed=False)


def export_metrics_csv(path, acts=None, cdf: Optional[LatencyCdf] = None) -> None:
    """Per-window ACT counts and/or a gnuplot-ready latency CDF (delta_ps, cdf)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if acts is not None:
            w.writerow(["window", "acts"])
            for i, n in enumerate(acts):
                w.writerow([i, n])
        if cdf is not None:
            if acts is not None:
                w.writerow([])
            w.writerow(["delta_ps", "cdf"])
            for v, c in cdf.cdf_points():
                w.writerow([v, f"{c:.6f}"])
