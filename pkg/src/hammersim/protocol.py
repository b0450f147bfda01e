"""DDR4 command-bus encoding, decoding and the A14 stuck-low fault.

A :class:`SignalWord` is one sample of the command/address bus taken while
CS_n is asserted.  The three command-select lines RAS_n, CAS_n and WE_n are
shared with row-address bits A16, A15 and A14, so they are stored only once,
inside ``addr``, and exposed through properties.

Truth table (CS_n = L)::

    ACT_n  RAS/A16  CAS/A15  WE/A14   command
      L      row      row      row    ACT
      H       L        L        L     MRS
      H       L        L        H     REF
      H       L        H        L     PRE (A10=L) / PREA (A10=H)
      H       L        H        H     reserved
      H       H        L        L     WR
      H       H        L        H     RD
      H       H        H        L     ZQC  (decoded as DES)
      H       H        H        H     NOP  (decoded as DES)
"""

from __future__ import annotations

import enum
from typing import NamedTuple, Optional

ADDR_BITS = 18
ADDR_MASK = (1 << ADDR_BITS) - 1
A10 = 1 << 10
A14 = 1 << 14
A15 = 1 << 15
A16 = 1 << 16
# MRS payload may not use the lines that double as command selects.
MRS_RESERVED = A14 | A15 | A16

NUM_BANKS = 16
NUM_COLUMNS = 1024
NUM_MODE_REGISTERS = 8

L, H = 0, 1


class ProtocolError(Exception):
    """Base class for command-bus errors."""


class BoundsError(ProtocolError, ValueError):
    pass


class UnknownCommand(ProtocolError):
    """Raised when the select lines form a reserved encoding."""


class Op(enum.Enum):
    ACT = "ACT"
    RD = "RD"
    WR = "WR"
    PRE = "PRE"
    PREA = "PREA"
    REF = "REF"
    MRS = "MRS"
    DES = "DES"


class BankId(NamedTuple):
    group: int
    bank: int

    @property
    def flat(self) -> int:
        return self.group * 4 + self.bank

    @classmethod
    def from_flat(cls, flat: int) -> "BankId":
        if not 0 <= flat < NUM_BANKS:
            raise BoundsError(f"bank {flat} out of range [0, {NUM_BANKS})")
        return cls(flat >> 2, flat & 3)


class Command(NamedTuple):
    """A decoded DDR4 command.  ``bank`` is the flat index group*4 + bank."""

    op: Op
    bank: Optional[int] = None
    row: Optional[int] = None
    col: Optional[int] = None
    reg: Optional[int] = None
    payload: Optional[int] = None
    auto_precharge: bool = False

    @classmethod
    def act(cls, bank: int, row: int) -> "Command":
        return cls(Op.ACT, bank=bank, row=row)

    @classmethod
    def rd(cls, bank: int, col: int, auto_precharge: bool = False) -> "Command":
        return cls(Op.RD, bank=bank, col=col, auto_precharge=auto_precharge)

    @classmethod
    def wr(cls, bank: int, col: int, auto_precharge: bool = False) -> "Command":
        return cls(Op.WR, bank=bank, col=col, auto_precharge=auto_precharge)

    @classmethod
    def pre(cls, bank: int) -> "Command":
        return cls(Op.PRE, bank=bank)

    @classmethod
    def mrs(cls, reg: int, payload: int) -> "Command":
        return cls(Op.MRS, reg=reg, payload=payload)

    def __str__(self) -> str:
        op = self.op
        if op is Op.ACT:
            return f"ACT b{self.bank} r0x{self.row:05x}"
        if op in (Op.RD, Op.WR):
            ap = "A" if self.auto_precharge else ""
            return f"{op.value}{ap} b{self.bank} c0x{self.col:03x}"
        if op is Op.PRE:
            return f"PRE b{self.bank}"
        if op is Op.MRS:
            return f"MRS MR{self.reg} 0x{self.payload:05x}"
        return op.value


REF = Command(Op.REF)
PREA = Command(Op.PREA)
DES = Command(Op.DES)


class SignalWord(NamedTuple):
    cs_n: int
    act_n: int
    addr: int
    bg: int
    ba: int
    parity: int

    @property
    def ras_a16(self) -> int:
        return (self.addr >> 16) & 1

    @property
    def cas_a15(self) -> int:
        return (self.addr >> 15) & 1

    @property
    def we_a14(self) -> int:
        return (self.addr >> 14) & 1

    @property
    def a10(self) -> int:
        return (self.addr >> 10) & 1


def even_parity(act_n: int, addr: int, bg: int, ba: int) -> int:
    """Parity bit that makes the covered lines plus itself an even count of ones."""
    return (act_n + addr.bit_count() + bg.bit_count() + ba.bit_count()) & 1


def _word(act_n: int, addr: int, bg: int = 0, ba: int = 0) -> SignalWord:
    return SignalWord(L, act_n, addr, bg, ba, even_parity(act_n, addr, bg, ba))


def _check_bank(bank) -> tuple[int, int]:
    if bank is None or not 0 <= bank < NUM_BANKS:
        raise BoundsError(f"bank {bank!r} out of range [0, {NUM_BANKS})")
    return bank >> 2, bank & 3


def _check_col(col) -> None:
    if col is None or not 0 <= col < NUM_COLUMNS:
        raise BoundsError(f"column {col!r} out of range [0, {NUM_COLUMNS})")


def encode(cmd: Command, rows_per_bank: int = 1 << ADDR_BITS) -> SignalWord:
    """Drive the bus lines for ``cmd`` and attach controller-side parity."""
    op = cmd.op
    if op is Op.ACT:
        bg, ba = _check_bank(cmd.bank)
        if cmd.row is None or not 0 <= cmd.row < min(rows_per_bank, 1 << ADDR_BITS):
            raise BoundsError(f"row {cmd.row!r} out of range")
        return _word(L, cmd.row, bg, ba)
    if op is Op.RD or op is Op.WR:
        bg, ba = _check_bank(cmd.bank)
        _check_col(cmd.col)
        sel = A16 | A14 if op is Op.RD else A16
        return _word(H, sel | (A10 if cmd.auto_precharge else 0) | cmd.col, bg, ba)
    if op is Op.PRE:
        bg, ba = _check_bank(cmd.bank)
        return _word(H, A15, bg, ba)
    if op is Op.PREA:
        return _word(H, A15 | A10)
    if op is Op.REF:
        return _word(H, A14)
    if op is Op.MRS:
        if cmd.reg is None or not 0 <= cmd.reg < NUM_MODE_REGISTERS:
            raise BoundsError(f"mode register {cmd.reg!r} out of range [0, 8)")
        payload = cmd.payload or 0
        if not 0 <= payload <= ADDR_MASK or payload & MRS_RESERVED:
            raise BoundsError(f"MRS payload 0x{payload:x} uses A14-A16 or exceeds 18 bits")
        # BG0 selects MR4-MR7; BG1 must be low for MRS.
        return _word(H, payload, cmd.reg >> 2, cmd.reg & 3)
    if op is Op.DES:
        return SignalWord(H, H, A16 | A15 | A14, 0, 0, even_parity(H, A16 | A15 | A14, 0, 0))
    raise BoundsError(f"cannot encode {op}")  # pragma: no cover


def decode(w: SignalWord) -> Command:
    """Inverse of :func:`encode` on the command-significant lines."""
    if w.cs_n:
        return DES
    addr = w.addr & ADDR_MASK
    bank = ((w.bg & 3) << 2) | (w.ba & 3)
    if not w.act_n:
        return Command(Op.ACT, bank=bank, row=addr)
    sel = (addr >> 14) & 0b111  # RAS, CAS, WE as bits 2, 1, 0
    if sel == 0b000:
        return Command(Op.MRS, reg=((w.bg & 1) << 2) | (w.ba & 3), payload=addr & ~MRS_RESERVED)
    if sel == 0b001:
        return REF
    if sel == 0b010:
        return PREA if addr & A10 else Command(Op.PRE, bank=bank)
    if sel == 0b100 or sel == 0b101:
        op = Op.WR if sel == 0b100 else Op.RD
        return Command(op, bank=bank, col=addr & 0x3FF, auto_precharge=bool(addr & A10))
    if sel == 0b110 or sel == 0b111:
        return DES
    raise UnknownCommand(f"reserved encoding ACT_n=H RAS=L CAS=H WE=H (addr 0x{addr:05x})")


def apply_a14_fault(w: SignalWord, held_low: bool) -> SignalWord:
    """Force WE_n/A14 low.  Parity is left as the controller computed it."""
    if not held_low or not w.addr & A14:
        return w
    return w._replace(addr=w.addr & ~A14)


def check_parity(w: SignalWord) -> bool:
    return even_parity(w.act_n, w.addr, w.bg, w.ba) == w.parity


def truth_table() -> list[tuple[str, str, str, str, str, str]]:
    """Rows of (command, ACT_n, RAS, CAS, WE, decoded-with-A14-low) for display."""
    samples = [
        ("ACT", Command.act(0, 0x4001)),
        ("MRS", Command.mrs(0, 0)),
        ("REF", REF),
        ("PRE", Command.pre(0)),
        ("PREA", PREA),
        ("WR", Command.wr(0, 0)),
        ("RD", Command.rd(0, 0)),
    ]
    rows = []
    hl = "LH"
    for name, cmd in samples:
        w = encode(cmd)
        rows.append((name, hl[w.act_n], hl[w.ras_a16], hl[w.cas_a15], hl[w.we_a14],
                     str(decode(apply_a14_fault(w, True)))))
    rows.append(("reserved", "H", "L", "H", "H", "UnknownCommand"))
    rows.append(("ZQC", "H", "H", "H", "L", "DES"))
    rows.append(("NOP", "H", "H", "H", "H", "DES"))
    return rows
