"""Virtual -> physical -> logical (channel/DIMM/rank/bank/row/column) address maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

FIELDS = ("offset", "col", "row", "bank", "rank", "dimm", "channel")


class AddressError(ValueError):
    pass


class LogicalAddr(NamedTuple):
    channel: int = 0
    dimm: int = 0
    rank: int = 0
    bank: int = 0
    row: int = 0
    col: int = 0
    offset: int = 0


def _default_slices() -> dict:
    # 8-byte words, 1024 columns, 2^17 rows, 16 banks: consecutive 8 KiB
    # blocks walk consecutive rows of one bank.
    return {"offset": (0, 3), "col": (3, 10), "row": (13, 17), "bank": (30, 4),
            "rank": (34, 0), "dimm": (34, 0), "channel": (34, 0)}


@dataclass(frozen=True)
class MappingConfig:
    """Bit-slice routing of physical address bits to logical fields.

    ``slices`` maps a field name to ``(low_bit, width)``.  Slices must be
    disjoint and together cover bits ``[0, width)`` of the address.
    """

    slices: dict = field(default_factory=_default_slices)

    def __post_init__(self):
        missing = set(FIELDS) - set(self.slices)
        if missing:
            raise AddressError(f"mapping lacks fields: {sorted(missing)}")
        used = 0
        for name in FIELDS:
            lo, width = self.slices[name]
            mask = ((1 << width) - 1) << lo
            if used & mask:
                raise AddressError(f"slice for {name!r} overlaps another field")
            used |= mask
        if used & (used + 1):
            raise AddressError("slices leave a gap in the address bits")

    @property
    def width(self) -> int:
        return sum(w for _, w in self.slices.values())

    @property
    def size(self) -> int:
        return 1 << self.width

    def field_count(self, name: str) -> int:
        return 1 << self.slices[name][1]

    @classmethod
    def from_mapping(cls, values: dict) -> "MappingConfig":
        slices = _default_slices()
        for name, spec in values.items():
            if name not in FIELDS:
                raise AddressError(f"unknown field {name!r}")
            lo, width = spec
            slices[name] = (int(lo), int(width))
        return cls(slices)


@dataclass(frozen=True)
class AddressSpace:
    """Linear virtual-to-physical map, as under UEFI: pa = va + base."""

    base: int = 0
    size: int = 1 << 34

    def virt_to_phys(self, va: int) -> int:
        if not 0 <= va < self.size:
            raise AddressError(f"virtual address 0x{va:x} outside [0, 0x{self.size:x})")
        return va + self.base

    def phys_to_virt(self, pa: int) -> int:
        va = pa - self.base
        if not 0 <= va < self.size:
            raise AddressError(f"physical address 0x{pa:x} not mapped")
        return va


def phys_to_logical(cfg: MappingConfig, pa: int) -> LogicalAddr:
    if not 0 <= pa < cfg.size:
        raise AddressError(f"physical address 0x{pa:x} exceeds {cfg.width}-bit map")
    parts = {}
    for name in FIELDS:
        lo, width = cfg.slices[name]
        parts[name] = (pa >> lo) & ((1 << width) - 1)
    return LogicalAddr(**parts)


def logical_to_phys(cfg: MappingConfig, la: LogicalAddr) -> int:
    pa = 0
    for name in FIELDS:
        lo, width = cfg.slices[name]
        value = getattr(la, name)
        if not 0 <= value < (1 << width):
            raise AddressError(f"{name}={value} does not fit in {width} bits")
        pa |= value << lo
    return pa


def row_address(cfg: MappingConfig, bank: int, row: int, col: int = 0) -> int:
    """Physical address of column ``col`` of ``row`` in ``bank``."""
    return logical_to_phys(cfg, LogicalAddr(bank=bank, row=row, col=col))


def describe(cfg: MappingConfig, pa: int) -> str:
    la = phys_to_logical(cfg, pa)
    return (f"pa=0x{pa:x} channel={la.channel} dimm={la.dimm} rank={la.rank} "
            f"bank={la.bank} (bg={la.bank >> 2} ba={la.bank & 3}) row=0x{la.row:05x} "
            f"col=0x{la.col:03x} offset={la.offset}")
