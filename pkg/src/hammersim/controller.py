"""Open-page memory controller: requests in, timed DDR4 commands out."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .addrmap import AddressSpace, MappingConfig, phys_to_logical, row_address
from .cpu import MemoryRequest, RequestKind
from .device import BOOT_MODE_REGISTERS
from .protocol import NUM_COLUMNS, PREA, REF, Command
from .timing import (MAX_REFRESH_MULTIPLIER, BankTiming, RefreshSchedule, TimingParams,
                     admit_act)

MASK64 = (1 << 64) - 1
RECAL_REGISTERS = range(7)  # MR0..MR6; MR7 is reserved


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@dataclass(frozen=True)
class ControllerConfig:
    scrambling: bool = False
    scramble_seed: int = 0x5C4A
    parity_enabled: bool = True
    refresh_multiplier: float = 1
    page_policy: str = "open"
    ecc: bool = False

    def __post_init__(self):
        if self.page_policy != "open":
            raise ValueError("only the open-page policy is modeled")
        if self.ecc:
            raise ValueError("ECC is not modeled; boot with ECC disabled")
        if not 1 <= self.refresh_multiplier <= MAX_REFRESH_MULTIPLIER:
            raise ValueError("refresh_multiplier must lie in [1, 3.5]")


@dataclass
class BankState:
    open_row: Optional[int] = None
    timing: BankTiming = field(default_factory=BankTiming)


@dataclass
class RecalibrationEvent:
    t: int
    commands: int


class MemoryController:
    """FCFS, open-page controller for one channel with a single rank."""

    def __init__(self, config: ControllerConfig = ControllerConfig(),
                 params: TimingParams = TimingParams(), mapping: MappingConfig = MappingConfig(),
                 space: AddressSpace = AddressSpace(), banks: int = 16):
        self.config = config
        self.params = params
        self.mapping = mapping
        self.space = space
        self.banks = [BankState() for _ in range(banks)]
        self.schedule = RefreshSchedule(params, config.refresh_multiplier)
        self.next_ref_index = 0
        self.bus_time = 0
        self.recalibrations: list[RecalibrationEvent] = []
        self.refs_issued = 0

    # -- data path -----------------------------------------------------------
    def keystream(self, pa: int) -> int:
        return splitmix64(self.config.scramble_seed ^ (pa >> 3))

    def scramble(self, word: int, pa: int) -> int:
        if not self.config.scrambling:
            return word
        return word ^ self.keystream(pa)

    def stored_row(self, bank: int, row: int, word: int):
        """What the cells of ``row`` hold after writing ``word`` to every column."""
        if not self.config.scrambling:
            return word & MASK64
        pa0 = row_address(self.mapping, bank, row, 0)
        idx = (np.uint64(pa0 >> 3) + np.arange(NUM_COLUMNS, dtype=np.uint64))
        keys = splitmix64_array(idx ^ np.uint64(self.config.scramble_seed))
        return keys ^ np.uint64(word & MASK64)

    # -- command generation --------------------------------------------------
    def _refs_until(self, t: int, out: list) -> None:
        """Issue every REF that starts at or before ``t``."""
        starts = self.schedule.starts
        while True:
            while len(starts) <= self.next_ref_index:
                self.schedule.next_start(starts[-1] + 1 if starts else 0)
            tr = starts[self.next_ref_index]
            if tr > t:
                return
            self.next_ref_index += 1
            tr = max(tr, self.bus_time)
            if any(b.open_row is not None for b in self.banks):
                out.append((tr, PREA, None))
                for b in self.banks:
                    b.open_row = None
            out.append((tr, REF, None))
            self.refs_issued += 1
            self.bus_time = tr

    def drain(self, until: int) -> list:
        """REFs (with closing PREAs) due up to ``until`` when no request is pending."""
        out: list = []
        self._refs_until(until, out)
        return out

    def submit(self, req: MemoryRequest) -> list:
        """Commands, as (time, Command, data), that serve ``req``."""
        la = phys_to_logical(self.mapping, self.space.virt_to_phys(req.virtual_addr))
        out: list = []
        t = max(req.time, self.bus_time)
        self._refs_until(t, out)
        t = max(t, self.bus_time)
        bank = self.banks[la.bank]
        if bank.open_row != la.row:
            if bank.open_row is not None:
                out.append((t, Command.pre(la.bank), None))
                bank.open_row = None
            ta = admit_act(bank.timing, t, self.schedule, self.params.t_rc)
            self._refs_until(ta, out)
            ta = admit_act(bank.timing, max(ta, self.bus_time), self.schedule, self.params.t_rc)
            out.append((ta, Command.act(la.bank, la.row), None))
            bank.open_row = la.row
            bank.timing.last_act = ta
            t = ta
        pa = self.space.virt_to_phys(req.virtual_addr)
        if req.kind is RequestKind.WRITE:
            data = None if req.data is None else self.scramble(req.data, pa)
            out.append((t, Command.wr(la.bank, la.col), data))
        else:
            out.append((t, Command.rd(la.bank, la.col), None))
        self.bus_time = t
        return out

    def descramble_read(self, word: int, virtual_addr: int) -> int:
        return self.scramble(word, self.space.virt_to_phys(virtual_addr))

    # -- configuration and recovery -------------------------------------------
    def _mrs_sequence(self, t: int) -> list:
        out = []
        if any(b.open_row is not None for b in self.banks):
            out.append((t, PREA, None))
            for b in self.banks:
                b.open_row = None
        for reg in RECAL_REGISTERS:
            out.append((t, Command.mrs(reg, BOOT_MODE_REGISTERS[reg]), None))
        self.bus_time = max(self.bus_time, t)
        return out

    def boot(self, t: int = 0) -> list:
        return self._mrs_sequence(t)

    def on_alert(self, t: int) -> list:
        """Recalibrate: write every mode register back to its boot value."""
        cmds = self._mrs_sequence(max(t, self.bus_time))
        self.recalibrations.append(RecalibrationEvent(cmds[0][0], len(cmds)))
        return cmds
