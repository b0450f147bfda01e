"""A simulated machine: controller -> command bus (with injector) -> device.

Every controller command is encoded to a bus word, passed through the
injector, decoded by the device and captured on both sides of the
interposer.
"""

from __future__ import annotations

import heapq
import itertools
from collections import deque
from typing import Callable, Iterable, NamedTuple, Optional

from .addrmap import AddressSpace, MappingConfig, row_address
from .analyzer import InsufficientActs, LatencyCdf, Trace, act_latency_cdf, acts_per_trefi
from .controller import ControllerConfig, MemoryController
from .cpu import MemoryRequest, StreamStats, generate_stream, profile_for
from .device import DramDevice
from .injector import InjectorState
from .profiles import DeviceProfile
from .protocol import Command, Op, apply_a14_fault, encode
from .timing import TimingParams


class System:
    def __init__(self, profile: DeviceProfile, seed: int = 0,
                 controller: ControllerConfig = ControllerConfig(),
                 params: TimingParams = TimingParams(),
                 mapping: MappingConfig = MappingConfig(),
                 space: AddressSpace = AddressSpace(),
                 banks: Optional[Iterable[int]] = None,
                 outstanding_limit: Optional[int] = 10,
                 capture_controller: bool = True):
        self.profile = profile
        self.params = params
        self.mapping = mapping
        self.space = space
        self.device = DramDevice(profile, seed, banks)
        self.controller = MemoryController(controller, params, mapping, space, banks=profile.banks)
        self.injector = InjectorState()
        self.device_trace = Trace()
        self.controller_trace = Trace() if capture_controller else None
        self.controller_alerts: list[int] = []
        self.outstanding_limit = outstanding_limit
        self._actions: list = []
        self._seq = itertools.count()
        self._shift = 0
        self._grants: deque = deque()

    def address(self, bank: int, row: int, col: int = 0) -> int:
        """Virtual address of a column of ``row`` in ``bank``."""
        return self.space.phys_to_virt(row_address(self.mapping, bank, row, col))

    def at(self, t: int, action: Callable[[int], None]) -> None:
        """Run ``action(t)`` before the first bus command at or after ``t``."""
        heapq.heappush(self._actions, (t, next(self._seq), action))

    def _run_actions(self, t: int) -> None:
        acts = self._actions
        while acts and acts[0][0] <= t:
            ta, _, fn = heapq.heappop(acts)
            fn(ta)

    def deliver(self, t: int, cmd: Command, data: Optional[int] = None):
        self._run_actions(t)
        if self.controller_trace is not None:
            self.controller_trace.record(t, cmd)
        w = encode(cmd, self.profile.rows_per_bank)
        held = self.injector.held_for(cmd, t)
        resp = self.device.apply_signal(apply_a14_fault(w, held), t, data)
        self.device_trace.record(t, resp.cmd)
        if resp.alert and self.injector.gate_alert(True, t):
            self.controller_alerts.append(t)
            for c in self.controller.on_alert(t):
                self.deliver(*c)
        return resp

    def boot(self, t: int = 0) -> None:
        for c in self.controller.boot(t):
            self.deliver(*c)

    def submit(self, req: MemoryRequest) -> list:
        """Serve one request; the CPU stalls once too many requests are outstanding."""
        t = req.time + self._shift
        lim = self.outstanding_limit
        if lim and len(self._grants) >= lim:
            t = max(t, self._grants[-lim])
        self._shift = t - req.time
        cmds = self.controller.submit(req._replace(time=t))
        for c in cmds:
            self.deliver(*c)
        self._grants.append(cmds[-1][0])
        if lim and len(self._grants) > lim:
            self._grants.popleft()
        return cmds

    def run(self, requests: Iterable[MemoryRequest], until: Optional[int] = None) -> None:
        for req in requests:
            self.submit(req)
        if until is not None:
            self.idle(until)

    def idle(self, until: int) -> None:
        """Let time pass with no traffic: only refreshes (and scheduled actions)."""
        while True:
            nxt = self._actions[0][0] if self._actions else None
            stop = until if nxt is None or nxt > until else nxt
            for c in self.controller.drain(stop):
                self.deliver(*c)
            if nxt is None or nxt > until:
                break
            self._run_actions(nxt)


class Characterization(NamedTuple):
    acts: list  # ACTs per refresh window
    cdf: Optional[LatencyCdf]  # None when fewer than two ACTs reached the bank
    stats: StreamStats
    system: System


def characterize(sequence: str, arch: str = "skylake", windows: int = 100,
                 profile: Optional[DeviceProfile] = None, seed: int = 0, bank: int = 0,
                 rows: tuple = (1, 3), params: TimingParams = TimingParams(),
                 controller: ControllerConfig = ControllerConfig()) -> Characterization:
    """Hammer two rows with ``sequence`` for ``windows`` refresh intervals."""
    if profile is None:
        from .profiles import load_profile
        profile = load_profile("vendor1")
    sys_ = System(profile, seed=seed, controller=controller, params=params, banks=[bank],
                  capture_controller=False)
    interval = sys_.controller.schedule.interval
    # the first window starts at the first REF; stop hammering at the last one
    horizon = (windows + 1) * interval
    stats = StreamStats()
    prof = profile_for(sequence, arch)
    addrs = tuple(sys_.address(bank, r) for r in rows)
    sys_.run(generate_stream(prof, addrs, horizon, seed=seed, stats=stats), until=horizon)
    # The outstanding-request cap can push traffic past the horizon; keep
    # exactly ``windows`` windows.
    starts = [r.t for r in sys_.device_trace if r.cmd.op is Op.REF]
    if len(starts) <= windows:
        raise ValueError("run ended before the requested number of windows")
    records = sys_.device_trace.between(0, starts[windows] + 1)
    try:
        cdf = act_latency_cdf(records, bank)
    except InsufficientActs:
        cdf = None
    return Characterization(acts_per_trefi(records, bank), cdf, stats, sys_)
