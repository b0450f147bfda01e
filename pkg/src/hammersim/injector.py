"""Bus interposer that can hold A14 low and gate ALERT_n, plus the scripted injection run.

Holding A14 low turns every REF into an MRS, so the device stops
refreshing while the controller believes it is still refreshing.  The
eight steps of :class:`ProtocolScript` are: boot, suppress alerts, start
hammering, hold A14, stop hammering, reconnect alerts, tap A14 to provoke a
recalibration, inspect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .protocol import Command, Op, SignalWord, apply_a14_fault
from .timing import PS_PER_S, PS_PER_US, TimingParams

STEPS = ("boot", "suppress_alert", "start_hammer", "hold_a14", "stop_hammer",
         "connect_alert", "tap_a14", "inspect")

ROW_BIT14 = 1 << 14


class InjectionError(Exception):
    pass


class ScriptOrderError(InjectionError):
    pass


class Bit14Set(InjectionError, ValueError):
    """A row with address bit 14 set cannot be activated while A14 is held low."""


@dataclass
class InjectorState:
    a14_held_low: bool = False
    alert_suppressed: bool = False
    tap_target: Optional[Op] = None  # next command of this op gets A14 low once
    log: list = field(default_factory=list)
    gated_alerts: int = 0
    forwarded_alerts: int = 0

    def press(self, t: int = 0) -> None:
        self.a14_held_low = True
        self.log.append((t, "a14 held low"))

    def release(self, t: int = 0) -> None:
        self.a14_held_low = False
        self.log.append((t, "a14 released"))

    def suppress_alerts(self, t: int = 0) -> None:
        self.alert_suppressed = True
        self.log.append((t, "alert suppressed"))

    def connect_alerts(self, t: int = 0) -> None:
        self.alert_suppressed = False
        self.log.append((t, "alert connected"))

    def tap(self, t: int = 0, target: Op = Op.REF) -> None:
        self.tap_target = target
        self.log.append((t, f"tap armed for next {target.value}"))

    def held_for(self, cmd: Command, t: int = 0) -> bool:
        """Whether A14 is low while ``cmd`` is on the bus (consumes a pending tap)."""
        if self.a14_held_low:
            return True
        if self.tap_target is not None and cmd.op is self.tap_target:
            self.tap_target = None
            self.log.append((t, f"tap hit {cmd}"))
            return True
        return False

    def gate_alert(self, device_alert: bool, t: int = 0) -> bool:
        return gate_alert(device_alert, self, t)


def intercept(w: SignalWord, s: InjectorState) -> SignalWord:
    return apply_a14_fault(w, s.a14_held_low)


def gate_alert(device_alert: bool, s: InjectorState, t: int = 0) -> bool:
    """Forward the device's alert to the controller unless the switch blocks it."""
    if not device_alert:
        return False
    if s.alert_suppressed:
        s.gated_alerts += 1
        return False
    s.forwarded_alerts += 1
    s.log.append((t, "alert forwarded"))
    return True


@dataclass(frozen=True)
class ProtocolScript:
    """Step order and timing.  ``hold`` is simulated time; ``hold_equivalent``
    is the refresh-free time it stands for (via the device time scale)."""

    steps: Sequence[str] = STEPS
    hold: int = 4 * 7_812_500
    hold_equivalent: int = 15 * PS_PER_S
    lead: int = PS_PER_US

    def __post_init__(self):
        if tuple(self.steps) != STEPS:
            raise ScriptOrderError(f"steps must run in order {', '.join(STEPS)}; "
                                   f"got {', '.join(self.steps)}")
        if self.hold < 0 or self.lead <= 0:
            raise ValueError("hold must be >= 0 and lead > 0")

    @property
    def time_scale(self) -> float:
        return self.hold_equivalent / self.hold if self.hold else 1.0


@dataclass
class Scenario:
    """What to hammer and how to seed.  One aggressor means single-sided
    hammering against ``dummy_row``; two aggressors hammer double-sided."""

    profile: object  # DeviceProfile
    aggressors: tuple = (0x11411,)
    bank: int = 0
    dummy_row: Optional[int] = None
    sequence: str = "store-clflushopt"
    arch: str = "skylake"
    victim_pattern: int = (1 << 64) - 1
    aggressor_pattern: Optional[int] = None
    inspect_rows: Optional[Sequence[int]] = None
    seed: int = 0
    controller: object = None  # ControllerConfig
    params: TimingParams = TimingParams()

    def hammer_rows(self) -> tuple:
        if len(self.aggressors) == 2:
            return tuple(self.aggressors)
        if len(self.aggressors) != 1:
            raise ValueError("scenario needs one or two aggressor rows")
        return (self.aggressors[0], self.dummy())

    def dummy(self) -> int:
        if self.dummy_row is not None:
            return self.dummy_row
        a = self.aggressors[0]
        rows = self.profile.rows_per_bank
        half = rows // 2
        d = (a + half) % rows
        return d & ~ROW_BIT14

    def validate(self) -> None:
        for r in self.hammer_rows():
            if r & ROW_BIT14:
                raise Bit14Set(f"row 0x{r:05x} has bit 14 set; A14 is held low while hammering")
            if not 0 <= r < self.profile.rows_per_bank:
                raise IndexError(f"row 0x{r:x} outside the bank")
        a, b = self.hammer_rows()
        if a == b:
            raise ValueError("hammer rows must differ")

    def rows_to_inspect(self) -> list:
        hammered = set(self.hammer_rows())
        if self.inspect_rows is not None:
            rows = self.inspect_rows
        else:
            a = self.aggressors[0]
            rows = range(max(0, a - 16), min(self.profile.rows_per_bank, a + 17))
        return [r for r in rows if r not in hammered]


@dataclass
class InjectionReport:
    flips: object  # FlipReport
    step_times: dict
    device_refs_in_hold: int
    controller_refs_in_hold: int
    controller_alerts_steps_2_to_6: int
    gated_alerts: int
    recalibrations_after_tap: int
    registers_restored: bool
    aggressor_acts_in_hold: int
    system: object = None

    def summary(self) -> str:
        lines = [
            f"device REFs during hold      {self.device_refs_in_hold}",
            f"controller REFs during hold  {self.controller_refs_in_hold}",
            f"controller alerts, steps 2-6 {self.controller_alerts_steps_2_to_6}",
            f"alerts gated by switch       {self.gated_alerts}",
            f"recalibrations after tap     {self.recalibrations_after_tap}",
            f"mode registers restored      {self.registers_restored}",
            f"aggressor ACTs during hold   {self.aggressor_acts_in_hold}",
            f"rows with flips              {len(self.flips.rows)}",
        ]
        for (bank, row), rf in sorted(self.flips.rows.items()):
            lines.append(f"  bank {bank} row 0x{row:05x}: {rf.total} flips ({100 * rf.density:.2f}%)")
        return "\n".join(lines)


def seed_bank(system, scenario: Scenario):
    """Write the data patterns.

    Returns ``(expected, aggressor_word)`` where ``expected(row)`` gives the
    stored contents each row should still hold.
    """
    from .device import ALL_ONES

    ctrl, dev, bank = system.controller, system.device, scenario.bank
    victim = scenario.victim_pattern & ALL_ONES
    aggr = (~victim & ALL_ONES) if scenario.aggressor_pattern is None else scenario.aggressor_pattern
    hammered = set(scenario.hammer_rows())
    if not ctrl.config.scrambling:
        dev.fill_bank(bank, victim)
    else:
        for r in scenario.rows_to_inspect():
            dev.write_row(bank, r, ctrl.stored_row(bank, r, victim))
    for r in hammered:
        dev.write_row(bank, r, ctrl.stored_row(bank, r, aggr))

    def expected(row: int):
        return ctrl.stored_row(bank, row, aggr if row in hammered else victim)
    return expected, aggr


def run_protocol(script: ProtocolScript, scenario: Scenario) -> InjectionReport:
    from .controller import ControllerConfig
    from .cpu import generate_stream, profile_for
    from .testbed import System

    scenario.validate()
    sys_ = System(scenario.profile, seed=scenario.seed,
                  controller=scenario.controller or ControllerConfig(),
                  params=scenario.params, banks=[scenario.bank])
    inj, dev, ctrl = sys_.injector, sys_.device, sys_.controller
    expected, aggr_word = seed_bank(sys_, scenario)

    lead = script.lead
    t = {"boot": 0, "suppress_alert": lead, "start_hammer": 2 * lead, "hold_a14": 3 * lead}
    t["stop_hammer"] = t["hold_a14"] + script.hold
    t["connect_alert"] = t["stop_hammer"] + lead
    t["tap_a14"] = t["connect_alert"] + lead

    # 1. boot with parity checking on and ECC off
    sys_.boot(t["boot"])
    # 2-7 are scheduled against the bus clock
    sys_.at(t["suppress_alert"], inj.suppress_alerts)
    sys_.at(t["hold_a14"], lambda tt: (inj.press(tt), dev.set_time_scale(script.time_scale, tt)))
    sys_.at(t["stop_hammer"], lambda tt: (inj.release(tt), dev.set_time_scale(1.0, tt)))
    sys_.at(t["connect_alert"], inj.connect_alerts)
    sys_.at(t["tap_a14"], inj.tap)

    a, b = scenario.hammer_rows()
    addrs = (sys_.address(scenario.bank, a), sys_.address(scenario.bank, b))
    prof = profile_for(scenario.sequence, scenario.arch)
    stream = generate_stream(prof, addrs, t["stop_hammer"] - t["start_hammer"],
                             seed=scenario.seed, start=t["start_hammer"],
                             data_pair=(aggr_word, aggr_word))
    sys_.run(stream)
    # Let the tap land on the next REF and the recalibration finish.
    end = ctrl.schedule.next_start(t["tap_a14"]) + scenario.params.t_rfc
    sys_.idle(max(end, t["tap_a14"]))
    if inj.tap_target is not None:
        raise InjectionError("tap did not reach the bus")
    t["inspect"] = sys_.device.last_t
    # 8. inspect
    dev.resolve_flips()
    report = dev.inspect(scenario.bank, scenario.rows_to_inspect(), expected)

    h0, h1 = t["hold_a14"], t["stop_hammer"]
    ctrl_trace = sys_.controller_trace
    alerts = [x for x in sys_.controller_alerts if t["suppress_alert"] <= x < t["connect_alert"]]
    recals = [e for e in ctrl.recalibrations if e.t >= t["tap_a14"]]
    acts = sum(1 for r in sys_.device_trace.between(h0, h1)
               if r.cmd.op is Op.ACT and r.cmd.row == a)
    return InjectionReport(
        flips=report, step_times=t,
        device_refs_in_hold=sys_.device_trace.count(Op.REF, h0, h1),
        controller_refs_in_hold=ctrl_trace.count(Op.REF, h0, h1),
        controller_alerts_steps_2_to_6=len(alerts),
        gated_alerts=inj.gated_alerts,
        recalibrations_after_tap=len(recals),
        registers_restored=tuple(dev.mr) == dev.boot_snapshot,
        aggressor_acts_in_hold=acts,
        system=sys_)
