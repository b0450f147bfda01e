import pytest

from hammersim.controller import ControllerConfig
from hammersim.injector import (STEPS, Bit14Set, InjectorState, ProtocolScript, Scenario,
                                ScriptOrderError, gate_alert, intercept, run_protocol)
from hammersim.protocol import REF, Command, Op, decode, encode


@pytest.fixture(scope="module")
def report(request):
    from hammersim.profiles import load_profile
    return run_protocol(ProtocolScript(), Scenario(load_profile("vendor1"), aggressors=(0x11411,)))


def test_switch_passes_through_when_released():
    s = InjectorState()
    w = encode(REF)
    assert intercept(w, s) == w
    s.press()
    assert decode(intercept(w, s)).op is Op.MRS
    s.release()
    assert intercept(w, s) == w


def test_alert_gating():
    s = InjectorState()
    assert gate_alert(True, s) is True
    s.suppress_alerts()
    assert gate_alert(True, s) is False and s.gated_alerts == 1
    assert gate_alert(False, s) is False
    s.connect_alerts()
    assert gate_alert(True, s) is True and s.forwarded_alerts == 2


def test_tap_hits_one_command():
    s = InjectorState()
    s.tap()
    assert not s.held_for(Command.act(0, 1))
    assert s.held_for(REF)
    assert not s.held_for(REF)


def test_script_order_enforced():
    steps = list(STEPS)
    steps[3], steps[2] = steps[2], steps[3]
    with pytest.raises(ScriptOrderError):
        ProtocolScript(steps=steps)
    with pytest.raises(ScriptOrderError):
        ProtocolScript(steps=STEPS[:-1])


def test_bit14_rejected(vendor1):
    with pytest.raises(Bit14Set):
        run_protocol(ProtocolScript(), Scenario(vendor1, aggressors=(0x14000,)))
    with pytest.raises(Bit14Set):
        Scenario(vendor1, aggressors=(0x11411,), dummy_row=0x4000).validate()


def test_default_dummy_is_far_and_low(vendor1):
    s = Scenario(vendor1, aggressors=(0x11411,))
    d = s.dummy()
    assert not d & (1 << 14) and abs(d - 0x11411) > 1000


def test_refresh_suppressed_during_hold(report):
    assert report.device_refs_in_hold == 0
    assert report.controller_refs_in_hold >= 3
    assert report.aggressor_acts_in_hold > 0


def test_no_alert_reaches_controller(report):
    assert report.controller_alerts_steps_2_to_6 == 0
    assert report.gated_alerts > 0


def test_tap_recalibrates(report):
    assert report.recalibrations_after_tap >= 1
    assert report.registers_restored


def victims(rep):
    """Rows with hammer-scale flips; retention alone leaves at most two per row."""
    return {k for k, n in rep.flips.per_row().items() if n > 2}


def test_flips_in_victims(report):
    assert victims(report) == {(0, 0x11410), (0, 0x11412)}
    assert "row 0x11410" in report.summary()


def test_no_hold_no_flips(vendor1):
    rep = run_protocol(ProtocolScript(hold=0, hold_equivalent=0),
                       Scenario(vendor1, aggressors=(0x11411,)))
    assert rep.flips.rows == {}


def test_scrambled_run_reports_same_rows(vendor1):
    rep = run_protocol(ProtocolScript(), Scenario(vendor1, aggressors=(0x11411,),
                                                  controller=ControllerConfig(scrambling=True)))
    assert victims(rep) == {(0, 0x11410), (0, 0x11412)}
