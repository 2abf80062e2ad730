import math

import pytest
from hypothesis import given, settings, strategies as st

from seajoint.joint import (
    ControlMode,
    FaultLatchedError,
    JointFault,
    JointRuntime,
    ModeMismatchError,
    OvercurrentConfig,
    OvercurrentSupervisor,
    POSITION_TICK,
    RegisterRangeError,
    TorqueDisabledError,
    TorqueEnabledError,
    Transmission,
    current_to_ticks,
    position_to_ticks,
    ticks_to_position,
    velocity_to_ticks,
)
from seajoint.servobus import BusMaster
from seajoint.sim.devices import SimServo, VirtualBus

from .conftest import make_joint_config
from .oracles import overcurrent_verdicts


class TestTransmission:
    def test_identity(self):
        tm = Transmission()
        assert tm.joint_to_actuator(1.0) == 1.0
        assert tm.actuator_to_joint(1.0) == 1.0

    def test_geared_reversed_offset(self):
        # ratio 2, direction -1, offset pi/2 at q=0 -> -pi
        tm = Transmission(ratio=2.0, direction=-1, offset=math.pi / 2)
        assert tm.joint_to_actuator(0.0) == pytest.approx(-math.pi, abs=1e-15)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            Transmission(ratio=0.0)
        with pytest.raises(ValueError):
            Transmission(direction=2)

    @given(
        ratio=st.floats(1e-3, 1e3),
        direction=st.sampled_from([1, -1]),
        offset=st.floats(-10, 10),
        q=st.floats(-10, 10),
    )
    @settings(max_examples=500)
    def test_exact_inverse(self, ratio, direction, offset, q):
        tm = Transmission(ratio=ratio, direction=direction, offset=offset)
        assert tm.actuator_to_joint(tm.joint_to_actuator(q)) == pytest.approx(
            q, abs=1e-12
        )


class TestScaling:
    def test_zero_and_half_turn(self):
        assert position_to_ticks(0.0) == 0
        assert position_to_ticks(math.pi) == 2048

    def test_velocity_and_current_lsb(self):
        assert velocity_to_ticks(0.025) == 1
        assert current_to_ticks(250.0) == 250

    @given(st.floats(-100, 100))
    def test_quantization_bound(self, theta):
        back = ticks_to_position(position_to_ticks(theta))
        assert abs(back - theta) <= math.pi / 4096

    def test_register_overflow(self):
        with pytest.raises(RegisterRangeError):
            position_to_ticks(1e9)
        with pytest.raises(RegisterRangeError):
            current_to_ticks(40000.0)


def make_runtime(config=None):
    bus = VirtualBus()
    bus.attach(SimServo(1))
    master = BusMaster(bus, timeout=0.005)
    runtime = JointRuntime(master, config or make_joint_config())
    return bus, master, runtime


class TestModeGuard:
    def test_mode_change_with_torque_off(self):
        _, master, rt = make_runtime()
        rt.set_mode(ControlMode.VELOCITY)
        assert master.read_register(1, "OPERATING_MODE") == int(ControlMode.VELOCITY)

    def test_mode_change_with_torque_on_rejected(self):
        _, _, rt = make_runtime()
        rt.enable_torque()
        with pytest.raises(TorqueEnabledError):
            rt.set_mode(ControlMode.CURRENT)


class TestCommand:
    def test_goal_register_composition(self):
        config = make_joint_config(ratio=2.0, direction=-1, offset=0.1)
        _, master, rt = make_runtime(config)
        rt.enable_torque()
        q = 0.5
        result = rt.command(q, ControlMode.POSITION)
        expected = position_to_ticks(config.transmission.joint_to_actuator(q))
        assert result.ticks == expected
        assert master.read_register(1, "GOAL_POSITION") == expected
        assert not result.clamped

    def test_clamp_and_flag(self):
        _, master, rt = make_runtime()
        rt.enable_torque()
        result = rt.command(10.0, ControlMode.POSITION)
        assert result.clamped
        assert result.applied == pytest.approx(math.pi)
        assert master.read_register(1, "GOAL_POSITION") == position_to_ticks(math.pi)

    def test_mode_mismatch(self):
        _, _, rt = make_runtime()
        rt.enable_torque()
        with pytest.raises(ModeMismatchError):
            rt.command(1.0, ControlMode.VELOCITY)

    def test_torque_off_rejected(self):
        _, _, rt = make_runtime()
        with pytest.raises(TorqueDisabledError):
            rt.command(1.0, ControlMode.POSITION)

    @given(st.floats(-50, 50))
    @settings(max_examples=200)
    def test_goal_register_never_exceeds_limits(self, q):
        config = make_joint_config()
        bus = VirtualBus()
        bus.attach(SimServo(1))
        master = BusMaster(bus, timeout=0.005)
        rt = JointRuntime(master, config)
        rt.enable_torque()
        rt.command(q, ControlMode.POSITION)
        ticks = master.read_register(1, "GOAL_POSITION")
        low = position_to_ticks(config.limits.position_min)
        high = position_to_ticks(config.limits.position_max)
        assert low <= ticks <= high

    def test_readback_converges_within_one_lsb(self):
        _, _, rt = make_runtime()
        rt.enable_torque()
        rt.command(0.8, ControlMode.POSITION)
        bus = rt.bus.transport
        for _ in range(200):
            bus.devices[1].step(0.02)
        state = rt.read_state()
        assert abs(state.position - 0.8) <= POSITION_TICK


class TestOvercurrentSupervisor:
    CFG = OvercurrentConfig(threshold_ma=1000.0, sustain_s=1.0, cooldown_s=5.0)

    def run_history(self, efforts, dt=0.1):
        sup = OvercurrentSupervisor(self.CFG)
        times = [i * dt for i in range(len(efforts))]
        return [sup.update(e, t) for e, t in zip(efforts, times)], times

    def test_trips_exactly_at_sustain_boundary(self):
        dt = 0.1
        n_sustain = int(self.CFG.sustain_s / dt)
        efforts = [1200.0] * (n_sustain + 5)
        verdicts, times = self.run_history(efforts, dt)
        expected = overcurrent_verdicts(
            efforts, times, self.CFG.threshold_ma, self.CFG.sustain_s
        )
        assert verdicts == expected
        assert verdicts.index(True) == n_sustain  # first tick past the sustain window

    def test_exactly_at_threshold_never_trips(self):
        verdicts, _ = self.run_history([1000.0] * 200)
        assert not any(verdicts)

    def test_short_excursion_resets_timer(self):
        dt = 0.1
        n = int(self.CFG.sustain_s / dt)
        efforts = [1200.0] * (n - 1) + [0.0] + [1200.0] * (n - 1) + [0.0]
        verdicts, times = self.run_history(efforts, dt)
        assert not any(verdicts)
        assert verdicts == overcurrent_verdicts(
            efforts, times, self.CFG.threshold_ma, self.CFG.sustain_s
        )

    @given(
        st.lists(
            st.floats(0, 2000).map(lambda x: round(x, 3)), min_size=1, max_size=120
        )
    )
    @settings(max_examples=200)
    def test_matches_discrete_oracle_until_first_trip(self, efforts):
        dt = 0.1
        verdicts, times = self.run_history(efforts, dt)
        expected = overcurrent_verdicts(
            efforts, times, self.CFG.threshold_ma, self.CFG.sustain_s
        )
        if True in expected:
            first = expected.index(True)
            assert verdicts[: first + 1] == expected[: first + 1]
        else:
            assert not any(verdicts)

    def test_same_history_same_verdicts(self):
        efforts = [1500.0, 0.0, 1500.0, 1500.0] * 20
        first, _ = self.run_history(efforts)
        second, _ = self.run_history(efforts)
        assert first == second


class TestRuntimeShutdown:
    def test_overcurrent_disables_torque_and_latches(self):
        config = make_joint_config(threshold_ma=500.0, sustain_s=0.2, cooldown_s=1.0)
        bus, master, rt = make_runtime(config)
        rt.enable_torque()
        bus.devices[1].overload_ma = 900.0

        now, dt = 0.0, 0.02
        fired_at = None
        for _ in range(100):
            now += dt
            bus.devices[1].step(dt)
            if rt.tick(now) is JointFault.OVERCURRENT_SHUTDOWN:
                fired_at = now
                break
        assert fired_at is not None
        assert not rt.torque_enabled
        assert master.read_register(1, "TORQUE_ENABLE") == 0
        assert rt.fault is JointFault.OVERCURRENT_SHUTDOWN

        with pytest.raises(FaultLatchedError):
            rt.enable_torque()

        # cooldown elapses: fault clears, torque stays off, re-enable allowed
        while now < fired_at + config.overcurrent.cooldown_s + 0.1:
            now += dt
            bus.devices[1].step(dt)
            rt.tick(now)
        assert rt.fault is None
        assert not rt.torque_enabled
        bus.devices[1].overload_ma = 0.0
        rt.enable_torque()
        assert rt.torque_enabled
