import io
import json
import math
import socket
import time

import pytest

from seajoint.config import leg_stack_config, hyperbaric_stack_config
from seajoint.joint import ControlMode
from seajoint.kinematics import fk, JointAngles
from seajoint.leakwatch import LeakState
from seajoint.servobus import BusMaster
from seajoint.service import (
    Controller,
    OperateService,
    SeaJointSystem,
    run_scenario,
)
from seajoint.sim import SimWorld
from seajoint.sim.scenario import (
    FaultAction,
    LeakFault,
    Policy,
    ScheduledAction,
    SimScenario,
    StuckFault,
    field_multizone_scenario,
)
from seajoint.telemetry import (
    Ack,
    Command,
    CommandKind,
    Hub,
    Topic,
    WireDecoder,
    encode_wire_record,
    read_log,
)


def make_stack(config=None):
    config = config or leg_stack_config()
    world = SimWorld(config.sim_config())
    hub = Hub()
    bus = BusMaster(world.bus, timeout=config.bus.timeout_s)
    system = SeaJointSystem(config, bus, hub, clock=lambda: world.now, world=world)
    controller = Controller(system)
    return config, world, system, controller


def step_n(world, controller, n, dt=0.02):
    for _ in range(n):
        world.step()
        controller.tick(world.now, dt)


class TestEstop:
    def test_estop_during_gait_stops_everything_within_a_tick(self):
        config, world, system, controller = make_stack()
        sub = system.hub.subscribe(topics=[Topic.EVENT])
        controller.dispatcher.submit(Command(CommandKind.GAIT_START, {}, "g"))
        step_n(world, controller, 10)
        assert system.gait is not None
        assert all(rt.torque_enabled for rt in system.joints.values())

        ack = controller.dispatcher.submit(Command(CommandKind.ESTOP, id="e1"))
        assert ack == Ack(id="e1", ok=True)
        # before any further tick: gait gone, every register already zero
        assert system.gait is None
        for cfg in config.joints:
            assert system.bus.read_register(cfg.device_id, "TORQUE_ENABLE") == 0
        events = [e.body["event"] for e in sub.pop_all()]
        assert "estop" in events

    def test_goal_after_estop_nacked(self):
        _, world, system, controller = make_stack()
        controller.dispatcher.submit(Command(CommandKind.ESTOP, id="e"))
        controller.dispatcher.submit(
            Command(CommandKind.GOAL, {"joint": "coxa", "value": 0.5}, "g")
        )
        (ack,) = controller.dispatcher.pump()
        assert not ack.ok
        assert ack.reason == "TORQUE_DISABLED"


class TestCommandSurface:
    def test_unknown_joint(self):
        _, _, system, controller = make_stack()
        controller.dispatcher.submit(
            Command(CommandKind.GOAL, {"joint": "zz", "value": 0.1}, "x")
        )
        (ack,) = controller.dispatcher.pump()
        assert ack.reason == "UNKNOWN_JOINT"

    def test_mode_guard_round_trip(self):
        _, world, system, controller = make_stack()
        controller.dispatcher.submit(
            Command(CommandKind.SET_MODE, {"joint": "coxa", "mode": "velocity"}, "m1")
        )
        controller.dispatcher.submit(
            Command(CommandKind.TORQUE, {"joint": "coxa", "enabled": True}, "t1")
        )
        controller.dispatcher.submit(
            Command(CommandKind.SET_MODE, {"joint": "coxa", "mode": "position"}, "m2")
        )
        acks = {a.id: a for a in controller.dispatcher.pump()}
        assert acks["m1"].ok and acks["t1"].ok
        assert not acks["m2"].ok
        assert acks["m2"].reason == "TORQUE_ENABLED"

    def test_goal_clamp_reported(self):
        _, world, system, controller = make_stack()
        system.set_torque("coxa", True)
        result = system.goal("coxa", 99.0)
        assert result["clamped"]
        assert result["applied"] == pytest.approx(math.pi)

    def test_fault_inject_on_sim_backend(self):
        _, world, system, controller = make_stack()
        controller.dispatcher.submit(
            Command(
                CommandKind.FAULT_INJECT,
                {"kind": "leak", "zone": "control", "severity": 2.0},
                "f",
            )
        )
        (ack,) = controller.dispatcher.pump()
        assert ack.ok
        assert world.zones["control"].leaking

    def test_reset_alarm_unknown_zone(self):
        _, _, system, controller = make_stack()
        controller.dispatcher.submit(Command(CommandKind.RESET_ALARM, {"zone": "xx"}, "r"))
        (ack,) = controller.dispatcher.pump()
        assert ack.reason == "UNKNOWN_ZONE"

    def test_gait_unreachable_nacked(self):
        _, _, system, controller = make_stack()
        controller.dispatcher.submit(
            Command(CommandKind.GAIT_START, {"z0_m": -0.45}, "g")
        )
        (ack,) = controller.dispatcher.pump()
        assert ack.reason == "UNREACHABLE"


class TestGaitTracking:
    def test_joints_track_the_commanded_path(self):
        config, world, system, controller = make_stack()
        controller.dispatcher.submit(Command(CommandKind.GAIT_START, {}, "g"))
        # settle one full period, then compare tracked foot height in stance
        period = config.leg.gait.period
        step_n(world, controller, int(period / 0.02))
        zs = []
        for _ in range(int(period / 0.02)):
            world.step()
            controller.tick(world.now, 0.02)
            phase = ((world.now - system.gait.t0) % period) / period
            if 0.1 < phase < config.leg.gait.duty - 0.1:
                q = JointAngles(
                    *(system.joints[j].last_state.position for j in config.leg.joints)
                )
                zs.append(fk(config.leg.geometry, q).z)
        assert zs, "no stance samples collected"
        for z in zs:
            assert z == pytest.approx(config.leg.gait.z0, abs=0.01)


class TestScenarioRunner:
    def test_leak_with_abort_on_alarm(self):
        config = leg_stack_config()
        scenario = SimScenario(
            name="leak_abort",
            duration_s=400.0,
            schedule=[
                ScheduledAction(60.0, FaultAction(LeakFault("control", severity=3.0)))
            ],
            policy=Policy(abort_on_alarm=True),
        )
        log = io.StringIO()
        result = run_scenario(config, scenario, log)
        assert result.reason == "alarm"
        assert result.exit_code == 2
        assert result.alarmed_zones == ["control"]
        assert result.duration < 400.0

    def test_fault_abort_on_stuck_overcurrent(self):
        config = leg_stack_config()
        scenario = SimScenario(
            name="stuck",
            duration_s=60.0,
            schedule=[
                ScheduledAction(0.0, FaultAction(StuckFault("coxa"))),
            ],
            policy=Policy(abort_on_fault=True),
        )
        # give the joint something to push against
        scenario.schedule.insert(
            0,
            ScheduledAction(
                0.0,
                # mode defaults to POSITION; enable torque then goal
                FaultAction(StuckFault("coxa")),
            ),
        )
        from seajoint.sim.scenario import GoalAction, TorqueAction

        scenario = SimScenario(
            name="stuck",
            duration_s=60.0,
            schedule=[
                ScheduledAction(0.0, TorqueAction("coxa", True)),
                ScheduledAction(0.0, FaultAction(StuckFault("coxa"))),
                ScheduledAction(0.1, GoalAction("coxa", 1.5)),
            ],
            policy=Policy(abort_on_fault=True),
        )
        log = io.StringIO()
        result = run_scenario(config, scenario, log)
        assert result.reason == "fault"
        assert result.exit_code == 3

    def test_log_and_trace_written(self, tmp_path):
        config = leg_stack_config()
        scenario = field_multizone_scenario(duration_s=120.0)
        log = io.StringIO()
        trace = io.StringIO()
        result = run_scenario(config, scenario, log, trace)
        assert result.reason == "completed"
        log.seek(0)
        header, envelopes = read_log(log)
        topics = {e.topic for e in envelopes}
        assert {Topic.ENV, Topic.LEAK_STATUS, Topic.JOINT_STATES, Topic.POWER} <= topics
        trace_text = trace.getvalue()
        assert "# onset control 207" in trace_text
        assert trace_text.count("\n") > 100


class TestOperateService:
    def wait_for(self, predicate, timeout=5.0):
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if predicate():
                return True
            time.sleep(0.01)
        return False

    def test_tcp_estop_round_trip(self):
        config = leg_stack_config()
        service = OperateService(
            config, tcp_listen="127.0.0.1:0", ws_listen="127.0.0.1:0"
        )
        import threading

        thread = threading.Thread(target=service.run, daemon=True)
        thread.start()
        try:
            assert self.wait_for(lambda: service.tcp.port != 0)
            sock = socket.create_connection(("127.0.0.1", service.tcp.port), timeout=2)
            sock.settimeout(2.0)
            # enable torque so the estop has something to cut
            sock.sendall(
                encode_wire_record(
                    {"kind": "TORQUE", "args": {"joint": "coxa", "enabled": True}, "id": "t"}
                )
            )
            sock.sendall(encode_wire_record({"kind": "ESTOP", "args": {}, "id": "e9"}))
            decoder = WireDecoder()
            acks, envelopes = {}, []
            deadline = time.monotonic() + 5.0
            while time.monotonic() < deadline and not ("e9" in acks and envelopes):
                try:
                    data = sock.recv(65536)
                except socket.timeout:
                    continue
                if not data:
                    break
                for record in decoder.feed(data):
                    if "ack" in record:
                        acks[record["ack"]["id"]] = record["ack"]
                    elif record.get("topic"):
                        envelopes.append(record)
            assert acks["e9"]["ok"] is True
            assert self.wait_for(
                lambda: not service.system.joints["coxa"].torque_enabled
            )
            assert any(e.get("topic") for e in envelopes)  # telemetry flowed
            sock.close()
        finally:
            service.request_stop()
            thread.join(timeout=5)

    def test_shutdown_final_record_is_torque_off(self):
        config = leg_stack_config()
        log = io.StringIO()
        service = OperateService(
            config, log_fp=log, tcp_listen="127.0.0.1:0", ws_listen="127.0.0.1:0"
        )
        import threading

        thread = threading.Thread(target=service.run, daemon=True)
        thread.start()
        assert self.wait_for(lambda: service.world.now > 0.2)
        service.request_stop()
        thread.join(timeout=5)
        lines = [l for l in log.getvalue().splitlines() if l.strip()]
        last = json.loads(lines[-1])
        assert last["topic"] == "EVENT"
        assert last["body"]["event"] == "torque_off"

    def test_port_already_bound_raises(self):
        blocker = socket.socket()
        blocker.bind(("127.0.0.1", 0))
        port = blocker.getsockname()[1]
        config = leg_stack_config()
        with pytest.raises(OSError):
            OperateService(
                config,
                tcp_listen=f"127.0.0.1:{port}",
                ws_listen="127.0.0.1:0",
            )
        blocker.close()

    def test_websocket_gateway_speaks_json_frames(self):
        from websockets.sync.client import connect

        config = leg_stack_config()
        service = OperateService(
            config, tcp_listen="127.0.0.1:0", ws_listen="127.0.0.1:0"
        )
        import threading

        thread = threading.Thread(target=service.run, daemon=True)
        thread.start()
        try:
            assert self.wait_for(lambda: service.ws.port != 0)
            with connect(f"ws://127.0.0.1:{service.ws.port}") as conn:
                conn.send(json.dumps({"kind": "ESTOP", "args": {}, "id": "w1"}))
                got_ack = False
                deadline = time.monotonic() + 5.0
                while time.monotonic() < deadline and not got_ack:
                    record = json.loads(conn.recv(timeout=2))
                    if "ack" in record and record["ack"]["id"] == "w1":
                        got_ack = True
                        assert record["ack"]["ok"] is True
                assert got_ack
        finally:
            service.request_stop()
            thread.join(timeout=5)
