"""Runtime orchestration: control tick, command backend, scenario runner,
and the topside network servers.

:class:`SeaJointSystem` binds joints, the leak fleet, and (on a sim
backend) the world into the dispatcher's command surface.
:class:`Controller` is the fixed-rate tick: pump commands, drive the
gait, refresh joints, account power, feed sensors to the detectors, and
publish due telemetry.  :func:`run_scenario` steps all of it on virtual
time, so scripted runs finish in milliseconds and are bit-reproducible.
"""

from __future__ import annotations

import math
import socket
import threading
from dataclasses import dataclass, field as dataclass_field
from typing import IO, Callable, Optional

from .config import StackConfig
from .joint import (
    ControlMode,
    FaultLatchedError,
    JointFault,
    JointRuntime,
    ModeMismatchError,
    POSITION_TICK,
    TorqueDisabledError,
    TorqueEnabledError,
)
from .kinematics import GaitParams, GaitUnreachableError, UnreachableError, gait_tick, validate_gait
from .leakwatch import Fleet, LeakState, UnknownZoneError, write_trace, TRACE_HEADER
from .servobus import BusError, BusMaster
from .sim.scenario import (
    CycleStartAction,
    CycleStopAction,
    FaultAction,
    GaitStartAction,
    GaitStopAction,
    GoalAction,
    LeakFault,
    ModeAction,
    PressureAction,
    SimScenario,
    TorqueAction,
    parse_fault,
)
from .sim.world import InvalidFault, SimWorld
from .telemetry import (
    Ack,
    Command,
    CommandKind,
    CommandRejected,
    Dispatcher,
    Hub,
    PowerMeter,
    RatePump,
    SubscriberOverflow,
    TelemetryEnvelope,
    TelemetryLogWriter,
    Topic,
    WireDecoder,
    depth_from_pressure,
    encode_wire_record,
)

LOG_SUBSCRIBER_BUFFER = 1 << 30  # the log must never be the slow consumer


@dataclass
class _GaitRun:
    params: GaitParams
    t0: float


class SeaJointSystem:
    """Command surface over a set of joints, the fleet, and optionally a
    simulated world (which enables fault injection)."""

    def __init__(
        self,
        config: StackConfig,
        bus: BusMaster,
        hub: Hub,
        clock: Callable[[], float],
        world: SimWorld | None = None,
    ):
        self.config = config
        self.bus = bus
        self.hub = hub
        self.clock = clock
        self.world = world
        self.sim_capable = world is not None
        self.joints: dict[str, JointRuntime] = {
            cfg.name: JointRuntime(bus, cfg) for cfg in config.joints
        }
        self.fleet = (
            Fleet([z.zone for z in config.zones], config.detector)
            if config.zones
            else None
        )
        self.power = PowerMeter()
        self.gait: Optional[_GaitRun] = None

    # -- ControlSystem interface ------------------------------------------

    def estop(self) -> None:
        """Torque off everywhere in one broadcast frame; gait stops."""
        self.gait = None
        self.bus.sync_write(
            "TORQUE_ENABLE", [(cfg.device_id, 0) for cfg in self.config.joints]
        )
        for rt in self.joints.values():
            rt.assume_torque_disabled()
        self._event({"event": "estop"})

    def set_mode(self, joint: str, mode: str) -> None:
        rt = self._joint(joint)
        try:
            target = ControlMode[mode.upper()]
        except KeyError:
            raise CommandRejected("BAD_ARGS", f"unknown mode {mode!r}")
        with self._map_errors():
            rt.set_mode(target)

    def set_torque(self, joint: str, enabled: bool) -> None:
        rt = self._joint(joint)
        with self._map_errors():
            if enabled:
                rt.enable_torque()
            else:
                rt.disable_torque()

    def goal(self, joint: str, value: float) -> dict:
        rt = self._joint(joint)
        with self._map_errors():
            result = rt.command(value, rt.mode)
        return {"applied": result.applied, "clamped": result.clamped}

    def gait_start(self, params: dict) -> None:
        leg = self.config.leg
        if leg is None:
            raise CommandRejected("NO_LEG", "no leg configured")
        gait = self._gait_params(leg.gait, params)
        try:
            validate_gait(leg.geometry, gait, leg.branch)
        except GaitUnreachableError as err:
            raise CommandRejected("UNREACHABLE", str(err))
        with self._map_errors():
            for name in leg.joints:
                rt = self._joint(name)
                if rt.mode is not ControlMode.POSITION:
                    if rt.torque_enabled:
                        rt.disable_torque()
                    rt.set_mode(ControlMode.POSITION)
                if not rt.torque_enabled:
                    rt.enable_torque()
        self.gait = _GaitRun(params=gait, t0=self.clock())
        self._event({"event": "gait_started"})

    def gait_stop(self) -> None:
        self.gait = None
        self._event({"event": "gait_stopped"})

    def reset_alarm(self, zone: str, relearn: bool = False) -> None:
        if self.fleet is None:
            raise CommandRejected("UNKNOWN_ZONE", "no zones configured")
        try:
            self.fleet.reset(zone, relearn)
        except UnknownZoneError:
            raise CommandRejected("UNKNOWN_ZONE", zone)
        self._event({"event": "alarm_reset", "zone": zone})

    def inject_fault(self, spec: dict) -> None:
        assert self.world is not None  # dispatcher gates on sim_capable
        try:
            fault = parse_fault(spec, "fault_inject")
            self.world.inject(fault)
        except (InvalidFault, ValueError) as err:
            raise CommandRejected("INVALID_FAULT", str(err))
        self._event({"event": "fault_injected", "fault": spec})

    # -- helpers -------------------------------------------------------------

    def drive_gait(self, now: float) -> None:
        if self.gait is None:
            return
        leg = self.config.leg
        assert leg is not None
        try:
            angles = gait_tick(leg.geometry, self.gait.params, now - self.gait.t0, leg.branch)
        except UnreachableError as err:  # validated at start; defensive
            self.gait = None
            self._event({"event": "gait_fault", "detail": str(err)})
            return
        for name, q in zip(leg.joints, angles):
            self.joints[name].command(q, ControlMode.POSITION)

    def _joint(self, name: str) -> JointRuntime:
        rt = self.joints.get(name)
        if rt is None:
            raise CommandRejected("UNKNOWN_JOINT", name)
        return rt

    @staticmethod
    def _gait_params(base: GaitParams, overrides: dict) -> GaitParams:
        fields = {
            "stride_m": "stride",
            "height_m": "height",
            "z0_m": "z0",
            "y0_m": "y0",
            "x0_m": "x0",
            "period_s": "period",
            "duty": "duty",
        }
        values = {
            "stride": base.stride,
            "height": base.height,
            "z0": base.z0,
            "y0": base.y0,
            "x0": base.x0,
            "period": base.period,
            "duty": base.duty,
        }
        for key, value in overrides.items():
            attr = fields.get(key)
            if attr is None:
                raise CommandRejected("BAD_ARGS", f"unknown gait parameter {key!r}")
            try:
                values[attr] = float(value)
            except (TypeError, ValueError):
                raise CommandRejected("BAD_ARGS", f"gait parameter {key!r} not a number")
        try:
            return GaitParams(**values)
        except ValueError as err:
            raise CommandRejected("BAD_ARGS", str(err))

    def _event(self, body: dict) -> None:
        self.hub.publish(Topic.EVENT, body, self.clock())

    class _map_errors:
        """Translate runtime exceptions into machine-readable NACK reasons."""

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is None:
                return False
            if isinstance(exc, TorqueEnabledError):
                raise CommandRejected("TORQUE_ENABLED", str(exc))
            if isinstance(exc, TorqueDisabledError):
                raise CommandRejected("TORQUE_DISABLED", str(exc))
            if isinstance(exc, ModeMismatchError):
                raise CommandRejected("MODE_MISMATCH", str(exc))
            if isinstance(exc, FaultLatchedError):
                raise CommandRejected("FAULT_LATCHED", str(exc))
            if isinstance(exc, BusError):
                raise CommandRejected(f"BUS_{exc.kind.name}", str(exc))
            return False


class Controller:
    """The fixed-rate control tick over a :class:`SeaJointSystem`."""

    def __init__(self, system: SeaJointSystem):
        self.system = system
        self.hub = system.hub
        self.pump = RatePump(system.config.telemetry.rates)
        self.dispatcher = Dispatcher(system, on_ack=self._publish_ack)
        self.fault_events = 0
        self.alarm_events = 0
        self._zone_states: dict[str, LeakState] = {}

    def _publish_ack(self, ack: Ack) -> None:
        self.hub.publish(
            Topic.EVENT,
            {"event": "ack", "id": ack.id, "ok": ack.ok, "reason": ack.reason},
            self.system.clock(),
        )

    def tick(self, now: float, dt: float) -> None:
        system = self.system
        self.dispatcher.pump()
        system.drive_gait(now)

        for name, rt in system.joints.items():
            fault = rt.tick(now)
            if fault is JointFault.OVERCURRENT_SHUTDOWN:
                self.fault_events += 1
                self.hub.publish(
                    Topic.EVENT, {"event": "overcurrent_shutdown", "joint": name}, now
                )
            elif fault is JointFault.BUS_FAULT:
                self.fault_events += 1
                self.hub.publish(
                    Topic.EVENT, {"event": "bus_fault", "joint": name}, now
                )

        world = system.world
        if world is not None:
            was_blown = system.power.fuse_blown
            system.power.update(
                world.config.supply_voltage_v, world.bus_current_a(), dt
            )
            if system.power.fuse_blown and not was_blown:
                self.fault_events += 1
                self.hub.publish(
                    Topic.EVENT,
                    {"event": "fuse_blown", "current_a": world.bus_current_a()},
                    now,
                )
            for sample in world.drain_env_samples():
                status = system.fleet.ingest(sample) if system.fleet else None
                self.hub.publish(
                    Topic.ENV,
                    {
                        "zone": sample.zone,
                        "t": sample.t,
                        "temperature_c": sample.temperature,
                        "rh_pct": sample.rh,
                    },
                    now,
                )
                if status is not None:
                    self.hub.publish(
                        Topic.LEAK_STATUS,
                        {
                            "zone": status.zone,
                            "state": status.state.name,
                            "baseline": status.baseline,
                            "delta": status.delta,
                            "since": status.since,
                        },
                        now,
                    )
                    previous = self._zone_states.get(sample.zone, LeakState.LEARNING)
                    if status.state is LeakState.ALARM and previous is not LeakState.ALARM:
                        self.alarm_events += 1
                        self.hub.publish(
                            Topic.EVENT, {"event": "alarm", "zone": sample.zone}, now
                        )
                    self._zone_states[sample.zone] = status.state

        if self.pump.due(Topic.JOINT_STATES, now):
            body = {}
            for name, rt in system.joints.items():
                st = rt.last_state
                if st is None:
                    continue
                body[name] = {
                    "position": st.position,
                    "velocity": st.velocity,
                    "effort_ma": st.effort_ma,
                    "mode": st.mode.name,
                    "torque": st.torque_enabled,
                    "fault": st.fault.name if st.fault else None,
                }
            self.hub.publish(Topic.JOINT_STATES, body, now)

        if self.pump.due(Topic.POWER, now):
            self.hub.publish(Topic.POWER, system.power.body(), now)

        if world is not None and self.pump.due(Topic.DEPTH, now):
            depth = depth_from_pressure(world.pressure_pa)
            self.hub.publish(
                Topic.DEPTH,
                {
                    "pressure_pa": world.pressure_pa,
                    "depth_m": depth.meters,
                    "surface": depth.surface,
                },
                now,
            )


# -- scenario execution ----------------------------------------------------------


@dataclass
class _Cycle:
    amplitude: float
    target: float
    halves: int = 0


@dataclass
class ScenarioResult:
    reason: str  # completed | alarm | fault
    duration: float
    alarmed_zones: list[str] = dataclass_field(default_factory=list)
    cycle_halves: dict[str, int] = dataclass_field(default_factory=dict)
    fault_events: int = 0

    @property
    def exit_code(self) -> int:
        return {"completed": 0, "alarm": 2, "fault": 3}[self.reason]


def run_scenario(
    config: StackConfig,
    scenario: SimScenario,
    log_fp: IO[str],
    trace_fp: IO[str] | None = None,
) -> ScenarioResult:
    """Execute *scenario* on a fresh simulated stack, writing the telemetry
    log (and optionally a leak trace) as it goes.  Virtual time only."""
    world = SimWorld(config.sim_config())
    hub = Hub()
    log_sub = hub.subscribe(buffer=LOG_SUBSCRIBER_BUFFER)
    writer = TelemetryLogWriter(
        log_fp,
        meta={"scenario": scenario.name, "seed": config.sim.seed},
    )
    bus = BusMaster(world.bus, timeout=config.bus.timeout_s)
    system = SeaJointSystem(config, bus, hub, clock=lambda: world.now, world=world)
    controller = Controller(system)

    if trace_fp is not None:
        trace_fp.write(TRACE_HEADER + "\n")
        for item in scenario.schedule:
            if isinstance(item.action, FaultAction) and isinstance(
                item.action.fault, LeakFault
            ):
                trace_fp.write(f"# onset {item.action.fault.zone} {item.t:g}\n")

    cycles: dict[str, _Cycle] = {}
    pending = sorted(scenario.schedule, key=lambda s: s.t)
    index = 0
    tick = config.control.tick_s
    tolerance = POSITION_TICK + 1e-12
    reason = "completed"

    def apply(action) -> None:
        if isinstance(action, PressureAction):
            world.set_pressure_bar(action.bar)
            hub.publish(
                Topic.EVENT, {"event": "pressure_set", "bar": action.bar}, world.now
            )
        elif isinstance(action, ModeAction):
            controller.dispatcher.submit(
                Command(CommandKind.SET_MODE, {"joint": action.joint, "mode": action.mode})
            )
        elif isinstance(action, TorqueAction):
            controller.dispatcher.submit(
                Command(
                    CommandKind.TORQUE,
                    {"joint": action.joint, "enabled": action.enabled},
                )
            )
        elif isinstance(action, GoalAction):
            controller.dispatcher.submit(
                Command(CommandKind.GOAL, {"joint": action.joint, "value": action.value})
            )
        elif isinstance(action, GaitStartAction):
            controller.dispatcher.submit(Command(CommandKind.GAIT_START, action.params))
        elif isinstance(action, GaitStopAction):
            controller.dispatcher.submit(Command(CommandKind.GAIT_STOP))
        elif isinstance(action, FaultAction):
            world.inject(action.fault)
            hub.publish(
                Topic.EVENT,
                {"event": "fault_injected", "fault": repr(action.fault)},
                world.now,
            )
        elif isinstance(action, CycleStartAction):
            cycles[action.joint] = _Cycle(
                amplitude=action.amplitude_rad, target=-action.amplitude_rad
            )
            system.goal(action.joint, -action.amplitude_rad)
        elif isinstance(action, CycleStopAction):
            cycles.pop(action.joint, None)

    def drain() -> None:
        for envelope in log_sub.pop_all():
            writer.append(envelope)
            if trace_fp is not None and envelope.topic is Topic.ENV:
                b = envelope.body
                trace_fp.write(
                    f"{b['t']:g} {b['zone']} {b['temperature_c']:g} {b['rh_pct']:g}\n"
                )

    while world.now < scenario.duration_s - 1e-9:
        while index < len(pending) and pending[index].t <= world.now + 1e-9:
            apply(pending[index].action)
            index += 1
        world.step()
        controller.tick(world.now, tick)

        for joint, cycle in cycles.items():
            st = system.joints[joint].last_state
            if st is None:
                continue
            if abs(st.position - cycle.target) <= tolerance:
                hub.publish(
                    Topic.EVENT,
                    {
                        "event": "cycle_extreme",
                        "joint": joint,
                        "target": cycle.target,
                        "position": st.position,
                    },
                    world.now,
                )
                cycle.halves += 1
                cycle.target = -cycle.target
                system.goal(joint, cycle.target)

        drain()
        if scenario.policy.abort_on_alarm and system.fleet and system.fleet.overall() is LeakState.ALARM:
            reason = "alarm"
            break
        if scenario.policy.abort_on_fault and controller.fault_events > 0:
            reason = "fault"
            break

    hub.publish(Topic.EVENT, {"event": "scenario_end", "reason": reason}, world.now)
    drain()
    writer.flush()
    return ScenarioResult(
        reason=reason,
        duration=world.now,
        alarmed_zones=system.fleet.alarmed_zones() if system.fleet else [],
        cycle_halves={j: c.halves for j, c in cycles.items()},
        fault_events=controller.fault_events,
    )


# -- live service (sockets) -------------------------------------------------------


def _parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    return host or "127.0.0.1", int(port)


class _TcpSession(threading.Thread):
    def __init__(self, sock: socket.socket, controller: Controller, token: str | None):
        super().__init__(daemon=True)
        self.sock = sock
        self.controller = controller
        self.token = token
        self.authed = token is None

    def run(self) -> None:
        sub = self.controller.hub.subscribe()
        decoder = WireDecoder()
        self.sock.settimeout(0.01)
        try:
            while True:
                try:
                    data = self.sock.recv(65536)
                    if not data:
                        break
                    for record in decoder.feed(data):
                        self._handle(record)
                except socket.timeout:
                    pass
                for envelope in sub.pop_all():
                    self.sock.sendall(
                        encode_wire_record(
                            {
                                "seq": envelope.seq,
                                "t": envelope.t,
                                "topic": envelope.topic.value,
                                "body": envelope.body,
                            }
                        )
                    )
        except (OSError, SubscriberOverflow, ValueError):
            pass
        finally:
            sub.close()
            self.sock.close()

    def _handle(self, record: dict) -> None:
        if "hello" in record:
            offered = record["hello"].get("token")
            if self.token is not None and offered != self.token:
                self.sock.sendall(
                    encode_wire_record(Ack(id="", ok=False, reason="AUTH").to_record())
                )
                raise OSError("bad token")
            self.authed = True
            return
        if "kind" not in record:
            return
        if not self.authed:
            self.sock.sendall(
                encode_wire_record(Ack(id="", ok=False, reason="AUTH").to_record())
            )
            return
        cmd = Command.from_record(record)
        self.controller.dispatcher.submit(
            cmd, reply=lambda ack: self._send_ack(ack)
        )

    def _send_ack(self, ack: Ack) -> None:
        try:
            self.sock.sendall(encode_wire_record(ack.to_record()))
        except OSError:
            pass


class TelemetryServer:
    """Raw TCP endpoint speaking the length-prefixed record protocol."""

    def __init__(self, listen: str, controller: Controller, token: str | None):
        host, port = _parse_listen(listen)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind((host, port))
        self.sock.listen(8)
        self.port = self.sock.getsockname()[1]
        self.controller = controller
        self.token = token
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _accept_loop(self) -> None:
        self.sock.settimeout(0.1)
        while not self._stop.is_set():
            try:
                conn, _ = self.sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            _TcpSession(conn, self.controller, self.token).start()

    def stop(self) -> None:
        self._stop.set()
        self.sock.close()


class WebSocketGateway:
    """Browser-facing endpoint: one JSON record per websocket text frame."""

    def __init__(self, listen: str, controller: Controller, token: str | None):
        from websockets.sync.server import serve

        host, port = _parse_listen(listen)
        self.controller = controller
        self.token = token
        self._server = serve(self._handler, host, port)
        self.port = self._server.socket.getsockname()[1] if hasattr(self._server, "socket") else port
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _handler(self, connection) -> None:
        import json

        sub = self.controller.hub.subscribe()
        authed = self.token is None
        try:
            while True:
                try:
                    message = connection.recv(timeout=0.01)
                except TimeoutError:
                    message = None
                if message is not None:
                    record = json.loads(message)
                    if "hello" in record:
                        if self.token is not None and record["hello"].get("token") != self.token:
                            connection.send(json.dumps(Ack("", False, "AUTH").to_record()))
                            break
                        authed = True
                    elif "kind" in record:
                        if not authed:
                            connection.send(json.dumps(Ack("", False, "AUTH").to_record()))
                            continue
                        cmd = Command.from_record(record)
                        self.controller.dispatcher.submit(
                            cmd,
                            reply=lambda ack: connection.send(json.dumps(ack.to_record())),
                        )
                for envelope in sub.pop_all():
                    connection.send(envelope.to_json())
        except (SubscriberOverflow, Exception):
            pass
        finally:
            sub.close()

    def stop(self) -> None:
        self._server.shutdown()


class OperateService:
    """Long-running topside service over a simulated backend.

    Paces the virtual world against the wall clock and serves the TCP
    and websocket endpoints.  Shutdown disables torque on every joint
    and makes the final log record a torque-off EVENT.
    """

    def __init__(
        self,
        config: StackConfig,
        log_fp: IO[str] | None = None,
        tcp_listen: str | None = None,
        ws_listen: str | None = None,
    ):
        self.config = config
        self.world = SimWorld(config.sim_config())
        self.hub = Hub()
        self._log_sub = self.hub.subscribe(buffer=LOG_SUBSCRIBER_BUFFER) if log_fp else None
        self._writer = (
            TelemetryLogWriter(log_fp, meta={"seed": config.sim.seed, "mode": "operate"})
            if log_fp
            else None
        )
        bus = BusMaster(self.world.bus, timeout=config.bus.timeout_s)
        self.system = SeaJointSystem(
            config, bus, self.hub, clock=lambda: self.world.now, world=self.world
        )
        self.controller = Controller(self.system)
        self.tcp = TelemetryServer(
            tcp_listen or config.telemetry.listen, self.controller, config.telemetry.token
        )
        self.ws = WebSocketGateway(
            ws_listen or config.telemetry.ws_listen, self.controller, config.telemetry.token
        )
        self._stop = threading.Event()

    def start_servers(self) -> None:
        self.tcp.start()
        self.ws.start()

    def request_stop(self) -> None:
        self._stop.set()

    def run(self) -> None:
        import time as _time

        self.start_servers()
        tick = self.config.control.tick_s
        try:
            next_tick = _time.monotonic()
            while not self._stop.is_set():
                self.world.step()
                self.controller.tick(self.world.now, tick)
                self._drain_log()
                next_tick += tick
                delay = next_tick - _time.monotonic()
                if delay > 0:
                    _time.sleep(delay)
                else:
                    next_tick = _time.monotonic()
        except KeyboardInterrupt:
            pass
        finally:
            self.shutdown()

    def _drain_log(self) -> None:
        if self._log_sub is None or self._writer is None:
            return
        for envelope in self._log_sub.pop_all():
            self._writer.append(envelope)

    def shutdown(self) -> None:
        try:
            self.system.estop()
        except BusError:
            pass
        self.hub.publish(
            Topic.EVENT, {"event": "torque_off", "reason": "shutdown"}, self.world.now
        )
        self._drain_log()
        if self._writer is not None:
            self._writer.flush()
        self.tcp.stop()
        self.ws.stop()
