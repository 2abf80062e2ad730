"""Topside link: message schema, fan-out hub, command dispatch, bookkeeping.

Wire protocol (both directions, stream socket or websocket): one record
is the ASCII decimal byte length of a UTF-8 JSON text, a newline, the
JSON bytes, and a closing newline::

    23\\n{"kind":"ESTOP","id":"e1"}\\n

Server-to-client records are telemetry envelopes
``{"seq", "t", "topic", "body"}`` with per-connection strictly
increasing ``seq``; client-to-server records are commands
``{"kind", "args", "id"}`` answered exactly once by a direct
``{"ack": {"id", "ok", "reason"}}`` record on the same connection.

The log file is the same envelope JSON, one per line, after a header
line — replayable byte-for-byte because serialization is canonical
(sorted keys, compact separators).
"""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Callable, Iterable, Iterator, NamedTuple, Optional, Protocol

from .constants import ATMOSPHERIC_PRESSURE_PA, GRAVITY, SEAWATER_DENSITY

LOG_VERSION = 1
FUSE_RATING_A = 18.0
DEFAULT_SUBSCRIBER_BUFFER = 1000


class Topic(Enum):
    JOINT_STATES = "JOINT_STATES"
    ENV = "ENV"
    POWER = "POWER"
    DEPTH = "DEPTH"
    LEAK_STATUS = "LEAK_STATUS"
    EVENT = "EVENT"


class CommandKind(Enum):
    SET_MODE = "SET_MODE"
    TORQUE = "TORQUE"
    GOAL = "GOAL"
    GAIT_START = "GAIT_START"
    GAIT_STOP = "GAIT_STOP"
    ESTOP = "ESTOP"
    RESET_ALARM = "RESET_ALARM"
    FAULT_INJECT = "FAULT_INJECT"  # simulation backends only


@dataclass(frozen=True)
class TelemetryEnvelope:
    seq: int
    t: float
    topic: Topic
    body: dict

    def to_json(self) -> str:
        """Canonical serialization; identical envelopes give identical bytes."""
        return json.dumps(
            {"seq": self.seq, "t": self.t, "topic": self.topic.value, "body": self.body},
            sort_keys=True,
            separators=(",", ":"),
        )

    @staticmethod
    def from_json(text: str) -> "TelemetryEnvelope":
        obj = json.loads(text)
        return TelemetryEnvelope(
            seq=obj["seq"], t=obj["t"], topic=Topic(obj["topic"]), body=obj["body"]
        )


@dataclass(frozen=True)
class Command:
    kind: CommandKind
    args: dict = field(default_factory=dict)
    id: str = ""

    def to_record(self) -> dict:
        return {"kind": self.kind.value, "args": self.args, "id": self.id}

    @staticmethod
    def from_record(obj: dict) -> "Command":
        return Command(
            kind=CommandKind(obj["kind"]),
            args=obj.get("args", {}),
            id=str(obj.get("id", "")),
        )


@dataclass(frozen=True)
class Ack:
    id: str
    ok: bool
    reason: str = ""

    def to_record(self) -> dict:
        return {"ack": {"id": self.id, "ok": self.ok, "reason": self.reason}}


# -- depth and power bookkeeping ----------------------------------------------


class Depth(NamedTuple):
    meters: float
    surface: bool


def depth_from_pressure(
    p_abs_pa: float,
    fluid_density: float = SEAWATER_DENSITY,
    p_atm: float = ATMOSPHERIC_PRESSURE_PA,
) -> Depth:
    """Depth implied by absolute pressure; clamps to 0 at the surface.

    Inverse of :func:`seajoint.hydrocalc.pressure_at_depth`.
    """
    if fluid_density <= 0:
        raise ValueError(f"fluid density must be positive, got {fluid_density}")
    if p_abs_pa < 0:
        raise ValueError(f"absolute pressure must be nonnegative, got {p_abs_pa}")
    meters = (p_abs_pa - p_atm) / (fluid_density * GRAVITY)
    if meters <= 0:
        return Depth(0.0, True)
    return Depth(meters, False)


@dataclass(frozen=True)
class PowerSample:
    voltage: float
    current: float
    energy_wh: float

    def __post_init__(self) -> None:
        if self.current < 0 or self.energy_wh < 0:
            raise ValueError("current and accumulated energy must be nonnegative")


@dataclass(frozen=True)
class FuseEvent:
    """The 18 A supply fuse opened; downstream power is gone for good."""

    current: float
    energy_wh: float


def account_power(
    prev: PowerSample, voltage: float, current: float, dt: float
) -> PowerSample | FuseEvent:
    """Integrate energy over one interval of constant V and I.

    Exact for piecewise-constant power.  A draw strictly above the fuse
    rating returns a terminal :class:`FuseEvent`; exactly at the rating
    the fuse holds (the rating is the guaranteed-carry current).
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if current > FUSE_RATING_A:
        return FuseEvent(current=current, energy_wh=prev.energy_wh)
    return PowerSample(
        voltage=voltage,
        current=current,
        energy_wh=prev.energy_wh + voltage * current * dt / 3600.0,
    )


class PowerMeter:
    """Stateful wrapper: keeps the running sample, latches a blown fuse."""

    def __init__(self) -> None:
        self.sample = PowerSample(0.0, 0.0, 0.0)
        self.fuse_event: FuseEvent | None = None

    @property
    def fuse_blown(self) -> bool:
        return self.fuse_event is not None

    def update(self, voltage: float, current: float, dt: float) -> PowerSample | FuseEvent:
        if self.fuse_event is not None:
            self.sample = PowerSample(0.0, 0.0, self.sample.energy_wh)
            return self.sample
        result = account_power(self.sample, voltage, current, dt)
        if isinstance(result, FuseEvent):
            self.fuse_event = result
            self.sample = PowerSample(0.0, 0.0, result.energy_wh)
            return result
        self.sample = result
        return result

    def body(self) -> dict:
        return {
            "voltage_v": self.sample.voltage,
            "current_a": self.sample.current,
            "energy_wh": self.sample.energy_wh,
            "fuse_blown": self.fuse_blown,
        }


# -- fan-out hub ---------------------------------------------------------------


class SubscriberOverflow(Exception):
    """A subscriber stalled past its buffer and was disconnected."""


class Subscription:
    """One consumer's ordered, bounded envelope queue."""

    def __init__(self, hub: "Hub", topics: frozenset[Topic], buffer: int):
        self._hub = hub
        self.topics = topics
        self.buffer = buffer
        self._queue: deque[TelemetryEnvelope] = deque()
        self._next_seq = 1
        self.overflowed = False
        self.closed = False

    def wants(self, topic: Topic) -> bool:
        return topic in self.topics

    def _push(self, t: float, topic: Topic, body: dict) -> None:
        if len(self._queue) >= self.buffer:
            self.overflowed = True
            self.closed = True
            self._queue.clear()
            return
        self._queue.append(
            TelemetryEnvelope(seq=self._next_seq, t=t, topic=topic, body=body)
        )
        self._next_seq += 1

    def pop_all(self) -> list[TelemetryEnvelope]:
        """Drain pending envelopes; raises after an overflow disconnect."""
        with self._hub._lock:
            if self.overflowed:
                raise SubscriberOverflow(
                    f"subscriber fell behind its {self.buffer}-envelope buffer"
                )
            out = list(self._queue)
            self._queue.clear()
            return out

    def close(self) -> None:
        self._hub.unsubscribe(self)


class Hub:
    """Single-writer-per-topic fan-out with bounded subscriber queues.

    Every subscriber sees every envelope of its topics in publish order
    with its own gapless seq numbering.  A stalled subscriber is cut
    loose rather than back-pressuring the control loop.
    """

    def __init__(self) -> None:
        self._subs: list[Subscription] = []
        self._lock = threading.Lock()

    def subscribe(
        self,
        topics: Iterable[Topic] | None = None,
        buffer: int = DEFAULT_SUBSCRIBER_BUFFER,
    ) -> Subscription:
        wanted = frozenset(topics) if topics is not None else frozenset(Topic)
        sub = Subscription(self, wanted, buffer)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            sub.closed = True
            if sub in self._subs:
                self._subs.remove(sub)

    def publish(self, topic: Topic, body: dict, t: float) -> None:
        with self._lock:
            dead = []
            for sub in self._subs:
                if sub.closed or not sub.wants(topic):
                    continue
                sub._push(t, topic, body)
                if sub.overflowed:
                    dead.append(sub)
            for sub in dead:
                self._subs.remove(sub)

    @property
    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._subs)


@dataclass(frozen=True)
class TelemetryRates:
    """Publish cadence per topic, Hz."""

    joint_states: float = 10.0
    env: float = 0.5
    power: float = 1.0
    depth: float = 1.0


class RatePump:
    """Answers 'is this topic due?' against a monotonically advancing clock."""

    def __init__(self, rates: TelemetryRates):
        self.rates = rates
        self._next: dict[Topic, float] = {}

    def due(self, topic: Topic, now: float) -> bool:
        rate = {
            Topic.JOINT_STATES: self.rates.joint_states,
            Topic.ENV: self.rates.env,
            Topic.POWER: self.rates.power,
            Topic.DEPTH: self.rates.depth,
        }.get(topic)
        if rate is None or rate <= 0:
            return False
        at = self._next.get(topic, now)
        if now + 1e-12 < at:
            return False
        self._next[topic] = at + 1.0 / rate
        return True


# -- command dispatch ----------------------------------------------------------


class CommandRejected(Exception):
    """Dispatch failure with a machine-readable reason code."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class ControlSystem(Protocol):
    """What a backend must offer the dispatcher (sim or real hardware)."""

    sim_capable: bool

    def estop(self) -> None: ...

    def set_mode(self, joint: str, mode: str) -> None: ...

    def set_torque(self, joint: str, enabled: bool) -> None: ...

    def goal(self, joint: str, value: float) -> dict: ...

    def gait_start(self, params: dict) -> None: ...

    def gait_stop(self) -> None: ...

    def reset_alarm(self, zone: str, relearn: bool = False) -> None: ...

    def inject_fault(self, spec: dict) -> None: ...


class Dispatcher:
    """Serialized FIFO command queue with e-stop preemption.

    ESTOP never waits: it executes and is acknowledged on submission,
    ahead of anything already queued.  Everything else runs in arrival
    order when :meth:`pump` is called from the control tick.
    """

    def __init__(self, system: ControlSystem, on_ack: Callable[[Ack], None] | None = None):
        self.system = system
        self._queue: deque[tuple[Command, Callable[[Ack], None] | None]] = deque()
        self._on_ack = on_ack
        self._lock = threading.Lock()

    def submit(
        self, cmd: Command, reply: Callable[[Ack], None] | None = None
    ) -> Ack | None:
        """Queue a command; ESTOP is executed immediately instead."""
        if cmd.kind is CommandKind.ESTOP:
            ack = self.execute(cmd)
            self._deliver(ack, reply)
            return ack
        with self._lock:
            self._queue.append((cmd, reply))
        return None

    def pump(self) -> list[Ack]:
        """Execute every queued command FIFO; returns their acks."""
        acks = []
        while True:
            with self._lock:
                if not self._queue:
                    return acks
                cmd, reply = self._queue.popleft()
            ack = self.execute(cmd)
            self._deliver(ack, reply)
            acks.append(ack)

    def _deliver(self, ack: Ack, reply: Callable[[Ack], None] | None) -> None:
        if reply is not None:
            reply(ack)
        if self._on_ack is not None:
            self._on_ack(ack)

    def execute(self, cmd: Command) -> Ack:
        try:
            self._run(cmd)
            return Ack(id=cmd.id, ok=True)
        except CommandRejected as err:
            return Ack(id=cmd.id, ok=False, reason=err.reason)
        except Exception as err:  # backend errors become NACKs, not crashes
            return Ack(id=cmd.id, ok=False, reason=f"INTERNAL:{type(err).__name__}")

    def _run(self, cmd: Command) -> None:
        args = cmd.args
        kind = cmd.kind
        if kind is CommandKind.ESTOP:
            self.system.estop()
        elif kind is CommandKind.SET_MODE:
            self.system.set_mode(self._arg(args, "joint"), self._arg(args, "mode"))
        elif kind is CommandKind.TORQUE:
            self.system.set_torque(self._arg(args, "joint"), bool(self._arg(args, "enabled")))
        elif kind is CommandKind.GOAL:
            self.system.goal(self._arg(args, "joint"), float(self._arg(args, "value")))
        elif kind is CommandKind.GAIT_START:
            self.system.gait_start(args)
        elif kind is CommandKind.GAIT_STOP:
            self.system.gait_stop()
        elif kind is CommandKind.RESET_ALARM:
            self.system.reset_alarm(self._arg(args, "zone"), bool(args.get("relearn", False)))
        elif kind is CommandKind.FAULT_INJECT:
            if not self.system.sim_capable:
                raise CommandRejected("SIM_ONLY", "fault injection needs a sim backend")
            self.system.inject_fault(args)
        else:  # pragma: no cover - enum is exhaustive
            raise CommandRejected("UNKNOWN_KIND", kind.value)

    @staticmethod
    def _arg(args: dict, key: str):
        try:
            return args[key]
        except KeyError:
            raise CommandRejected("BAD_ARGS", f"missing {key!r}")


# -- wire framing --------------------------------------------------------------


class WireFormatError(ValueError):
    """Stream violates the length-prefixed record framing."""


def encode_wire_record(obj: dict) -> bytes:
    """Frame one JSON record for the stream socket."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return str(len(payload)).encode("ascii") + b"\n" + payload + b"\n"


class WireDecoder:
    """Incremental decoder for length-prefixed records."""

    MAX_LENGTH_DIGITS = 9

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[dict]:
        self._buf.extend(data)
        records = []
        while True:
            newline = self._buf.find(b"\n")
            if newline < 0:
                if len(self._buf) > self.MAX_LENGTH_DIGITS:
                    raise WireFormatError("length prefix too long or missing newline")
                return records
            prefix = bytes(self._buf[:newline])
            if not prefix.isdigit():
                raise WireFormatError(f"bad length prefix {prefix!r}")
            length = int(prefix)
            total = newline + 1 + length + 1
            if len(self._buf) < total:
                return records
            payload = bytes(self._buf[newline + 1 : newline + 1 + length])
            if self._buf[total - 1 : total] != b"\n":
                raise WireFormatError("record missing trailing newline")
            del self._buf[:total]
            try:
                records.append(json.loads(payload.decode("utf-8")))
            except (UnicodeDecodeError, json.JSONDecodeError) as err:
                raise WireFormatError(f"bad record payload: {err}")


# -- telemetry log files -------------------------------------------------------


class CorruptLogError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class LogVersionError(ValueError):
    pass


def log_header(meta: dict | None = None) -> str:
    head = {"log": "seajoint-telemetry", "version": LOG_VERSION}
    head.update(meta or {})
    return json.dumps(head, sort_keys=True, separators=(",", ":"))


class TelemetryLogWriter:
    """Appends envelopes as canonical JSON lines after a header line."""

    def __init__(self, fp: IO[str], meta: dict | None = None):
        self._fp = fp
        self._fp.write(log_header(meta) + "\n")

    def append(self, envelope: TelemetryEnvelope) -> None:
        self._fp.write(envelope.to_json() + "\n")

    def flush(self) -> None:
        self._fp.flush()


def read_log(fp: IO[str]) -> tuple[dict, Iterator[TelemetryEnvelope]]:
    """Open a telemetry log; returns (header, envelope iterator).

    Raises :class:`LogVersionError` on a schema mismatch and
    :class:`CorruptLogError` (with the byte offset) on truncation or
    malformed lines.
    """
    first = fp.readline()
    offset = len(first.encode("utf-8"))
    if not first.endswith("\n"):
        raise CorruptLogError("truncated header line", 0)
    try:
        header = json.loads(first)
    except json.JSONDecodeError:
        raise CorruptLogError("unparseable header line", 0)
    if header.get("log") != "seajoint-telemetry":
        raise CorruptLogError("not a seajoint telemetry log", 0)
    if header.get("version") != LOG_VERSION:
        raise LogVersionError(
            f"log version {header.get('version')} != supported {LOG_VERSION}"
        )

    def _iter() -> Iterator[TelemetryEnvelope]:
        nonlocal offset
        for line in fp:
            start = offset
            offset += len(line.encode("utf-8"))
            if not line.endswith("\n"):
                raise CorruptLogError("truncated record", start)
            try:
                yield TelemetryEnvelope.from_json(line)
            except (json.JSONDecodeError, KeyError, ValueError):
                raise CorruptLogError("malformed record", start)

    return header, _iter()
