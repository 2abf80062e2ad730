"""Frame codec and single-master engine for the half-duplex servo bus.

Wire layout of one frame::

    A5 5A | ID | LEN | INST | PAYLOAD ... | CRC_LO CRC_HI

where LEN = len(payload) + 1 (it counts INST) and the CRC-16 covers
everything from ID through the last payload byte.  Multi-byte register
values are little-endian.  ID 254 is the broadcast address and never
elicits a STATUS response.

The codec functions are pure.  :class:`BusMaster` serializes
transactions over a pluggable :class:`Transport` (a real serial port or
the in-memory channel provided by :mod:`seajoint.sim`).

Example:
    >>> frame = BusFrame(device_id=1, instruction=Instruction.PING)
    >>> encode_frame(frame).hex(' ')
    'a5 5a 01 01 01 11 86'
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterable, Protocol

HEADER = b"\xa5\x5a"
BROADCAST_ID = 254
MAX_DEVICE_ID = 253
MAX_PAYLOAD = 250
# header(2) + id(1) + len(1) + inst(1) + crc(2)
FRAME_OVERHEAD = 7

CRC_POLY = 0x8005
CRC_INIT = 0x0000


class Instruction(IntEnum):
    PING = 0x01
    READ = 0x02
    WRITE = 0x03
    SYNC_READ = 0x04
    SYNC_WRITE = 0x05
    STATUS = 0x55


class BusErrorKind(Enum):
    TIMEOUT = "timeout"
    CRC_MISMATCH = "crc_mismatch"
    MALFORMED = "malformed"
    DEVICE_FAULT = "device_fault"


class BusError(Exception):
    """Wire-level failure.

    Returned as a value by the deframer (mid-stream corruption is data,
    not an exception) and raised by :class:`BusMaster` transactions.
    DEVICE_FAULT carries the device's hardware error bits in
    ``error_bits``.
    """

    def __init__(self, kind: BusErrorKind, detail: str = "", error_bits: int = 0):
        super().__init__(f"{kind.value}: {detail}" if detail else kind.value)
        self.kind = kind
        self.detail = detail
        self.error_bits = error_bits


class PayloadTooLong(ValueError):
    """Frame payload exceeds MAX_PAYLOAD bytes."""


class DuplicateDeviceId(ValueError):
    """sync_write entries repeat a device id."""


class _NeedMore:
    """Sentinel: the byte stream holds no complete frame yet."""

    def __repr__(self) -> str:  # pragma: no cover
        return "NEED_MORE"


NEED_MORE = _NeedMore()


def _build_crc_table(poly: int) -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ poly if crc & 0x8000 else crc << 1) & 0xFFFF
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _build_crc_table(CRC_POLY)


def crc16(data: bytes | bytearray | memoryview) -> int:
    """CRC-16 over *data*: polynomial 0x8005, init 0, unreflected, no XOR-out.

    Table-driven; the test suite checks it against a bit-by-bit
    long-division oracle.
    """
    crc = CRC_INIT
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ byte]
    return crc


@dataclass(frozen=True)
class BusFrame:
    """One request or response on the bus."""

    device_id: int
    instruction: Instruction
    payload: bytes = b""

    def __post_init__(self) -> None:
        if not 0 <= self.device_id <= BROADCAST_ID:
            raise ValueError(f"device id {self.device_id} outside 0..{BROADCAST_ID}")
        if len(self.payload) > MAX_PAYLOAD:
            raise PayloadTooLong(
                f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}"
            )
        object.__setattr__(self, "instruction", Instruction(self.instruction))
        object.__setattr__(self, "payload", bytes(self.payload))

    @property
    def is_broadcast(self) -> bool:
        return self.device_id == BROADCAST_ID


def encode_frame(frame: BusFrame) -> bytes:
    """Serialize *frame* to wire bytes (header, body, little-endian CRC)."""
    body = bytes([frame.device_id, len(frame.payload) + 1, frame.instruction])
    body += frame.payload
    crc = crc16(body)
    return HEADER + body + bytes([crc & 0xFF, crc >> 8])


def decode_frame(
    stream: bytes | bytearray | memoryview,
) -> tuple[BusFrame | BusError | _NeedMore, int]:
    """Extract one frame from the front of an arbitrary byte stream.

    Resynchronizes by scanning for the header, so mid-frame garbage and
    partial frames are tolerated.  Returns ``(outcome, consumed)`` where
    outcome is a :class:`BusFrame`, a :class:`BusError` (kind MALFORMED
    or CRC_MISMATCH), or :data:`NEED_MORE`; *consumed* bytes may be
    discarded by the caller in every case.  Never consumes zero bytes
    except when returning NEED_MORE.
    """
    buf = memoryview(stream)
    n = len(buf)

    # Scan for the first plausible header.  A lone trailing 0xA5 may be
    # the start of the next frame, so it is not consumable junk.
    start = None
    i = 0
    while i < n:
        if buf[i] == HEADER[0] and (i + 1 == n or buf[i + 1] == HEADER[1]):
            start = i
            break
        i += 1
    if start is None:
        return NEED_MORE, n
    if start + FRAME_OVERHEAD > n:
        return NEED_MORE, start

    device_id = buf[start + 2]
    length = buf[start + 3]
    if device_id > BROADCAST_ID:
        return (
            BusError(BusErrorKind.MALFORMED, f"device id {device_id} reserved"),
            start + 2,
        )
    if not 1 <= length <= MAX_PAYLOAD + 1:
        return (
            BusError(BusErrorKind.MALFORMED, f"length byte {length} out of range"),
            start + 2,
        )
    total = FRAME_OVERHEAD + length - 1
    if start + total > n:
        return NEED_MORE, start

    body = buf[start + 2 : start + 4 + length]
    crc_lo = buf[start + 4 + length]
    crc_hi = buf[start + 5 + length]
    received = crc_lo | (crc_hi << 8)
    computed = crc16(body)
    if received != computed:
        return (
            BusError(
                BusErrorKind.CRC_MISMATCH,
                f"received 0x{received:04x}, computed 0x{computed:04x}",
            ),
            start + 2,
        )

    inst_byte = buf[start + 4]
    try:
        instruction = Instruction(inst_byte)
    except ValueError:
        return (
            BusError(BusErrorKind.MALFORMED, f"unknown instruction 0x{inst_byte:02x}"),
            start + 2,
        )
    payload = bytes(buf[start + 5 : start + 4 + length])
    frame = BusFrame(device_id=device_id, instruction=instruction, payload=payload)
    return frame, start + total


class Deframer:
    """Incremental decoder holding the unconsumed tail of a byte stream."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[BusFrame | BusError]:
        """Append *data* and return every frame or error now decodable."""
        self._buf.extend(data)
        out: list[BusFrame | BusError] = []
        while True:
            outcome, consumed = decode_frame(self._buf)
            del self._buf[: consumed]
            if isinstance(outcome, _NeedMore):
                return out
            out.append(outcome)

    @property
    def pending(self) -> int:
        return len(self._buf)


# -- Control table -----------------------------------------------------------


@dataclass(frozen=True)
class Register:
    """One addressable register of a servo device."""

    name: str
    address: int
    width: int
    access: str  # "RO" | "RW"
    signed: bool = False

    def encode_value(self, value: int) -> bytes:
        return int(value).to_bytes(self.width, "little", signed=self.signed)

    def decode_value(self, data: bytes) -> int:
        if len(data) != self.width:
            raise ValueError(f"{self.name}: expected {self.width} bytes, got {len(data)}")
        return int.from_bytes(data, "little", signed=self.signed)


class ControlTable:
    """Register map of a device; addresses must not overlap."""

    def __init__(self, registers: Iterable[Register]):
        self.by_name: dict[str, Register] = {}
        self.by_address: dict[int, Register] = {}
        claimed: set[int] = set()
        for reg in registers:
            if reg.name in self.by_name:
                raise ValueError(f"duplicate register name {reg.name}")
            span = set(range(reg.address, reg.address + reg.width))
            if span & claimed:
                raise ValueError(f"register {reg.name} overlaps an earlier one")
            claimed |= span
            self.by_name[reg.name] = reg
            self.by_address[reg.address] = reg

    def __getitem__(self, name: str) -> Register:
        return self.by_name[name]

    def __iter__(self):
        return iter(self.by_name.values())


DEFAULT_CONTROL_TABLE = ControlTable(
    [
        Register("MODEL_NUMBER", 0, 2, "RO"),
        Register("OPERATING_MODE", 10, 1, "RW"),
        Register("TORQUE_ENABLE", 11, 1, "RW"),
        Register("HARDWARE_ERROR", 12, 1, "RO"),
        Register("TEMPERATURE", 13, 1, "RO"),
        Register("GOAL_POSITION", 20, 4, "RW", signed=True),
        Register("GOAL_VELOCITY", 24, 4, "RW", signed=True),
        Register("GOAL_CURRENT", 28, 2, "RW", signed=True),
        Register("PRESENT_POSITION", 40, 4, "RO", signed=True),
        Register("PRESENT_VELOCITY", 44, 4, "RO", signed=True),
        Register("PRESENT_CURRENT", 48, 2, "RO", signed=True),
    ]
)


# -- Transport and master ----------------------------------------------------


class Transport(Protocol):
    """Byte pipe to the bus.

    ``recv`` blocks for at most *timeout* seconds and returns whatever
    bytes arrived, possibly empty.  In-memory transports return
    immediately, which keeps simulated timeouts free of wall-clock
    waits.
    """

    def send(self, data: bytes) -> None: ...

    def recv(self, timeout: float) -> bytes: ...


@dataclass
class BusStats:
    transactions: int = 0
    retries: int = 0
    timeouts: int = 0


class BusMaster:
    """Single-master transaction engine.

    Strictly serialized: a second transaction started while one is in
    flight is a programming error.  On a CRC-corrupted response the
    request is retried once (line noise is transient); a TIMEOUT is
    never retried (the device is absent).
    """

    def __init__(
        self,
        transport: Transport,
        control_table: ControlTable = DEFAULT_CONTROL_TABLE,
        timeout: float = 0.02,
    ):
        self.transport = transport
        self.control_table = control_table
        self.timeout = timeout
        self.stats = BusStats()
        self._in_flight = 0

    @property
    def in_flight(self) -> int:
        return self._in_flight

    def transact(self, request: BusFrame, timeout: float | None = None) -> BusFrame | None:
        """Send *request* and return the matching STATUS response.

        Broadcast requests return ``None`` immediately.  Raises
        :class:`BusError` with kind TIMEOUT, CRC_MISMATCH (after one
        retry) or DEVICE_FAULT (nonzero error byte in the response).
        """
        if self._in_flight:
            raise RuntimeError("bus transaction already in flight")
        self._in_flight += 1
        try:
            return self._transact(request, self.timeout if timeout is None else timeout)
        finally:
            self._in_flight -= 1

    def _transact(self, request: BusFrame, timeout: float) -> BusFrame | None:
        self.stats.transactions += 1
        wire = encode_frame(request)
        retried = False
        self.transport.send(wire)
        if request.is_broadcast:
            return None

        deframer = Deframer()
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            chunk = self.transport.recv(max(remaining, 0.0))
            outcomes = deframer.feed(chunk) if chunk else []
            for outcome in outcomes:
                if isinstance(outcome, BusError):
                    if outcome.kind is BusErrorKind.CRC_MISMATCH and not retried:
                        retried = True
                        self.stats.retries += 1
                        deframer = Deframer()
                        self.transport.send(wire)
                        deadline = time.monotonic() + timeout
                        break
                    if outcome.kind is BusErrorKind.CRC_MISMATCH:
                        raise outcome
                    continue  # malformed noise: keep scanning
                if (
                    outcome.instruction is Instruction.STATUS
                    and outcome.device_id == request.device_id
                ):
                    return self._check_status(outcome)
            if not chunk and time.monotonic() >= deadline:
                self.stats.timeouts += 1
                raise BusError(
                    BusErrorKind.TIMEOUT,
                    f"no response from device {request.device_id} "
                    f"within {timeout * 1e3:.0f} ms",
                )

    @staticmethod
    def _check_status(frame: BusFrame) -> BusFrame:
        if frame.payload and frame.payload[0] != 0:
            raise BusError(
                BusErrorKind.DEVICE_FAULT,
                f"device {frame.device_id} hardware error bits "
                f"0b{frame.payload[0]:08b}",
                error_bits=frame.payload[0],
            )
        return frame

    # -- register conveniences ------------------------------------------

    def ping(self, device_id: int) -> int:
        """PING a device; returns its model number."""
        status = self.transact(BusFrame(device_id, Instruction.PING))
        assert status is not None
        return int.from_bytes(status.payload[1:3], "little")

    def read_register(self, device_id: int, register: str | Register) -> int:
        reg = self._resolve(register)
        request = BusFrame(
            device_id, Instruction.READ, bytes([reg.address, reg.width])
        )
        status = self.transact(request)
        assert status is not None
        return reg.decode_value(status.payload[1 : 1 + reg.width])

    def write_register(self, device_id: int, register: str | Register, value: int) -> None:
        reg = self._resolve(register)
        if reg.access != "RW":
            raise ValueError(f"register {reg.name} is read-only")
        payload = bytes([reg.address]) + reg.encode_value(value)
        self.transact(BusFrame(device_id, Instruction.WRITE, payload))

    def sync_write(
        self, register: str | Register, entries: list[tuple[int, int]]
    ) -> None:
        """Write one register on many devices with a single broadcast frame.

        Entries are ``(device_id, value)`` pairs; ids must be distinct
        and non-broadcast.  No response is elicited.
        """
        reg = self._resolve(register)
        seen: set[int] = set()
        for device_id, _ in entries:
            if not 0 <= device_id <= MAX_DEVICE_ID:
                raise ValueError(f"sync_write to invalid id {device_id}")
            if device_id in seen:
                raise DuplicateDeviceId(f"device id {device_id} listed twice")
            seen.add(device_id)
        payload = bytearray([reg.address, reg.width])
        for device_id, value in entries:
            payload.append(device_id)
            payload += reg.encode_value(value)
        self.transact(BusFrame(BROADCAST_ID, Instruction.SYNC_WRITE, bytes(payload)))

    def read_many(
        self, device_id: int, registers: list[str | Register]
    ) -> dict[str, int]:
        """Read several registers from one device in a single transaction.

        Keeps per-tick bus traffic at one frame per joint.  Addressed,
        never broadcast, so the no-STATUS-for-broadcast rule holds.
        """
        regs = [self._resolve(r) for r in registers]
        payload = bytearray()
        for reg in regs:
            payload += bytes([reg.address, reg.width])
        status = self.transact(
            BusFrame(device_id, Instruction.SYNC_READ, bytes(payload))
        )
        assert status is not None
        values: dict[str, int] = {}
        cursor = 1  # skip the error byte
        for reg in regs:
            values[reg.name] = reg.decode_value(status.payload[cursor : cursor + reg.width])
            cursor += reg.width
        return values

    def _resolve(self, register: str | Register) -> Register:
        if isinstance(register, Register):
            return register
        return self.control_table[register]
