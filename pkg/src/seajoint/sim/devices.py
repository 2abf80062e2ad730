"""Simulated servo devices and the in-memory bus they hang on.

A :class:`SimServo` speaks the exact wire protocol: it only ever sees
and produces encoded frames, so the joint runtime cannot tell it from
hardware.  Position dynamics are a first-order lag with velocity
saturation, integrated with the exact per-tick exponential so sampled
trajectories match the continuous closed form at tick boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..joint import (
    ControlMode,
    current_to_ticks,
    position_to_ticks,
    ticks_to_current,
    ticks_to_position,
    ticks_to_velocity,
    velocity_to_ticks,
)
from ..servobus import (
    BROADCAST_ID,
    BusFrame,
    ControlTable,
    DEFAULT_CONTROL_TABLE,
    Deframer,
    Instruction,
    encode_frame,
)


@dataclass(frozen=True)
class ServoParams:
    """Dynamics and load model of one simulated servo."""

    model_number: int = 430
    velocity_limit: float = 2.0  # rad/s
    lag_tau: float = 0.05  # s, first-order settling constant
    baseline_current_ma: float = 100.0
    load_current_ma_per_rad_s: float = 150.0
    stall_current_ma_per_rad: float = 2000.0
    stall_current_cap_ma: float = 3000.0
    temperature_c: int = 30


class SimServo:
    """One register-accurate device on the virtual bus."""

    def __init__(
        self,
        device_id: int,
        params: ServoParams = ServoParams(),
        control_table: ControlTable = DEFAULT_CONTROL_TABLE,
    ):
        self.device_id = device_id
        self.params = params
        self.table = control_table
        self.position = 0.0  # actuator-side rad
        self.velocity = 0.0
        self.current_ma = 0.0
        self.hardware_error = 0
        self.stuck = False
        self.overload_ma = 0.0
        self._regs: dict[str, int] = {
            "MODEL_NUMBER": params.model_number,
            "OPERATING_MODE": int(ControlMode.POSITION),
            "TORQUE_ENABLE": 0,
            "HARDWARE_ERROR": 0,
            "TEMPERATURE": params.temperature_c,
            "GOAL_POSITION": 0,
            "GOAL_VELOCITY": 0,
            "GOAL_CURRENT": 0,
            "PRESENT_POSITION": 0,
            "PRESENT_VELOCITY": 0,
            "PRESENT_CURRENT": 0,
        }

    # -- dynamics ---------------------------------------------------------

    def step(self, dt: float) -> None:
        mode = ControlMode(self._regs["OPERATING_MODE"])
        torque = bool(self._regs["TORQUE_ENABLE"])
        stall_ma = 0.0
        if not torque:
            self.velocity = 0.0
            self.current_ma = 0.0
        elif mode is ControlMode.POSITION:
            goal = ticks_to_position(self._regs["GOAL_POSITION"])
            err = goal - self.position
            if self.stuck:
                self.velocity = 0.0
                stall_ma = min(
                    self.params.stall_current_ma_per_rad * abs(err),
                    self.params.stall_current_cap_ma,
                )
            else:
                desired = err * (1.0 - math.exp(-dt / self.params.lag_tau))
                max_step = self.params.velocity_limit * dt
                delta = min(max(desired, -max_step), max_step)
                self.position += delta
                self.velocity = delta / dt
        elif mode is ControlMode.VELOCITY:
            goal_v = ticks_to_velocity(self._regs["GOAL_VELOCITY"])
            v = min(max(goal_v, -self.params.velocity_limit), self.params.velocity_limit)
            self.velocity = 0.0 if self.stuck else v
            self.position += self.velocity * dt
        else:  # CURRENT mode: no mechanics model, current tracks the goal
            self.velocity = 0.0

        if torque:
            if mode is ControlMode.CURRENT:
                base = abs(ticks_to_current(self._regs["GOAL_CURRENT"]))
            else:
                base = (
                    self.params.baseline_current_ma
                    + self.params.load_current_ma_per_rad_s * abs(self.velocity)
                    + stall_ma
                )
            self.current_ma = base + self.overload_ma

        self._regs["PRESENT_POSITION"] = position_to_ticks(self.position)
        self._regs["PRESENT_VELOCITY"] = velocity_to_ticks(self.velocity)
        self._regs["PRESENT_CURRENT"] = current_to_ticks(self.current_ma)
        self._regs["HARDWARE_ERROR"] = self.hardware_error

    # -- register access --------------------------------------------------

    def read(self, name: str) -> int:
        return self._regs[name]

    def write(self, name: str, value: int) -> None:
        self._regs[name] = value

    def _reg_at(self, address: int):
        return self.table.by_address.get(address)

    # -- protocol ----------------------------------------------------------

    def handle_frame(self, frame: BusFrame) -> BusFrame | None:
        """Process one request; returns the STATUS response, or None for
        broadcast (broadcast never answers)."""
        respond = not frame.is_broadcast
        err = self.hardware_error & 0xFF
        payload = bytes([err])
        p = frame.payload

        if frame.instruction is Instruction.PING:
            payload += self._regs["MODEL_NUMBER"].to_bytes(2, "little")
        elif frame.instruction is Instruction.READ:
            reg = self._reg_at(p[0]) if len(p) == 2 else None
            if reg is None or reg.width != p[1]:
                return self._status(b"\xff") if respond else None
            payload += reg.encode_value(self._regs[reg.name])
        elif frame.instruction is Instruction.WRITE:
            reg = self._reg_at(p[0]) if len(p) >= 2 else None
            if reg is None or reg.access != "RW" or len(p) != 1 + reg.width:
                return self._status(b"\xff") if respond else None
            self._regs[reg.name] = reg.decode_value(p[1:])
        elif frame.instruction is Instruction.SYNC_READ:
            cursor = 0
            while cursor + 2 <= len(p):
                reg = self._reg_at(p[cursor])
                if reg is None or reg.width != p[cursor + 1]:
                    return self._status(b"\xff") if respond else None
                payload += reg.encode_value(self._regs[reg.name])
                cursor += 2
        elif frame.instruction is Instruction.SYNC_WRITE:
            self._apply_sync_write(p)
            respond = False  # sync_write is broadcast by construction
        else:
            return self._status(b"\xff") if respond else None

        return self._status(payload) if respond else None

    def _apply_sync_write(self, p: bytes) -> None:
        if len(p) < 2:
            return
        reg = self._reg_at(p[0])
        if reg is None or reg.access != "RW" or p[1] != reg.width:
            return
        stride = 1 + reg.width
        cursor = 2
        while cursor + stride <= len(p):
            if p[cursor] == self.device_id:
                self._regs[reg.name] = reg.decode_value(
                    p[cursor + 1 : cursor + stride]
                )
            cursor += stride

    def _status(self, payload: bytes) -> BusFrame:
        return BusFrame(self.device_id, Instruction.STATUS, payload)


class VirtualBus:
    """In-memory half-duplex transport routing frames to sim devices.

    ``recv`` never blocks: everything a request produced is available
    immediately, and an absent device simply produces nothing, so
    timeout paths run without wall-clock waits.
    """

    def __init__(self) -> None:
        self.devices: dict[int, SimServo] = {}
        self._deframer = Deframer()
        self._rx = bytearray()
        self.corrupt_next_responses = 0  # test hook: flip a bit in N responses

    def attach(self, device: SimServo) -> None:
        if device.device_id in self.devices:
            raise ValueError(f"device id {device.device_id} already on the bus")
        self.devices[device.device_id] = device

    def send(self, data: bytes) -> None:
        for outcome in self._deframer.feed(data):
            if isinstance(outcome, BusFrame):
                self._route(outcome)

    def _route(self, frame: BusFrame) -> None:
        if frame.is_broadcast:
            for device in self.devices.values():
                device.handle_frame(frame)
            return
        device = self.devices.get(frame.device_id)
        if device is None:
            return  # absent device: the master will time out
        response = device.handle_frame(frame)
        if response is not None:
            wire = bytearray(encode_frame(response))
            if self.corrupt_next_responses > 0:
                self.corrupt_next_responses -= 1
                wire[-1] ^= 0x01  # flip a CRC bit
            self._rx += wire

    def recv(self, timeout: float) -> bytes:
        out = bytes(self._rx)
        self._rx.clear()
        return out
