"""Joint runtime: joint space <-> actuator registers, modes, supervision.

Maps joint-space commands through an affine transmission onto device
registers, enforces mode/torque guards and limits, and watches effort
for sustained overcurrent.  One runtime owns one device on the bus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional

from .servobus import BusError, BusErrorKind, BusMaster

TWO_PI = 2.0 * math.pi

POSITION_TICK = TWO_PI / 4096.0
"""Position register LSB, rad."""

VELOCITY_TICK = 0.025
"""Velocity register LSB, rad/s."""

CURRENT_TICK = 1.0
"""Current register LSB, mA."""

_POSITION_RANGE = 2**31  # 4-byte signed registers
_VELOCITY_RANGE = 2**31
_CURRENT_RANGE = 2**15


class ControlMode(IntEnum):
    POSITION = 0
    VELOCITY = 1
    CURRENT = 2


class JointFault(IntEnum):
    OVERCURRENT_SHUTDOWN = 1
    BUS_FAULT = 2


class RegisterRangeError(ValueError):
    """Quantized value does not fit the register width."""


class TorqueEnabledError(RuntimeError):
    """Operation requires torque to be disabled first."""


class TorqueDisabledError(RuntimeError):
    """Goal commands need torque enabled."""


class ModeMismatchError(RuntimeError):
    """Setpoint kind does not match the active control mode."""


class FaultLatchedError(RuntimeError):
    """Joint is protecting itself; wait for the cooldown to elapse."""


@dataclass(frozen=True)
class Transmission:
    """Affine map between joint space and actuator space.

    actuator = direction * ratio * (joint + offset)
    """

    ratio: float = 1.0
    direction: int = 1
    offset: float = 0.0

    def __post_init__(self) -> None:
        if self.ratio <= 0:
            raise ValueError(f"ratio must be positive, got {self.ratio}")
        if self.direction not in (1, -1):
            raise ValueError(f"direction must be +1 or -1, got {self.direction}")

    def joint_to_actuator(self, q: float) -> float:
        return self.direction * self.ratio * (q + self.offset)

    def actuator_to_joint(self, theta: float) -> float:
        return theta / (self.direction * self.ratio) - self.offset


@dataclass(frozen=True)
class JointLimits:
    position_min: float
    position_max: float
    velocity_max: float
    current_max: float  # mA

    def __post_init__(self) -> None:
        if self.position_min >= self.position_max:
            raise ValueError("position_min must be below position_max")
        if self.velocity_max <= 0 or self.current_max <= 0:
            raise ValueError("velocity and current limits must be positive")


@dataclass(frozen=True)
class OvercurrentConfig:
    threshold_ma: float
    sustain_s: float = 1.0
    cooldown_s: float = 5.0

    def __post_init__(self) -> None:
        if self.threshold_ma <= 0 or self.sustain_s <= 0 or self.cooldown_s < 0:
            raise ValueError("overcurrent parameters must be positive")


@dataclass(frozen=True)
class JointConfig:
    name: str
    device_id: int
    transmission: Transmission
    limits: JointLimits
    overcurrent: OvercurrentConfig


@dataclass(frozen=True)
class JointState:
    """Joint-space feedback snapshot (immutable, safe to share)."""

    position: float
    velocity: float
    effort_ma: float
    mode: ControlMode
    torque_enabled: bool
    fault: Optional[JointFault] = None


@dataclass(frozen=True)
class CommandResult:
    applied: float
    clamped: bool
    register: str
    ticks: int


# -- register quantization ---------------------------------------------------


def _to_ticks(value: float, lsb: float, limit: int, what: str) -> int:
    ticks = round(value / lsb)
    if not -limit <= ticks < limit:
        raise RegisterRangeError(f"{what} {value} quantizes to {ticks}, outside register")
    return ticks


def position_to_ticks(theta: float) -> int:
    """Quantize an actuator angle to register ticks (round to nearest)."""
    return _to_ticks(theta, POSITION_TICK, _POSITION_RANGE, "position")


def ticks_to_position(ticks: int) -> float:
    return ticks * POSITION_TICK


def velocity_to_ticks(omega: float) -> int:
    return _to_ticks(omega, VELOCITY_TICK, _VELOCITY_RANGE, "velocity")


def ticks_to_velocity(ticks: int) -> float:
    return ticks * VELOCITY_TICK


def current_to_ticks(milliamps: float) -> int:
    return _to_ticks(milliamps, CURRENT_TICK, _CURRENT_RANGE, "current")


def ticks_to_current(ticks: int) -> float:
    return ticks * CURRENT_TICK


_GOAL_REGISTER = {
    ControlMode.POSITION: "GOAL_POSITION",
    ControlMode.VELOCITY: "GOAL_VELOCITY",
    ControlMode.CURRENT: "GOAL_CURRENT",
}


class OvercurrentSupervisor:
    """Trips when |effort| stays strictly above threshold for the sustain time.

    Deterministic function of the (effort, time) history: feeding the
    same sequence always yields the same verdicts.  After a trip the
    fault latches for the cooldown period, then clears; re-enabling
    torque is the operator's call.
    """

    def __init__(self, config: OvercurrentConfig):
        self.config = config
        self._above_since: float | None = None
        self._tripped_at: float | None = None

    @property
    def tripped(self) -> bool:
        return self._tripped_at is not None

    def update(self, effort_ma: float, now: float) -> bool:
        """Feed one effort sample; returns True at the moment of trip."""
        if self._tripped_at is not None:
            if now - self._tripped_at >= self.config.cooldown_s:
                self._tripped_at = None
                self._above_since = None
            return False
        if abs(effort_ma) > self.config.threshold_ma:
            if self._above_since is None:
                self._above_since = now
            elif now - self._above_since >= self.config.sustain_s:
                self._tripped_at = now
                return True
        else:
            self._above_since = None
        return False


class JointRuntime:
    """Owns one servo device: mode changes, goal commands, supervision."""

    def __init__(self, bus: BusMaster, config: JointConfig):
        self.bus = bus
        self.config = config
        self.supervisor = OvercurrentSupervisor(config.overcurrent)
        self._mode = ControlMode(
            bus.read_register(config.device_id, "OPERATING_MODE")
        )
        self._torque = bool(bus.read_register(config.device_id, "TORQUE_ENABLE"))
        self._fault: Optional[JointFault] = None
        self._last_state: Optional[JointState] = None

    @property
    def mode(self) -> ControlMode:
        return self._mode

    @property
    def torque_enabled(self) -> bool:
        return self._torque

    @property
    def fault(self) -> Optional[JointFault]:
        return self._fault

    def set_mode(self, mode: ControlMode) -> None:
        """Switch control mode.  Only legal with torque disabled."""
        if self._torque:
            raise TorqueEnabledError(
                f"{self.config.name}: disable torque before changing mode"
            )
        self.bus.write_register(self.config.device_id, "OPERATING_MODE", int(mode))
        self._mode = mode

    def enable_torque(self) -> None:
        if self._fault is JointFault.OVERCURRENT_SHUTDOWN:
            raise FaultLatchedError(
                f"{self.config.name}: overcurrent fault active, cooldown pending"
            )
        self.bus.write_register(self.config.device_id, "TORQUE_ENABLE", 1)
        self._torque = True

    def disable_torque(self) -> None:
        self.bus.write_register(self.config.device_id, "TORQUE_ENABLE", 0)
        self._torque = False

    def assume_torque_disabled(self) -> None:
        """Sync the cached flag after a broadcast torque-off (e-stop path)."""
        self._torque = False

    def command(self, setpoint: float, kind: ControlMode) -> CommandResult:
        """Send a goal in joint units (rad, rad/s, or mA per *kind*).

        The setpoint is clamped to the configured limits (clamping is
        reported, not an error), mapped through the transmission, and
        written to the matching GOAL_* register.
        """
        if not self._torque:
            raise TorqueDisabledError(f"{self.config.name}: torque is disabled")
        if kind is not self._mode:
            raise ModeMismatchError(
                f"{self.config.name}: {kind.name} setpoint while in {self._mode.name} mode"
            )
        applied, clamped = self._clamp(setpoint, kind)
        tm = self.config.transmission
        if kind is ControlMode.POSITION:
            ticks = position_to_ticks(tm.joint_to_actuator(applied))
        elif kind is ControlMode.VELOCITY:
            ticks = velocity_to_ticks(tm.direction * tm.ratio * applied)
        else:
            ticks = current_to_ticks(tm.direction * applied)
        register = _GOAL_REGISTER[kind]
        self.bus.write_register(self.config.device_id, register, ticks)
        return CommandResult(applied=applied, clamped=clamped, register=register, ticks=ticks)

    def _clamp(self, value: float, kind: ControlMode) -> tuple[float, bool]:
        lim = self.config.limits
        if kind is ControlMode.POSITION:
            lo, hi = lim.position_min, lim.position_max
        elif kind is ControlMode.VELOCITY:
            lo, hi = -lim.velocity_max, lim.velocity_max
        else:
            lo, hi = -lim.current_max, lim.current_max
        clamped = min(max(value, lo), hi)
        return clamped, clamped != value

    _STATE_REGISTERS = ["PRESENT_POSITION", "PRESENT_VELOCITY", "PRESENT_CURRENT"]

    def read_state(self) -> JointState:
        """Read present registers (one bus transaction) in joint space."""
        tm = self.config.transmission
        regs = self.bus.read_many(self.config.device_id, self._STATE_REGISTERS)
        state = JointState(
            position=tm.actuator_to_joint(ticks_to_position(regs["PRESENT_POSITION"])),
            velocity=ticks_to_velocity(regs["PRESENT_VELOCITY"]) / (tm.direction * tm.ratio),
            effort_ma=tm.direction * ticks_to_current(regs["PRESENT_CURRENT"]),
            mode=self._mode,
            torque_enabled=self._torque,
            fault=self._fault,
        )
        self._last_state = state
        return state

    def tick(self, now: float) -> Optional[JointFault]:
        """One control-tick update: refresh state, run the supervisor.

        Returns OVERCURRENT_SHUTDOWN at the moment of trip, BUS_FAULT if
        the device reported hardware error bits, else None.
        """
        try:
            state = self.read_state()
        except BusError as err:
            if err.kind is BusErrorKind.DEVICE_FAULT:
                self._fault = JointFault.BUS_FAULT
                if self._last_state is not None:
                    self._last_state = replace(self._last_state, fault=self._fault)
                return JointFault.BUS_FAULT
            raise
        if self.supervisor.update(state.effort_ma, now):
            self.disable_torque()
            self._fault = JointFault.OVERCURRENT_SHUTDOWN
            self._last_state = replace(
                state, torque_enabled=False, fault=self._fault
            )
            return JointFault.OVERCURRENT_SHUTDOWN
        if (
            self._fault is JointFault.OVERCURRENT_SHUTDOWN
            and not self.supervisor.tripped
        ):
            self._fault = None  # cooldown elapsed; torque stays off
        return None

    @property
    def last_state(self) -> Optional[JointState]:
        return self._last_state
