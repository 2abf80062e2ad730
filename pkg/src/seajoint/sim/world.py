"""The simulated platform: servos on a virtual bus, canister zones, faults.

Everything advances on a virtual clock stepped by the owner; identical
(config, seed, scenario, command transcript) runs produce identical
state trajectories.  Leak dynamics follow an exponential approach to
the saturated-canister humidity with a severity-scaled time constant;
a harness fault lets water chase the wiring into adjacent canisters
with a per-hop delay.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Union

from ..constants import ATMOSPHERIC_PRESSURE_PA, PASCALS_PER_BAR
from ..joint import JointConfig
from ..leakwatch import EnvSample
from .devices import ServoParams, SimServo, VirtualBus

SENSOR_PERIOD_S = 2.0  # 0.5 Hz humidity/temperature sampling
LEAK_SATURATION_RH = 95.0


class InvalidFault(ValueError):
    """Fault refers to an unknown target or violates its preconditions."""


@dataclass(frozen=True)
class LeakFault:
    zone: str
    severity: float = 1.0


@dataclass(frozen=True)
class OverloadFault:
    joint: str
    extra_ma: float


@dataclass(frozen=True)
class StuckFault:
    joint: str


@dataclass(frozen=True)
class WirePropagationFault:
    harness: int
    severity: float = 1.0


Fault = Union[LeakFault, OverloadFault, StuckFault, WirePropagationFault]


@dataclass(frozen=True)
class ZoneConfig:
    zone: str
    temperature_c: float = 24.0
    rh_pct: float = 55.0


@dataclass(frozen=True)
class SimConfig:
    joints: list[JointConfig]
    zones: list[ZoneConfig]
    harnesses: list[list[str]] = field(default_factory=list)
    seed: int = 0
    tick_s: float = 0.02
    servo: ServoParams = ServoParams()
    leak_tau_s: float = 480.0
    propagation_delay_s: float = 600.0
    supply_voltage_v: float = 12.0
    electronics_current_a: float = 0.5

    def __post_init__(self) -> None:
        if self.tick_s <= 0:
            raise ValueError("tick must be positive")
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise ValueError("joint names must be unique")
        ids = [j.device_id for j in self.joints]
        if len(set(ids)) != len(ids):
            raise ValueError("device ids must be unique")
        zones = [z.zone for z in self.zones]
        if len(set(zones)) != len(zones):
            raise ValueError("zone names must be unique")
        grouped: set[str] = set()
        for group in self.harnesses:
            if not 1 <= len(group) <= 3:
                raise ValueError("a wiring harness carries at most 3 canisters")
            for zone in group:
                if zone not in zones:
                    raise ValueError(f"harness references unknown zone {zone!r}")
                if zone in grouped:
                    raise ValueError(f"zone {zone!r} appears in two harnesses")
                grouped.add(zone)


class EnvZone:
    """One canister's internal environment with an optional active leak."""

    def __init__(self, config: ZoneConfig, leak_tau_s: float):
        self.config = config
        self.default_tau = leak_tau_s
        self.leak_onset: float | None = None
        self.leak_tau = leak_tau_s

    @property
    def leaking(self) -> bool:
        return self.leak_onset is not None

    def start_leak(self, at: float, severity: float) -> None:
        if severity <= 0:
            raise InvalidFault(f"leak severity must be positive, got {severity}")
        if self.leak_onset is not None:
            return  # already wet; the earlier onset stands
        self.leak_onset = at
        self.leak_tau = self.default_tau / severity

    def rh_raw(self, t: float) -> float:
        rh0 = self.config.rh_pct
        if self.leak_onset is None or t < self.leak_onset:
            return rh0
        rise = (LEAK_SATURATION_RH - rh0) * (
            1.0 - math.exp(-(t - self.leak_onset) / self.leak_tau)
        )
        return rh0 + rise

    def sample(self, t: float) -> EnvSample:
        """Quantized sensor reading: 1 degC, 1 %RH."""
        rh = min(100.0, max(0.0, float(round(self.rh_raw(t)))))
        return EnvSample(
            zone=self.config.zone,
            t=t,
            temperature=float(round(self.config.temperature_c)),
            rh=rh,
        )


class SimWorld:
    """Single-stepped digital twin of the whole platform."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.now = 0.0
        self.rng = random.Random(config.seed)
        self.bus = VirtualBus()
        self._servo_by_joint: dict[str, SimServo] = {}
        for joint in config.joints:
            servo = SimServo(joint.device_id, config.servo)
            self.bus.attach(servo)
            self._servo_by_joint[joint.name] = servo
        self.zones: dict[str, EnvZone] = {
            z.zone: EnvZone(z, config.leak_tau_s) for z in config.zones
        }
        self.pressure_pa = ATMOSPHERIC_PRESSURE_PA
        self._next_sample: dict[str, float] = {z: 0.0 for z in self.zones}
        self._pending_env: list[EnvSample] = []
        self._scheduled_leaks: list[tuple[float, LeakFault]] = []

    # -- fault injection ----------------------------------------------------

    def servo(self, joint: str) -> SimServo:
        try:
            return self._servo_by_joint[joint]
        except KeyError:
            raise InvalidFault(f"unknown joint {joint!r}")

    def inject(self, fault: Fault, at: float | None = None) -> None:
        """Apply or schedule a fault at virtual time *at* (default: now)."""
        when = self.now if at is None else at
        if isinstance(fault, LeakFault):
            zone = self.zones.get(fault.zone)
            if zone is None:
                raise InvalidFault(f"unknown zone {fault.zone!r}")
            if when <= self.now:
                zone.start_leak(when, fault.severity)
            else:
                self._scheduled_leaks.append((when, fault))
        elif isinstance(fault, OverloadFault):
            self.servo(fault.joint).overload_ma += fault.extra_ma
        elif isinstance(fault, StuckFault):
            self.servo(fault.joint).stuck = True
        elif isinstance(fault, WirePropagationFault):
            self._propagate(fault, when)
        else:
            raise InvalidFault(f"unsupported fault {fault!r}")

    def _propagate(self, fault: WirePropagationFault, when: float) -> None:
        if not 0 <= fault.harness < len(self.config.harnesses):
            raise InvalidFault(f"no harness index {fault.harness}")
        group = self.config.harnesses[fault.harness]
        sources = [i for i, z in enumerate(group) if self.zones[z].leaking]
        if not sources:
            raise InvalidFault(
                f"harness {fault.harness} has no active leak to propagate"
            )
        origin = sources[0]
        for i, zone in enumerate(group):
            if self.zones[zone].leaking:
                continue
            hops = abs(i - origin)
            onset = when + self.config.propagation_delay_s * hops
            self._scheduled_leaks.append((onset, LeakFault(zone, fault.severity)))

    # -- time ----------------------------------------------------------------

    def set_pressure_bar(self, p_abs_bar: float) -> None:
        if p_abs_bar < 0:
            raise ValueError("absolute pressure cannot be negative")
        self.pressure_pa = p_abs_bar * PASCALS_PER_BAR

    def step(self) -> None:
        """Advance one tick: device dynamics, scheduled faults, sensors."""
        dt = self.config.tick_s
        self.now += dt
        for fault_time, fault in list(self._scheduled_leaks):
            if fault_time <= self.now:
                self.zones[fault.zone].start_leak(fault_time, fault.severity)
                self._scheduled_leaks.remove((fault_time, fault))
        for servo in self._servo_by_joint.values():
            servo.step(dt)
        for zone_name, due in self._next_sample.items():
            while due <= self.now:
                self._pending_env.append(self.zones[zone_name].sample(due))
                due += SENSOR_PERIOD_S
            self._next_sample[zone_name] = due

    def drain_env_samples(self) -> list[EnvSample]:
        out = self._pending_env
        self._pending_env = []
        return out

    def bus_current_a(self) -> float:
        """Instantaneous supply draw: electronics plus every servo."""
        total_ma = sum(s.current_ma for s in self._servo_by_joint.values())
        return self.config.electronics_current_a + total_ma / 1000.0
