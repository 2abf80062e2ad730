"""Stack configuration: joints, leg, zones, detector, telemetry, sim knobs.

One YAML file configures a run.  Loading is strict: unknown action is a
wrong key somewhere, so every error names the full key path
(``joints[1].limits.velocity_max_rad_s``) and YAML syntax errors carry
line/column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .joint import JointConfig, JointLimits, OvercurrentConfig, Transmission
from .kinematics import Branch, GaitParams, LegGeometry
from .leakwatch import DetectorConfig
from .sim.devices import ServoParams
from .sim.world import SimConfig, ZoneConfig
from .telemetry import TelemetryRates

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BusConfig:
    timeout_s: float = 0.02


@dataclass(frozen=True)
class ControlConfig:
    tick_hz: float = 50.0

    @property
    def tick_s(self) -> float:
        return 1.0 / self.tick_hz


@dataclass(frozen=True)
class LegConfig:
    joints: list[str]  # chain order: coxa, femur, tibia
    geometry: LegGeometry
    gait: GaitParams
    branch: Branch = Branch.KNEE_UP


@dataclass(frozen=True)
class TelemetryConfig:
    rates: TelemetryRates = TelemetryRates()
    listen: str = "127.0.0.1:9750"
    ws_listen: str = "127.0.0.1:9751"
    token: Optional[str] = None


@dataclass(frozen=True)
class SimSettings:
    seed: int = 0
    leak_tau_s: float = 480.0
    propagation_delay_s: float = 600.0
    servo: ServoParams = ServoParams()
    supply_voltage_v: float = 12.0
    electronics_current_a: float = 0.5


@dataclass(frozen=True)
class StackConfig:
    joints: list[JointConfig]
    zones: list[ZoneConfig] = field(default_factory=list)
    harnesses: list[list[str]] = field(default_factory=list)
    detector: DetectorConfig = DetectorConfig()
    leg: Optional[LegConfig] = None
    bus: BusConfig = BusConfig()
    control: ControlConfig = ControlConfig()
    telemetry: TelemetryConfig = TelemetryConfig()
    sim: SimSettings = SimSettings()

    def sim_config(self) -> SimConfig:
        return SimConfig(
            joints=self.joints,
            zones=self.zones,
            harnesses=self.harnesses,
            seed=self.sim.seed,
            tick_s=self.control.tick_s,
            servo=self.sim.servo,
            leak_tau_s=self.sim.leak_tau_s,
            propagation_delay_s=self.sim.propagation_delay_s,
            supply_voltage_v=self.sim.supply_voltage_v,
            electronics_current_a=self.sim.electronics_current_a,
        )


# -- strict mapping walker -----------------------------------------------------


class _Node:
    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path or 'top level'}: expected a mapping")
        self.data = data
        self.path = path

    def _at(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def child(self, key: str, default: dict | None = None) -> "_Node":
        value = self.data.get(key, default if default is not None else {})
        return _Node(value, self._at(key))

    def get(self, key: str, kind, default=None, required: bool = False):
        if key not in self.data:
            if required:
                raise ConfigError(f"{self._at(key)}: missing required key")
            return default
        value = self.data[key]
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise ValueError("expected true/false")
                return value
            return kind(value)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"{self._at(key)}: {err}")

    def list_of(self, key: str, default: list | None = None) -> list[tuple[str, Any]]:
        value = self.data.get(key, default if default is not None else [])
        if not isinstance(value, list):
            raise ConfigError(f"{self._at(key)}: expected a list")
        return [(f"{self._at(key)}[{i}]", item) for i, item in enumerate(value)]


def _joint_from(node: _Node) -> JointConfig:
    tr = node.child("transmission")
    limits = node.child("limits")
    oc = node.child("overcurrent")
    try:
        return JointConfig(
            name=node.get("name", str, required=True),
            device_id=node.get("device_id", int, required=True),
            transmission=Transmission(
                ratio=tr.get("ratio", float, 1.0),
                direction=tr.get("direction", int, 1),
                offset=tr.get("offset", float, 0.0),
            ),
            limits=JointLimits(
                position_min=limits.get("position_min_rad", float, -math.pi),
                position_max=limits.get("position_max_rad", float, math.pi),
                velocity_max=limits.get("velocity_max_rad_s", float, 3.0),
                current_max=limits.get("current_max_ma", float, 1500.0),
            ),
            overcurrent=OvercurrentConfig(
                threshold_ma=oc.get("threshold_ma", float, 1200.0),
                sustain_s=oc.get("sustain_s", float, 1.0),
                cooldown_s=oc.get("cooldown_s", float, 5.0),
            ),
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"{node.path}: {err}")


def _leg_from(node: _Node) -> LegConfig:
    geo = node.child("geometry")
    gait = node.child("gait")
    branch_name = node.get("branch", str, "knee_up")
    try:
        branch = Branch(branch_name)
    except ValueError:
        raise ConfigError(f"{node.path}.branch: unknown branch {branch_name!r}")
    joints = node.data.get("joints")
    if not isinstance(joints, list) or len(joints) != 3:
        raise ConfigError(f"{node.path}.joints: expected the 3 chain joint names")
    try:
        return LegConfig(
            joints=[str(j) for j in joints],
            geometry=LegGeometry(
                l1=geo.get("l1_m", float, required=True),
                l2=geo.get("l2_m", float, required=True),
                l3=geo.get("l3_m", float, required=True),
            ),
            gait=GaitParams(
                stride=gait.get("stride_m", float, required=True),
                height=gait.get("height_m", float, required=True),
                z0=gait.get("z0_m", float, required=True),
                y0=gait.get("y0_m", float, 0.0),
                x0=gait.get("x0_m", float, required=True),
                period=gait.get("period_s", float, 4.0),
                duty=gait.get("duty", float, 0.6),
            ),
            branch=branch,
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"{node.path}: {err}")


def config_from_dict(data: Any) -> StackConfig:
    root = _Node(data, "")
    version = root.get("version", int, required=True)
    if version != CONFIG_VERSION:
        raise ConfigError(f"version: unsupported config version {version}")

    joints = [_joint_from(_Node(item, path)) for path, item in root.list_of("joints")]
    if not joints:
        raise ConfigError("joints: at least one joint required")

    zones = []
    for path, item in root.list_of("zones"):
        node = _Node(item, path)
        try:
            zones.append(
                ZoneConfig(
                    zone=node.get("zone", str, required=True),
                    temperature_c=node.get("temperature_c", float, 24.0),
                    rh_pct=node.get("rh_pct", float, 55.0),
                )
            )
        except ValueError as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(f"{path}: {err}")

    harnesses = []
    for path, item in root.list_of("harnesses"):
        if not isinstance(item, list):
            raise ConfigError(f"{path}: expected a list of zone names")
        harnesses.append([str(z) for z in item])

    det = root.child("detector")
    try:
        detector = DetectorConfig(
            window_s=det.get("window_s", float, 60.0),
            warn_pct=det.get("warn_pct", float, 3.0),
            alarm_pct=det.get("alarm_pct", float, 5.0),
            persistence=det.get("persistence", int, 3),
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"detector: {err}")

    leg = _leg_from(root.child("leg")) if "leg" in root.data else None
    if leg is not None:
        known = {j.name for j in joints}
        for name in leg.joints:
            if name not in known:
                raise ConfigError(f"leg.joints: unknown joint {name!r}")

    tele = root.child("telemetry")
    rates_node = tele.child("rates")
    telemetry = TelemetryConfig(
        rates=TelemetryRates(
            joint_states=rates_node.get("joint_states_hz", float, 10.0),
            env=rates_node.get("env_hz", float, 0.5),
            power=rates_node.get("power_hz", float, 1.0),
            depth=rates_node.get("depth_hz", float, 1.0),
        ),
        listen=tele.get("listen", str, "127.0.0.1:9750"),
        ws_listen=tele.get("ws_listen", str, "127.0.0.1:9751"),
        token=tele.get("token", str, None),
    )

    sim_node = root.child("sim")
    servo_node = sim_node.child("servo")
    sim = SimSettings(
        seed=sim_node.get("seed", int, 0),
        leak_tau_s=sim_node.get("leak_tau_s", float, 480.0),
        propagation_delay_s=sim_node.get("propagation_delay_s", float, 600.0),
        servo=ServoParams(
            velocity_limit=servo_node.get("velocity_limit_rad_s", float, 2.0),
            lag_tau=servo_node.get("lag_tau_s", float, 0.05),
            baseline_current_ma=servo_node.get("baseline_current_ma", float, 100.0),
            load_current_ma_per_rad_s=servo_node.get(
                "load_current_ma_per_rad_s", float, 150.0
            ),
            stall_current_ma_per_rad=servo_node.get(
                "stall_current_ma_per_rad", float, 2000.0
            ),
        ),
        supply_voltage_v=sim_node.get("supply_voltage_v", float, 12.0),
        electronics_current_a=sim_node.get("electronics_current_a", float, 0.5),
    )

    bus_node = root.child("bus")
    control_node = root.child("control")
    try:
        return StackConfig(
            joints=joints,
            zones=zones,
            harnesses=harnesses,
            detector=detector,
            leg=leg,
            bus=BusConfig(timeout_s=bus_node.get("timeout_s", float, 0.02)),
            control=ControlConfig(tick_hz=control_node.get("tick_hz", float, 50.0)),
            telemetry=telemetry,
            sim=sim,
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err))


def load_config(path: str) -> StackConfig:
    with open(path, "r", encoding="utf-8") as fp:
        try:
            data = yaml.safe_load(fp)
        except yaml.YAMLError as err:
            mark = getattr(err, "problem_mark", None)
            if mark is not None:
                raise ConfigError(f"{path}:{mark.line + 1}:{mark.column + 1}: {err}")
            raise ConfigError(f"{path}: {err}")
    try:
        return config_from_dict(data)
    except ConfigError as err:
        raise ConfigError(f"{path}: {err}")


# -- canonical configurations ---------------------------------------------------


def leg_stack_config(seed: int = 0) -> StackConfig:
    """Three-joint leg plus per-canister zones, the field setup."""
    def joint(name: str, device_id: int) -> JointConfig:
        return JointConfig(
            name=name,
            device_id=device_id,
            transmission=Transmission(ratio=1.0, direction=1, offset=0.0),
            limits=JointLimits(
                position_min=-math.pi,
                position_max=math.pi,
                velocity_max=3.0,
                current_max=1500.0,
            ),
            overcurrent=OvercurrentConfig(threshold_ma=1200.0),
        )

    zones = [
        ZoneConfig("control", 24.0, 55.0),
        ZoneConfig("coxa_can", 24.0, 58.0),
        ZoneConfig("femur_can", 24.0, 57.0),
        ZoneConfig("tibia_can", 24.0, 56.0),
        ZoneConfig("battery", 24.0, 54.0),
    ]
    return StackConfig(
        joints=[joint("coxa", 1), joint("femur", 2), joint("tibia", 3)],
        zones=zones,
        harnesses=[["coxa_can", "femur_can", "tibia_can"], ["control", "battery"]],
        leg=LegConfig(
            joints=["coxa", "femur", "tibia"],
            geometry=LegGeometry(l1=0.063, l2=0.2, l3=0.2),
            gait=GaitParams(
                stride=0.12,
                height=0.06,
                z0=-0.25,
                y0=0.0,
                x0=0.22,
                period=4.0,
                duty=0.6,
            ),
            branch=Branch.KNEE_UP,
        ),
        sim=SimSettings(seed=seed),
    )


def hyperbaric_stack_config(seed: int = 0) -> StackConfig:
    """Single joint under test in the pressure chamber, one monitored zone."""
    return StackConfig(
        joints=[
            JointConfig(
                name="j1",
                device_id=1,
                transmission=Transmission(),
                limits=JointLimits(
                    position_min=-math.pi,
                    position_max=math.pi,
                    velocity_max=3.0,
                    current_max=1500.0,
                ),
                overcurrent=OvercurrentConfig(threshold_ma=1200.0),
            )
        ],
        zones=[ZoneConfig("urj", 24.0, 63.0)],
        sim=SimSettings(seed=seed),
    )


def config_to_dict(config: StackConfig) -> dict:
    """Export a StackConfig as the YAML schema (for shipped config files)."""
    out: dict = {
        "version": CONFIG_VERSION,
        "bus": {"timeout_s": config.bus.timeout_s},
        "control": {"tick_hz": config.control.tick_hz},
        "joints": [
            {
                "name": j.name,
                "device_id": j.device_id,
                "transmission": {
                    "ratio": j.transmission.ratio,
                    "direction": j.transmission.direction,
                    "offset": j.transmission.offset,
                },
                "limits": {
                    "position_min_rad": j.limits.position_min,
                    "position_max_rad": j.limits.position_max,
                    "velocity_max_rad_s": j.limits.velocity_max,
                    "current_max_ma": j.limits.current_max,
                },
                "overcurrent": {
                    "threshold_ma": j.overcurrent.threshold_ma,
                    "sustain_s": j.overcurrent.sustain_s,
                    "cooldown_s": j.overcurrent.cooldown_s,
                },
            }
            for j in config.joints
        ],
        "zones": [
            {"zone": z.zone, "temperature_c": z.temperature_c, "rh_pct": z.rh_pct}
            for z in config.zones
        ],
        "harnesses": [list(group) for group in config.harnesses],
        "detector": {
            "window_s": config.detector.window_s,
            "warn_pct": config.detector.warn_pct,
            "alarm_pct": config.detector.alarm_pct,
            "persistence": config.detector.persistence,
        },
        "telemetry": {
            "rates": {
                "joint_states_hz": config.telemetry.rates.joint_states,
                "env_hz": config.telemetry.rates.env,
                "power_hz": config.telemetry.rates.power,
                "depth_hz": config.telemetry.rates.depth,
            },
            "listen": config.telemetry.listen,
            "ws_listen": config.telemetry.ws_listen,
        },
        "sim": {
            "seed": config.sim.seed,
            "leak_tau_s": config.sim.leak_tau_s,
            "propagation_delay_s": config.sim.propagation_delay_s,
            "supply_voltage_v": config.sim.supply_voltage_v,
            "electronics_current_a": config.sim.electronics_current_a,
            "servo": {
                "velocity_limit_rad_s": config.sim.servo.velocity_limit,
                "lag_tau_s": config.sim.servo.lag_tau,
                "baseline_current_ma": config.sim.servo.baseline_current_ma,
                "load_current_ma_per_rad_s": config.sim.servo.load_current_ma_per_rad_s,
                "stall_current_ma_per_rad": config.sim.servo.stall_current_ma_per_rad,
            },
        },
    }
    if config.telemetry.token is not None:
        out["telemetry"]["token"] = config.telemetry.token
    if config.leg is not None:
        out["leg"] = {
            "joints": list(config.leg.joints),
            "geometry": {
                "l1_m": config.leg.geometry.l1,
                "l2_m": config.leg.geometry.l2,
                "l3_m": config.leg.geometry.l3,
            },
            "gait": {
                "stride_m": config.leg.gait.stride,
                "height_m": config.leg.gait.height,
                "z0_m": config.leg.gait.z0,
                "y0_m": config.leg.gait.y0,
                "x0_m": config.leg.gait.x0,
                "period_s": config.leg.gait.period,
                "duty": config.leg.gait.duty,
            },
            "branch": config.leg.branch.value,
        }
    return out
