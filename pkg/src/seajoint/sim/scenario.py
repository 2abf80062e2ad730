"""Scripted simulation scenarios: schedules of pressure, motion, faults.

A scenario is a nondecreasing schedule of actions plus a duration and
abort policy.  Scenario files are YAML; loaders raise
:class:`ScenarioError` naming the offending entry and key.  Builders
for the two canonical runs (the hyperbaric staircase and the multizone
field ingress) live here so code and shipped YAML cannot drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import yaml

from .world import (
    Fault,
    LeakFault,
    OverloadFault,
    StuckFault,
    WirePropagationFault,
)

HYPERBARIC_STEPS_BAR = [1.5, 2.0, 3.0, 4.0, 5.0]
HYPERBARIC_STEP_S = 600.0
HYPERBARIC_IDLE_S = 300.0


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class PressureAction:
    bar: float


@dataclass(frozen=True)
class ModeAction:
    joint: str
    mode: str


@dataclass(frozen=True)
class TorqueAction:
    joint: str
    enabled: bool


@dataclass(frozen=True)
class GoalAction:
    joint: str
    value: float


@dataclass(frozen=True)
class FaultAction:
    fault: Fault


@dataclass(frozen=True)
class GaitStartAction:
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GaitStopAction:
    pass


@dataclass(frozen=True)
class CycleStartAction:
    joint: str
    amplitude_rad: float


@dataclass(frozen=True)
class CycleStopAction:
    joint: str


Action = Union[
    PressureAction,
    ModeAction,
    TorqueAction,
    GoalAction,
    FaultAction,
    GaitStartAction,
    GaitStopAction,
    CycleStartAction,
    CycleStopAction,
]


@dataclass(frozen=True)
class ScheduledAction:
    t: float
    action: Action


@dataclass(frozen=True)
class Policy:
    abort_on_alarm: bool = False
    abort_on_fault: bool = False


@dataclass(frozen=True)
class SimScenario:
    name: str
    duration_s: float
    schedule: list[ScheduledAction]
    policy: Policy = Policy()

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ScenarioError("duration_s must be positive")
        times = [entry.t for entry in self.schedule]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ScenarioError("schedule times must be nondecreasing")


# -- YAML loading --------------------------------------------------------------


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise ScenarioError(f"{where}: missing key {key!r}")
    return entry[key]


def parse_fault(entry: dict, where: str) -> Fault:
    kind = _require(entry, "kind", where)
    if kind == "leak":
        return LeakFault(
            zone=_require(entry, "zone", where),
            severity=float(entry.get("severity", 1.0)),
        )
    if kind == "overload":
        return OverloadFault(
            joint=_require(entry, "joint", where),
            extra_ma=float(_require(entry, "extra_ma", where)),
        )
    if kind == "stuck":
        return StuckFault(joint=_require(entry, "joint", where))
    if kind == "wire_propagation":
        return WirePropagationFault(
            harness=int(_require(entry, "harness", where)),
            severity=float(entry.get("severity", 1.0)),
        )
    raise ScenarioError(f"{where}: unknown fault kind {kind!r}")


def _parse_action(entry: dict, where: str) -> Action:
    do = _require(entry, "do", where)
    if do == "pressure":
        return PressureAction(bar=float(_require(entry, "bar", where)))
    if do == "mode":
        return ModeAction(
            joint=_require(entry, "joint", where),
            mode=str(_require(entry, "mode", where)),
        )
    if do == "torque":
        return TorqueAction(
            joint=_require(entry, "joint", where),
            enabled=bool(_require(entry, "enabled", where)),
        )
    if do == "goal":
        if "position_deg" in entry:
            value = math.radians(float(entry["position_deg"]))
        else:
            value = float(_require(entry, "value", where))
        return GoalAction(joint=_require(entry, "joint", where), value=value)
    if do == "fault":
        return FaultAction(fault=parse_fault(entry, where))
    if do == "gait_start":
        return GaitStartAction(params=dict(entry.get("params", {})))
    if do == "gait_stop":
        return GaitStopAction()
    if do == "cycle_start":
        if "amplitude_deg" in entry:
            amp = math.radians(float(entry["amplitude_deg"]))
        else:
            amp = float(_require(entry, "amplitude_rad", where))
        return CycleStartAction(joint=_require(entry, "joint", where), amplitude_rad=amp)
    if do == "cycle_stop":
        return CycleStopAction(joint=_require(entry, "joint", where))
    raise ScenarioError(f"{where}: unknown action {do!r}")


def scenario_from_dict(data: dict) -> SimScenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must hold a mapping")
    if data.get("version") != 1:
        raise ScenarioError(f"unsupported scenario version {data.get('version')!r}")
    raw_schedule = data.get("schedule", [])
    if not isinstance(raw_schedule, list):
        raise ScenarioError("schedule: must be a list")
    schedule = []
    for i, entry in enumerate(raw_schedule):
        where = f"schedule[{i}]"
        if not isinstance(entry, dict):
            raise ScenarioError(f"{where}: must be a mapping")
        t = float(_require(entry, "t", where))
        schedule.append(ScheduledAction(t=t, action=_parse_action(entry, where)))
    policy_raw = data.get("policy", {})
    policy = Policy(
        abort_on_alarm=bool(policy_raw.get("abort_on_alarm", False)),
        abort_on_fault=bool(policy_raw.get("abort_on_fault", False)),
    )
    try:
        duration = float(_require(data, "duration_s", "scenario"))
    except (TypeError, ValueError) as err:
        raise ScenarioError(f"duration_s: {err}")
    return SimScenario(
        name=str(data.get("name", "scenario")),
        duration_s=duration,
        schedule=schedule,
        policy=policy,
    )


def load_scenario(path: str) -> SimScenario:
    with open(path, "r", encoding="utf-8") as fp:
        try:
            data = yaml.safe_load(fp)
        except yaml.YAMLError as err:
            mark = getattr(err, "problem_mark", None)
            if mark is not None:
                raise ScenarioError(
                    f"{path}:{mark.line + 1}:{mark.column + 1}: {err}"
                )
            raise ScenarioError(f"{path}: {err}")
    return scenario_from_dict(data)


def scenario_to_dict(scenario: SimScenario) -> dict:
    """Inverse of :func:`scenario_from_dict`, used to export shipped YAML."""
    entries = []
    for item in scenario.schedule:
        a = item.action
        entry: dict = {"t": item.t}
        if isinstance(a, PressureAction):
            entry.update(do="pressure", bar=a.bar)
        elif isinstance(a, ModeAction):
            entry.update(do="mode", joint=a.joint, mode=a.mode)
        elif isinstance(a, TorqueAction):
            entry.update(do="torque", joint=a.joint, enabled=a.enabled)
        elif isinstance(a, GoalAction):
            entry.update(do="goal", joint=a.joint, value=a.value)
        elif isinstance(a, FaultAction):
            f = a.fault
            if isinstance(f, LeakFault):
                entry.update(do="fault", kind="leak", zone=f.zone, severity=f.severity)
            elif isinstance(f, OverloadFault):
                entry.update(do="fault", kind="overload", joint=f.joint, extra_ma=f.extra_ma)
            elif isinstance(f, StuckFault):
                entry.update(do="fault", kind="stuck", joint=f.joint)
            else:
                assert isinstance(f, WirePropagationFault)
                entry.update(
                    do="fault", kind="wire_propagation", harness=f.harness, severity=f.severity
                )
        elif isinstance(a, GaitStartAction):
            entry.update(do="gait_start", params=a.params)
        elif isinstance(a, GaitStopAction):
            entry.update(do="gait_stop")
        elif isinstance(a, CycleStartAction):
            entry.update(do="cycle_start", joint=a.joint, amplitude_rad=a.amplitude_rad)
        else:
            assert isinstance(a, CycleStopAction)
            entry.update(do="cycle_stop", joint=a.joint)
        entries.append(entry)
    return {
        "version": 1,
        "name": scenario.name,
        "duration_s": scenario.duration_s,
        "policy": {
            "abort_on_alarm": scenario.policy.abort_on_alarm,
            "abort_on_fault": scenario.policy.abort_on_fault,
        },
        "schedule": entries,
    }


# -- canonical scenarios --------------------------------------------------------


def hyperbaric_scenario(joint: str = "j1") -> SimScenario:
    """The pressure-staircase sealing test.

    Five absolute-pressure plateaus of 10 minutes each (1-bar increments
    above the reduced first step); within every plateau the joint idles
    for 5 minutes, then cycles between -180 and +180 degrees for 5
    minutes.
    """
    schedule: list[ScheduledAction] = [
        ScheduledAction(0.0, ModeAction(joint=joint, mode="position")),
        ScheduledAction(0.0, TorqueAction(joint=joint, enabled=True)),
    ]
    for i, bar in enumerate(HYPERBARIC_STEPS_BAR):
        start = i * HYPERBARIC_STEP_S
        schedule.append(ScheduledAction(start, PressureAction(bar=bar)))
        schedule.append(
            ScheduledAction(
                start + HYPERBARIC_IDLE_S,
                CycleStartAction(joint=joint, amplitude_rad=math.pi),
            )
        )
        schedule.append(
            ScheduledAction(
                start + HYPERBARIC_STEP_S - 1e-9,
                CycleStopAction(joint=joint),
            )
        )
    schedule.sort(key=lambda s: s.t)
    return SimScenario(
        name="hyperbaric",
        duration_s=HYPERBARIC_STEP_S * len(HYPERBARIC_STEPS_BAR),
        schedule=schedule,
    )


def field_multizone_scenario(
    zone: str = "control",
    onset_s: float = 207.0,  # 3 min 27 s
    severity: float = 2.0,
    duration_s: float = 600.0,
) -> SimScenario:
    """Field-style ingress: one canister starts leaking mid-mission.

    Severity 2 models the agitated, screw-removed ingress (20 mL in
    minutes) rather than the static single-droplet lab case.
    """
    return SimScenario(
        name="field_multizone",
        duration_s=duration_s,
        schedule=[
            ScheduledAction(onset_s, FaultAction(LeakFault(zone=zone, severity=severity))),
        ],
    )
