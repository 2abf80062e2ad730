"""Deterministic digital twin: virtual bus devices, zones, fault injection."""

from .devices import ServoParams, SimServo, VirtualBus
from .world import (
    EnvZone,
    InvalidFault,
    LeakFault,
    OverloadFault,
    SimConfig,
    SimWorld,
    StuckFault,
    WirePropagationFault,
    ZoneConfig,
)
from .scenario import (
    ScenarioError,
    ScheduledAction,
    SimScenario,
    hyperbaric_scenario,
    load_scenario,
    scenario_from_dict,
)

__all__ = [
    "EnvZone",
    "InvalidFault",
    "LeakFault",
    "OverloadFault",
    "ScenarioError",
    "ScheduledAction",
    "ServoParams",
    "SimConfig",
    "SimScenario",
    "SimServo",
    "SimWorld",
    "StuckFault",
    "VirtualBus",
    "WirePropagationFault",
    "ZoneConfig",
    "hyperbaric_scenario",
    "load_scenario",
    "scenario_from_dict",
]
