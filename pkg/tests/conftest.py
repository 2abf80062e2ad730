import math

import pytest

from seajoint.joint import (
    JointConfig,
    JointLimits,
    OvercurrentConfig,
    Transmission,
)
from seajoint.kinematics import GaitParams, LegGeometry
from seajoint.servobus import BusMaster
from seajoint.sim.devices import ServoParams, SimServo, VirtualBus


@pytest.fixture
def geometry() -> LegGeometry:
    return LegGeometry(l1=0.063, l2=0.2, l3=0.2)


@pytest.fixture
def gait() -> GaitParams:
    return GaitParams(
        stride=0.12, height=0.06, z0=-0.25, y0=0.0, x0=0.22, period=4.0, duty=0.6
    )


def make_joint_config(
    name: str = "j1",
    device_id: int = 1,
    ratio: float = 1.0,
    direction: int = 1,
    offset: float = 0.0,
    threshold_ma: float = 1200.0,
    sustain_s: float = 1.0,
    cooldown_s: float = 5.0,
) -> JointConfig:
    return JointConfig(
        name=name,
        device_id=device_id,
        transmission=Transmission(ratio=ratio, direction=direction, offset=offset),
        limits=JointLimits(
            position_min=-math.pi,
            position_max=math.pi,
            velocity_max=3.0,
            current_max=1500.0,
        ),
        overcurrent=OvercurrentConfig(
            threshold_ma=threshold_ma, sustain_s=sustain_s, cooldown_s=cooldown_s
        ),
    )


@pytest.fixture
def virtual_bus() -> VirtualBus:
    bus = VirtualBus()
    bus.attach(SimServo(1, ServoParams()))
    return bus


@pytest.fixture
def master(virtual_bus) -> BusMaster:
    return BusMaster(virtual_bus, timeout=0.005)
