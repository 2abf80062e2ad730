"""RRR leg kinematics and the cyclic foot trajectory generator.

Frame convention: leg-base frame with z up; at all-zero joint angles the
leg extends along +x.  q1 is coxa yaw about z, q2 femur pitch, q3 tibia
pitch, with positive pitch raising the foot.

Forward kinematics::

    r = L1 + L2 cos q2 + L3 cos(q2 + q3)
    x = r cos q1,  y = r sin q1,  z = L2 sin q2 + L3 sin(q2 + q3)

The gait path is a straight stance line at constant depth (the foot is
planted while the body moves) followed by a half-ellipse swing arc, so
one period traces the planted drag from +S/2 to -S/2 and the airborne
return.  All functions here are pure and stateless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

_REACH_EPS = 1e-9


class Branch(Enum):
    KNEE_UP = "knee_up"
    KNEE_DOWN = "knee_down"


class UnreachableError(ValueError):
    """Target outside the leg workspace."""

    def __init__(self, message: str, distance: float, phase: float | None = None):
        super().__init__(message)
        self.distance = distance
        self.phase = phase


class SingularError(ValueError):
    """Foot on the coxa axis: yaw is indeterminate."""


class PhaseDomainError(ValueError):
    """Gait phase outside [0, 1)."""


class GaitUnreachableError(ValueError):
    """Configured gait leaves the workspace at the listed phases."""

    def __init__(self, phases: list[float]):
        preview = ", ".join(f"{p:.4f}" for p in phases[:8])
        more = "" if len(phases) <= 8 else f" (+{len(phases) - 8} more)"
        super().__init__(f"gait unreachable at phases [{preview}]{more}")
        self.phases = phases


@dataclass(frozen=True)
class LegGeometry:
    """Link lengths in meters: coxa, femur, tibia."""

    l1: float
    l2: float
    l3: float

    def __post_init__(self) -> None:
        if min(self.l1, self.l2, self.l3) <= 0:
            raise ValueError("link lengths must be positive")


class JointAngles(NamedTuple):
    q1: float
    q2: float
    q3: float


class FootPoint(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class GaitParams:
    """Cyclic foot path parameters.

    stride: total x excursion S (m); height: swing apex above the
    ground line (m); z0: ground line below the leg base (m, negative);
    x0/y0: forward and lateral offsets of the path center (m);
    period: cycle time (s); duty: stance fraction of the period.
    """

    stride: float
    height: float
    z0: float
    y0: float
    x0: float
    period: float
    duty: float = 0.6

    def __post_init__(self) -> None:
        if self.stride <= 0 or self.height <= 0 or self.period <= 0:
            raise ValueError("stride, height, and period must be positive")
        if not 0.0 < self.duty < 1.0:
            raise ValueError(f"duty factor must lie in (0, 1), got {self.duty}")


def fk(geometry: LegGeometry, q: JointAngles) -> FootPoint:
    """Foot position in the leg-base frame."""
    q1, q2, q3 = q
    r = (
        geometry.l1
        + geometry.l2 * math.cos(q2)
        + geometry.l3 * math.cos(q2 + q3)
    )
    z = geometry.l2 * math.sin(q2) + geometry.l3 * math.sin(q2 + q3)
    return FootPoint(r * math.cos(q1), r * math.sin(q1), z)


def ik(
    geometry: LegGeometry, p: FootPoint, branch: Branch = Branch.KNEE_UP
) -> JointAngles:
    """Closed-form inverse kinematics.

    Yaw comes straight from atan2; the remaining planar 2-link problem
    in the (radial - L1, z) plane is solved by the law of cosines, with
    *branch* picking the elbow sign (KNEE_UP folds the tibia under the
    femur, the crouched stance).  Raises :class:`UnreachableError` when
    the planar distance d violates |L2 - L3| <= d <= L2 + L3, and
    :class:`SingularError` for a target on the coxa axis.
    """
    x, y, z = p
    radial = math.hypot(x, y)
    if radial == 0.0:
        raise SingularError("foot on the coxa axis (x = y = 0)")
    q1 = math.atan2(y, x)

    a = radial - geometry.l1
    d = math.hypot(a, z)
    l2, l3 = geometry.l2, geometry.l3
    if d > l2 + l3 + _REACH_EPS or d < abs(l2 - l3) - _REACH_EPS:
        raise UnreachableError(
            f"planar distance {d:.6f} outside [{abs(l2 - l3):.6f}, {l2 + l3:.6f}]",
            distance=d,
        )

    cos_q3 = (d * d - l2 * l2 - l3 * l3) / (2.0 * l2 * l3)
    cos_q3 = min(1.0, max(-1.0, cos_q3))
    q3 = math.acos(cos_q3)
    if branch is Branch.KNEE_UP:
        q3 = -q3
    q2 = math.atan2(z, a) - math.atan2(l3 * math.sin(q3), l2 + l3 * math.cos(q3))
    return JointAngles(q1, q2, q3)


def semi_ellipse(gait: GaitParams, phase: float) -> FootPoint:
    """Foot target at *phase* in [0, 1) of the gait cycle.

    Stance (phase < duty): straight line at z = z0, x running from
    x0 + S/2 back to x0 - S/2.  Swing: half-ellipse returning to the
    stance start with apex z0 + height at the swing midpoint.  The path
    is continuous at both junctions and periodic.
    """
    if not 0.0 <= phase < 1.0:
        raise PhaseDomainError(f"phase {phase} outside [0, 1)")
    half = gait.stride / 2.0
    if phase < gait.duty:
        s = phase / gait.duty
        x = gait.x0 + half - gait.stride * s
        z = gait.z0
    else:
        u = (phase - gait.duty) / (1.0 - gait.duty)
        psi = math.pi * (1.0 - u)
        x = gait.x0 + half * math.cos(psi)
        z = gait.z0 + gait.height * math.sin(psi)
    return FootPoint(x, gait.y0, z)


def gait_tick(
    geometry: LegGeometry,
    gait: GaitParams,
    t: float,
    branch: Branch = Branch.KNEE_UP,
) -> JointAngles:
    """Joint angles tracking the gait path at time *t* (periodic)."""
    phase = (t % gait.period) / gait.period
    point = semi_ellipse(gait, phase)
    try:
        return ik(geometry, point, branch)
    except UnreachableError as err:
        raise UnreachableError(
            f"gait leaves workspace at phase {phase:.4f}: {err}",
            distance=err.distance,
            phase=phase,
        ) from err


@dataclass(frozen=True)
class GaitValidation:
    samples: int
    max_step_rad: float

    def max_rate_rad_s(self, period: float) -> float:
        """Worst joint speed implied by adjacent samples, rad/s."""
        return self.max_step_rad * self.samples / period


def validate_gait(
    geometry: LegGeometry,
    gait: GaitParams,
    branch: Branch = Branch.KNEE_UP,
    samples: int = 1024,
) -> GaitValidation:
    """Configuration-time workspace check over a dense phase sweep.

    Raises :class:`GaitUnreachableError` listing every offending phase;
    otherwise reports the worst adjacent joint-space step for rate-limit
    budgeting.
    """
    offending: list[float] = []
    angles: list[JointAngles | None] = []
    for k in range(samples):
        phase = k / samples
        try:
            angles.append(ik(geometry, semi_ellipse(gait, phase), branch))
        except (UnreachableError, SingularError):
            offending.append(phase)
            angles.append(None)
    if offending:
        raise GaitUnreachableError(offending)

    max_step = 0.0
    for k in range(samples):
        a = angles[k]
        b = angles[(k + 1) % samples]
        assert a is not None and b is not None
        step = max(abs(b.q1 - a.q1), abs(b.q2 - a.q2), abs(b.q3 - a.q3))
        max_step = max(max_step, step)
    return GaitValidation(samples=samples, max_step_rad=max_step)
